//! Checkpoints: bit-exact round trips, corrupt-file rejection, and
//! resuming stage 2 from a stage-1 checkpoint exactly as if training
//! had never stopped.
//!
//! Run with: cargo run --release --example checkpoint_resume

use caad::checkpoint::{load_weights, save_weights, Checkpoint, CheckpointMeta};
use caad::config::Config;
use caad::data::synth_tabular;
use caad::model::{CaadModel, ModelSpec};
use caad::pipeline::{train_stage1, train_stage2};

fn main() -> caad::Result<()> {
    let mut cfg = Config::default();
    cfg.synth_train_normal = 800;
    cfg.synth_train_anomaly = 80;
    cfg.stage1_epochs = 4;
    cfg.stage2_epochs = 4;
    cfg.ref_count = 1000;
    let (train, _) = synth_tabular(&cfg.synth_tabular_config())?;
    let train_cfg = cfg.train_config();

    let mut model = CaadModel::build(&ModelSpec::tabular(cfg.synth_dim), cfg.seed)?;
    train_stage1(&mut model, &train, &train_cfg)?;

    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            seed: cfg.seed,
            stage: 1,
            epoch: train_cfg.stage1_epochs as u32,
        },
        model: model.clone(),
        thresholds: cfg.thresholds()?,
        optimizers: vec![],
    };
    let bytes = save_weights(&ckpt);
    println!("stage-1 checkpoint: {} bytes", bytes.len());

    let restored = load_weights(&bytes)?;
    assert_eq!(restored, ckpt);
    println!("round trip reproduces every parameter bit-exactly");

    let mut corrupt = bytes.clone();
    corrupt[bytes.len() / 2] ^= 0xff;
    println!(
        "flipped one payload byte -> {}",
        load_weights(&corrupt).unwrap_err()
    );

    // Resume: stage 2 from the loaded weights equals the uninterrupted run.
    let unbroken_records = train_stage2(&mut model, &train, &train_cfg)?;
    let mut resumed = restored.model;
    let resumed_records = train_stage2(&mut resumed, &train, &train_cfg)?;
    assert_eq!(unbroken_records, resumed_records);
    assert_eq!(
        resumed.confidence_head.param_bytes(),
        model.confidence_head.param_bytes()
    );
    println!("resumed stage 2 matches the uninterrupted run, epoch for epoch:");
    for r in &resumed_records {
        println!("  {}", r.to_line());
    }
    Ok(())
}
