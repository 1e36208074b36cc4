//! Sweep the confidence threshold on a trained model: sensitivity
//! rises and specificity falls as the threshold grows, while the AUC
//! column stays fixed (it ignores thresholds).
//!
//! Run with: cargo run --release --example confidence_sweep

use caad::config::Config;
use caad::data::synth_tabular;
use caad::eval::confidence_sweep;
use caad::model::{CaadModel, ModelSpec};
use caad::pipeline::train_full;

fn main() -> caad::Result<()> {
    let mut cfg = Config::default();
    // Keep the demo quick: a mid-sized dataset and trimmed epochs.
    cfg.synth_train_normal = 2000;
    cfg.synth_train_anomaly = 200;
    cfg.stage1_epochs = 12;
    cfg.stage2_epochs = 10;
    cfg.stage3_epochs = 4;
    let (train, test) = synth_tabular(&cfg.synth_tabular_config())?;

    let mut model = CaadModel::build(&ModelSpec::tabular(cfg.synth_dim), cfg.seed)?;
    train_full(&mut model, &train, &cfg.train_config(), 3)?;

    let thresholds = cfg.thresholds()?;
    // 0.0 disables the confidence branch entirely: that row is the
    // score-only detector.
    let grid = [0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
    let table = confidence_sweep(&model, &test, thresholds.t_ano, &grid)?;
    println!("anomaly threshold fixed at t_ano = {:.4}\n", table.t_ano);
    print!("{}", table.to_table());
    Ok(())
}
