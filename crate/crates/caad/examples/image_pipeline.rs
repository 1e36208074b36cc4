//! The image path: synthetic grayscale benchmark, random
//! crop/zoom/flip augmentation, and the small convolutional extractor
//! trained end-to-end through the deviation loss.
//!
//! Run with: cargo run --release --example image_pipeline

use caad::config::Config;
use caad::data::{synth_images, Payload};
use caad::eval::{roc_auc, score_dataset};
use caad::model::{CaadModel, ExtractorKind};
use caad::pipeline::{augment, train_stage1, AugmentConfig};
use caad::rng;

fn main() -> caad::Result<()> {
    let mut cfg = Config::default();
    cfg.extractor = ExtractorKind::TinyCnn;
    cfg.synth_kind = caad::data::DatasetKind::Image;
    cfg.feature_dim = Some(16);
    cfg.stage1_epochs = 10;
    cfg.ref_count = 1000;
    let (train, test) = synth_images(&cfg.synth_image_config())?;
    let (h, w) = train.image_shape.unwrap();
    println!(
        "{} training images at {h}x{w} ({} anomalies), {} test images",
        train.len(),
        train.meta.n_anomaly,
        test.len()
    );

    // Augmentation: crop to 0.875 of the working size, zoom 90-110%,
    // coin-flip mirror.
    let aug = AugmentConfig::default();
    if let Payload::Image(img) = &train.examples[0].payload {
        let mut r = rng::stream(cfg.seed, "demo-augment");
        let a = augment(img, &aug, &mut r)?;
        println!(
            "augmented {}x{} -> {}x{} crop (zoom + flip randomized per presentation)",
            img.h, img.w, a.h, a.w
        );
    }

    let spec = cfg.model_spec_for(&train)?;
    println!(
        "extractor: conv stack -> global average pooling -> {}-dim features",
        spec.feature_dim
    );
    let mut model = CaadModel::build(&spec, cfg.seed)?;
    let records = train_stage1(&mut model, &train, &cfg.train_config())?;
    for r in &records {
        println!("{}", r.to_line());
    }

    let scored = score_dataset(&model, &test)?;
    let labels: Vec<u8> = scored.iter().map(|s| s.label).collect();
    let nus: Vec<f64> = scored.iter().map(|s| s.nu).collect();
    println!("test AUC after stage 1: {:.4}", roc_auc(&nus, &labels)?);
    Ok(())
}
