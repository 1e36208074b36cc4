//! Class-imbalance study: shrink the labeled-anomaly pool to 50% and
//! 10% while keeping every negative, and compare how much each model's
//! novel-class AUC degrades.
//!
//! Run with: cargo run --release --example imbalance_study

use caad::config::Config;
use caad::eval::{imbalance_experiment, ImbalanceConfig, MODEL_BINARY, MODEL_CAAD};

fn main() -> caad::Result<()> {
    // The degradation comparison needs the full dataset scale; three
    // seeds keep the demo under a few minutes.
    let mut cfg = Config::default();
    cfg.experiment_seeds = 3;

    let report = imbalance_experiment(&ImbalanceConfig {
        synth: cfg.synth_tabular_config(),
        train: cfg.train_config(),
        seeds: cfg.experiment_seed_list(),
        fractions: cfg.experiment_fractions.clone(),
    })?;
    print!("{}", report.to_records());

    println!("\nplot columns (fraction, detector, binary):");
    print!("{}", report.to_plot_columns());

    let drop =
        |model| report.median_for(model, 1.0).unwrap() - report.median_for(model, 0.1).unwrap();
    println!(
        "\nmedian AUC drop from 100% to 10% positives: detector {:.4}, binary classifier {:.4}",
        drop(MODEL_CAAD),
        drop(MODEL_BINARY)
    );
    Ok(())
}
