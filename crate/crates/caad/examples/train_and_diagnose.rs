//! Full walkthrough: synthesize a tabular benchmark, run the
//! three-stage training, and diagnose test examples with the
//! dual-threshold rule.
//!
//! Run with: cargo run --release --example train_and_diagnose

use caad::config::Config;
use caad::data::synth_tabular;
use caad::eval::evaluate;
use caad::model::{CaadModel, ModelSpec};
use caad::pipeline::{diagnose, eval_payload, train_full};

fn main() -> caad::Result<()> {
    // Defaults throughout: 5,000 train negatives, 500 train positives,
    // margin 5, reference of 5,000 standard-normal draws per batch,
    // batch size 40, stages of 20/20/10 epochs.
    let cfg = Config::default();
    let (train, test) = synth_tabular(&cfg.synth_tabular_config())?;
    println!(
        "train: {} normal / {} anomaly;  test: {} examples ({} novel-class anomalies)",
        train.meta.n_normal,
        train.meta.n_anomaly,
        test.len(),
        test.meta.subclass_counts.get("novel").copied().unwrap_or(0),
    );

    let mut model = CaadModel::build(&ModelSpec::tabular(cfg.synth_dim), cfg.seed)?;
    let records = train_full(&mut model, &train, &cfg.train_config(), 3)?;
    for r in records.iter().step_by(5) {
        println!("{}", r.to_line());
    }

    let thresholds = cfg.thresholds()?;
    println!(
        "\nthresholds: t_ano = {:.4} (derived from the probability-0.5 boundary), t_conf = {}",
        thresholds.t_ano, thresholds.t_conf
    );

    // Diagnose a handful of test cases.
    println!(
        "\n{:<10} {:>6} {:>8} {:>8}  {:<9} {}",
        "id", "label", "nu", "iota", "decision", "reason"
    );
    for ex in test.examples.iter().step_by(test.len() / 10) {
        let payload = eval_payload(&model.extractor, ex)?;
        let (nu, iota) = model.score_pair(&payload)?;
        let d = diagnose(nu, iota, thresholds);
        println!(
            "{:<10} {:>6} {:>8.3} {:>8.3}  {:<9} {}",
            ex.id, ex.label, nu, iota, d.decision, d.reason
        );
    }

    let report = evaluate(&model, &test, thresholds)?;
    println!("\ntest metrics: {}", report.to_line());
    Ok(())
}
