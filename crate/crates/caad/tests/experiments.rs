//! Run-level checks of the comparison experiments at reduced scale.

use caad::data::SynthTabularConfig;
use caad::eval::{
    imbalance_experiment, median, shift_experiment, ImbalanceConfig, ShiftConfig, MODEL_BINARY,
    MODEL_CAAD,
};
use caad::pipeline::TrainConfig;

fn mid_synth(seed: u64) -> SynthTabularConfig {
    let mut s = SynthTabularConfig::default_for_seed(seed);
    s.n_train_normal = 1500;
    s.n_train_anomaly = 150;
    s.n_test_normal = 300;
    s.n_test_known_anomaly = 150;
    s.n_test_novel_anomaly = 150;
    s
}

fn mid_train(seed: u64) -> TrainConfig {
    let mut t = TrainConfig::default_for_seed(seed);
    t.stage1_epochs = 10;
    t.stage2_epochs = 8;
    t.stage3_epochs = 4;
    t.ref_count = 2000;
    t
}

#[test]
fn shift_experiment_shows_the_novel_class_gap() {
    let report = shift_experiment(&ShiftConfig {
        synth: mid_synth(1),
        train: mid_train(1),
        seeds: vec![1, 2, 3],
        caad_stages: 3,
        include_novel_in_training: false,
    })
    .unwrap();

    // one row per (model, seed)
    assert_eq!(report.rows.len(), 6);
    for model in [MODEL_CAAD, MODEL_BINARY] {
        assert_eq!(report.rows.iter().filter(|r| r.model == model).count(), 3);
    }

    // the detector holds up better on the unseen anomaly class
    assert!(
        report.median_novel_caad > report.median_novel_binary,
        "caad {:.4} vs binary {:.4}",
        report.median_novel_caad,
        report.median_novel_binary
    );
    // shift hurts both models
    assert!(report.median_known_caad > report.median_novel_caad);
    assert!(report.median_known_binary > report.median_novel_binary);
}

#[test]
fn training_on_the_novel_class_shrinks_the_gap() {
    let seeds = vec![11, 12, 13];
    let held_out = shift_experiment(&ShiftConfig {
        synth: mid_synth(11),
        train: mid_train(11),
        seeds: seeds.clone(),
        caad_stages: 1,
        include_novel_in_training: false,
    })
    .unwrap();
    let included = shift_experiment(&ShiftConfig {
        synth: mid_synth(11),
        train: mid_train(11),
        seeds,
        caad_stages: 1,
        include_novel_in_training: true,
    })
    .unwrap();

    let gap_held_out = held_out.median_known_caad - held_out.median_novel_caad;
    let gap_included = included.median_known_caad - included.median_novel_caad;
    assert!(
        gap_included < gap_held_out,
        "gap with novel trained {gap_included:.4} should undercut held-out gap {gap_held_out:.4}"
    );
}

#[test]
fn imbalance_experiment_reports_every_cell_and_consistent_medians() {
    let cfg = ImbalanceConfig {
        synth: mid_synth(21),
        train: mid_train(21),
        seeds: vec![21, 22, 23],
        fractions: vec![1.0, 0.1],
    };
    let report = imbalance_experiment(&cfg).unwrap();

    // fraction grid echoed exactly
    assert_eq!(report.fractions, vec![1.0, 0.1]);
    // one row per (model, fraction, seed)
    assert_eq!(report.rows.len(), 2 * 2 * 3);
    for model in [MODEL_CAAD, MODEL_BINARY] {
        for &f in &cfg.fractions {
            let cells: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.model == model && r.fraction == f)
                .map(|r| r.auc_novel)
                .collect();
            assert_eq!(cells.len(), 3);
            // medians recompute from the rows
            assert_eq!(report.median_for(model, f).unwrap(), median(&cells));
        }
    }

    // records and plot columns carry every cell
    let records = report.to_records();
    assert_eq!(
        records.lines().filter(|l| !l.starts_with("median")).count(),
        12
    );
    let plot = report.to_plot_columns();
    assert_eq!(plot.lines().count(), 1 + report.fractions.len());
}
