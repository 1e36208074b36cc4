//! Confidence-aware anomaly detection.
//!
//! A detector made of three parts sharing one feature extractor: a
//! scoring head trained with a deviation loss against a sampled
//! Gaussian reference, so normal examples score near the reference mean
//! and labeled anomalies at least `margin` standardized units above it;
//! a confidence head regressed onto an anomaly-probability target that
//! flags likely scoring failures; and a dual-threshold decision rule
//! that calls an input positive when the score is high *or* the
//! confidence is low.
//!
//! Training runs in three stages (scoring with SGD, confidence with
//! Adam against the frozen scorer, then joint fine-tuning at a small
//! constant rate) over balanced half-positive/half-negative batches.
//! The crate ships synthetic tabular and image benchmarks with a
//! held-out novel anomaly class, an evaluation harness (rank-based AUC,
//! confusion metrics, confidence-threshold sweeps, imbalance and
//! novel-class-shift studies against a binary-classifier baseline), and
//! a small CLI.
//!
//! Start with the runnable examples:
//!
//! ```text
//! cargo run --release --example train_and_diagnose
//! cargo run --release --example confidence_sweep
//! cargo run --release --example shift_study
//! cargo run --release --example imbalance_study
//! cargo run --release --example image_pipeline
//! cargo run --release --example checkpoint_resume
//! ```
//!
//! or with the CLI: `caad synth`, `caad train`, `caad eval`,
//! `caad score`, `caad compare`.

pub mod anomaly;
pub mod checkpoint;
pub mod cli;
pub mod confidence;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod rng;

pub use anomaly::{
    deviation_loss, sample_reference, DeviationLossConfig, GaussianPrior, ReferenceStats,
};
pub use confidence::{
    anomaly_probability, boundary_score, confidence_loss, prediction_probability,
    DecisionThresholds, PdfDenominator,
};
pub use config::Config;
pub use error::{Error, Result};
pub use eval::{roc_auc, MetricsReport, ScoredExample};
pub use model::{CaadModel, ExtractorKind, ModelSpec};
pub use pipeline::{diagnose, Decision, Diagnosis, TrainConfig};
