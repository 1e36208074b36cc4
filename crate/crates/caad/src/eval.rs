//! Metrics and experiment protocols: rank-based AUC, confusion metrics,
//! confidence-threshold sweeps, the class-imbalance study, the
//! novel-class shift study, and the binary-classifier baseline they
//! compare against.

use crate::anomaly;
use crate::confidence::DecisionThresholds;
use crate::data::{self, Dataset, LabeledExample, NOVEL_SUBCLASS};
use crate::error::{Error, Result};
use crate::features::{Extractor, ExtractorGradients};
use crate::model::{build_extractor, CaadModel, ModelSpec};
use crate::net::{sigmoid, DenseNet, NetGradients};
use crate::optim::LrSchedule;
use crate::pipeline::{self, diagnose, BalancedBatcher, Diagnosis, TrainConfig};
use crate::rng;

// ---------------------------------------------------------------------------
// ROC AUC (Mann-Whitney rank statistic)
// ---------------------------------------------------------------------------

/// Probability that a random positive outranks a random negative.
/// Computed from average ranks, so ties contribute exactly 0.5 per
/// pair and the result equals exhaustive pair counting.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimMismatch {
            context: "roc_auc inputs",
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(Error::NonFinite("roc_auc scores"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "roc_auc needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Average rank over each tie group (ranks are 1-based).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Empirical ROC curve as (false-positive rate, true-positive rate,
/// threshold) points, one per distinct score plus the (0,0) anchor,
/// sweeping the decision threshold from high to low. Plain numeric
/// columns for external plotting; its trapezoid area equals [`roc_auc`]
/// exactly.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64, f64)>> {
    if scores.len() != labels.len() {
        return Err(Error::DimMismatch {
            context: "roc_points inputs",
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "roc_points needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![(0.0, 0.0, f64::INFINITY)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // consume the whole tie group at this threshold
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((
            fp as f64 / n_neg as f64,
            tp as f64 / n_pos as f64,
            threshold,
        ));
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Confusion metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub auc: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_count: usize,
    pub n: usize,
    pub thresholds: DecisionThresholds,
}

impl MetricsReport {
    pub fn to_line(&self) -> String {
        format!(
            "n={} tp={} fp={} tn={} fn={} accuracy={:.4} sensitivity={:.4} specificity={:.4} auc={:.4} t_ano={:.4} t_conf={:.4}",
            self.n, self.tp, self.fp, self.tn, self.fn_count,
            self.accuracy, self.sensitivity, self.specificity, self.auc,
            self.thresholds.t_ano, self.thresholds.t_conf,
        )
    }
}

/// Accuracy, sensitivity, and specificity from per-example diagnoses.
/// The AUC is threshold-free and supplied by the caller.
pub fn confusion_metrics(
    diagnoses: &[Diagnosis],
    labels: &[u8],
    auc: f64,
) -> Result<MetricsReport> {
    if diagnoses.len() != labels.len() {
        return Err(Error::DimMismatch {
            context: "confusion inputs",
            expected: diagnoses.len(),
            actual: labels.len(),
        });
    }
    if diagnoses.is_empty() {
        return Err(Error::InvalidArgument("no diagnoses".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_count) = (0usize, 0usize, 0usize, 0usize);
    for (d, &y) in diagnoses.iter().zip(labels) {
        let positive = d.decision == pipeline::Decision::Positive;
        match (y, positive) {
            (1, true) => tp += 1,
            (1, false) => fn_count += 1,
            (0, true) => fp += 1,
            (0, false) => tn += 1,
            _ => return Err(Error::InvalidArgument(format!("label {y} outside {{0,1}}"))),
        }
    }
    if tp + fn_count == 0 || tn + fp == 0 {
        return Err(Error::InvalidArgument(
            "sensitivity/specificity need both classes present".into(),
        ));
    }
    let n = diagnoses.len();
    Ok(MetricsReport {
        accuracy: (tp + tn) as f64 / n as f64,
        sensitivity: tp as f64 / (tp + fn_count) as f64,
        specificity: tn as f64 / (tn + fp) as f64,
        auc,
        tp,
        fp,
        tn,
        fn_count,
        n,
        thresholds: diagnoses[0].thresholds,
    })
}

// ---------------------------------------------------------------------------
// Dataset scoring
// ---------------------------------------------------------------------------

/// One scored example: both model outputs plus the identity fields
/// needed to slice reports by class and subclass.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    pub id: String,
    pub label: u8,
    pub subclass: String,
    pub nu: f64,
    pub iota: f64,
}

/// Scores every example with deterministic evaluation payloads (center
/// crop for images).
pub fn score_dataset(model: &CaadModel, dataset: &Dataset) -> Result<Vec<ScoredExample>> {
    dataset
        .examples
        .iter()
        .map(|ex| {
            let payload = pipeline::eval_payload(&model.extractor, ex)?;
            let (nu, iota) = model.score_pair(&payload)?;
            Ok(ScoredExample {
                id: ex.id.clone(),
                label: ex.label,
                subclass: ex.subclass.clone(),
                nu,
                iota,
            })
        })
        .collect()
}

/// Full evaluation of a model on a dataset at the given thresholds.
pub fn evaluate(
    model: &CaadModel,
    dataset: &Dataset,
    thresholds: DecisionThresholds,
) -> Result<MetricsReport> {
    let scored = score_dataset(model, dataset)?;
    evaluate_scored(&scored, thresholds)
}

pub fn evaluate_scored(
    scored: &[ScoredExample],
    thresholds: DecisionThresholds,
) -> Result<MetricsReport> {
    let labels: Vec<u8> = scored.iter().map(|s| s.label).collect();
    let nus: Vec<f64> = scored.iter().map(|s| s.nu).collect();
    let auc = roc_auc(&nus, &labels)?;
    let diagnoses: Vec<Diagnosis> = scored
        .iter()
        .map(|s| diagnose(s.nu, s.iota, thresholds))
        .collect();
    confusion_metrics(&diagnoses, &labels, auc)
}

/// AUCs on the known-subclass and novel-subclass test slices. Both
/// slices share the full set of test normals.
pub fn split_test_aucs(scored: &[ScoredExample]) -> Result<(f64, f64)> {
    let mut known_scores = Vec::new();
    let mut known_labels = Vec::new();
    let mut novel_scores = Vec::new();
    let mut novel_labels = Vec::new();
    for s in scored {
        if s.label == 0 {
            known_scores.push(s.nu);
            known_labels.push(0);
            novel_scores.push(s.nu);
            novel_labels.push(0);
        } else if s.subclass == NOVEL_SUBCLASS {
            novel_scores.push(s.nu);
            novel_labels.push(1);
        } else {
            known_scores.push(s.nu);
            known_labels.push(1);
        }
    }
    Ok((
        roc_auc(&known_scores, &known_labels)?,
        roc_auc(&novel_scores, &novel_labels)?,
    ))
}

/// Difference between the mean confidence on score-correct samples and
/// the mean confidence on score-incorrect samples, where correctness is
/// the pure score-threshold prediction (nu >= t_ano). A well-calibrated
/// confidence head makes this gap large.
pub fn confidence_separation(scored: &[ScoredExample], t_ano: f64) -> Result<f64> {
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    for s in scored {
        let predicted_positive = s.nu >= t_ano;
        if predicted_positive == (s.label == 1) {
            correct.push(s.iota);
        } else {
            wrong.push(s.iota);
        }
    }
    if correct.is_empty() || wrong.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "confidence separation undefined: {} correct, {} wrong",
            correct.len(),
            wrong.len()
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&correct) - mean(&wrong))
}

// ---------------------------------------------------------------------------
// Confidence-threshold sweep
// ---------------------------------------------------------------------------

pub const DEFAULT_SWEEP_GRID: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub t_conf: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub t_ano: f64,
    /// Threshold-free, so a single column shared by every row.
    pub auc: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&format!("t_conf={} {}\n", row.t_conf, row.report.to_line()));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>7} {:>9} {:>12} {:>12} {:>8}\n",
            "t_conf", "accuracy", "sensitivity", "specificity", "auc"
        );
        for row in &self.rows {
            out.push_str(&format!(
                "{:>7.2} {:>9.4} {:>12.4} {:>12.4} {:>8.4}\n",
                row.t_conf,
                row.report.accuracy,
                row.report.sensitivity,
                row.report.specificity,
                self.auc
            ));
        }
        out
    }
}

/// One row per confidence threshold on a fixed scored dataset.
pub fn confidence_sweep(
    model: &CaadModel,
    dataset: &Dataset,
    t_ano: f64,
    grid: &[f64],
) -> Result<SweepTable> {
    let scored = score_dataset(model, dataset)?;
    confidence_sweep_scored(&scored, t_ano, grid)
}

pub fn confidence_sweep_scored(
    scored: &[ScoredExample],
    t_ano: f64,
    grid: &[f64],
) -> Result<SweepTable> {
    let labels: Vec<u8> = scored.iter().map(|s| s.label).collect();
    let nus: Vec<f64> = scored.iter().map(|s| s.nu).collect();
    let auc = roc_auc(&nus, &labels)?;
    let rows = grid
        .iter()
        .map(|&t_conf| {
            let thresholds = DecisionThresholds { t_ano, t_conf };
            let diagnoses: Vec<Diagnosis> = scored
                .iter()
                .map(|s| diagnose(s.nu, s.iota, thresholds))
                .collect();
            Ok(SweepRow {
                t_conf,
                report: confusion_metrics(&diagnoses, &labels, auc)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { t_ano, auc, rows })
}

// ---------------------------------------------------------------------------
// Binary classification baseline
// ---------------------------------------------------------------------------

/// Sigmoid-output classifier on the same extractor architecture and
/// balanced sampler as the detector; scored by predicted probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryBaseline {
    pub extractor: Extractor,
    pub head: DenseNet,
}

impl BinaryBaseline {
    /// Predicted anomaly probability.
    pub fn probability(&self, payload: &crate::data::Payload) -> Result<f64> {
        let features = self.extractor.extract(payload)?;
        Ok(sigmoid(self.head.output(&features)?[0]))
    }
}

/// Numerically stable binary cross-entropy of a logit, and dL/dz.
/// For z = 0 the loss is ln 2 per sample; a confident correct logit
/// drives it toward 0.
pub fn binary_cross_entropy_from_logit(z: f64, label: u8) -> (f64, f64) {
    let y = f64::from(label);
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - y)
}

/// Trains the baseline with the stage-1 budget: same epochs, same SGD
/// ramp, same balanced batches, cross-entropy instead of the deviation
/// loss. The head keeps the scoring head's shape but is read through a
/// sigmoid.
pub fn train_binary_baseline(
    data: &Dataset,
    cfg: &TrainConfig,
    spec: &ModelSpec,
) -> Result<BinaryBaseline> {
    cfg.validate()?;
    let mut extractor = build_extractor(spec, cfg.seed, "init-binary-extractor")?;
    let mut head = anomaly::build_anomaly_head(
        extractor.output_dim(),
        &mut rng::stream(cfg.seed, "init-binary-head"),
    )?;

    let mut batcher = BalancedBatcher::new(data)?;
    let batches = batcher.batches_per_epoch(cfg.batch_size);
    let schedule = LrSchedule::linear(
        cfg.stage12_lr_initial,
        cfg.stage12_lr_final,
        (cfg.stage1_epochs * batches) as u64,
    )?;
    let mut batch_rng = rng::stream(cfg.seed, "binary-batch");
    let mut aug_rng = rng::stream(cfg.seed, "binary-augment");
    let inv_m = 1.0 / cfg.batch_size as f64;
    let mut step: u64 = 0;

    for epoch in 1..=cfg.stage1_epochs {
        for _ in 0..batches {
            let batch = batcher.next_batch(cfg.batch_size, &mut batch_rng);
            let mut head_grads = NetGradients::zeros_like(&head);
            let mut ext_grads = ExtractorGradients::zeros_like(&extractor);
            let mut batch_loss = 0.0;
            for &idx in &batch {
                let ex = &data.examples[idx];
                let payload = pipeline::train_payload(&extractor, ex, &cfg.augment, &mut aug_rng)?;
                let (features, ecache) = extractor.extract_with_cache(&payload)?;
                let cache = head.forward(&features)?;
                let z = cache.output()[0];
                let (loss, d_z) = binary_cross_entropy_from_logit(z, ex.label);
                batch_loss += loss;
                let d_features = head.backward_into(&cache, &[d_z * inv_m], &mut head_grads)?;
                if extractor.is_trainable() {
                    extractor.backward_into(&ecache, &d_features, &mut ext_grads)?;
                }
            }
            if !(batch_loss * inv_m).is_finite() {
                return Err(Error::Divergence {
                    context: format!("binary baseline epoch {epoch}"),
                    detail: format!("batch loss {}", batch_loss * inv_m),
                });
            }
            let lr = schedule.lr_at(step)?;
            crate::optim::sgd_step_net(&mut head, &head_grads, lr)?;
            for (p, g) in extractor
                .param_slices_mut()
                .into_iter()
                .zip(ext_grads.grad_slices())
            {
                crate::optim::sgd_step(p, g, lr)?;
            }
            step += 1;
        }
    }
    Ok(BinaryBaseline { extractor, head })
}

/// Scores a dataset with the baseline's predicted probability.
pub fn score_dataset_binary(
    baseline: &BinaryBaseline,
    dataset: &Dataset,
) -> Result<Vec<ScoredExample>> {
    dataset
        .examples
        .iter()
        .map(|ex| {
            let payload = pipeline::eval_payload(&baseline.extractor, ex)?;
            let p = baseline.probability(&payload)?;
            Ok(ScoredExample {
                id: ex.id.clone(),
                label: ex.label,
                subclass: ex.subclass.clone(),
                nu: p,
                iota: 1.0,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

pub const MODEL_CAAD: &str = "caad";
pub const MODEL_BINARY: &str = "binary";

/// Novel-class generalization protocol: train both models without the
/// novel anomaly cluster, evaluate on the known-class and novel-class
/// test slices, and report per-seed rows plus medians.
#[derive(Debug, Clone)]
pub struct ShiftConfig {
    pub synth: data::SynthTabularConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// How many stages the detector trains (the baseline always gets
    /// the stage-1 budget).
    pub caad_stages: u8,
    /// When set, the novel cluster also contributes training anomalies,
    /// which should shrink the known-vs-novel gap.
    pub include_novel_in_training: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftRow {
    pub model: &'static str,
    pub seed: u64,
    pub auc_known: f64,
    pub auc_novel: f64,
}

#[derive(Debug, Clone)]
pub struct ShiftReport {
    pub rows: Vec<ShiftRow>,
    pub median_known_caad: f64,
    pub median_known_binary: f64,
    pub median_novel_caad: f64,
    pub median_novel_binary: f64,
}

impl ShiftReport {
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "model={} seed={} auc_known={} auc_novel={}\n",
                r.model, r.seed, r.auc_known, r.auc_novel
            ));
        }
        out.push_str(&format!(
            "median model={MODEL_CAAD} auc_known={} auc_novel={}\n",
            self.median_known_caad, self.median_novel_caad
        ));
        out.push_str(&format!(
            "median model={MODEL_BINARY} auc_known={} auc_novel={}\n",
            self.median_known_binary, self.median_novel_binary
        ));
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>6} {:>10} {:>10}\n",
            "model", "seed", "auc_known", "auc_novel"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<8} {:>6} {:>10.4} {:>10.4}\n",
                r.model, r.seed, r.auc_known, r.auc_novel
            ));
        }
        out.push_str(&format!(
            "{:<8} {:>6} {:>10.4} {:>10.4}\n",
            MODEL_CAAD, "median", self.median_known_caad, self.median_novel_caad
        ));
        out.push_str(&format!(
            "{:<8} {:>6} {:>10.4} {:>10.4}\n",
            MODEL_BINARY, "median", self.median_known_binary, self.median_novel_binary
        ));
        out
    }
}

pub fn shift_experiment(cfg: &ShiftConfig) -> Result<ShiftReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("shift experiment needs seeds".into()));
    }
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let mut synth = cfg.synth.clone();
        synth.seed = seed;
        if cfg.include_novel_in_training {
            synth
                .known_anomaly_clusters
                .push(synth.novel_anomaly_cluster.clone());
        }
        let (train, test) = data::synth_tabular(&synth)?;
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = seed;

        let spec = ModelSpec::tabular(synth.dim);
        let mut model = CaadModel::build(&spec, seed)?;
        pipeline::train_full(&mut model, &train, &train_cfg, cfg.caad_stages)?;
        let scored = score_dataset(&model, &test)?;
        let (auc_known, auc_novel) = split_test_aucs(&scored)?;
        rows.push(ShiftRow {
            model: MODEL_CAAD,
            seed,
            auc_known,
            auc_novel,
        });

        let baseline = train_binary_baseline(&train, &train_cfg, &spec)?;
        let scored_b = score_dataset_binary(&baseline, &test)?;
        let (bk, bn) = split_test_aucs(&scored_b)?;
        rows.push(ShiftRow {
            model: MODEL_BINARY,
            seed,
            auc_known: bk,
            auc_novel: bn,
        });
    }
    let pick = |model: &str, novel: bool| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.model == model)
            .map(|r| if novel { r.auc_novel } else { r.auc_known })
            .collect()
    };
    Ok(ShiftReport {
        median_known_caad: median(&pick(MODEL_CAAD, false)),
        median_known_binary: median(&pick(MODEL_BINARY, false)),
        median_novel_caad: median(&pick(MODEL_CAAD, true)),
        median_novel_binary: median(&pick(MODEL_BINARY, true)),
        rows,
    })
}

/// Class-imbalance protocol: train at each positive fraction (keeping
/// every negative), evaluate on the novel-class slice, and compare the
/// degradation of the two models. Positive subsets are nested: the 10%
/// pool is a prefix of the 50% pool under one per-seed shuffle.
#[derive(Debug, Clone)]
pub struct ImbalanceConfig {
    pub synth: data::SynthTabularConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceRow {
    pub model: &'static str,
    pub fraction: f64,
    pub seed: u64,
    pub auc_novel: f64,
}

#[derive(Debug, Clone)]
pub struct ImbalanceReport {
    pub fractions: Vec<f64>,
    pub rows: Vec<ImbalanceRow>,
    /// (model, fraction, median AUC over seeds)
    pub medians: Vec<(&'static str, f64, f64)>,
}

impl ImbalanceReport {
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "model={} fraction={} seed={} auc_novel={}\n",
                r.model, r.fraction, r.seed, r.auc_novel
            ));
        }
        for (model, fraction, auc) in &self.medians {
            out.push_str(&format!(
                "median model={model} fraction={fraction} auc_novel={auc}\n"
            ));
        }
        out
    }

    pub fn median_for(&self, model: &str, fraction: f64) -> Option<f64> {
        self.medians
            .iter()
            .find(|(m, f, _)| *m == model && *f == fraction)
            .map(|(_, _, a)| *a)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>9} {:>6} {:>10}\n",
            "model", "fraction", "seed", "auc_novel"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<8} {:>9} {:>6} {:>10.4}\n",
                r.model, r.fraction, r.seed, r.auc_novel
            ));
        }
        for (model, fraction, auc) in &self.medians {
            out.push_str(&format!(
                "{:<8} {:>9} {:>6} {:>10.4}\n",
                model, fraction, "median", auc
            ));
        }
        out
    }

    /// Plain numeric columns (fraction, median caad, median binary) for
    /// external plotting.
    pub fn to_plot_columns(&self) -> String {
        let mut out = String::from("# fraction auc_caad auc_binary\n");
        for &f in &self.fractions {
            out.push_str(&format!(
                "{f} {} {}\n",
                self.median_for(MODEL_CAAD, f).unwrap_or(f64::NAN),
                self.median_for(MODEL_BINARY, f).unwrap_or(f64::NAN),
            ));
        }
        out
    }
}

/// Keeps all negatives and the first `ceil(fraction * n_pos)` positives
/// of a seeded shuffle.
fn subset_positives(train: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if fraction >= 1.0 {
        return Ok(train.clone());
    }
    let mut pos: Vec<usize> = train.indices_with_label(1);
    let mut r = rng::stream(seed, "imbalance-positive-subset");
    use rand::seq::SliceRandom;
    pos.shuffle(&mut r);
    let keep = ((fraction * pos.len() as f64).ceil() as usize).max(1);
    let kept: std::collections::HashSet<usize> = pos.into_iter().take(keep).collect();
    let examples: Vec<LabeledExample> = train
        .examples
        .iter()
        .enumerate()
        .filter(|(i, e)| e.label == 0 || kept.contains(i))
        .map(|(_, e)| e.clone())
        .collect();
    Dataset::assemble(train.kind, examples, train.meta.seed)
}

/// The anomaly side trains the scoring path only (stage 1); its AUC is
/// a function of the anomaly score alone, matching the no-confidence
/// variant the degradation comparison is defined on.
pub fn imbalance_experiment(cfg: &ImbalanceConfig) -> Result<ImbalanceReport> {
    if cfg.seeds.is_empty() || cfg.fractions.is_empty() {
        return Err(Error::Config(
            "imbalance experiment needs seeds and fractions".into(),
        ));
    }
    for &f in &cfg.fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("fraction {f} outside (0,1]")));
        }
    }
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let mut synth = cfg.synth.clone();
        synth.seed = seed;
        let (train_full_set, test) = data::synth_tabular(&synth)?;
        for &fraction in &cfg.fractions {
            let train = subset_positives(&train_full_set, fraction, seed)?;
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = seed;
            let spec = ModelSpec::tabular(synth.dim);

            let mut model = CaadModel::build(&spec, seed)?;
            pipeline::train_stage1(&mut model, &train, &train_cfg)?;
            let scored = score_dataset(&model, &test)?;
            let (_, auc_novel) = split_test_aucs(&scored)?;
            rows.push(ImbalanceRow {
                model: MODEL_CAAD,
                fraction,
                seed,
                auc_novel,
            });

            let baseline = train_binary_baseline(&train, &train_cfg, &spec)?;
            let scored_b = score_dataset_binary(&baseline, &test)?;
            let (_, auc_b) = split_test_aucs(&scored_b)?;
            rows.push(ImbalanceRow {
                model: MODEL_BINARY,
                fraction,
                seed,
                auc_novel: auc_b,
            });
        }
    }
    let mut medians = Vec::new();
    for model in [MODEL_CAAD, MODEL_BINARY] {
        for &fraction in &cfg.fractions {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.model == model && r.fraction == fraction)
                .map(|r| r.auc_novel)
                .collect();
            medians.push((model, fraction, median(&v)));
        }
    }
    Ok(ImbalanceReport {
        fractions: cfg.fractions.clone(),
        rows,
        medians,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Decision;

    #[test]
    fn auc_of_perfect_ranking_is_one() {
        let auc = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn auc_counts_pairwise_wins() {
        // pairs: (0.9 vs 0.4, 0.9 vs 0.1, 0.3 vs 0.4, 0.3 vs 0.1) -> 3 wins of 4
        let auc = roc_auc(&[0.9, 0.3, 0.4, 0.1], &[1, 1, 0, 0]).unwrap();
        assert!((auc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auc_of_constant_scores_is_half() {
        let auc = roc_auc(&[0.5; 6], &[1, 0, 1, 0, 1, 0]).unwrap();
        assert!((auc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auc_rejects_single_class() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    /// Brute-force oracle: count wins and half-ties over all pairs.
    fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_matches_bruteforce_pair_counting() {
        use rand::Rng as _;
        let mut r = rng::stream(31, "auc");
        for _ in 0..300 {
            let n = r.random_range(2..=50);
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.random::<bool>())).collect();
            labels[0] = 0;
            labels[1] = 1;
            // Coarse grid so ties actually occur.
            let scores: Vec<f64> = (0..n)
                .map(|_| f64::from(r.random_range(0..8)) / 8.0)
                .collect();
            let fast = roc_auc(&scores, &labels).unwrap();
            let slow = auc_oracle(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms_and_flips_under_negation() {
        use rand::Rng as _;
        let mut r = rng::stream(32, "auc2");
        for _ in 0..50 {
            let n = r.random_range(4..=40);
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.random::<bool>())).collect();
            labels[0] = 0;
            labels[1] = 1;
            // Distinct scores so negation symmetry is exact.
            let scores: Vec<f64> = (0..n).map(|i| i as f64 + r.random::<f64>() * 0.5).collect();
            let base = roc_auc(&scores, &labels).unwrap();
            let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.3).exp() + 7.0).collect();
            let t = roc_auc(&transformed, &labels).unwrap();
            assert!((base - t).abs() < 1e-12);
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            let neg = roc_auc(&negated, &labels).unwrap();
            assert!((base + neg - 1.0).abs() < 1e-12);
        }
    }

    fn diag(nu: f64, iota: f64) -> Diagnosis {
        diagnose(
            nu,
            iota,
            DecisionThresholds {
                t_ano: 1.18,
                t_conf: 0.9,
            },
        )
    }

    #[test]
    fn confusion_metrics_on_perfect_predictions() {
        let diagnoses = vec![diag(2.0, 0.95), diag(0.1, 0.95)];
        let labels = vec![1, 0];
        let m = confusion_metrics(&diagnoses, &labels, 1.0).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.sensitivity, 1.0);
        assert_eq!(m.specificity, 1.0);
        assert_eq!((m.tp, m.fp, m.tn, m.fn_count), (1, 0, 1, 0));
    }

    #[test]
    fn all_positive_predictions_max_sensitivity_zero_specificity() {
        let diagnoses = vec![diag(2.0, 0.95), diag(2.0, 0.95)];
        let labels = vec![1, 0];
        let m = confusion_metrics(&diagnoses, &labels, 0.5).unwrap();
        assert_eq!(m.sensitivity, 1.0);
        assert_eq!(m.specificity, 0.0);
    }

    #[test]
    fn confusion_metrics_match_the_reported_operating_point_shape() {
        // counts (TP=93, FN=7, TN=68, FP=32): arithmetic check of the
        // formulas at a familiar operating point.
        let mut diagnoses = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..93 {
            diagnoses.push(diag(2.0, 0.95));
            labels.push(1);
        }
        for _ in 0..7 {
            diagnoses.push(diag(0.1, 0.95));
            labels.push(1);
        }
        for _ in 0..68 {
            diagnoses.push(diag(0.1, 0.95));
            labels.push(0);
        }
        for _ in 0..32 {
            diagnoses.push(diag(2.0, 0.95));
            labels.push(0);
        }
        let m = confusion_metrics(&diagnoses, &labels, 0.8).unwrap();
        assert!((m.sensitivity - 0.93).abs() < 1e-12);
        assert!((m.specificity - 0.68).abs() < 1e-12);
        assert!((m.accuracy - 161.0 / 200.0).abs() < 1e-12);
        assert_eq!(m.n, 200);
    }

    #[test]
    fn cross_entropy_trivial_values() {
        let (perfect_pos, _) = binary_cross_entropy_from_logit(20.0, 1);
        assert!(perfect_pos < 1e-8);
        let (perfect_neg, _) = binary_cross_entropy_from_logit(-20.0, 0);
        assert!(perfect_neg < 1e-8);
        let (uniform, _) = binary_cross_entropy_from_logit(0.0, 1);
        assert!((uniform - 2.0_f64.ln()).abs() < 1e-15);
        let (uniform0, _) = binary_cross_entropy_from_logit(0.0, 0);
        assert!((uniform0 - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let h = 1e-6;
        for &z in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            for label in [0u8, 1u8] {
                let (_, analytic) = binary_cross_entropy_from_logit(z, label);
                let (plus, _) = binary_cross_entropy_from_logit(z + h, label);
                let (minus, _) = binary_cross_entropy_from_logit(z - h, label);
                let numeric = (plus - minus) / (2.0 * h);
                assert!((analytic - numeric).abs() < 1e-6, "z={z} y={label}");
            }
        }
    }

    #[test]
    fn roc_points_anchor_monotone_and_integrate_to_the_auc() {
        use rand::Rng as _;
        let mut r = rng::stream(33, "roc-pts");
        for _ in 0..50 {
            let n = r.random_range(4..=40);
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.random::<bool>())).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n)
                .map(|_| f64::from(r.random_range(0..6)) / 6.0)
                .collect();
            let pts = roc_points(&scores, &labels).unwrap();
            assert_eq!(pts[0], (0.0, 0.0, f64::INFINITY));
            assert_eq!((pts.last().unwrap().0, pts.last().unwrap().1), (1.0, 1.0));
            let mut area = 0.0;
            for w in pts.windows(2) {
                assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1, "roc must be monotone");
                area += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
            }
            let auc = roc_auc(&scores, &labels).unwrap();
            assert!((area - auc).abs() < 1e-12, "trapezoid {area} vs rank {auc}");
        }
    }

    #[test]
    fn median_of_odd_and_even_sets() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    fn synthetic_scored() -> Vec<ScoredExample> {
        // Anomalies score high with high confidence except two failures.
        let mut v = Vec::new();
        for i in 0..10 {
            v.push(ScoredExample {
                id: format!("n{i}"),
                label: 0,
                subclass: "n0".into(),
                nu: 0.1 * i as f64 / 10.0,
                iota: 0.95,
            });
        }
        for i in 0..8 {
            v.push(ScoredExample {
                id: format!("a{i}"),
                label: 1,
                subclass: if i < 4 {
                    "a0".into()
                } else {
                    NOVEL_SUBCLASS.into()
                },
                nu: 2.0 + i as f64 * 0.1,
                iota: 0.9,
            });
        }
        // failures: one missed anomaly, one high-scoring normal
        v.push(ScoredExample {
            id: "miss".into(),
            label: 1,
            subclass: "a0".into(),
            nu: 0.05,
            iota: 0.3,
        });
        v.push(ScoredExample {
            id: "fa".into(),
            label: 0,
            subclass: "n0".into(),
            nu: 3.0,
            iota: 0.2,
        });
        v
    }

    #[test]
    fn sweep_is_monotone_and_shares_auc() {
        let scored = synthetic_scored();
        let grid = [0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
        let table = confidence_sweep_scored(&scored, 1.18, &grid).unwrap();
        for w in table.rows.windows(2) {
            assert!(w[1].report.sensitivity >= w[0].report.sensitivity);
            assert!(w[1].report.specificity <= w[0].report.specificity);
            assert_eq!(w[0].report.auc, w[1].report.auc);
        }
    }

    #[test]
    fn sweep_at_zero_threshold_equals_score_only_classification() {
        let scored = synthetic_scored();
        let table = confidence_sweep_scored(&scored, 1.18, &[0.0]).unwrap();
        let row = &table.rows[0].report;
        // score-only classification computed directly
        let mut tp = 0;
        let mut fn_count = 0;
        let mut tn = 0;
        let mut fp = 0;
        for s in &scored {
            match (s.label, s.nu >= 1.18) {
                (1, true) => tp += 1,
                (1, false) => fn_count += 1,
                (0, true) => fp += 1,
                (0, false) => tn += 1,
                _ => unreachable!(),
            }
        }
        assert_eq!(
            (row.tp, row.fp, row.tn, row.fn_count),
            (tp, fp, tn, fn_count)
        );
    }

    #[test]
    fn confidence_separation_measures_the_gap() {
        let scored = synthetic_scored();
        let sep = confidence_separation(&scored, 1.18).unwrap();
        // correct examples carry iota ~0.9..0.95, the two failures 0.3 and 0.2
        assert!(sep > 0.5, "separation {sep}");
    }

    #[test]
    fn split_aucs_use_disjoint_anomaly_slices() {
        let scored = synthetic_scored();
        let (known, novel) = split_test_aucs(&scored).unwrap();
        assert!(known > 0.5 && novel > 0.5);
    }

    #[test]
    fn subset_positives_keeps_all_negatives_and_is_nested() {
        let synth = {
            let mut s = data::SynthTabularConfig::default_for_seed(5);
            s.n_train_normal = 100;
            s.n_train_anomaly = 40;
            s
        };
        let (train, _) = data::synth_tabular(&synth).unwrap();
        let half = subset_positives(&train, 0.5, 5).unwrap();
        let tenth = subset_positives(&train, 0.1, 5).unwrap();
        assert_eq!(half.meta.n_normal, 100);
        assert_eq!(half.meta.n_anomaly, 20);
        assert_eq!(tenth.meta.n_anomaly, 4);
        let half_ids: std::collections::HashSet<String> = half
            .examples
            .iter()
            .filter(|e| e.label == 1)
            .map(|e| e.id.clone())
            .collect();
        for e in tenth.examples.iter().filter(|e| e.label == 1) {
            assert!(half_ids.contains(&e.id), "10% pool must nest inside 50%");
        }
    }

    #[test]
    fn evaluate_scored_uses_the_dual_threshold_rule() {
        let scored = synthetic_scored();
        let m = evaluate_scored(
            &scored,
            DecisionThresholds {
                t_ano: 1.18,
                t_conf: 0.9,
            },
        )
        .unwrap();
        assert_eq!(m.n, scored.len());
        // the missed anomaly has iota 0.3 < 0.9, so the confidence
        // branch rescues it
        let rescued = scored.iter().find(|s| s.id == "miss").unwrap();
        let d = diagnose(rescued.nu, rescued.iota, m.thresholds);
        assert_eq!(d.decision, Decision::Positive);
    }
}
