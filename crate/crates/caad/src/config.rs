//! Run configuration: a flat `key = value` text format with `#`
//! comments. Unknown keys are errors (they are usually typos), and
//! parse errors carry line numbers. The full key set with defaults is
//! documented in `docs/FORMATS.md`; `Config::to_text` writes the
//! resolved form embedded in run manifests.

use std::path::Path;

use crate::anomaly::GaussianPrior;
use crate::confidence::{boundary_score, DecisionThresholds, PdfDenominator, DEFAULT_T_CONF};
use crate::data::{ClusterSpec, Dataset, DatasetKind, SynthImageConfig, SynthTabularConfig};
use crate::error::{Error, Result};
use crate::model::{ExtractorKind, ModelSpec};
use crate::pipeline::{AugmentConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,

    // model
    pub extractor: ExtractorKind,
    /// None = auto: the dataset dimension for identity, 32 for tiny_cnn.
    pub feature_dim: Option<usize>,
    pub margin: f64,
    pub ref_count: usize,
    pub prior_mu: f64,
    pub prior_sigma: f64,
    pub pdf_denominator: PdfDenominator,
    /// None = derive from the boundary score of probability 0.5.
    pub t_ano: Option<f64>,
    pub t_conf: f64,

    // training
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    pub stage12_lr_initial: f64,
    pub stage12_lr_final: f64,
    pub stage3_lr: f64,
    pub w_ano: f64,
    pub w_conf: f64,
    pub crop_fraction: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
    pub flip_prob: f64,

    // synthetic data
    pub synth_kind: DatasetKind,
    pub synth_dim: usize,
    pub synth_image_size: usize,
    pub synth_train_normal: usize,
    pub synth_train_anomaly: usize,
    pub synth_test_normal: usize,
    pub synth_test_known_anomaly: usize,
    pub synth_test_novel_anomaly: usize,
    pub label_noise: f64,
    /// None = the built-in default geometry (requires synth_dim = 8).
    pub synth_normal_clusters: Option<Vec<ClusterSpec>>,
    pub synth_known_anomaly_clusters: Option<Vec<ClusterSpec>>,
    pub synth_novel_cluster: Option<ClusterSpec>,

    // experiments
    pub experiment_seeds: usize,
    pub experiment_fractions: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        let synth = SynthTabularConfig::default_for_seed(42);
        Config {
            seed: 42,
            extractor: ExtractorKind::Identity,
            feature_dim: None,
            margin: 5.0,
            ref_count: 5000,
            prior_mu: 0.0,
            prior_sigma: 1.0,
            pdf_denominator: PdfDenominator::TwoSigma,
            t_ano: None,
            t_conf: DEFAULT_T_CONF,
            batch_size: 40,
            stage1_epochs: 20,
            stage2_epochs: 20,
            stage3_epochs: 10,
            stage12_lr_initial: 5e-4,
            stage12_lr_final: 1e-6,
            stage3_lr: 1e-7,
            w_ano: 1.0,
            w_conf: 1.0,
            crop_fraction: 0.875,
            zoom_min: 0.9,
            zoom_max: 1.1,
            flip_prob: 0.5,
            synth_kind: DatasetKind::Tabular,
            synth_dim: synth.dim,
            synth_image_size: 32,
            synth_train_normal: synth.n_train_normal,
            synth_train_anomaly: synth.n_train_anomaly,
            synth_test_normal: synth.n_test_normal,
            synth_test_known_anomaly: synth.n_test_known_anomaly,
            synth_test_novel_anomaly: synth.n_test_novel_anomaly,
            label_noise: 0.0,
            synth_normal_clusters: None,
            synth_known_anomaly_clusters: None,
            synth_novel_cluster: None,
            experiment_seeds: 5,
            experiment_fractions: vec![1.0, 0.5, 0.1],
        }
    }
}

fn parse_cluster(text: &str, tag: &str) -> Result<ClusterSpec> {
    let (mean_s, scale_s) = text
        .split_once('@')
        .ok_or_else(|| Error::Config(format!("cluster {text:?} missing '@scale'")))?;
    let mean = mean_s
        .split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad cluster coordinate {c:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let scale = scale_s
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("bad cluster scale {scale_s:?}")))?;
    Ok(ClusterSpec::new(mean, scale, tag))
}

fn parse_clusters(text: &str, prefix: &str) -> Result<Vec<ClusterSpec>> {
    text.split('|')
        .enumerate()
        .map(|(i, c)| parse_cluster(c.trim(), &format!("{prefix}{i}")))
        .collect()
}

fn cluster_to_text(c: &ClusterSpec) -> String {
    let mean: Vec<String> = c.mean.iter().map(|v| format!("{v}")).collect();
    format!("{}@{}", mean.join(","), c.scale)
}

fn clusters_to_text(cs: &[ClusterSpec]) -> String {
    cs.iter()
        .map(cluster_to_text)
        .collect::<Vec<_>>()
        .join(" | ")
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {lineno}: expected 'key = value', got {raw:?}"
                ))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {lineno}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Config::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Sets one key from its text form. Used by the parser and by the
    /// CLI's flag/env overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "extractor" => self.extractor = value.parse()?,
            "feature_dim" => {
                self.feature_dim = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "margin" => self.margin = num(key, value)?,
            "ref_count" => self.ref_count = num(key, value)?,
            "prior_mu" => self.prior_mu = num(key, value)?,
            "prior_sigma" => self.prior_sigma = num(key, value)?,
            "pdf_denominator" => {
                self.pdf_denominator = match value {
                    "two_sigma" => PdfDenominator::TwoSigma,
                    "two_sigma_squared" => PdfDenominator::TwoSigmaSquared,
                    other => {
                        return Err(Error::Config(format!(
                            "bad pdf_denominator {other:?} (two_sigma | two_sigma_squared)"
                        )))
                    }
                }
            }
            "t_ano" => {
                self.t_ano = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "t_conf" => self.t_conf = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "stage1_epochs" => self.stage1_epochs = num(key, value)?,
            "stage2_epochs" => self.stage2_epochs = num(key, value)?,
            "stage3_epochs" => self.stage3_epochs = num(key, value)?,
            "stage12_lr_initial" => self.stage12_lr_initial = num(key, value)?,
            "stage12_lr_final" => self.stage12_lr_final = num(key, value)?,
            "stage3_lr" => self.stage3_lr = num(key, value)?,
            "w_ano" => self.w_ano = num(key, value)?,
            "w_conf" => self.w_conf = num(key, value)?,
            "crop_fraction" => self.crop_fraction = num(key, value)?,
            "zoom_min" => self.zoom_min = num(key, value)?,
            "zoom_max" => self.zoom_max = num(key, value)?,
            "flip_prob" => self.flip_prob = num(key, value)?,
            "synth_kind" => {
                self.synth_kind = match value {
                    "tabular" => DatasetKind::Tabular,
                    "image" => DatasetKind::Image,
                    other => {
                        return Err(Error::Config(format!(
                            "bad synth_kind {other:?} (tabular | image)"
                        )))
                    }
                }
            }
            "synth_dim" => self.synth_dim = num(key, value)?,
            "synth_image_size" => self.synth_image_size = num(key, value)?,
            "synth_train_normal" => self.synth_train_normal = num(key, value)?,
            "synth_train_anomaly" => self.synth_train_anomaly = num(key, value)?,
            "synth_test_normal" => self.synth_test_normal = num(key, value)?,
            "synth_test_known_anomaly" => self.synth_test_known_anomaly = num(key, value)?,
            "synth_test_novel_anomaly" => self.synth_test_novel_anomaly = num(key, value)?,
            "label_noise" => self.label_noise = num(key, value)?,
            "synth_normal_clusters" => {
                self.synth_normal_clusters = Some(parse_clusters(value, "n")?)
            }
            "synth_known_anomaly_clusters" => {
                self.synth_known_anomaly_clusters = Some(parse_clusters(value, "a")?)
            }
            "synth_novel_cluster" => {
                self.synth_novel_cluster = Some(parse_cluster(value, crate::data::NOVEL_SUBCLASS)?)
            }
            "experiment_seeds" => self.experiment_seeds = num(key, value)?,
            "experiment_fractions" => {
                self.experiment_fractions = value
                    .split(',')
                    .map(|f| num::<f64>(key, f.trim()))
                    .collect::<Result<Vec<f64>>>()?
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prior_sigma > 0.0) {
            return Err(Error::Config("prior_sigma must be positive".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config("margin must be positive".into()));
        }
        if self.ref_count < 2 {
            return Err(Error::Config("ref_count must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.t_conf) {
            return Err(Error::Config("t_conf must be in [0,1]".into()));
        }
        if self.experiment_seeds == 0 {
            return Err(Error::Config("experiment_seeds must be positive".into()));
        }
        self.train_config().validate()?;
        if self.synth_kind == DatasetKind::Tabular {
            self.synth_tabular_config().validate_public()?;
        }
        Ok(())
    }

    pub fn prior(&self) -> GaussianPrior {
        GaussianPrior {
            mu: self.prior_mu,
            sigma: self.prior_sigma,
        }
    }

    /// T_ano from the config, or re-derived from the prior when unset.
    pub fn thresholds(&self) -> Result<DecisionThresholds> {
        let t_ano = match self.t_ano {
            Some(t) => t,
            None => boundary_score(0.5, self.prior(), self.pdf_denominator)?,
        };
        Ok(DecisionThresholds {
            t_ano,
            t_conf: self.t_conf,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            stage1_epochs: self.stage1_epochs,
            stage2_epochs: self.stage2_epochs,
            stage3_epochs: self.stage3_epochs,
            stage12_lr_initial: self.stage12_lr_initial,
            stage12_lr_final: self.stage12_lr_final,
            stage3_lr: self.stage3_lr,
            w_ano: self.w_ano,
            w_conf: self.w_conf,
            ref_count: self.ref_count,
            adam: crate::optim::AdamParams::default(),
            augment: AugmentConfig {
                crop_fraction: self.crop_fraction,
                zoom_range: (self.zoom_min, self.zoom_max),
                flip_prob: self.flip_prob,
            },
            seed: self.seed,
        }
    }

    pub fn synth_tabular_config(&self) -> SynthTabularConfig {
        let mut cfg = SynthTabularConfig::default_for_seed(self.seed);
        cfg.dim = self.synth_dim;
        cfg.n_train_normal = self.synth_train_normal;
        cfg.n_train_anomaly = self.synth_train_anomaly;
        cfg.n_test_normal = self.synth_test_normal;
        cfg.n_test_known_anomaly = self.synth_test_known_anomaly;
        cfg.n_test_novel_anomaly = self.synth_test_novel_anomaly;
        cfg.label_noise = self.label_noise;
        if let Some(c) = &self.synth_normal_clusters {
            cfg.normal_clusters = c.clone();
        }
        if let Some(c) = &self.synth_known_anomaly_clusters {
            cfg.known_anomaly_clusters = c.clone();
        }
        if let Some(c) = &self.synth_novel_cluster {
            cfg.novel_anomaly_cluster = c.clone();
        }
        cfg
    }

    pub fn synth_image_config(&self) -> SynthImageConfig {
        SynthImageConfig {
            size: self.synth_image_size,
            n_train_normal: self.synth_train_normal,
            n_train_anomaly: self.synth_train_anomaly,
            n_test_normal: self.synth_test_normal,
            n_test_known_anomaly: self.synth_test_known_anomaly,
            n_test_novel_anomaly: self.synth_test_novel_anomaly,
            seed: self.seed,
        }
    }

    /// Model spec resolved against the dataset the model will train or
    /// evaluate on.
    pub fn model_spec_for(&self, dataset: &Dataset) -> Result<ModelSpec> {
        match self.extractor {
            ExtractorKind::Identity => {
                let dim = dataset.dim.ok_or_else(|| {
                    Error::Config("identity extractor needs a tabular dataset".into())
                })?;
                if let Some(d) = self.feature_dim {
                    if d != dim {
                        return Err(Error::Config(format!(
                            "feature_dim {d} does not match dataset dimension {dim}"
                        )));
                    }
                }
                Ok(ModelSpec {
                    extractor: ExtractorKind::Identity,
                    feature_dim: dim,
                    image_input: None,
                    prior: self.prior(),
                    margin: self.margin,
                    pdf_denominator: self.pdf_denominator,
                })
            }
            ExtractorKind::TinyCnn => {
                let (h, w) = dataset.image_shape.ok_or_else(|| {
                    Error::Config("tiny_cnn extractor needs an image dataset".into())
                })?;
                let crop = AugmentConfig {
                    crop_fraction: self.crop_fraction,
                    zoom_range: (self.zoom_min, self.zoom_max),
                    flip_prob: self.flip_prob,
                }
                .crop_size(h.min(w));
                Ok(ModelSpec {
                    extractor: ExtractorKind::TinyCnn,
                    feature_dim: self.feature_dim.unwrap_or(32),
                    image_input: Some((crop, crop)),
                    prior: self.prior(),
                    margin: self.margin,
                    pdf_denominator: self.pdf_denominator,
                })
            }
        }
    }

    /// Seeds for multi-seed experiments, derived from the root seed.
    pub fn experiment_seed_list(&self) -> Vec<u64> {
        (0..self.experiment_seeds as u64)
            .map(|i| self.seed.wrapping_add(i))
            .collect()
    }

    /// Resolved text form, parseable by [`Config::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("seed", self.seed.to_string());
        kv("extractor", self.extractor.to_string());
        kv(
            "feature_dim",
            self.feature_dim.map_or("auto".into(), |d| d.to_string()),
        );
        kv("margin", self.margin.to_string());
        kv("ref_count", self.ref_count.to_string());
        kv("prior_mu", self.prior_mu.to_string());
        kv("prior_sigma", self.prior_sigma.to_string());
        kv(
            "pdf_denominator",
            match self.pdf_denominator {
                PdfDenominator::TwoSigma => "two_sigma".into(),
                PdfDenominator::TwoSigmaSquared => "two_sigma_squared".into(),
            },
        );
        kv("t_ano", self.t_ano.map_or("auto".into(), |t| t.to_string()));
        kv("t_conf", self.t_conf.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("stage1_epochs", self.stage1_epochs.to_string());
        kv("stage2_epochs", self.stage2_epochs.to_string());
        kv("stage3_epochs", self.stage3_epochs.to_string());
        kv("stage12_lr_initial", self.stage12_lr_initial.to_string());
        kv("stage12_lr_final", self.stage12_lr_final.to_string());
        kv("stage3_lr", self.stage3_lr.to_string());
        kv("w_ano", self.w_ano.to_string());
        kv("w_conf", self.w_conf.to_string());
        kv("crop_fraction", self.crop_fraction.to_string());
        kv("zoom_min", self.zoom_min.to_string());
        kv("zoom_max", self.zoom_max.to_string());
        kv("flip_prob", self.flip_prob.to_string());
        kv(
            "synth_kind",
            match self.synth_kind {
                DatasetKind::Tabular => "tabular".into(),
                DatasetKind::Image => "image".into(),
            },
        );
        kv("synth_dim", self.synth_dim.to_string());
        kv("synth_image_size", self.synth_image_size.to_string());
        kv("synth_train_normal", self.synth_train_normal.to_string());
        kv("synth_train_anomaly", self.synth_train_anomaly.to_string());
        kv("synth_test_normal", self.synth_test_normal.to_string());
        kv(
            "synth_test_known_anomaly",
            self.synth_test_known_anomaly.to_string(),
        );
        kv(
            "synth_test_novel_anomaly",
            self.synth_test_novel_anomaly.to_string(),
        );
        kv("label_noise", self.label_noise.to_string());
        let resolved = self.synth_tabular_config();
        kv(
            "synth_normal_clusters",
            clusters_to_text(&resolved.normal_clusters),
        );
        kv(
            "synth_known_anomaly_clusters",
            clusters_to_text(&resolved.known_anomaly_clusters),
        );
        kv(
            "synth_novel_cluster",
            cluster_to_text(&resolved.novel_anomaly_cluster),
        );
        kv("experiment_seeds", self.experiment_seeds.to_string());
        kv(
            "experiment_fractions",
            self.experiment_fractions
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        s
    }
}

// SynthTabularConfig::validate is private to data.rs; re-expose the
// check config validation needs.
trait ValidatePublic {
    fn validate_public(&self) -> Result<()>;
}

impl ValidatePublic for SynthTabularConfig {
    fn validate_public(&self) -> Result<()> {
        // synth_tabular re-validates on use; here we only catch the
        // cluster/dimension mismatches early for better CLI errors.
        for c in self
            .normal_clusters
            .iter()
            .chain(self.known_anomaly_clusters.iter())
            .chain(std::iter::once(&self.novel_anomaly_cluster))
        {
            if c.mean.len() != self.dim {
                return Err(Error::Config(format!(
                    "cluster {} mean has dimension {}, expected synth_dim {}",
                    c.tag,
                    c.mean.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }
}
