//! Anomaly scoring and the deviation loss against a sampled Gaussian
//! reference.
//!
//! The scoring head maps the shared feature vector to an unbounded
//! scalar. Each training batch draws a fresh reference score
//! (mu_R, sigma_R) from l Gaussian samples; the loss pulls normal
//! scores onto mu_R and pushes anomaly scores at least `margin`
//! standardized units above it.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::net::{Activation, DenseNet};
use crate::rng::Rng;

/// Prior for both the reference draws and the probability
/// normalization. Defaults to the standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrior {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for GaussianPrior {
    fn default() -> Self {
        GaussianPrior {
            mu: 0.0,
            sigma: 1.0,
        }
    }
}

/// Default number of Gaussian draws per reference.
pub const DEFAULT_REF_COUNT: usize = 5000;

/// Hidden width of both heads.
pub const HIDDEN_WIDTH: usize = 100;

/// Empirical mean and population standard deviation of `l` draws from
/// the prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceStats {
    pub mu_r: f64,
    pub sigma_r: f64,
    pub l: usize,
    pub prior: GaussianPrior,
}

const MIN_SIGMA_R: f64 = 1e-6;
const MAX_RESAMPLE_ATTEMPTS: usize = 16;

/// Draws `l` values from N(mu, sigma^2) and summarizes them. A draw
/// with sigma_R below 1e-6 is rejected and resampled; after
/// `MAX_RESAMPLE_ATTEMPTS` degenerate draws this errors out.
pub fn sample_reference(
    l: usize,
    prior: GaussianPrior,
    rng: &mut impl rand::Rng,
) -> Result<ReferenceStats> {
    if l < 2 {
        return Err(Error::InvalidArgument(format!(
            "reference needs l >= 2 draws, got {l}"
        )));
    }
    if !(prior.sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "reference prior sigma must be positive, got {}",
            prior.sigma
        )));
    }
    let dist = Normal::new(prior.mu, prior.sigma)
        .map_err(|e| Error::InvalidArgument(format!("reference prior: {e}")))?;
    for _ in 0..MAX_RESAMPLE_ATTEMPTS {
        let draws: Vec<f64> = (0..l).map(|_| dist.sample(rng)).collect();
        let mu_r = draws.iter().sum::<f64>() / l as f64;
        let var = draws.iter().map(|r| (r - mu_r) * (r - mu_r)).sum::<f64>() / l as f64;
        let sigma_r = var.sqrt();
        if sigma_r >= MIN_SIGMA_R {
            return Ok(ReferenceStats {
                mu_r,
                sigma_r,
                l,
                prior,
            });
        }
    }
    Err(Error::InvalidArgument(format!(
        "reference draws degenerate (sigma_R < {MIN_SIGMA_R}) after {MAX_RESAMPLE_ATTEMPTS} attempts"
    )))
}

/// Interface for scoring objectives, so alternative one-class losses
/// can slot in for comparison runs. The deviation loss is the only
/// implementation shipped.
pub trait ScoringObjective {
    /// Per-sample loss and its derivative w.r.t. the score.
    fn loss(&self, nu: f64, label: u8, reference: &ReferenceStats) -> Result<(f64, f64)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationLossConfig {
    /// Z-score confidence-interval parameter of the hinge.
    pub margin: f64,
}

impl ScoringObjective for DeviationLossConfig {
    fn loss(&self, nu: f64, label: u8, reference: &ReferenceStats) -> Result<(f64, f64)> {
        deviation_loss(nu, label, reference, self)
    }
}

impl Default for DeviationLossConfig {
    fn default() -> Self {
        DeviationLossConfig { margin: 5.0 }
    }
}

/// Deviation loss for one sample and its derivative w.r.t. the score.
///
/// With z = (nu - mu_R) / sigma_R:
/// - y = 0: |z|, subgradient 0 at z = 0
/// - y = 1: max(0, margin - z), subgradient 0 at the hinge boundary
pub fn deviation_loss(
    nu: f64,
    label: u8,
    reference: &ReferenceStats,
    cfg: &DeviationLossConfig,
) -> Result<(f64, f64)> {
    if !(reference.sigma_r > 0.0) {
        return Err(Error::InvalidArgument("sigma_R must be positive".into()));
    }
    if !(cfg.margin > 0.0) {
        return Err(Error::InvalidArgument("margin must be positive".into()));
    }
    let z = (nu - reference.mu_r) / reference.sigma_r;
    match label {
        0 => {
            let loss = z.abs();
            let d_nu = if z > 0.0 {
                1.0 / reference.sigma_r
            } else if z < 0.0 {
                -1.0 / reference.sigma_r
            } else {
                0.0
            };
            Ok((loss, d_nu))
        }
        1 => {
            if z < cfg.margin {
                Ok((cfg.margin - z, -1.0 / reference.sigma_r))
            } else {
                Ok((0.0, 0.0))
            }
        }
        other => Err(Error::InvalidArgument(format!(
            "label {other} outside {{0,1}}"
        ))),
    }
}

/// Scoring head: three 100-neuron relu hidden layers and a one-neuron
/// linear output, so the score is unbounded in both directions.
pub fn build_anomaly_head(feature_dim: usize, rng: &mut Rng) -> Result<DenseNet> {
    DenseNet::init(
        feature_dim,
        &[
            (HIDDEN_WIDTH, Activation::Relu),
            (HIDDEN_WIDTH, Activation::Relu),
            (HIDDEN_WIDTH, Activation::Relu),
            (1, Activation::Linear),
        ],
        rng,
    )
}

/// Scalar anomaly score of a feature vector.
pub fn score(head: &DenseNet, features: &[f64]) -> Result<f64> {
    if head.output_dim() != 1 {
        return Err(Error::InvalidArgument(
            "anomaly head must have a one-neuron output".into(),
        ));
    }
    Ok(head.output(features)?[0])
}

/// Per-sample scores for a batch; semantically identical to scoring one
/// at a time.
pub fn score_batch(head: &DenseNet, features: &[Vec<f64>]) -> Result<Vec<f64>> {
    features.iter().map(|f| score(head, f)).collect()
}
