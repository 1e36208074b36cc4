//! Confidence prediction: probability normalization of the anomaly
//! score, the label-conditioned confidence target, the confidence head
//! and its loss, and the boundary-score derivation behind the anomaly
//! threshold.

use crate::anomaly::{GaussianPrior, HIDDEN_WIDTH};
use crate::error::{Error, Result};
use crate::net::{Activation, DenseNet};
use crate::rng::Rng;

/// Which denominator the normalized-PDF probability uses. `TwoSigma`
/// is the primary form; `TwoSigmaSquared` is available for sensitivity
/// analysis and is indistinguishable at the default sigma = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PdfDenominator {
    #[default]
    TwoSigma,
    TwoSigmaSquared,
}

impl PdfDenominator {
    fn value(self, sigma: f64) -> f64 {
        match self {
            PdfDenominator::TwoSigma => 2.0 * sigma,
            PdfDenominator::TwoSigmaSquared => 2.0 * sigma * sigma,
        }
    }
}

/// Mode-normalized Gaussian PDF of the score: exp(-(nu-mu)^2 / (2 sigma)).
/// Equals 1 exactly at nu = mu and tends to 0 in the tails.
pub fn prediction_probability(nu: f64, prior: GaussianPrior, denom: PdfDenominator) -> Result<f64> {
    if !(prior.sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {}",
            prior.sigma
        )));
    }
    let d = nu - prior.mu;
    Ok((-(d * d) / denom.value(prior.sigma)).exp())
}

/// Confidence target g: the probability that the scorer got this
/// example right — `prob` for normals, `1 - prob` for anomalies.
pub fn anomaly_probability(prob: f64, label: u8) -> Result<f64> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidArgument(format!("prob {prob} outside [0,1]")));
    }
    match label {
        0 => Ok(prob),
        1 => Ok(1.0 - prob),
        other => Err(Error::InvalidArgument(format!(
            "label {other} outside {{0,1}}"
        ))),
    }
}

/// Squared-error confidence loss and its derivative w.r.t. iota.
pub fn confidence_loss(iota: f64, g: f64) -> (f64, f64) {
    let d = iota - g;
    (d * d, 2.0 * d)
}

/// Inverts the normalized PDF on the upper branch: the score at which
/// the prediction probability equals `target_prob`.
pub fn boundary_score(
    target_prob: f64,
    prior: GaussianPrior,
    denom: PdfDenominator,
) -> Result<f64> {
    if !(target_prob > 0.0 && target_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target_prob {target_prob} outside (0,1]"
        )));
    }
    if !(prior.sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {}",
            prior.sigma
        )));
    }
    Ok(prior.mu + (-denom.value(prior.sigma) * target_prob.ln()).sqrt())
}

/// Confidence head: four 100-neuron relu hidden layers and a sigmoid
/// output, so iota is bounded to [0,1] by construction.
pub fn build_confidence_head(feature_dim: usize, rng: &mut Rng) -> Result<DenseNet> {
    DenseNet::init(
        feature_dim,
        &[
            (HIDDEN_WIDTH, Activation::Relu),
            (HIDDEN_WIDTH, Activation::Relu),
            (HIDDEN_WIDTH, Activation::Relu),
            (HIDDEN_WIDTH, Activation::Relu),
            (1, Activation::Sigmoid),
        ],
        rng,
    )
}

/// Confidence score of a feature vector.
pub fn confidence(head: &DenseNet, features: &[f64]) -> Result<f64> {
    if head.output_dim() != 1 {
        return Err(Error::InvalidArgument(
            "confidence head must have a one-neuron output".into(),
        ));
    }
    Ok(head.output(features)?[0])
}

/// The dual-threshold pair used at inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionThresholds {
    pub t_ano: f64,
    pub t_conf: f64,
}

pub const DEFAULT_T_CONF: f64 = 0.9;

impl DecisionThresholds {
    /// Default thresholds: T_ano is re-derived from the prior as the
    /// boundary score of probability 0.5 rather than hard-coded, and
    /// T_conf defaults to 0.9.
    pub fn derive(prior: GaussianPrior, denom: PdfDenominator) -> Result<Self> {
        Ok(DecisionThresholds {
            t_ano: boundary_score(0.5, prior, denom)?,
            t_conf: DEFAULT_T_CONF,
        })
    }
}

impl Default for DecisionThresholds {
    fn default() -> Self {
        DecisionThresholds::derive(GaussianPrior::default(), PdfDenominator::default())
            .expect("default prior is valid")
    }
}
