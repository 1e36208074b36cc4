//! The assembled detector: shared extractor, scoring head, confidence
//! head, and the probability-normalization settings they share.

use crate::anomaly::{self, DeviationLossConfig, GaussianPrior};
use crate::confidence::{self, PdfDenominator};
use crate::data::Payload;
use crate::error::{Error, Result};
use crate::features::{Extractor, TinyCnn};
use crate::net::DenseNet;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    Identity,
    TinyCnn,
}

impl std::fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtractorKind::Identity => write!(f, "identity"),
            ExtractorKind::TinyCnn => write!(f, "tiny_cnn"),
        }
    }
}

impl std::str::FromStr for ExtractorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(ExtractorKind::Identity),
            "tiny_cnn" => Ok(ExtractorKind::TinyCnn),
            other => Err(Error::Config(format!(
                "unknown extractor kind {other:?} (expected identity or tiny_cnn)"
            ))),
        }
    }
}

/// Everything needed to build a fresh model deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub extractor: ExtractorKind,
    /// Feature dimension d. For tiny_cnn this is the final channel
    /// count fed to GAP.
    pub feature_dim: usize,
    /// Input size expected by the cnn extractor (the crop size), for
    /// image models.
    pub image_input: Option<(usize, usize)>,
    pub prior: GaussianPrior,
    pub margin: f64,
    pub pdf_denominator: PdfDenominator,
}

impl ModelSpec {
    pub fn tabular(feature_dim: usize) -> Self {
        ModelSpec {
            extractor: ExtractorKind::Identity,
            feature_dim,
            image_input: None,
            prior: GaussianPrior::default(),
            margin: 5.0,
            pdf_denominator: PdfDenominator::default(),
        }
    }

    pub fn image(feature_dim: usize, crop: usize) -> Self {
        ModelSpec {
            extractor: ExtractorKind::TinyCnn,
            feature_dim,
            image_input: Some((crop, crop)),
            prior: GaussianPrior::default(),
            margin: 5.0,
            pdf_denominator: PdfDenominator::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaadModel {
    pub extractor: Extractor,
    pub anomaly_head: DenseNet,
    pub confidence_head: DenseNet,
    pub prior: GaussianPrior,
    pub margin: f64,
    pub pdf_denominator: PdfDenominator,
}

/// Builds the extractor for a spec; shared with the binary baseline so
/// both models use the same architecture.
pub fn build_extractor(spec: &ModelSpec, root_seed: u64, tag: &str) -> Result<Extractor> {
    match spec.extractor {
        ExtractorKind::Identity => Ok(Extractor::Identity {
            dim: spec.feature_dim,
        }),
        ExtractorKind::TinyCnn => {
            let (h, w) = spec.image_input.ok_or_else(|| {
                Error::Config("tiny_cnn extractor needs an image input size".into())
            })?;
            if spec.feature_dim < 2 {
                return Err(Error::Config("tiny_cnn needs feature_dim >= 2".into()));
            }
            let channels = [spec.feature_dim / 2, spec.feature_dim];
            let mut r = rng::stream(root_seed, tag);
            Ok(Extractor::TinyCnn(TinyCnn::init(h, w, &channels, &mut r)?))
        }
    }
}

impl CaadModel {
    /// Fresh model with seeded initialization. The extractor and each
    /// head draw from their own derived streams.
    pub fn build(spec: &ModelSpec, root_seed: u64) -> Result<Self> {
        if !(spec.margin > 0.0) {
            return Err(Error::Config("margin must be positive".into()));
        }
        if !(spec.prior.sigma > 0.0) {
            return Err(Error::Config("prior sigma must be positive".into()));
        }
        let extractor = build_extractor(spec, root_seed, "init-extractor")?;
        let d = extractor.output_dim();
        let anomaly_head =
            anomaly::build_anomaly_head(d, &mut rng::stream(root_seed, "init-anomaly-head"))?;
        let confidence_head = confidence::build_confidence_head(
            d,
            &mut rng::stream(root_seed, "init-confidence-head"),
        )?;
        Ok(CaadModel {
            extractor,
            anomaly_head,
            confidence_head,
            prior: spec.prior,
            margin: spec.margin,
            pdf_denominator: spec.pdf_denominator,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn loss_config(&self) -> DeviationLossConfig {
        DeviationLossConfig {
            margin: self.margin,
        }
    }

    /// Anomaly score of a prepared payload.
    pub fn anomaly_score(&self, payload: &Payload) -> Result<f64> {
        let features = self.extractor.extract(payload)?;
        anomaly::score(&self.anomaly_head, &features)
    }

    /// Confidence score of a prepared payload.
    pub fn confidence_score(&self, payload: &Payload) -> Result<f64> {
        let features = self.extractor.extract(payload)?;
        confidence::confidence(&self.confidence_head, &features)
    }

    /// Both scores from one extractor pass.
    pub fn score_pair(&self, payload: &Payload) -> Result<(f64, f64)> {
        let features = self.extractor.extract(payload)?;
        Ok((
            anomaly::score(&self.anomaly_head, &features)?,
            confidence::confidence(&self.confidence_head, &features)?,
        ))
    }
}
