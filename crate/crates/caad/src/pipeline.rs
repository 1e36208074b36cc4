//! Three-stage training, balanced batching, image augmentation, and the
//! dual-threshold diagnosis rule.
//!
//! Stage 1 trains the extractor and scoring head with SGD on the
//! deviation loss. Stage 2 freezes both and trains the confidence head
//! with Adam against the anomaly-probability target. Stage 3 fine-tunes
//! everything jointly with Adam at a small constant rate.

use crate::anomaly::{self, GaussianPrior, ReferenceStats};
use crate::confidence::{self, DecisionThresholds};
use crate::data::{Dataset, ImageData, LabeledExample, Payload};
use crate::error::{Error, Result};
use crate::features::{Extractor, ExtractorGradients};
use crate::model::CaadModel;
use crate::net::NetGradients;
use crate::optim::{sgd_step, AdamParams, AdamState, LrSchedule};
use crate::rng::{self, Rng};

use rand::seq::SliceRandom;
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Batch size m; must be even so batches split into equal halves.
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    /// Stages 1 and 2 ramp linearly from this rate...
    pub stage12_lr_initial: f64,
    /// ...down to this one over each stage's steps.
    pub stage12_lr_final: f64,
    /// Stage 3 uses this constant rate.
    pub stage3_lr: f64,
    pub w_ano: f64,
    pub w_conf: f64,
    /// Gaussian draws per reference score.
    pub ref_count: usize,
    pub adam: AdamParams,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn default_for_seed(seed: u64) -> Self {
        TrainConfig {
            batch_size: 40,
            stage1_epochs: 20,
            stage2_epochs: 20,
            stage3_epochs: 10,
            stage12_lr_initial: 5e-4,
            stage12_lr_final: 1e-6,
            stage3_lr: 1e-7,
            w_ano: 1.0,
            w_conf: 1.0,
            ref_count: anomaly::DEFAULT_REF_COUNT,
            adam: AdamParams::default(),
            augment: AugmentConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::Config(format!(
                "batch_size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        for (name, lr) in [
            ("stage12_lr_initial", self.stage12_lr_initial),
            ("stage12_lr_final", self.stage12_lr_final),
            ("stage3_lr", self.stage3_lr),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.stage12_lr_final > self.stage12_lr_initial {
            return Err(Error::Config(
                "stage12_lr_final must not exceed stage12_lr_initial".into(),
            ));
        }
        if self.w_ano < 0.0 || self.w_conf < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.ref_count < 2 {
            return Err(Error::Config("ref_count must be at least 2".into()));
        }
        self.augment.validate()
    }
}

/// One metrics-log record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub mean_loss_ano: Option<f64>,
    pub mean_loss_conf: Option<f64>,
    /// Rate used by the last optimizer step of the epoch.
    pub lr: f64,
}

impl EpochRecord {
    /// Line-delimited record form, e.g.
    /// `stage=1 epoch=3 loss_ano=0.41 lr=0.00042`.
    pub fn to_line(&self) -> String {
        let mut s = format!("stage={} epoch={}", self.stage, self.epoch);
        if let Some(l) = self.mean_loss_ano {
            s.push_str(&format!(" loss_ano={l}"));
        }
        if let Some(l) = self.mean_loss_conf {
            s.push_str(&format!(" loss_conf={l}"));
        }
        s.push_str(&format!(" lr={}", self.lr));
        s
    }
}

// ---------------------------------------------------------------------------
// Balanced batching
// ---------------------------------------------------------------------------

/// Yields batches of exactly m/2 positive and m/2 negative indices.
/// Each class is consumed as reshuffled permutations, so the minority
/// class repeats (is re-drawn) once its pool is exhausted within an
/// epoch.
pub struct BalancedBatcher {
    pos: Vec<usize>,
    neg: Vec<usize>,
    pos_cursor: usize,
    neg_cursor: usize,
}

impl BalancedBatcher {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let pos = dataset.indices_with_label(1);
        let neg = dataset.indices_with_label(0);
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::Data(format!(
                "balanced batching needs both classes (got {} positive, {} negative)",
                pos.len(),
                neg.len()
            )));
        }
        Ok(BalancedBatcher {
            pos,
            neg,
            pos_cursor: usize::MAX, // force an initial shuffle
            neg_cursor: usize::MAX,
        })
    }

    /// Batches per epoch: one pass of ceil(n_neg / (m/2)) batches, so
    /// the majority class is seen about once per epoch.
    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.neg.len().div_ceil(batch_size / 2)
    }

    fn draw(
        queue: &mut [usize],
        cursor: &mut usize,
        count: usize,
        rng: &mut Rng,
        out: &mut Vec<usize>,
    ) {
        for _ in 0..count {
            if *cursor >= queue.len() {
                queue.shuffle(rng);
                *cursor = 0;
            }
            out.push(queue[*cursor]);
            *cursor += 1;
        }
    }

    /// The next balanced batch: m/2 positives followed by m/2 negatives.
    pub fn next_batch(&mut self, batch_size: usize, rng: &mut Rng) -> Vec<usize> {
        let half = batch_size / 2;
        let mut out = Vec::with_capacity(batch_size);
        Self::draw(&mut self.pos, &mut self.pos_cursor, half, rng, &mut out);
        Self::draw(&mut self.neg, &mut self.neg_cursor, half, rng, &mut out);
        out
    }
}

// ---------------------------------------------------------------------------
// Image augmentation
// ---------------------------------------------------------------------------

/// Random crop to `crop_fraction` of the working size, zoom by a factor
/// uniform in `zoom_range`, horizontal flip with `flip_prob`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub crop_fraction: f64,
    pub zoom_range: (f64, f64),
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_fraction: 0.875,
            zoom_range: (0.9, 1.1),
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::Config("crop_fraction must be in (0,1]".into()));
        }
        if !(self.zoom_range.0 > 0.0 && self.zoom_range.0 <= self.zoom_range.1) {
            return Err(Error::Config(
                "zoom_range must be ordered and positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip_prob must be in [0,1]".into()));
        }
        Ok(())
    }

    /// Crop size for a working size, preserving the 512 -> 448 ratio at
    /// the default fraction.
    pub fn crop_size(&self, working: usize) -> usize {
        ((working as f64 * self.crop_fraction).round() as usize).max(1)
    }
}

pub fn hflip(img: &ImageData) -> ImageData {
    let mut out = ImageData::zeros(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            out.set(y, x, img.get(y, img.w - 1 - x));
        }
    }
    out
}

pub fn crop(img: &ImageData, oy: usize, ox: usize, size: usize) -> Result<ImageData> {
    if oy + size > img.h || ox + size > img.w {
        return Err(Error::InvalidArgument(format!(
            "crop {size}x{size}@({oy},{ox}) exceeds image {}x{}",
            img.h, img.w
        )));
    }
    let mut out = ImageData::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            out.set(y, x, img.get(oy + y, ox + x));
        }
    }
    Ok(out)
}

pub fn center_crop(img: &ImageData, size: usize) -> Result<ImageData> {
    if size > img.h || size > img.w {
        return Err(Error::InvalidArgument(format!(
            "crop size {size} larger than image {}x{}",
            img.h, img.w
        )));
    }
    crop(img, (img.h - size) / 2, (img.w - size) / 2, size)
}

/// Resamples about the image center by `factor` with bilinear
/// interpolation; factor 1.0 is the identity.
pub fn zoom(img: &ImageData, factor: f64) -> ImageData {
    if factor == 1.0 {
        return img.clone();
    }
    let cy = (img.h as f64 - 1.0) / 2.0;
    let cx = (img.w as f64 - 1.0) / 2.0;
    let mut out = ImageData::zeros(img.h, img.w);
    for y in 0..img.h {
        for x in 0..img.w {
            let sy = (cy + (y as f64 - cy) / factor).clamp(0.0, img.h as f64 - 1.0);
            let sx = (cx + (x as f64 - cx) / factor).clamp(0.0, img.w as f64 - 1.0);
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(img.h - 1);
            let x1 = (x0 + 1).min(img.w - 1);
            let fy = sy - y0 as f64;
            let fx = sx - x0 as f64;
            let v = img.get(y0, x0) * (1.0 - fy) * (1.0 - fx)
                + img.get(y0, x1) * (1.0 - fy) * fx
                + img.get(y1, x0) * fy * (1.0 - fx)
                + img.get(y1, x1) * fy * fx;
            out.set(y, x, v);
        }
    }
    out
}

/// Training-time augmentation: random crop, random zoom, random flip.
/// The input is expected at the working size already.
pub fn augment(img: &ImageData, cfg: &AugmentConfig, rng: &mut Rng) -> Result<ImageData> {
    let size = cfg.crop_size(img.h.min(img.w));
    if size > img.h || size > img.w {
        return Err(Error::InvalidArgument(format!(
            "crop size {size} larger than image {}x{}",
            img.h, img.w
        )));
    }
    let oy = rng.random_range(0..=img.h - size);
    let ox = rng.random_range(0..=img.w - size);
    let cropped = crop(img, oy, ox, size)?;
    let factor = rng.random_range(cfg.zoom_range.0..=cfg.zoom_range.1);
    let zoomed = zoom(&cropped, factor);
    Ok(if rng.random_bool(cfg.flip_prob) {
        hflip(&zoomed)
    } else {
        zoomed
    })
}

/// Payload as the extractor sees it during training: augmented crop for
/// images, passthrough for tabular data.
pub fn train_payload(
    extractor: &Extractor,
    ex: &LabeledExample,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<Payload> {
    match (&ex.payload, extractor) {
        (Payload::Image(img), Extractor::TinyCnn(_)) => Ok(Payload::Image(augment(img, cfg, rng)?)),
        (p, _) => Ok(p.clone()),
    }
}

/// Payload at evaluation time: deterministic center crop for images.
pub fn eval_payload(extractor: &Extractor, ex: &LabeledExample) -> Result<Payload> {
    match (&ex.payload, extractor) {
        (Payload::Image(img), Extractor::TinyCnn(cnn)) => {
            Ok(Payload::Image(center_crop(img, cnn.in_h)?))
        }
        (p, _) => Ok(p.clone()),
    }
}

// ---------------------------------------------------------------------------
// Diagnosis (inference rule)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Positive,
    Negative,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decision::Positive => write!(f, "POSITIVE"),
            Decision::Negative => write!(f, "NEGATIVE"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosisReason {
    ScoreExceeded,
    LowConfidence,
    ClearNegative,
}

impl std::fmt::Display for DiagnosisReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiagnosisReason::ScoreExceeded => write!(f, "score_exceeded"),
            DiagnosisReason::LowConfidence => write!(f, "low_confidence"),
            DiagnosisReason::ClearNegative => write!(f, "clear_negative"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnosis {
    pub decision: Decision,
    pub nu: f64,
    pub iota: f64,
    pub thresholds: DecisionThresholds,
    pub reason: DiagnosisReason,
}

/// POSITIVE iff the anomaly score reaches T_ano or the confidence falls
/// below T_conf; NEGATIVE only when the score is low and the confidence
/// high. At T_conf = 0 this reduces to pure score thresholding.
pub fn diagnose(nu: f64, iota: f64, thresholds: DecisionThresholds) -> Diagnosis {
    let (decision, reason) = if nu >= thresholds.t_ano {
        (Decision::Positive, DiagnosisReason::ScoreExceeded)
    } else if iota < thresholds.t_conf {
        (Decision::Positive, DiagnosisReason::LowConfidence)
    } else {
        (Decision::Negative, DiagnosisReason::ClearNegative)
    };
    Diagnosis {
        decision,
        nu,
        iota,
        thresholds,
        reason,
    }
}

// ---------------------------------------------------------------------------
// Stage training
// ---------------------------------------------------------------------------

fn divergence(stage: u8, epoch: usize, detail: impl std::fmt::Display) -> Error {
    Error::Divergence {
        context: format!("stage {stage} epoch {epoch}"),
        detail: detail.to_string(),
    }
}

struct StageStreams {
    batch: Rng,
    reference: Rng,
    augment: Rng,
}

impl StageStreams {
    fn new(seed: u64, stage: u8) -> Self {
        StageStreams {
            batch: rng::stream(seed, &format!("stage{stage}-batch")),
            reference: rng::stream(seed, &format!("stage{stage}-reference")),
            augment: rng::stream(seed, &format!("stage{stage}-augment")),
        }
    }
}

fn sgd_step_extractor(
    extractor: &mut Extractor,
    grads: &ExtractorGradients,
    lr: f64,
) -> Result<()> {
    for (p, g) in extractor
        .param_slices_mut()
        .into_iter()
        .zip(grads.grad_slices())
    {
        sgd_step(p, g, lr)?;
    }
    Ok(())
}

/// Stage 1: balanced batches, a fresh Gaussian reference per batch,
/// mean deviation loss, SGD on the extractor and scoring head.
pub fn train_stage1(
    model: &mut CaadModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    if cfg.stage1_epochs == 0 {
        return Ok(records);
    }
    let mut batcher = BalancedBatcher::new(data)?;
    let batches = batcher.batches_per_epoch(cfg.batch_size);
    let schedule = LrSchedule::linear(
        cfg.stage12_lr_initial,
        cfg.stage12_lr_final,
        (cfg.stage1_epochs * batches) as u64,
    )?;
    let mut streams = StageStreams::new(cfg.seed, 1);
    let loss_cfg = model.loss_config();
    let inv_m = 1.0 / cfg.batch_size as f64;
    let mut step: u64 = 0;

    for epoch in 1..=cfg.stage1_epochs {
        let mut epoch_loss = 0.0;
        let mut lr = schedule.lr_at(step)?;
        for _ in 0..batches {
            let batch = batcher.next_batch(cfg.batch_size, &mut streams.batch);
            let reference =
                sample_batch_reference(cfg.ref_count, model.prior, &mut streams.reference)?;
            let mut head_grads = NetGradients::zeros_like(&model.anomaly_head);
            let mut ext_grads = ExtractorGradients::zeros_like(&model.extractor);
            let mut batch_loss = 0.0;
            for &idx in &batch {
                let ex = &data.examples[idx];
                let payload =
                    train_payload(&model.extractor, ex, &cfg.augment, &mut streams.augment)?;
                let (features, ecache) = model.extractor.extract_with_cache(&payload)?;
                let acache = model.anomaly_head.forward(&features)?;
                let nu = acache.output()[0];
                let (loss, d_nu) = anomaly::deviation_loss(nu, ex.label, &reference, &loss_cfg)?;
                batch_loss += loss;
                let d_features =
                    model
                        .anomaly_head
                        .backward_into(&acache, &[d_nu * inv_m], &mut head_grads)?;
                if model.extractor.is_trainable() {
                    model
                        .extractor
                        .backward_into(&ecache, &d_features, &mut ext_grads)?;
                }
            }
            batch_loss *= inv_m;
            if !batch_loss.is_finite() {
                return Err(divergence(1, epoch, format!("batch loss {batch_loss}")));
            }
            lr = schedule.lr_at(step)?;
            crate::optim::sgd_step_net(&mut model.anomaly_head, &head_grads, lr)
                .map_err(|e| divergence(1, epoch, e))?;
            sgd_step_extractor(&mut model.extractor, &ext_grads, lr)
                .map_err(|e| divergence(1, epoch, e))?;
            step += 1;
            epoch_loss += batch_loss;
        }
        records.push(EpochRecord {
            stage: 1,
            epoch,
            mean_loss_ano: Some(epoch_loss / batches as f64),
            mean_loss_conf: None,
            lr,
        });
    }
    Ok(records)
}

fn sample_batch_reference(l: usize, prior: GaussianPrior, rng: &mut Rng) -> Result<ReferenceStats> {
    anomaly::sample_reference(l, prior, rng)
}

/// Stage 2: extractor and scoring head frozen; the confidence head
/// trains with Adam against the anomaly-probability target derived
/// online from the current (frozen) scores.
pub fn train_stage2(
    model: &mut CaadModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    if cfg.stage2_epochs == 0 {
        return Ok(records);
    }
    let mut batcher = BalancedBatcher::new(data)?;
    let batches = batcher.batches_per_epoch(cfg.batch_size);
    let schedule = LrSchedule::linear(
        cfg.stage12_lr_initial,
        cfg.stage12_lr_final,
        (cfg.stage2_epochs * batches) as u64,
    )?;
    let mut streams = StageStreams::new(cfg.seed, 2);
    let mut adam = AdamState::for_net(&model.confidence_head, cfg.adam);
    let inv_m = 1.0 / cfg.batch_size as f64;
    let mut step: u64 = 0;

    for epoch in 1..=cfg.stage2_epochs {
        let mut epoch_loss = 0.0;
        let mut lr = schedule.lr_at(step)?;
        for _ in 0..batches {
            let batch = batcher.next_batch(cfg.batch_size, &mut streams.batch);
            let mut grads = NetGradients::zeros_like(&model.confidence_head);
            let mut batch_loss = 0.0;
            for &idx in &batch {
                let ex = &data.examples[idx];
                let payload =
                    train_payload(&model.extractor, ex, &cfg.augment, &mut streams.augment)?;
                let features = model.extractor.extract(&payload)?;
                let nu = anomaly::score(&model.anomaly_head, &features)?;
                let prob =
                    confidence::prediction_probability(nu, model.prior, model.pdf_denominator)?;
                let g_target = confidence::anomaly_probability(prob, ex.label)?;
                let ccache = model.confidence_head.forward(&features)?;
                let iota = ccache.output()[0];
                let (loss, d_iota) = confidence::confidence_loss(iota, g_target);
                batch_loss += loss;
                model
                    .confidence_head
                    .backward_into(&ccache, &[d_iota * inv_m], &mut grads)?;
            }
            batch_loss *= inv_m;
            if !batch_loss.is_finite() {
                return Err(divergence(2, epoch, format!("batch loss {batch_loss}")));
            }
            lr = schedule.lr_at(step)?;
            adam.step_net(&mut model.confidence_head, &grads, lr)
                .map_err(|e| divergence(2, epoch, e))?;
            step += 1;
            epoch_loss += batch_loss;
        }
        records.push(EpochRecord {
            stage: 2,
            epoch,
            mean_loss_ano: None,
            mean_loss_conf: Some(epoch_loss / batches as f64),
            lr,
        });
    }
    Ok(records)
}

/// Stage 3: joint fine-tuning of extractor and both heads with Adam on
/// `w_ano * L_ano + w_conf * L_conf`. The confidence target is
/// regenerated from the current scores every batch and treated as a
/// constant (no gradient flows through it).
pub fn train_stage3(
    model: &mut CaadModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    if cfg.stage3_epochs == 0 {
        return Ok(records);
    }
    let mut batcher = BalancedBatcher::new(data)?;
    let batches = batcher.batches_per_epoch(cfg.batch_size);
    let schedule = LrSchedule::constant(cfg.stage3_lr, (cfg.stage3_epochs * batches) as u64)?;
    let mut streams = StageStreams::new(cfg.seed, 3);
    let mut adam_ano = AdamState::for_net(&model.anomaly_head, cfg.adam);
    let mut adam_conf = AdamState::for_net(&model.confidence_head, cfg.adam);
    let ext_shapes: Vec<usize> = model
        .extractor
        .param_slices()
        .iter()
        .map(|s| s.len())
        .collect();
    let mut adam_ext = AdamState::new(&ext_shapes, cfg.adam);
    let loss_cfg = model.loss_config();
    let inv_m = 1.0 / cfg.batch_size as f64;
    let mut step: u64 = 0;

    for epoch in 1..=cfg.stage3_epochs {
        let mut epoch_loss_ano = 0.0;
        let mut epoch_loss_conf = 0.0;
        let mut lr = schedule.lr_at(step)?;
        for _ in 0..batches {
            let batch = batcher.next_batch(cfg.batch_size, &mut streams.batch);
            let reference =
                sample_batch_reference(cfg.ref_count, model.prior, &mut streams.reference)?;
            let mut ano_grads = NetGradients::zeros_like(&model.anomaly_head);
            let mut conf_grads = NetGradients::zeros_like(&model.confidence_head);
            let mut ext_grads = ExtractorGradients::zeros_like(&model.extractor);
            let mut batch_loss_ano = 0.0;
            let mut batch_loss_conf = 0.0;
            for &idx in &batch {
                let ex = &data.examples[idx];
                let payload =
                    train_payload(&model.extractor, ex, &cfg.augment, &mut streams.augment)?;
                let (features, ecache) = model.extractor.extract_with_cache(&payload)?;
                let acache = model.anomaly_head.forward(&features)?;
                let nu = acache.output()[0];
                let ccache = model.confidence_head.forward(&features)?;
                let iota = ccache.output()[0];

                let (l_ano, d_nu) = anomaly::deviation_loss(nu, ex.label, &reference, &loss_cfg)?;
                let prob =
                    confidence::prediction_probability(nu, model.prior, model.pdf_denominator)?;
                let g_target = confidence::anomaly_probability(prob, ex.label)?;
                let (l_conf, d_iota) = confidence::confidence_loss(iota, g_target);
                batch_loss_ano += l_ano;
                batch_loss_conf += l_conf;

                let d_feat_ano = model.anomaly_head.backward_into(
                    &acache,
                    &[cfg.w_ano * d_nu * inv_m],
                    &mut ano_grads,
                )?;
                let d_feat_conf = model.confidence_head.backward_into(
                    &ccache,
                    &[cfg.w_conf * d_iota * inv_m],
                    &mut conf_grads,
                )?;
                if model.extractor.is_trainable() {
                    let d_features: Vec<f64> = d_feat_ano
                        .iter()
                        .zip(&d_feat_conf)
                        .map(|(a, c)| a + c)
                        .collect();
                    model
                        .extractor
                        .backward_into(&ecache, &d_features, &mut ext_grads)?;
                }
            }
            let combined = (cfg.w_ano * batch_loss_ano + cfg.w_conf * batch_loss_conf) * inv_m;
            if !combined.is_finite() {
                return Err(divergence(3, epoch, format!("batch loss {combined}")));
            }
            lr = schedule.lr_at(step)?;
            adam_ano
                .step_net(&mut model.anomaly_head, &ano_grads, lr)
                .map_err(|e| divergence(3, epoch, e))?;
            adam_conf
                .step_net(&mut model.confidence_head, &conf_grads, lr)
                .map_err(|e| divergence(3, epoch, e))?;
            {
                let mut params = model.extractor.param_slices_mut();
                adam_ext
                    .step(&mut params, &ext_grads.grad_slices(), lr)
                    .map_err(|e| divergence(3, epoch, e))?;
            }
            step += 1;
            epoch_loss_ano += batch_loss_ano * inv_m;
            epoch_loss_conf += batch_loss_conf * inv_m;
        }
        records.push(EpochRecord {
            stage: 3,
            epoch,
            mean_loss_ano: Some(epoch_loss_ano / batches as f64),
            mean_loss_conf: Some(epoch_loss_conf / batches as f64),
            lr,
        });
    }
    Ok(records)
}

/// Combined batch loss pieces on a fixed batch, without touching any
/// weights. Returns (mean L_ano, mean L_conf, weighted combination).
pub fn combined_batch_loss(
    model: &CaadModel,
    data: &Dataset,
    indices: &[usize],
    reference: &ReferenceStats,
    w_ano: f64,
    w_conf: f64,
) -> Result<(f64, f64, f64)> {
    let loss_cfg = model.loss_config();
    let mut sum_ano = 0.0;
    let mut sum_conf = 0.0;
    for &idx in indices {
        let ex = &data.examples[idx];
        let payload = eval_payload(&model.extractor, ex)?;
        let features = model.extractor.extract(&payload)?;
        let nu = anomaly::score(&model.anomaly_head, &features)?;
        let iota = confidence::confidence(&model.confidence_head, &features)?;
        let (l_ano, _) = anomaly::deviation_loss(nu, ex.label, reference, &loss_cfg)?;
        let prob = confidence::prediction_probability(nu, model.prior, model.pdf_denominator)?;
        let g_target = confidence::anomaly_probability(prob, ex.label)?;
        let (l_conf, _) = confidence::confidence_loss(iota, g_target);
        sum_ano += l_ano;
        sum_conf += l_conf;
    }
    let n = indices.len() as f64;
    let mean_ano = sum_ano / n;
    let mean_conf = sum_conf / n;
    Ok((mean_ano, mean_conf, w_ano * mean_ano + w_conf * mean_conf))
}

/// Runs stages 1..=max_stage in sequence, collecting the epoch records.
pub fn train_full(
    model: &mut CaadModel,
    data: &Dataset,
    cfg: &TrainConfig,
    max_stage: u8,
) -> Result<Vec<EpochRecord>> {
    if !(1..=3).contains(&max_stage) {
        return Err(Error::InvalidArgument(format!(
            "max_stage must be 1, 2, or 3, got {max_stage}"
        )));
    }
    let mut records = train_stage1(model, data, cfg)?;
    if max_stage >= 2 {
        records.extend(train_stage2(model, data, cfg)?);
    }
    if max_stage >= 3 {
        records.extend(train_stage3(model, data, cfg)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_tabular, DatasetKind, SynthTabularConfig};
    use crate::model::ModelSpec;
    use crate::net::DenseNet;
    use std::collections::HashSet;

    fn tiny_dataset() -> Dataset {
        let mut examples = Vec::new();
        for i in 0..100 {
            examples.push(LabeledExample {
                id: format!("n{i}"),
                label: 0,
                subclass: "n0".into(),
                payload: Payload::Vector(vec![i as f64 / 100.0, 0.0]),
            });
        }
        for i in 0..3 {
            examples.push(LabeledExample {
                id: format!("a{i}"),
                label: 1,
                subclass: "a0".into(),
                payload: Payload::Vector(vec![3.0, 3.0 + i as f64]),
            });
        }
        Dataset::assemble(DatasetKind::Tabular, examples, None).unwrap()
    }

    #[test]
    fn batches_are_exactly_half_and_half() {
        let ds = tiny_dataset();
        let mut batcher = BalancedBatcher::new(&ds).unwrap();
        let mut r = rng::stream(1, "batch");
        let batch = batcher.next_batch(4, &mut r);
        assert_eq!(batch.len(), 4);
        let pos = batch.iter().filter(|&&i| ds.examples[i].label == 1).count();
        assert_eq!(pos, 2);
    }

    #[test]
    fn positive_fraction_is_exactly_half_over_many_batches() {
        let ds = tiny_dataset();
        let mut batcher = BalancedBatcher::new(&ds).unwrap();
        let mut r = rng::stream(2, "batch");
        let mut pos = 0usize;
        let mut total = 0usize;
        for _ in 0..1000 {
            for idx in batcher.next_batch(10, &mut r) {
                pos += usize::from(ds.examples[idx].label == 1);
                total += 1;
            }
        }
        assert_eq!(pos * 2, total);
    }

    #[test]
    fn batch_sequence_is_seeded() {
        let ds = tiny_dataset();
        let mut b1 = BalancedBatcher::new(&ds).unwrap();
        let mut b2 = BalancedBatcher::new(&ds).unwrap();
        let mut r1 = rng::stream(3, "batch");
        let mut r2 = rng::stream(3, "batch");
        for _ in 0..50 {
            assert_eq!(b1.next_batch(6, &mut r1), b2.next_batch(6, &mut r2));
        }
    }

    #[test]
    fn batcher_requires_both_classes() {
        let ds = tiny_dataset().filtered(|e| e.label == 0).unwrap();
        assert!(BalancedBatcher::new(&ds).is_err());
    }

    #[test]
    fn epoch_length_follows_majority_class() {
        let ds = tiny_dataset(); // 100 negatives
        let batcher = BalancedBatcher::new(&ds).unwrap();
        assert_eq!(batcher.batches_per_epoch(40), 5); // ceil(100/20)
        assert_eq!(batcher.batches_per_epoch(6), 34); // ceil(100/3)
    }

    fn gradient_image() -> ImageData {
        let mut img = ImageData::zeros(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                img.set(y, x, (x as f64 + 16.0 * y as f64) / 512.0);
            }
        }
        img
    }

    #[test]
    fn double_flip_is_identity() {
        let img = gradient_image();
        assert_eq!(hflip(&hflip(&img)), img);
    }

    #[test]
    fn zoom_one_is_identity_and_center_crop_is_deterministic() {
        let img = gradient_image();
        assert_eq!(zoom(&img, 1.0), img);
        let c1 = center_crop(&img, 14).unwrap();
        let c2 = center_crop(&img, 14).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(c1.h, 14);
        // center crop of a 16x16 to 14x14 starts at (1,1)
        assert_eq!(c1.get(0, 0), img.get(1, 1));
    }

    #[test]
    fn crop_larger_than_image_errors() {
        let img = gradient_image();
        assert!(center_crop(&img, 20).is_err());
        let cfg = AugmentConfig {
            crop_fraction: 1.0,
            ..AugmentConfig::default()
        };
        // working size 4 -> crop 4 fits; fraction > 1 impossible by validation
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn histogram_mass_preserved_under_flip_and_unit_zoom() {
        let img = gradient_image();
        let crop = center_crop(&img, 14).unwrap();
        let transformed = hflip(&zoom(&crop, 1.0));
        let hist = |im: &ImageData| {
            let mut bins = [0usize; 16];
            for &p in &im.pixels {
                bins[((p * 15.9).floor() as usize).min(15)] += 1;
            }
            bins
        };
        let h1 = hist(&crop);
        let h2 = hist(&transformed);
        let total: usize = h1.iter().sum();
        let moved: usize = h1.iter().zip(&h2).map(|(a, b)| a.abs_diff(*b)).sum();
        assert!(
            (moved as f64) < 0.05 * total as f64,
            "histogram moved {moved}/{total}"
        );
    }

    #[test]
    fn augment_is_seeded_and_in_spec_shape() {
        let img = gradient_image();
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, &mut rng::stream(4, "aug")).unwrap();
        let b = augment(&img, &cfg, &mut rng::stream(4, "aug")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.h, cfg.crop_size(16));
    }

    #[test]
    fn diagnose_follows_the_dual_threshold_rule() {
        let t = DecisionThresholds {
            t_ano: 1.18,
            t_conf: 0.9,
        };
        let d = diagnose(2.0, 0.95, t);
        assert_eq!(d.decision, Decision::Positive);
        assert_eq!(d.reason, DiagnosisReason::ScoreExceeded);

        let d = diagnose(0.5, 0.95, t);
        assert_eq!(d.decision, Decision::Negative);
        assert_eq!(d.reason, DiagnosisReason::ClearNegative);

        let d = diagnose(0.5, 0.5, t);
        assert_eq!(d.decision, Decision::Positive);
        assert_eq!(d.reason, DiagnosisReason::LowConfidence);

        // boundary: nu exactly at T_ano counts as positive
        assert_eq!(diagnose(1.18, 0.95, t).decision, Decision::Positive);
        // T_conf = 0 disables the confidence branch entirely
        let t0 = DecisionThresholds {
            t_ano: 1.18,
            t_conf: 0.0,
        };
        assert_eq!(diagnose(0.5, 0.0, t0).decision, Decision::Negative);
    }

    #[test]
    fn diagnose_is_monotone_in_both_scores() {
        let t = DecisionThresholds {
            t_ano: 1.18,
            t_conf: 0.9,
        };
        let grid: Vec<f64> = (0..40).map(|i| i as f64 * 0.05).collect();
        for &nu in &grid {
            for &iota in &grid {
                if iota > 1.0 {
                    continue;
                }
                let base = diagnose(nu, iota, t).decision;
                // raising iota never flips NEGATIVE -> POSITIVE
                if base == Decision::Negative {
                    assert_eq!(
                        diagnose(nu, (iota + 0.3).min(1.0), t).decision,
                        Decision::Negative
                    );
                }
                // raising nu never flips POSITIVE -> NEGATIVE
                if base == Decision::Positive {
                    assert_eq!(diagnose(nu + 1.0, iota, t).decision, Decision::Positive);
                }
            }
        }
    }

    fn small_cfg(seed: u64) -> (Dataset, Dataset, TrainConfig) {
        let mut synth = SynthTabularConfig::default_for_seed(seed);
        synth.n_train_normal = 400;
        synth.n_train_anomaly = 40;
        synth.n_test_normal = 100;
        synth.n_test_known_anomaly = 50;
        synth.n_test_novel_anomaly = 50;
        let (train, test) = synth_tabular(&synth).unwrap();
        let mut cfg = TrainConfig::default_for_seed(seed);
        cfg.stage1_epochs = 6;
        cfg.stage2_epochs = 6;
        cfg.stage3_epochs = 3;
        cfg.ref_count = 1000;
        (train, test, cfg)
    }

    #[test]
    fn stage1_loss_decreases_and_starts_near_margin() {
        let (train, _, cfg) = small_cfg(11);
        let mut model = CaadModel::build(&ModelSpec::tabular(8), 11).unwrap();

        // Untrained scores sit near zero, so anomalies pay roughly the
        // full margin before any training.
        let reference = anomaly::sample_reference(
            cfg.ref_count,
            model.prior,
            &mut rng::stream(11, "init-ref"),
        )
        .unwrap();
        let loss_cfg = model.loss_config();
        let anomalies = train.indices_with_label(1);
        let initial_anomaly_loss: f64 = anomalies
            .iter()
            .map(|&i| {
                let nu = model.anomaly_score(&train.examples[i].payload).unwrap();
                anomaly::deviation_loss(nu, 1, &reference, &loss_cfg).unwrap().0
            })
            .sum::<f64>()
            / anomalies.len() as f64;
        // He-initialized heads give zero-centered scores with a
        // per-seed random offset of order one, so "near the margin"
        // is a band, not a point.
        assert!(
            (initial_anomaly_loss - 5.0).abs() < 2.0,
            "untrained anomaly-half loss {initial_anomaly_loss} should sit near the margin"
        );

        // Over balanced batches the normal half contributes ~0, so the
        // first-epoch mean lands near margin/2.
        let mut records = train_stage1(&mut model, &train, &cfg).unwrap();
        let first = records.first().unwrap().mean_loss_ano.unwrap();
        let last = records.pop().unwrap().mean_loss_ano.unwrap();
        assert!(
            (first - 2.5).abs() < 1.2,
            "initial mean loss {first} should be near margin/2"
        );
        assert!(
            last < first,
            "stage 1 loss should decrease: {first} -> {last}"
        );
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let (train, _, mut cfg) = small_cfg(12);
        cfg.stage1_epochs = 0;
        cfg.stage2_epochs = 0;
        cfg.stage3_epochs = 0;
        let mut model = CaadModel::build(&ModelSpec::tabular(8), 12).unwrap();
        let before = model.anomaly_head.param_bytes();
        assert!(train_stage1(&mut model, &train, &cfg).unwrap().is_empty());
        assert!(train_stage2(&mut model, &train, &cfg).unwrap().is_empty());
        assert!(train_stage3(&mut model, &train, &cfg).unwrap().is_empty());
        assert_eq!(model.anomaly_head.param_bytes(), before);
    }

    #[test]
    fn stage2_freezes_extractor_and_scoring_head() {
        let (train, _, cfg) = small_cfg(13);
        let mut model = CaadModel::build(&ModelSpec::tabular(8), 13).unwrap();
        train_stage1(&mut model, &train, &cfg).unwrap();
        let ano_before = model.anomaly_head.param_bytes();
        let ext_before = model.extractor.param_bytes();
        let conf_before = model.confidence_head.param_bytes();
        let records = train_stage2(&mut model, &train, &cfg).unwrap();
        assert_eq!(model.anomaly_head.param_bytes(), ano_before);
        assert_eq!(model.extractor.param_bytes(), ext_before);
        assert_ne!(model.confidence_head.param_bytes(), conf_before);
        let first = records.first().unwrap().mean_loss_conf.unwrap();
        let last = records.last().unwrap().mean_loss_conf.unwrap();
        assert!(
            last < first,
            "stage 2 loss should decrease: {first} -> {last}"
        );
    }

    #[test]
    fn perfect_scorer_drives_confidence_toward_one() {
        // Hand-built scorer: nu = 20 * x for 1-d inputs, so normals at
        // x=0 score exactly the prior mean (g = 1) and anomalies at x=1
        // score 20 (prob ~ 0, g = 1). Every target is 1.
        let mut examples = Vec::new();
        for i in 0..60 {
            examples.push(LabeledExample {
                id: format!("n{i}"),
                label: 0,
                subclass: "n0".into(),
                payload: Payload::Vector(vec![0.0]),
            });
            examples.push(LabeledExample {
                id: format!("a{i}"),
                label: 1,
                subclass: "a0".into(),
                payload: Payload::Vector(vec![1.0]),
            });
        }
        let data = Dataset::assemble(DatasetKind::Tabular, examples, None).unwrap();

        let mut model = CaadModel::build(&ModelSpec::tabular(1), 14).unwrap();
        let mut scorer = crate::net::Layer::zeroed(1, 1, crate::net::Activation::Linear);
        scorer.weights = vec![20.0];
        model.anomaly_head = DenseNet::new(1, vec![scorer]).unwrap();

        let mut cfg = TrainConfig::default_for_seed(14);
        cfg.stage2_epochs = 30;
        cfg.batch_size = 20;
        train_stage2(&mut model, &data, &cfg).unwrap();

        let mean_iota: f64 = data
            .examples
            .iter()
            .map(|ex| model.confidence_score(&ex.payload).unwrap())
            .sum::<f64>()
            / data.len() as f64;
        assert!(mean_iota > 0.9, "mean iota {mean_iota} should approach 1");
    }

    #[test]
    fn stage3_with_floor_lr_changes_nothing_much_and_loss_identity_holds() {
        let (train, _, cfg) = small_cfg(15);
        let mut model = CaadModel::build(&ModelSpec::tabular(8), 15).unwrap();
        train_stage1(&mut model, &train, &cfg).unwrap();
        train_stage2(&mut model, &train, &cfg).unwrap();

        // Combined loss identity on a fixed batch.
        let indices: Vec<usize> = (0..20).collect();
        let reference =
            anomaly::sample_reference(500, model.prior, &mut rng::stream(15, "fixed-ref")).unwrap();
        let (l_ano, l_conf, combined) =
            combined_batch_loss(&model, &train, &indices, &reference, 0.7, 1.3).unwrap();
        assert!((combined - (0.7 * l_ano + 1.3 * l_conf)).abs() < 1e-12);

        train_stage3(&mut model, &train, &cfg).unwrap();
    }

    #[test]
    fn stage3_keeps_scores_close_to_stage1() {
        let (train, test, cfg) = small_cfg(16);
        let mut model = CaadModel::build(&ModelSpec::tabular(8), 16).unwrap();
        train_stage1(&mut model, &train, &cfg).unwrap();
        let auc_before = {
            let scores: Vec<f64> = test
                .examples
                .iter()
                .map(|e| model.anomaly_score(&e.payload).unwrap())
                .collect();
            crate::eval::roc_auc(&scores, &test.labels()).unwrap()
        };
        train_stage2(&mut model, &train, &cfg).unwrap();
        train_stage3(&mut model, &train, &cfg).unwrap();
        let auc_after = {
            let scores: Vec<f64> = test
                .examples
                .iter()
                .map(|e| model.anomaly_score(&e.payload).unwrap())
                .collect();
            crate::eval::roc_auc(&scores, &test.labels()).unwrap()
        };
        assert!(
            (auc_after - auc_before).abs() < 0.02,
            "stage 3 is a small perturbation: {auc_before} -> {auc_after}"
        );
    }

    #[test]
    fn training_is_bit_deterministic_per_seed() {
        let (train, _, cfg) = small_cfg(17);
        let mut m1 = CaadModel::build(&ModelSpec::tabular(8), 17).unwrap();
        let mut m2 = CaadModel::build(&ModelSpec::tabular(8), 17).unwrap();
        let r1 = train_full(&mut m1, &train, &cfg, 3).unwrap();
        let r2 = train_full(&mut m2, &train, &cfg, 3).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1.anomaly_head.param_bytes(), m2.anomaly_head.param_bytes());
        assert_eq!(
            m1.confidence_head.param_bytes(),
            m2.confidence_head.param_bytes()
        );
    }

    #[test]
    fn trained_scores_separate_the_training_classes() {
        // Needs the full stage-1 step budget for the score landscape to
        // form, so this one runs at the default dataset scale.
        let synth = SynthTabularConfig::default_for_seed(18);
        let (train, _) = synth_tabular(&synth).unwrap();
        let cfg = TrainConfig::default_for_seed(18);
        let mut model = CaadModel::build(&ModelSpec::tabular(8), 18).unwrap();
        train_stage1(&mut model, &train, &cfg).unwrap();
        let thresholds = DecisionThresholds::default();
        let reference = anomaly::sample_reference(
            cfg.ref_count,
            model.prior,
            &mut rng::stream(18, "check-ref"),
        )
        .unwrap();
        let mut normal_ok = 0usize;
        let mut normal_total = 0usize;
        let mut anom_ok = 0usize;
        let mut anom_total = 0usize;
        for ex in &train.examples {
            let nu = model.anomaly_score(&ex.payload).unwrap();
            let standardized = (nu - reference.mu_r) / reference.sigma_r;
            if ex.label == 0 {
                normal_total += 1;
                normal_ok += usize::from(nu < thresholds.t_ano);
            } else {
                anom_total += 1;
                anom_ok += usize::from(standardized >= model.margin / 2.0);
            }
        }
        assert!(
            normal_ok as f64 >= 0.9 * normal_total as f64,
            "{normal_ok}/{normal_total} normals below threshold"
        );
        assert!(
            anom_ok as f64 >= 0.9 * anom_total as f64,
            "{anom_ok}/{anom_total} anomalies above margin/2"
        );
    }

    #[test]
    fn distinct_indices_within_each_class_half() {
        // With plenty of both classes, one batch should not repeat an index.
        let (train, _, _) = small_cfg(19);
        let mut batcher = BalancedBatcher::new(&train).unwrap();
        let mut r = rng::stream(19, "batch");
        let batch = batcher.next_batch(40, &mut r);
        let unique: HashSet<usize> = batch.iter().copied().collect();
        assert_eq!(unique.len(), batch.len());
    }
}
