//! Versioned binary checkpoints.
//!
//! Layout (everything little-endian; see also `docs/FORMATS.md`):
//!
//! ```text
//! magic "CAADCKPT" | u32 version | u64 payload_len | payload | u64 fnv1a64(payload)
//! ```
//!
//! The payload holds run metadata (seed, stage, epoch), the probability
//! settings, thresholds, the extractor, both heads (dims, activation
//! tags, row-major f64 parameter arrays), and the optimizer records of
//! the stage that produced the file. Loading verifies magic, version,
//! length, and checksum before constructing anything, so a truncated or
//! corrupt file never yields a partial model.

use std::path::Path;

use crate::anomaly::GaussianPrior;
use crate::confidence::{DecisionThresholds, PdfDenominator};
use crate::error::{Error, Result};
use crate::features::{ConvLayer, Extractor, TinyCnn, CONV_KERNEL};
use crate::model::CaadModel;
use crate::net::{Activation, DenseNet, Layer};
use crate::optim::{AdamParams, AdamState};

pub const MAGIC: &[u8; 8] = b"CAADCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Last completed training stage (0 for an untrained model).
    pub stage: u8,
    /// Epochs completed within that stage.
    pub epoch: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Descriptor of one optimizer as a stage left it. Adam moment buffers
/// are serialized when present; stages construct fresh optimizers, so
/// boundary checkpoints normally carry descriptors without buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerRecord {
    pub name: String,
    pub kind: OptimizerKind,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub total_steps: u64,
    pub step_count: u64,
    pub adam: Option<AdamState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: CaadModel,
    pub thresholds: DecisionThresholds,
    pub optimizers: Vec<OptimizerRecord>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// ---------------------------------------------------------------------------
// Byte plumbing
// ---------------------------------------------------------------------------

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.f64(*v);
        }
    }
    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated payload: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf8 in name".into()))
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Sigmoid => 1,
        Activation::Linear => 2,
    }
}

fn activation_from_tag(t: u8) -> Result<Activation> {
    match t {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Sigmoid),
        2 => Ok(Activation::Linear),
        other => Err(Error::Checkpoint(format!("unknown activation tag {other}"))),
    }
}

fn write_net(w: &mut Writer, net: &DenseNet) {
    w.u32(net.input_dim() as u32);
    w.u32(net.layers().len() as u32);
    for l in net.layers() {
        w.u32(l.in_dim as u32);
        w.u32(l.out_dim as u32);
        w.u8(activation_tag(l.activation));
        w.f64s(&l.weights);
        w.f64s(&l.bias);
    }
}

fn read_net(r: &mut Reader) -> Result<DenseNet> {
    let input_dim = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let activation = activation_from_tag(r.u8()?)?;
        let weights = r.f64s(in_dim * out_dim)?;
        let bias = r.f64s(out_dim)?;
        layers.push(Layer {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        });
    }
    DenseNet::new(input_dim, layers).map_err(|e| Error::Checkpoint(format!("invalid net: {e}")))
}

fn write_extractor(w: &mut Writer, e: &Extractor) {
    match e {
        Extractor::Identity { dim } => {
            w.u8(0);
            w.u32(*dim as u32);
        }
        Extractor::TinyCnn(cnn) => {
            w.u8(1);
            w.u32(cnn.in_h as u32);
            w.u32(cnn.in_w as u32);
            w.u32(cnn.convs.len() as u32);
            for c in &cnn.convs {
                w.u32(c.in_c as u32);
                w.u32(c.out_c as u32);
                w.f64s(&c.weights);
                w.f64s(&c.bias);
            }
        }
    }
}

fn read_extractor(r: &mut Reader) -> Result<Extractor> {
    match r.u8()? {
        0 => Ok(Extractor::Identity {
            dim: r.u32()? as usize,
        }),
        1 => {
            let in_h = r.u32()? as usize;
            let in_w = r.u32()? as usize;
            let n = r.u32()? as usize;
            let mut convs = Vec::with_capacity(n);
            for _ in 0..n {
                let in_c = r.u32()? as usize;
                let out_c = r.u32()? as usize;
                let weights = r.f64s(out_c * in_c * CONV_KERNEL * CONV_KERNEL)?;
                let bias = r.f64s(out_c)?;
                convs.push(ConvLayer {
                    in_c,
                    out_c,
                    weights,
                    bias,
                });
            }
            Ok(Extractor::TinyCnn(TinyCnn { in_h, in_w, convs }))
        }
        other => Err(Error::Checkpoint(format!("unknown extractor tag {other}"))),
    }
}

fn write_optimizer(w: &mut Writer, o: &OptimizerRecord) {
    w.str(&o.name);
    w.u8(match o.kind {
        OptimizerKind::Sgd => 0,
        OptimizerKind::Adam => 1,
    });
    w.f64(o.lr_initial);
    w.f64(o.lr_final);
    w.u64(o.total_steps);
    w.u64(o.step_count);
    if o.kind == OptimizerKind::Adam {
        match &o.adam {
            Some(state) => {
                w.f64(state.hyper.beta1);
                w.f64(state.hyper.beta2);
                w.f64(state.hyper.epsilon);
                w.u8(1);
                w.u32(state.m.len() as u32);
                for (m, v) in state.m.iter().zip(&state.v) {
                    w.u64(m.len() as u64);
                    w.f64s(m);
                    w.f64s(v);
                }
            }
            None => {
                let d = AdamParams::default();
                w.f64(d.beta1);
                w.f64(d.beta2);
                w.f64(d.epsilon);
                w.u8(0);
            }
        }
    }
}

fn read_optimizer(r: &mut Reader) -> Result<OptimizerRecord> {
    let name = r.str()?;
    let kind = match r.u8()? {
        0 => OptimizerKind::Sgd,
        1 => OptimizerKind::Adam,
        other => return Err(Error::Checkpoint(format!("unknown optimizer tag {other}"))),
    };
    let lr_initial = r.f64()?;
    let lr_final = r.f64()?;
    let total_steps = r.u64()?;
    let step_count = r.u64()?;
    let adam = if kind == OptimizerKind::Adam {
        let hyper = AdamParams {
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        if r.u8()? == 1 {
            let n = r.u32()? as usize;
            let mut m = Vec::with_capacity(n);
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                let len = r.u64()? as usize;
                m.push(r.f64s(len)?);
                v.push(r.f64s(len)?);
            }
            Some(AdamState {
                hyper,
                step_count,
                m,
                v,
            })
        } else {
            Some(AdamState {
                hyper,
                step_count,
                m: Vec::new(),
                v: Vec::new(),
            })
        }
    } else {
        None
    };
    Ok(OptimizerRecord {
        name,
        kind,
        lr_initial,
        lr_final,
        total_steps,
        step_count,
        adam,
    })
}

/// Serializes a checkpoint; `load_weights` is its exact inverse.
pub fn save_weights(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(ckpt.meta.seed);
    w.u8(ckpt.meta.stage);
    w.u32(ckpt.meta.epoch);
    w.f64(ckpt.model.prior.mu);
    w.f64(ckpt.model.prior.sigma);
    w.f64(ckpt.model.margin);
    w.u8(match ckpt.model.pdf_denominator {
        PdfDenominator::TwoSigma => 0,
        PdfDenominator::TwoSigmaSquared => 1,
    });
    w.f64(ckpt.thresholds.t_ano);
    w.f64(ckpt.thresholds.t_conf);
    write_extractor(&mut w, &ckpt.model.extractor);
    write_net(&mut w, &ckpt.model.anomaly_head);
    write_net(&mut w, &ckpt.model.confidence_head);
    w.u8(ckpt.optimizers.len() as u8);
    for o in &ckpt.optimizers {
        write_optimizer(&mut w, o);
    }

    let payload = w.buf;
    let mut out = Vec::with_capacity(payload.len() + 28);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&fnv1a64(&payload).to_le_bytes());
    out
}

pub fn load_weights(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 28 {
        return Err(Error::Checkpoint("file too short for header".into()));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::Checkpoint(
            "bad magic (not a checkpoint file)".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let payload_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() != 20 + payload_len + 8 {
        return Err(Error::Checkpoint(format!(
            "length mismatch: header says {payload_len} payload bytes, file has {}",
            bytes.len().saturating_sub(28)
        )));
    }
    let payload = &bytes[20..20 + payload_len];
    let stored = u64::from_le_bytes(bytes[20 + payload_len..].try_into().unwrap());
    let actual = fnv1a64(payload);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:#018x}, computed {actual:#018x}"
        )));
    }

    let mut r = Reader::new(payload);
    let meta = CheckpointMeta {
        seed: r.u64()?,
        stage: r.u8()?,
        epoch: r.u32()?,
    };
    let prior = GaussianPrior {
        mu: r.f64()?,
        sigma: r.f64()?,
    };
    let margin = r.f64()?;
    let pdf_denominator = match r.u8()? {
        0 => PdfDenominator::TwoSigma,
        1 => PdfDenominator::TwoSigmaSquared,
        other => {
            return Err(Error::Checkpoint(format!(
                "unknown pdf denominator tag {other}"
            )))
        }
    };
    let thresholds = DecisionThresholds {
        t_ano: r.f64()?,
        t_conf: r.f64()?,
    };
    let extractor = read_extractor(&mut r)?;
    let anomaly_head = read_net(&mut r)?;
    let confidence_head = read_net(&mut r)?;
    let n_opt = r.u8()? as usize;
    let mut optimizers = Vec::with_capacity(n_opt);
    for _ in 0..n_opt {
        optimizers.push(read_optimizer(&mut r)?);
    }
    if !r.done() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(Checkpoint {
        meta,
        model: CaadModel {
            extractor,
            anomaly_head,
            confidence_head,
            prior,
            margin,
            pdf_denominator,
        },
        thresholds,
        optimizers,
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, save_weights(ckpt))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    load_weights(&bytes)
}


#[cfg(test)]
mod resume_tests {
    use super::*;
    use crate::data::{synth_tabular, SynthTabularConfig};
    use crate::model::ModelSpec;
    use crate::pipeline::{train_stage1, train_stage2, TrainConfig};

    /// A stage-1 checkpoint must resume stage 2 exactly as if training
    /// had never stopped: identical first-batch loss, identical weights.
    #[test]
    fn stage1_checkpoint_resumes_stage2_bit_exactly() {
        let mut synth = SynthTabularConfig::default_for_seed(31);
        synth.n_train_normal = 300;
        synth.n_train_anomaly = 30;
        synth.n_test_normal = 10;
        synth.n_test_known_anomaly = 5;
        synth.n_test_novel_anomaly = 5;
        let (train, _) = synth_tabular(&synth).unwrap();
        let mut cfg = TrainConfig::default_for_seed(31);
        cfg.stage1_epochs = 2;
        cfg.stage2_epochs = 2;
        cfg.ref_count = 500;

        // Uninterrupted: stage 1 then stage 2.
        let mut unbroken = crate::model::CaadModel::build(&ModelSpec::tabular(8), 31).unwrap();
        train_stage1(&mut unbroken, &train, &cfg).unwrap();
        let ckpt_bytes = save_weights(&Checkpoint {
            meta: CheckpointMeta {
                seed: 31,
                stage: 1,
                epoch: 2,
            },
            model: unbroken.clone(),
            thresholds: DecisionThresholds::default(),
            optimizers: vec![],
        });
        let unbroken_records = train_stage2(&mut unbroken, &train, &cfg).unwrap();

        // Resumed: reload the stage-1 weights and run stage 2 fresh.
        let mut resumed = load_weights(&ckpt_bytes).unwrap().model;
        let resumed_records = train_stage2(&mut resumed, &train, &cfg).unwrap();

        assert_eq!(resumed_records, unbroken_records);
        assert_eq!(
            resumed.confidence_head.param_bytes(),
            unbroken.confidence_head.param_bytes()
        );
    }
}
