//! Datasets: labeled examples, synthetic generators, and the manifest
//! file format.
//!
//! Manifest grammar (also in `docs/FORMATS.md`): a header directive
//! line, then one record per line with tab-separated fields
//!
//! ```text
//! #caad-manifest v1 kind=tabular dim=8
//! <id> <TAB> <label 0|1> <TAB> <subclass> <TAB> <payload>
//! ```
//!
//! where payload is a semicolon-separated numeric vector (tabular) or a
//! path to an 8-bit PGM image relative to the manifest's directory
//! (image kind, header `kind=image h=H w=W`). Blank lines and lines
//! starting with `#` are skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const LABEL_NORMAL: u8 = 0;
pub const LABEL_ANOMALY: u8 = 1;

/// Grayscale image with pixels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageData {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f64>,
}

impl ImageData {
    pub fn new(h: usize, w: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != h * w {
            return Err(Error::DimMismatch {
                context: "image pixels",
                expected: h * w,
                actual: pixels.len(),
            });
        }
        Ok(ImageData { h, w, pixels })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        ImageData {
            h,
            w,
            pixels: vec![0.0; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.pixels[y * self.w + x] = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Vector(Vec<f64>),
    Image(ImageData),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    /// 0 = normal, 1 = anomaly.
    pub label: u8,
    /// Generating cluster / anomaly subclass tag. Required on anomalies;
    /// enables held-out-novel-class splits.
    pub subclass: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Tabular,
    Image,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetMeta {
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub subclass_counts: BTreeMap<String, usize>,
    /// Seed the generator used, when synthesized.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub examples: Vec<LabeledExample>,
    pub meta: DatasetMeta,
    /// Uniform vector dimension (tabular).
    pub dim: Option<usize>,
    /// Uniform image shape (image kind).
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    /// Validates label values, uniform shapes, and anomaly subclass
    /// tags, then fills in the count metadata.
    pub fn assemble(
        kind: DatasetKind,
        examples: Vec<LabeledExample>,
        seed: Option<u64>,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Data("no examples".into()));
        }
        let mut dim = None;
        let mut image_shape = None;
        let mut meta = DatasetMeta {
            seed,
            ..DatasetMeta::default()
        };
        for ex in &examples {
            if ex.label > 1 {
                return Err(Error::Data(format!(
                    "example {}: label {} outside {{0,1}}",
                    ex.id, ex.label
                )));
            }
            if ex.label == LABEL_ANOMALY && ex.subclass.is_empty() {
                return Err(Error::Data(format!(
                    "example {}: anomaly without a subclass tag",
                    ex.id
                )));
            }
            match (&ex.payload, kind) {
                (Payload::Vector(v), DatasetKind::Tabular) => {
                    if !v.iter().all(|x| x.is_finite()) {
                        return Err(Error::Data(format!("example {}: non-finite value", ex.id)));
                    }
                    match dim {
                        None => dim = Some(v.len()),
                        Some(d) if d != v.len() => {
                            return Err(Error::Data(format!(
                                "example {}: dimension {} inconsistent with {}",
                                ex.id,
                                v.len(),
                                d
                            )))
                        }
                        _ => {}
                    }
                }
                (Payload::Image(img), DatasetKind::Image) => match image_shape {
                    None => image_shape = Some((img.h, img.w)),
                    Some(s) if s != (img.h, img.w) => {
                        return Err(Error::Data(format!(
                            "example {}: image shape {}x{} inconsistent with {}x{}",
                            ex.id, img.h, img.w, s.0, s.1
                        )))
                    }
                    _ => {}
                },
                _ => {
                    return Err(Error::Data(format!(
                        "example {}: payload does not match dataset kind",
                        ex.id
                    )))
                }
            }
            if ex.label == LABEL_NORMAL {
                meta.n_normal += 1;
            } else {
                meta.n_anomaly += 1;
            }
            *meta.subclass_counts.entry(ex.subclass.clone()).or_insert(0) += 1;
        }
        Ok(Dataset {
            kind,
            examples,
            meta,
            dim,
            image_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Indices of examples with the given label.
    pub fn indices_with_label(&self, label: u8) -> Vec<usize> {
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// A new dataset keeping only examples the predicate accepts.
    pub fn filtered(&self, keep: impl Fn(&LabeledExample) -> bool) -> Result<Dataset> {
        let examples: Vec<LabeledExample> =
            self.examples.iter().filter(|e| keep(e)).cloned().collect();
        Dataset::assemble(self.kind, examples, self.meta.seed)
    }
}

/// One isotropic Gaussian cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub mean: Vec<f64>,
    /// Per-coordinate standard deviation.
    pub scale: f64,
    pub tag: String,
}

impl ClusterSpec {
    pub fn new(mean: Vec<f64>, scale: f64, tag: &str) -> Self {
        ClusterSpec {
            mean,
            scale,
            tag: tag.to_string(),
        }
    }
}

/// Synthetic tabular benchmark: normals from a small Gaussian mixture,
/// anomalies from labeled clusters, one anomaly cluster held out of
/// training entirely so shift experiments have a genuinely novel class.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTabularConfig {
    pub dim: usize,
    pub n_train_normal: usize,
    pub n_train_anomaly: usize,
    pub n_test_normal: usize,
    pub n_test_known_anomaly: usize,
    pub n_test_novel_anomaly: usize,
    pub normal_clusters: Vec<ClusterSpec>,
    pub known_anomaly_clusters: Vec<ClusterSpec>,
    pub novel_anomaly_cluster: ClusterSpec,
    /// Probability of flipping a training label. Default 0 (off).
    pub label_noise: f64,
    pub seed: u64,
}

pub const NOVEL_SUBCLASS: &str = "novel";

impl SynthTabularConfig {
    /// Desk-scale default: 5,000 train negatives, 500 train positives
    /// (10:1), 1,000 test examples, 8 dimensions.
    ///
    /// Geometry: normals are a two-component mixture near the origin;
    /// the two known anomaly clusters sit a few standard deviations out
    /// along distinct directions with enough spread to overlap the
    /// normal fringe; the novel cluster lies along a direction the
    /// known clusters do not cover, partially sharing their radial
    /// signature.
    pub fn default_for_seed(seed: u64) -> Self {
        let d = 8;
        let mut normal0 = vec![0.0; d];
        normal0[6] = 0.8;
        let mut normal1 = vec![0.0; d];
        normal1[6] = -0.8;
        normal1[7] = 0.9;

        let mut known0 = vec![0.0; d];
        known0[0] = 3.4;
        known0[1] = 2.6;
        let mut known1 = vec![0.0; d];
        known1[2] = 3.6;
        known1[3] = -2.3;

        let mut novel = vec![0.0; d];
        novel[0] = 1.4;
        novel[2] = 1.4;
        novel[4] = 2.1;
        novel[5] = -1.2;

        SynthTabularConfig {
            dim: d,
            n_train_normal: 5000,
            n_train_anomaly: 500,
            n_test_normal: 500,
            n_test_known_anomaly: 250,
            n_test_novel_anomaly: 250,
            normal_clusters: vec![
                ClusterSpec::new(normal0, 0.55, "n0"),
                ClusterSpec::new(normal1, 0.55, "n1"),
            ],
            known_anomaly_clusters: vec![
                ClusterSpec::new(known0, 0.9, "a0"),
                ClusterSpec::new(known1, 0.9, "a1"),
            ],
            novel_anomaly_cluster: ClusterSpec::new(novel, 0.8, NOVEL_SUBCLASS),
            label_noise: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.normal_clusters.is_empty() || self.known_anomaly_clusters.is_empty() {
            return Err(Error::Config("need at least one cluster per class".into()));
        }
        for c in self
            .normal_clusters
            .iter()
            .chain(self.known_anomaly_clusters.iter())
            .chain(std::iter::once(&self.novel_anomaly_cluster))
        {
            if c.mean.len() != self.dim {
                return Err(Error::Config(format!(
                    "cluster {} mean has dimension {}, expected {}",
                    c.tag,
                    c.mean.len(),
                    self.dim
                )));
            }
            if !(c.scale > 0.0) || !c.scale.is_finite() {
                return Err(Error::Config(format!(
                    "cluster {} has degenerate covariance scale {}",
                    c.tag, c.scale
                )));
            }
        }
        if self.n_train_normal == 0 || self.n_train_anomaly == 0 {
            return Err(Error::Config("train split needs both classes".into()));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::Config("label_noise must be in [0,1]".into()));
        }
        Ok(())
    }
}

fn sample_cluster(
    cluster: &ClusterSpec,
    label: u8,
    count: usize,
    prefix: &str,
    start_index: usize,
    rng: &mut Rng,
) -> Vec<LabeledExample> {
    let gauss = Normal::new(0.0, cluster.scale).expect("validated scale");
    (0..count)
        .map(|i| {
            let v: Vec<f64> = cluster.mean.iter().map(|m| m + gauss.sample(rng)).collect();
            LabeledExample {
                id: format!("{prefix}{:05}", start_index + i),
                label,
                subclass: cluster.tag.clone(),
                payload: Payload::Vector(v),
            }
        })
        .collect()
}

/// Round-robin draw counts so `total` samples spread evenly over
/// `clusters.len()` clusters.
fn split_counts(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

/// Generates the train/test pair. The novel cluster contributes test
/// anomalies only; train and test draws come from disjoint RNG streams
/// so the splits never share samples.
pub fn synth_tabular(cfg: &SynthTabularConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let mut train_rng = rng::stream(cfg.seed, "synth-tabular-train");
    let mut test_rng = rng::stream(cfg.seed, "synth-tabular-test");

    let mut train: Vec<LabeledExample> = Vec::new();
    for (c, n) in cfg
        .normal_clusters
        .iter()
        .zip(split_counts(cfg.n_train_normal, cfg.normal_clusters.len()))
    {
        train.extend(sample_cluster(
            c,
            LABEL_NORMAL,
            n,
            "trn",
            train.len(),
            &mut train_rng,
        ));
    }
    for (c, n) in cfg.known_anomaly_clusters.iter().zip(split_counts(
        cfg.n_train_anomaly,
        cfg.known_anomaly_clusters.len(),
    )) {
        train.extend(sample_cluster(
            c,
            LABEL_ANOMALY,
            n,
            "trn",
            train.len(),
            &mut train_rng,
        ));
    }
    if cfg.label_noise > 0.0 {
        for ex in &mut train {
            if train_rng.random::<f64>() < cfg.label_noise {
                ex.label = 1 - ex.label;
                if ex.label == LABEL_ANOMALY && ex.subclass.starts_with('n') {
                    ex.subclass = format!("flip-{}", ex.subclass);
                }
            }
        }
    }

    let mut test: Vec<LabeledExample> = Vec::new();
    for (c, n) in cfg
        .normal_clusters
        .iter()
        .zip(split_counts(cfg.n_test_normal, cfg.normal_clusters.len()))
    {
        test.extend(sample_cluster(
            c,
            LABEL_NORMAL,
            n,
            "tst",
            test.len(),
            &mut test_rng,
        ));
    }
    for (c, n) in cfg.known_anomaly_clusters.iter().zip(split_counts(
        cfg.n_test_known_anomaly,
        cfg.known_anomaly_clusters.len(),
    )) {
        test.extend(sample_cluster(
            c,
            LABEL_ANOMALY,
            n,
            "tst",
            test.len(),
            &mut test_rng,
        ));
    }
    test.extend(sample_cluster(
        &cfg.novel_anomaly_cluster,
        LABEL_ANOMALY,
        cfg.n_test_novel_anomaly,
        "tst",
        test.len(),
        &mut test_rng,
    ));

    Ok((
        Dataset::assemble(DatasetKind::Tabular, train, Some(cfg.seed))?,
        Dataset::assemble(DatasetKind::Tabular, test, Some(cfg.seed))?,
    ))
}

/// Synthetic grayscale benchmark exercising the augmentation and CNN
/// path: normals are a smooth background plus a fixed faint texture,
/// anomaly subclasses add bright blob patterns at subclass-specific
/// locations; the novel subclass is test-only.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthImageConfig {
    /// Working image size (images are generated at `size`×`size`).
    pub size: usize,
    pub n_train_normal: usize,
    pub n_train_anomaly: usize,
    pub n_test_normal: usize,
    pub n_test_known_anomaly: usize,
    pub n_test_novel_anomaly: usize,
    pub seed: u64,
}

impl SynthImageConfig {
    pub fn default_for_seed(seed: u64) -> Self {
        SynthImageConfig {
            size: 32,
            n_train_normal: 400,
            n_train_anomaly: 80,
            n_test_normal: 100,
            n_test_known_anomaly: 50,
            n_test_novel_anomaly: 50,
            seed,
        }
    }
}

/// Snaps pixels onto the 8-bit grid PGM files store, so saving and
/// reloading a generated dataset is exactly the identity.
fn quantize(img: &mut ImageData) {
    for v in &mut img.pixels {
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
}

fn render_background(size: usize, rng: &mut Rng) -> ImageData {
    let mut img = ImageData::zeros(size, size);
    let gx = rng.random_range(-0.15..0.15);
    let gy = rng.random_range(-0.15..0.15);
    let base = rng.random_range(0.25..0.4);
    let noise = Normal::new(0.0, 0.02).unwrap();
    for y in 0..size {
        for x in 0..size {
            let fx = x as f64 / size as f64;
            let fy = y as f64 / size as f64;
            // Fixed texture: a faint diagonal grid shared by every image.
            let texture = if (x + y) % 8 == 0 { 0.05 } else { 0.0 };
            let v = base + gx * fx + gy * fy + texture + noise.sample(rng);
            img.set(y, x, v.clamp(0.0, 1.0));
        }
    }
    quantize(&mut img);
    img
}

fn add_blob(img: &mut ImageData, cy: f64, cx: f64, radius: f64, gain: f64) {
    for y in 0..img.h {
        for x in 0..img.w {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let d2 = (dy * dy + dx * dx) / (radius * radius);
            if d2 < 4.0 {
                let v = img.get(y, x) + gain * (-d2).exp();
                img.set(y, x, v.clamp(0.0, 1.0));
            }
        }
    }
}

fn render_anomaly(size: usize, subclass: &str, rng: &mut Rng) -> ImageData {
    let mut img = render_background(size, rng);
    let s = size as f64;
    let jitter = |rng: &mut Rng| rng.random_range(-0.06..0.06) * s;
    match subclass {
        // One bright blob, upper-left quadrant.
        "a0" => {
            add_blob(
                &mut img,
                0.3 * s + jitter(rng),
                0.3 * s + jitter(rng),
                0.12 * s,
                0.45,
            );
        }
        // Two smaller blobs on the right side.
        "a1" => {
            add_blob(
                &mut img,
                0.25 * s + jitter(rng),
                0.7 * s + jitter(rng),
                0.09 * s,
                0.4,
            );
            add_blob(
                &mut img,
                0.65 * s + jitter(rng),
                0.72 * s + jitter(rng),
                0.09 * s,
                0.4,
            );
        }
        // Novel pattern: a horizontal bar of blobs across the lower half.
        _ => {
            for k in 0..3 {
                add_blob(
                    &mut img,
                    0.72 * s + jitter(rng),
                    (0.25 + 0.25 * k as f64) * s + jitter(rng),
                    0.08 * s,
                    0.38,
                );
            }
        }
    }
    quantize(&mut img);
    img
}

pub fn synth_images(cfg: &SynthImageConfig) -> Result<(Dataset, Dataset)> {
    if cfg.size < 8 {
        return Err(Error::Config(format!(
            "image size {} below the minimum crop size",
            cfg.size
        )));
    }
    let known = ["a0", "a1"];
    let build = |tag: &str, n_normal: usize, n_known: usize, n_novel: usize| -> Result<Dataset> {
        let mut r = rng::stream(cfg.seed, &format!("synth-image-{tag}"));
        let mut examples = Vec::new();
        for i in 0..n_normal {
            examples.push(LabeledExample {
                id: format!("{tag}{i:05}"),
                label: LABEL_NORMAL,
                subclass: "n0".into(),
                payload: Payload::Image(render_background(cfg.size, &mut r)),
            });
        }
        for (ci, n) in split_counts(n_known, known.len()).into_iter().enumerate() {
            for _ in 0..n {
                let idx = examples.len();
                examples.push(LabeledExample {
                    id: format!("{tag}{idx:05}"),
                    label: LABEL_ANOMALY,
                    subclass: known[ci].into(),
                    payload: Payload::Image(render_anomaly(cfg.size, known[ci], &mut r)),
                });
            }
        }
        for _ in 0..n_novel {
            let idx = examples.len();
            examples.push(LabeledExample {
                id: format!("{tag}{idx:05}"),
                label: LABEL_ANOMALY,
                subclass: NOVEL_SUBCLASS.into(),
                payload: Payload::Image(render_anomaly(cfg.size, NOVEL_SUBCLASS, &mut r)),
            });
        }
        Dataset::assemble(DatasetKind::Image, examples, Some(cfg.seed))
    };
    let train = build("trn", cfg.n_train_normal, cfg.n_train_anomaly, 0)?;
    let test = build(
        "tst",
        cfg.n_test_normal,
        cfg.n_test_known_anomaly,
        cfg.n_test_novel_anomaly,
    )?;
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Manifest I/O
// ---------------------------------------------------------------------------

fn manifest_header(ds: &Dataset) -> String {
    match ds.kind {
        DatasetKind::Tabular => {
            format!("#caad-manifest v1 kind=tabular dim={}", ds.dim.unwrap_or(0))
        }
        DatasetKind::Image => {
            let (h, w) = ds.image_shape.unwrap_or((0, 0));
            format!("#caad-manifest v1 kind=image h={h} w={w}")
        }
    }
}

/// Writes the manifest, and for image datasets the referenced PGM files
/// under `images/` next to it.
pub fn save_manifest(ds: &Dataset, manifest_path: &Path) -> Result<()> {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut out = String::new();
    writeln!(out, "{}", manifest_header(ds)).unwrap();
    if ds.kind == DatasetKind::Image {
        std::fs::create_dir_all(dir.join("images"))?;
    }
    for ex in &ds.examples {
        let payload = match &ex.payload {
            Payload::Vector(v) => {
                let cells: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
                cells.join(";")
            }
            Payload::Image(img) => {
                let rel = format!("images/{}.pgm", ex.id);
                write_pgm(&dir.join(&rel), img)?;
                rel
            }
        };
        writeln!(out, "{}\t{}\t{}\t{}", ex.id, ex.label, ex.subclass, payload).unwrap();
    }
    std::fs::write(manifest_path, out)?;
    Ok(())
}

fn data_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}:{line}: {msg}", path.display()))
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));

    let mut kind: Option<DatasetKind> = None;
    let mut expect_dim: Option<usize> = None;
    let mut expect_shape: Option<(usize, usize)> = None;
    let mut examples = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end();
        if line.starts_with("#caad-manifest") {
            for field in line.split_whitespace().skip(1) {
                match field.split_once('=') {
                    Some(("kind", "tabular")) => kind = Some(DatasetKind::Tabular),
                    Some(("kind", "image")) => kind = Some(DatasetKind::Image),
                    Some(("kind", other)) => {
                        return Err(data_err(path, lineno, format!("unknown kind {other}")))
                    }
                    Some(("dim", v)) => {
                        expect_dim =
                            Some(v.parse().map_err(|_| {
                                data_err(path, lineno, format!("bad dim value {v}"))
                            })?)
                    }
                    Some(("h", v)) => {
                        let h = v
                            .parse()
                            .map_err(|_| data_err(path, lineno, format!("bad h value {v}")))?;
                        expect_shape = Some((h, expect_shape.map_or(0, |s| s.1)));
                    }
                    Some(("w", v)) => {
                        let w = v
                            .parse()
                            .map_err(|_| data_err(path, lineno, format!("bad w value {v}")))?;
                        expect_shape = Some((expect_shape.map_or(0, |s| s.0), w));
                    }
                    _ => {}
                }
            }
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let kind =
            kind.ok_or_else(|| data_err(path, lineno, "record before #caad-manifest header"))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(data_err(
                path,
                lineno,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let (id, label_s, subclass, payload_s) = (fields[0], fields[1], fields[2], fields[3]);
        let label: u8 = match label_s {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(data_err(
                    path,
                    lineno,
                    format!("label {other} outside {{0,1}}"),
                ))
            }
        };
        let payload = match kind {
            DatasetKind::Tabular => {
                let mut v = Vec::new();
                for cell in payload_s.split(';') {
                    let x: f64 = cell.trim().parse().map_err(|_| {
                        data_err(path, lineno, format!("bad numeric cell {cell:?}"))
                    })?;
                    v.push(x);
                }
                if let Some(d) = expect_dim {
                    if v.len() != d {
                        return Err(data_err(
                            path,
                            lineno,
                            format!("vector has {} values, header says dim={d}", v.len()),
                        ));
                    }
                }
                Payload::Vector(v)
            }
            DatasetKind::Image => {
                let img = read_pgm(&dir.join(payload_s))
                    .map_err(|e| data_err(path, lineno, format!("{payload_s}: {e}")))?;
                if let Some((h, w)) = expect_shape {
                    if (img.h, img.w) != (h, w) {
                        return Err(data_err(
                            path,
                            lineno,
                            format!("image is {}x{}, header says {h}x{w}", img.h, img.w),
                        ));
                    }
                }
                Payload::Image(img)
            }
        };
        examples.push(LabeledExample {
            id: id.to_string(),
            label,
            subclass: subclass.to_string(),
            payload,
        });
    }

    let kind = kind.ok_or_else(|| Error::Data(format!("{}: no examples", path.display())))?;
    if examples.is_empty() {
        return Err(Error::Data(format!("{}: no examples", path.display())));
    }
    Dataset::assemble(kind, examples, None)
}

// ---------------------------------------------------------------------------
// PGM (binary P5, 8-bit) — bit-exact image storage
// ---------------------------------------------------------------------------

pub fn write_pgm(path: &Path, img: &ImageData) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.w, img.h).into_bytes();
    bytes.extend(
        img.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<ImageData> {
    let bytes = std::fs::read(path)?;
    let err = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));
    // Header: magic, width, height, maxval as whitespace-separated
    // tokens (comments not supported — we only read files we write).
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(err("not a binary PGM (P5)"));
    }
    let w: usize = token(&bytes)?.parse().map_err(|_| err("bad width"))?;
    let h: usize = token(&bytes)?.parse().map_err(|_| err("bad height"))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| err("bad maxval"))?;
    if maxval != 255 {
        return Err(err("only 8-bit PGM supported"));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + w * h {
        return Err(err("truncated pixel data"));
    }
    let pixels = bytes[pos..pos + w * h]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    ImageData::new(h, w, pixels)
}

/// Stratified shuffle used by experiment harnesses: returns a permuted
/// copy with the same examples.
pub fn shuffled(ds: &Dataset, rng: &mut Rng) -> Dataset {
    let mut examples = ds.examples.clone();
    examples.shuffle(rng);
    Dataset {
        kind: ds.kind,
        examples,
        meta: ds.meta.clone(),
        dim: ds.dim,
        image_shape: ds.image_shape,
    }
}
