//! Command-line driver: `synth`, `train`, `eval`, `score`, `compare`.
//!
//! Every flag has a `CAAD_*` environment-variable mirror; precedence is
//! flag > environment > config file > built-in default. Each command
//! writes a run manifest into its output directory before doing any
//! work, recording the command, resolved config, seed, and input
//! hashes. Exit codes: 0 success, 2 config error, 3 data error,
//! 4 numeric divergence, 1 anything else.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta, OptimizerKind, OptimizerRecord,
};
use crate::config::Config;
use crate::data::{load_manifest, save_manifest, synth_images, synth_tabular, DatasetKind};
use crate::error::{Error, Result};
use crate::eval::{
    confidence_sweep_scored, evaluate_scored, imbalance_experiment, score_dataset,
    shift_experiment, ImbalanceConfig, ShiftConfig, DEFAULT_SWEEP_GRID,
};
use crate::model::CaadModel;
use crate::pipeline::{
    diagnose, train_stage1, train_stage2, train_stage3, BalancedBatcher, EpochRecord,
};

#[derive(Parser)]
#[command(
    name = "caad",
    about = "Confidence-aware anomaly detection: synthetic data, three-stage training, evaluation, and comparison experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (key = value text format).
    #[arg(long, env = "CAAD_CONFIG")]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, env = "CAAD_SEED")]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/test datasets.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for manifests (and images).
        #[arg(long, env = "CAAD_OUT")]
        out: PathBuf,
    },
    /// Train on a dataset manifest, producing per-stage checkpoints.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Training manifest path.
        #[arg(long, env = "CAAD_DATA")]
        data: PathBuf,
        /// Output directory for checkpoints and the metrics log.
        #[arg(long, env = "CAAD_OUT")]
        out: PathBuf,
        /// Run stages 1..=N (1, 2, or 3).
        #[arg(long, env = "CAAD_STAGES", default_value_t = 3)]
        stages: u8,
        /// Resume from a stage checkpoint instead of fresh weights; the
        /// remaining stages use the checkpoint's seed, so a resumed run
        /// reproduces the uninterrupted one exactly.
        #[arg(long, env = "CAAD_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: metrics report plus confidence sweep.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, env = "CAAD_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "CAAD_DATA")]
        data: PathBuf,
        /// Anomaly-score threshold; defaults to the checkpoint's.
        #[arg(long, env = "CAAD_TANO")]
        tano: Option<f64>,
        /// Confidence threshold; defaults to the checkpoint's.
        #[arg(long, env = "CAAD_TCONF")]
        tconf: Option<f64>,
        /// Optional directory for report files.
        #[arg(long, env = "CAAD_OUT")]
        out: Option<PathBuf>,
    },
    /// Score a manifest: one (id, nu, iota, diagnosis) record per line.
    Score {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, env = "CAAD_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "CAAD_DATA")]
        data: PathBuf,
        #[arg(long, env = "CAAD_TANO")]
        tano: Option<f64>,
        #[arg(long, env = "CAAD_TCONF")]
        tconf: Option<f64>,
        /// Scoring chunk size; results do not depend on it.
        #[arg(long, env = "CAAD_BATCH", default_value_t = 40)]
        batch: usize,
        #[arg(long, env = "CAAD_OUT")]
        out: Option<PathBuf>,
    },
    /// Run the shift and imbalance comparison experiments.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, env = "CAAD_OUT")]
        out: PathBuf,
        /// Positive fractions for the imbalance study, e.g. 1.0,0.5,0.1.
        #[arg(long, env = "CAAD_FRACTIONS", value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        /// Number of seeds per experiment cell.
        #[arg(long, env = "CAAD_SEEDS")]
        seeds: Option<usize>,
    },
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn load_config(common: &CommonArgs) -> Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::from_file(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn file_hash(path: &Path) -> String {
    match std::fs::read(path) {
        Ok(bytes) => format!("{:#018x}", fnv1a64(&bytes)),
        Err(_) => "unavailable".into(),
    }
}

/// Writes `run_manifest.txt` before any real work happens. Timestamps
/// are the only non-deterministic content any command produces.
fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    cfg: &Config,
    inputs: &[(&str, &Path)],
    outputs: &[String],
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut text = String::new();
    text.push_str("# caad run manifest\n");
    text.push_str(&format!("command = {command}\n"));
    text.push_str(&format!("timestamp_unix = {timestamp}\n"));
    text.push_str(&format!("seed = {}\n", cfg.seed));
    for (name, path) in inputs {
        text.push_str(&format!("input_{name} = {}\n", path.display()));
        text.push_str(&format!("input_{name}_fnv1a64 = {}\n", file_hash(path)));
    }
    for out in outputs {
        text.push_str(&format!("output = {out}\n"));
    }
    text.push_str("--- resolved config ---\n");
    text.push_str(&cfg.to_text());
    std::fs::write(out_dir.join("run_manifest.txt"), text)?;
    Ok(())
}

fn cmd_synth(common: CommonArgs, out: PathBuf) -> Result<()> {
    let cfg = load_config(&common)?;
    let inputs: Vec<(&str, &Path)> = match &common.config {
        Some(p) => vec![("config", p.as_path())],
        None => vec![],
    };
    write_run_manifest(
        &out,
        "synth",
        &cfg,
        &inputs,
        &["train.manifest".into(), "test.manifest".into()],
    )?;
    let (train, test) = match cfg.synth_kind {
        DatasetKind::Tabular => synth_tabular(&cfg.synth_tabular_config())?,
        DatasetKind::Image => synth_images(&cfg.synth_image_config())?,
    };
    save_manifest(&train, &out.join("train.manifest"))?;
    save_manifest(&test, &out.join("test.manifest"))?;
    println!(
        "wrote {} train examples ({} normal / {} anomaly) and {} test examples to {}",
        train.len(),
        train.meta.n_normal,
        train.meta.n_anomaly,
        test.len(),
        out.display()
    );
    Ok(())
}

fn emit_metrics_log(out: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    std::fs::write(out.join("metrics.log"), text)?;
    Ok(())
}

fn cmd_train(
    common: CommonArgs,
    data: PathBuf,
    out: PathBuf,
    stages: u8,
    resume: Option<PathBuf>,
) -> Result<()> {
    if !(1..=3).contains(&stages) {
        return Err(Error::InvalidArgument(format!(
            "--stages must be 1, 2, or 3, got {stages}"
        )));
    }
    let mut cfg = load_config(&common)?;
    let dataset = load_manifest(&data)?;

    // Fresh weights, or a stage checkpoint to continue from.
    let (mut model, start_stage) = match &resume {
        Some(path) => {
            let ckpt = read_checkpoint(path)?;
            if ckpt.meta.stage >= stages {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint already completed stage {}, nothing to do for --stages {stages}",
                    ckpt.meta.stage
                )));
            }
            // Stage RNG streams derive from the seed, so resuming under
            // the checkpoint's seed reproduces the uninterrupted run.
            cfg.seed = ckpt.meta.seed;
            (ckpt.model, ckpt.meta.stage + 1)
        }
        None => {
            let spec = cfg.model_spec_for(&dataset)?;
            (CaadModel::build(&spec, cfg.seed)?, 1)
        }
    };
    let thresholds = cfg.thresholds()?;
    let train_cfg = cfg.train_config();

    let mut inputs: Vec<(&str, &Path)> = vec![("data", data.as_path())];
    if let Some(p) = &common.config {
        inputs.push(("config", p.as_path()));
    }
    if let Some(p) = &resume {
        inputs.push(("checkpoint", p.as_path()));
    }
    let planned: Vec<String> = (start_stage..=stages)
        .map(|s| format!("checkpoint-stage{s}.caad"))
        .chain(std::iter::once("metrics.log".to_string()))
        .collect();
    write_run_manifest(&out, "train", &cfg, &inputs, &planned)?;

    let batches_per_epoch = BalancedBatcher::new(&dataset)?.batches_per_epoch(train_cfg.batch_size);
    let schedule_record = |name: &str, kind, epochs: usize, lr0: f64, lr1: f64| OptimizerRecord {
        name: name.into(),
        kind,
        lr_initial: lr0,
        lr_final: lr1,
        total_steps: (epochs * batches_per_epoch) as u64,
        step_count: (epochs * batches_per_epoch) as u64,
        adam: None,
    };

    let mut all_records = Vec::new();
    for stage in start_stage..=stages {
        let (records, epochs, optimizer) = match stage {
            1 => (
                train_stage1(&mut model, &dataset, &train_cfg)?,
                train_cfg.stage1_epochs,
                schedule_record(
                    "stage1-sgd-extractor-and-anomaly-head",
                    OptimizerKind::Sgd,
                    train_cfg.stage1_epochs,
                    train_cfg.stage12_lr_initial,
                    train_cfg.stage12_lr_final,
                ),
            ),
            2 => (
                train_stage2(&mut model, &dataset, &train_cfg)?,
                train_cfg.stage2_epochs,
                schedule_record(
                    "stage2-adam-confidence-head",
                    OptimizerKind::Adam,
                    train_cfg.stage2_epochs,
                    train_cfg.stage12_lr_initial,
                    train_cfg.stage12_lr_final,
                ),
            ),
            _ => (
                train_stage3(&mut model, &dataset, &train_cfg)?,
                train_cfg.stage3_epochs,
                schedule_record(
                    "stage3-adam-joint",
                    OptimizerKind::Adam,
                    train_cfg.stage3_epochs,
                    train_cfg.stage3_lr,
                    train_cfg.stage3_lr,
                ),
            ),
        };
        for r in &records {
            println!("{}", r.to_line());
        }
        all_records.extend(records);
        write_checkpoint(
            &out.join(format!("checkpoint-stage{stage}.caad")),
            &Checkpoint {
                meta: CheckpointMeta {
                    seed: cfg.seed,
                    stage,
                    epoch: epochs as u32,
                },
                model: model.clone(),
                thresholds,
                optimizers: vec![optimizer],
            },
        )?;
    }

    emit_metrics_log(&out, &all_records)?;
    println!(
        "trained stages {start_stage}..={stages}; checkpoints and metrics.log in {}",
        out.display()
    );
    Ok(())
}

fn resolve_thresholds(
    ckpt: &Checkpoint,
    tano: Option<f64>,
    tconf: Option<f64>,
) -> crate::confidence::DecisionThresholds {
    crate::confidence::DecisionThresholds {
        t_ano: tano.unwrap_or(ckpt.thresholds.t_ano),
        t_conf: tconf.unwrap_or(ckpt.thresholds.t_conf),
    }
}

fn cmd_eval(
    common: CommonArgs,
    checkpoint: PathBuf,
    data: PathBuf,
    tano: Option<f64>,
    tconf: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(&common)?;
    let ckpt = read_checkpoint(&checkpoint)?;
    let dataset = load_manifest(&data)?;
    let thresholds = resolve_thresholds(&ckpt, tano, tconf);

    if let Some(dir) = &out {
        let mut inputs: Vec<(&str, &Path)> = vec![
            ("checkpoint", checkpoint.as_path()),
            ("data", data.as_path()),
        ];
        if let Some(p) = &common.config {
            inputs.push(("config", p.as_path()));
        }
        write_run_manifest(
            dir,
            "eval",
            &cfg,
            &inputs,
            &["eval_report.txt".into(), "roc_points.dat".into()],
        )?;
    }

    let scored = score_dataset(&ckpt.model, &dataset)?;
    let report = evaluate_scored(&scored, thresholds)?;
    let sweep = confidence_sweep_scored(&scored, thresholds.t_ano, &DEFAULT_SWEEP_GRID)?;

    let mut text = String::new();
    text.push_str(&format!("metrics {}\n", report.to_line()));
    text.push_str(&sweep.to_records());
    text.push('\n');
    text.push_str(&sweep.to_table());
    if let Some(dir) = &out {
        std::fs::write(dir.join("eval_report.txt"), &text)?;
        let labels: Vec<u8> = scored.iter().map(|s| s.label).collect();
        let nus: Vec<f64> = scored.iter().map(|s| s.nu).collect();
        let mut roc = String::from("# fpr tpr threshold\n");
        for (fpr, tpr, thr) in crate::eval::roc_points(&nus, &labels)? {
            roc.push_str(&format!("{fpr} {tpr} {thr}\n"));
        }
        std::fs::write(dir.join("roc_points.dat"), roc)?;
    }
    println!("{text}");
    Ok(())
}

fn cmd_score(
    common: CommonArgs,
    checkpoint: PathBuf,
    data: PathBuf,
    tano: Option<f64>,
    tconf: Option<f64>,
    batch: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    if batch == 0 {
        return Err(Error::InvalidArgument("--batch must be positive".into()));
    }
    let cfg = load_config(&common)?;
    let ckpt = read_checkpoint(&checkpoint)?;
    let dataset = load_manifest(&data)?;
    let thresholds = resolve_thresholds(&ckpt, tano, tconf);

    if let Some(dir) = &out {
        let mut inputs: Vec<(&str, &Path)> = vec![
            ("checkpoint", checkpoint.as_path()),
            ("data", data.as_path()),
        ];
        if let Some(p) = &common.config {
            inputs.push(("config", p.as_path()));
        }
        write_run_manifest(dir, "score", &cfg, &inputs, &["scores.tsv".into()])?;
    }

    // Chunked scoring: batching is plumbing only, records are identical
    // for any chunk size and preserve input order.
    let mut lines = String::new();
    for chunk in dataset.examples.chunks(batch) {
        for ex in chunk {
            let payload = crate::pipeline::eval_payload(&ckpt.model.extractor, ex)?;
            let (nu, iota) = ckpt.model.score_pair(&payload)?;
            let d = diagnose(nu, iota, thresholds);
            lines.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                ex.id, nu, iota, d.decision, d.reason
            ));
        }
    }
    if let Some(dir) = &out {
        std::fs::write(dir.join("scores.tsv"), &lines)?;
    }
    print!("{lines}");
    Ok(())
}

fn cmd_compare(
    common: CommonArgs,
    out: PathBuf,
    fractions: Option<Vec<f64>>,
    seeds: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(&common)?;
    if let Some(f) = fractions {
        cfg.experiment_fractions = f;
    }
    if let Some(s) = seeds {
        cfg.experiment_seeds = s;
    }
    cfg.validate()?;

    let inputs: Vec<(&str, &Path)> = match &common.config {
        Some(p) => vec![("config", p.as_path())],
        None => vec![],
    };
    write_run_manifest(
        &out,
        "compare",
        &cfg,
        &inputs,
        &[
            "shift_report.txt".into(),
            "imbalance_report.txt".into(),
            "imbalance_plot.dat".into(),
        ],
    )?;

    let shift = shift_experiment(&ShiftConfig {
        synth: cfg.synth_tabular_config(),
        train: cfg.train_config(),
        seeds: cfg.experiment_seed_list(),
        caad_stages: 3,
        include_novel_in_training: false,
    })?;
    let shift_text = format!("{}\n{}", shift.to_records(), shift.to_table());
    println!("--- shift experiment (novel-class generalization) ---");
    print!("{shift_text}");
    std::fs::write(out.join("shift_report.txt"), &shift_text)?;

    let imbalance = imbalance_experiment(&ImbalanceConfig {
        synth: cfg.synth_tabular_config(),
        train: cfg.train_config(),
        seeds: cfg.experiment_seed_list(),
        fractions: cfg.experiment_fractions.clone(),
    })?;
    let imbalance_text = format!("{}\n{}", imbalance.to_records(), imbalance.to_table());
    println!("--- imbalance experiment (positive-fraction sweep) ---");
    print!("{imbalance_text}");
    std::fs::write(out.join("imbalance_report.txt"), &imbalance_text)?;
    std::fs::write(out.join("imbalance_plot.dat"), imbalance.to_plot_columns())?;
    Ok(())
}

/// Parses argv, dispatches, and maps errors to exit codes.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { common, out } => cmd_synth(common, out),
        Command::Train {
            common,
            data,
            out,
            stages,
            checkpoint,
        } => cmd_train(common, data, out, stages, checkpoint),
        Command::Eval {
            common,
            checkpoint,
            data,
            tano,
            tconf,
            out,
        } => cmd_eval(common, checkpoint, data, tano, tconf, out),
        Command::Score {
            common,
            checkpoint,
            data,
            tano,
            tconf,
            batch,
            out,
        } => cmd_score(common, checkpoint, data, tano, tconf, batch, out),
        Command::Compare {
            common,
            out,
            fractions,
            seeds,
        } => cmd_compare(common, out, fractions, seeds),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
