//! Command-line front end: generate data, train, evaluate, gradient-check,
//! count parameters, and predict.
//!
//! Every subcommand is deterministic given its flags — all randomness flows
//! from explicit seeds, never the clock. Configuration comes from a JSON
//! file with command-line flags overriding individual fields; unknown keys
//! in any config file are fatal rather than silently ignored.
//!
//! Exit codes: 0 success, 1 failed gradient check, 2 bad usage or config,
//! 3 I/O error, 4 shape mismatch.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{generate_to_file, load, split, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_files, write_labels, write_predictions, LabelLine, PredictionLine, ScoredClasses,
    DEFAULT_F1_THRESHOLD, DEFAULT_GAP_K,
};
use crate::model::{
    build, gradcheck_model, gradcheck_model_corrupted, load_weights, param_count, param_shapes,
    Arch, ModelConfig,
};
use crate::nn::{
    gradcheck, gradcheck_corrupted, GradCheckReport, LinearLayer, Relu, SelfAttentionBlock, Sigmoid,
};
use crate::rng::{derive_seed, Rng};
use crate::train::{check_dataset, evaluate_sharded, train, TrainConfig, TrainHistory};

/// Parses the process arguments, runs the chosen subcommand, and returns
/// the process exit code. Errors print to stderr.
pub fn run() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => finish(dispatch(cli)),
        Err(err) => {
            // Help/version requests arrive here too; only real usage
            // errors exit nonzero.
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            code
        }
    }
}

fn finish(outcome: Result<i32>) -> i32 {
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "attend-fusion",
    about = "Audio-visual multi-label classifiers with hand-derived gradients",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic audio-visual dataset file
    GenData(GenDataArgs),
    /// Train a model; writes checkpoints and an evaluation history
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split, or score prediction files
    Eval(EvalArgs),
    /// Verify analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Print the exact parameter ledger of a model configuration
    Params(ParamsArgs),
    /// Write per-video top-k class predictions
    Predict(PredictArgs),
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Params(args) => cmd_params(args),
        Command::Predict(args) => cmd_predict(args),
    }
}

/// The config-file shape shared by `train` and `params`: both sections
/// optional, unknown keys fatal at every level.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
}

/// Everything needed to reproduce a training run, written to
/// `<ckpt>/config.json`. `eval` and `predict` rebuild the exact train/val
/// split from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSidecar {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: PathBuf,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub model_seed: u64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn read_sidecar(ckpt: &Path) -> Result<RunSidecar> {
    read_json(&ckpt.join("config.json"))
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Args)]
struct GenDataArgs {
    /// JSON file with dataset-spec fields; flags below override it
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of videos
    #[arg(long)]
    videos: Option<usize>,
    /// Number of classes
    #[arg(long)]
    vocab: Option<usize>,
    /// Visual feature width
    #[arg(long)]
    visual_dim: Option<usize>,
    /// Audio feature width
    #[arg(long)]
    audio_dim: Option<usize>,
    /// Frames per video
    #[arg(long)]
    seq_len: Option<usize>,
    /// Mean labels per video (Poisson, at least one)
    #[arg(long)]
    labels_mean: Option<f64>,
    /// Fraction of classes detectable only in the visual features
    #[arg(long)]
    frac_visual: Option<f64>,
    /// Fraction of classes detectable only in the audio features
    #[arg(long)]
    frac_audio: Option<f64>,
    /// Fraction of classes detectable in both modalities
    #[arg(long)]
    frac_both: Option<f64>,
    /// Prototype strength added to labeled videos' frames
    #[arg(long)]
    signal: Option<f64>,
    /// Per-coordinate Gaussian noise level
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file
    #[arg(short, long)]
    out: PathBuf,
}

fn cmd_gen_data(args: GenDataArgs) -> Result<i32> {
    let mut spec: SyntheticSpec = match &args.spec {
        Some(path) => read_json(path)?,
        None => SyntheticSpec::default(),
    };
    if let Some(v) = args.videos {
        spec.num_videos = v;
    }
    if let Some(v) = args.vocab {
        spec.vocab_size = v;
    }
    if let Some(v) = args.visual_dim {
        spec.visual_dim = v;
    }
    if let Some(v) = args.audio_dim {
        spec.audio_dim = v;
    }
    if let Some(v) = args.seq_len {
        spec.seq_len = v;
    }
    if let Some(v) = args.labels_mean {
        spec.labels_per_video_mean = v;
    }
    if let Some(v) = args.frac_visual {
        spec.frac_visual_only = v;
    }
    if let Some(v) = args.frac_audio {
        spec.frac_audio_only = v;
    }
    if let Some(v) = args.frac_both {
        spec.frac_both = v;
    }
    if let Some(v) = args.signal {
        spec.signal_strength = v;
    }
    if let Some(v) = args.noise {
        spec.noise_sigma = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    let (dataset, checksum) = generate_to_file(&spec, &args.out)?;
    let labels: usize = dataset.records().iter().map(|r| r.labels.len()).sum();
    println!(
        "wrote {}: {} videos, vocab {}, visual {}, audio {}, seq {}, {} labels, crc32 {:08x}",
        args.out.display(),
        dataset.len(),
        dataset.vocab_size,
        dataset.visual_dim,
        dataset.audio_dim,
        dataset.seq_len,
        labels,
        checksum
    );
    Ok(0)
}

// ------------------------------------------------------------------- train

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON config file: {"model": {...}, "train": {...}}; flags override
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file from gen-data
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory (created if missing)
    #[arg(long)]
    ckpt: PathBuf,
    /// attend_fusion | fc_late_fusion | visual_only | audio_only
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Master seed: drives init, shuffling, and the train/val split
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate every N epochs
    #[arg(long)]
    eval_every: Option<usize>,
    /// Stop after N evaluations without a GAP improvement
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    gap_k: Option<usize>,
    #[arg(long)]
    f1_threshold: Option<f64>,
    /// Fraction of videos in the train split; the rest validate
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let file: FileConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => FileConfig::default(),
    };
    let dataset = load(&args.data)?;

    // Without an explicit model section the dimensions come from the data;
    // with one, they must match the data or the run exits 4.
    let mut model_config = file.model.unwrap_or_else(|| ModelConfig {
        visual_dim: dataset.visual_dim,
        audio_dim: dataset.audio_dim,
        vocab_size: dataset.vocab_size,
        seq_len: dataset.seq_len,
        ..ModelConfig::default()
    });
    if let Some(arch) = &args.arch {
        model_config.arch = Arch::from_str(arch)?;
    }

    let mut train_config = file.train.unwrap_or_default();
    if let Some(v) = args.epochs {
        train_config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        train_config.batch_size = v;
    }
    if let Some(v) = args.lr {
        train_config.lr = v;
    }
    if let Some(v) = args.seed {
        train_config.seed = v;
    }
    if let Some(v) = args.eval_every {
        train_config.eval_every = v;
    }
    if let Some(v) = args.patience {
        train_config.early_stop_patience = v;
    }
    if let Some(v) = args.gap_k {
        train_config.gap_k = v;
    }
    if let Some(v) = args.f1_threshold {
        train_config.f1_threshold = v;
    }
    model_config.validate()?;
    train_config.validate()?;
    check_dataset(&model_config, &dataset, "training")?;

    // Streams 1 and 2 of the master seed; stream 0 seeds the per-epoch
    // shuffles inside the training loop.
    let split_seed = derive_seed(train_config.seed, 1);
    let model_seed = derive_seed(train_config.seed, 2);
    let (train_set, val_set) = split(&dataset, args.train_fraction, split_seed)?;

    let sidecar = RunSidecar {
        model: model_config.clone(),
        train: train_config.clone(),
        data: args.data.clone(),
        train_fraction: args.train_fraction,
        split_seed,
        model_seed,
    };
    std::fs::create_dir_all(&args.ckpt)?;
    let sidecar_json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(args.ckpt.join("config.json"), sidecar_json + "\n")?;

    let mut model = build(&model_config, model_seed)?;
    println!(
        "training {} ({} parameters) on {} train / {} val videos",
        model_config.arch,
        model.num_params(),
        train_set.len(),
        val_set.len()
    );
    let history = train(&mut model, &train_set, &val_set, &train_config, &args.ckpt)?;
    print!("{}", history_table(&history));
    println!(
        "best epoch {} (GAP {:.6}); wrote best.afw1, last.afw1, history.json to {}",
        history.best_epoch,
        history.best_gap,
        args.ckpt.display()
    );
    Ok(0)
}

fn history_table(history: &TrainHistory) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>12} {:>12} {:>10} {:>10}",
        "epoch", "train_loss", "val_loss", "GAP", "F1"
    );
    for e in &history.entries {
        let train_loss = e.train_loss.map_or("-".into(), |l| format!("{l:.6}"));
        let val_loss = e
            .report
            .mean_loss
            .map_or("-".into(), |l: f64| format!("{l:.6}"));
        let _ = writeln!(
            out,
            "{:>6} {:>12} {:>12} {:>10.6} {:>10.6}",
            e.epoch, train_loss, val_loss, e.report.gap, e.report.micro_f1
        );
    }
    out
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint directory from `train`
    #[arg(
        long,
        required_unless_present = "from_file",
        conflicts_with = "from_file"
    )]
    ckpt: Option<PathBuf>,
    /// Which checkpoint weights to load: best | last
    #[arg(long, default_value = "best")]
    weights: String,
    /// Dataset file; defaults to the one recorded in the run config
    #[arg(long)]
    data: Option<PathBuf>,
    /// Portion to evaluate: val | train | all
    #[arg(long, default_value = "val")]
    split: String,
    /// Score a prediction file against a labels file instead
    #[arg(long, num_args = 2, value_names = ["PREDICTIONS", "LABELS"])]
    from_file: Option<Vec<PathBuf>>,
    /// Top-k truncation for GAP (default: the training run's, or 20)
    #[arg(long)]
    gap_k: Option<usize>,
    /// Decision threshold for micro-F1 (default: the training run's, or 0.5)
    #[arg(long)]
    f1_threshold: Option<f64>,
    /// Print the report as JSON (stable key order) instead of a table
    #[arg(long)]
    json: bool,
    /// Shard the forward passes across N threads (bitwise-identical output)
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    if args.threads == 0 {
        return Err(Error::InvalidConfig("--threads must be >= 1".into()));
    }
    let report = if let Some(files) = &args.from_file {
        evaluate_files(
            &files[0],
            &files[1],
            args.gap_k.unwrap_or(DEFAULT_GAP_K),
            args.f1_threshold.unwrap_or(DEFAULT_F1_THRESHOLD),
        )?
    } else {
        let ckpt = args
            .ckpt
            .as_deref()
            .expect("clap enforces ckpt xor from-file");
        let run = read_sidecar(ckpt)?;
        let data_path = args.data.clone().unwrap_or_else(|| run.data.clone());
        let dataset = load(&data_path)?;
        let subset = select_split(&dataset, &run, &args.split)?;
        check_dataset(&run.model, &subset, "evaluation")?;
        let mut model = load_weights(&run.model, &weights_path(ckpt, &args.weights)?)?;
        evaluate_sharded(
            &mut model,
            &subset,
            args.gap_k.unwrap_or(run.train.gap_k),
            args.f1_threshold.unwrap_or(run.train.f1_threshold),
            args.threads,
        )?
    };
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(0)
}

fn weights_path(ckpt: &Path, which: &str) -> Result<PathBuf> {
    match which {
        "best" => Ok(ckpt.join("best.afw1")),
        "last" => Ok(ckpt.join("last.afw1")),
        other => Err(Error::InvalidConfig(format!(
            "--weights must be 'best' or 'last', got {other:?}"
        ))),
    }
}

fn select_split(dataset: &Dataset, run: &RunSidecar, which: &str) -> Result<Dataset> {
    match which {
        "all" => Ok(dataset.subset(&(0..dataset.len()).collect::<Vec<_>>())),
        "train" => Ok(split(dataset, run.train_fraction, run.split_seed)?.0),
        "val" => Ok(split(dataset, run.train_fraction, run.split_seed)?.1),
        other => Err(Error::InvalidConfig(format!(
            "--split must be 'val', 'train', or 'all', got {other:?}"
        ))),
    }
}

// --------------------------------------------------------------- gradcheck

const LAYER_TARGETS: [&str; 4] = ["linear", "relu", "sigmoid", "attention"];

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// linear | relu | sigmoid | attention | attend_fusion |
    /// fc_late_fusion | visual_only | audio_only
    #[arg(required_unless_present = "all", conflicts_with = "all")]
    target: Option<String>,
    /// Check every target
    #[arg(long)]
    all: bool,
    /// Feature dimension for the layer checks
    #[arg(long, default_value_t = 4)]
    d: usize,
    /// Input rows for the layer checks (sequence length for attention)
    #[arg(long, default_value_t = 3)]
    t: usize,
    /// First seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of consecutive seeds to run per target
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Max relative error allowed (default 1e-6 linear/sigmoid, 1e-5 rest)
    #[arg(long)]
    tolerance: Option<f64>,
    /// Double the analytic gradients first — the check must then fail
    #[arg(long)]
    corrupt: bool,
}

fn default_tolerance(target: &str) -> f64 {
    match target {
        "linear" | "sigmoid" => 1e-6,
        _ => 1e-5,
    }
}

fn run_one_gradcheck(
    target: &str,
    d: usize,
    t: usize,
    tolerance: f64,
    seed: u64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    let check = if corrupt {
        gradcheck_corrupted
    } else {
        gradcheck
    };
    // Layer weights get their own stream so `--seed` varies the probe and
    // the weights together without correlating them.
    let mut rng = Rng::stream(seed, 100);
    match target {
        "linear" => check(
            &mut LinearLayer::new(d, d + 1, &mut rng),
            &[t, d],
            tolerance,
            seed,
        ),
        "relu" => check(&mut Relu::new(), &[t, d], tolerance, seed),
        "sigmoid" => check(&mut Sigmoid::new(), &[t, d], tolerance, seed),
        "attention" => check(
            &mut SelfAttentionBlock::new(d, &mut rng),
            &[t, d],
            tolerance,
            seed,
        ),
        other => {
            let arch = Arch::from_str(other).map_err(|_| {
                Error::InvalidConfig(format!(
                    "unknown gradcheck target {other:?}: expected one of linear, relu, \
                     sigmoid, attention, or an architecture name"
                ))
            })?;
            if corrupt {
                gradcheck_model_corrupted(arch, tolerance, seed)
            } else {
                gradcheck_model(arch, tolerance, seed)
            }
        }
    }
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    if args.d == 0 || args.t == 0 || args.seeds == 0 {
        return Err(Error::InvalidConfig(
            "--d, --t, and --seeds must be >= 1".into(),
        ));
    }
    let targets: Vec<String> = if args.all {
        LAYER_TARGETS
            .iter()
            .map(|s| s.to_string())
            .chain(Arch::ALL.iter().map(|a| a.name().to_string()))
            .collect()
    } else {
        vec![args.target.clone().expect("clap enforces target xor --all")]
    };
    // Per-entry rows only when checking one target with one seed; the
    // aggregate line is always printed.
    let verbose = !args.all && args.seeds == 1;
    let mut all_pass = true;
    for target in &targets {
        let tolerance = args.tolerance.unwrap_or_else(|| default_tolerance(target));
        let mut worst = 0.0f64;
        let mut pass = true;
        for offset in 0..args.seeds {
            let report = run_one_gradcheck(
                target,
                args.d,
                args.t,
                tolerance,
                args.seed + offset,
                args.corrupt,
            )?;
            worst = worst.max(report.max_rel_err());
            pass &= report.pass();
            if verbose {
                for entry in &report.entries {
                    println!(
                        "{:<28} {:>12.3e}  {}",
                        format!("{target}.{}", entry.name),
                        entry.max_rel_err,
                        if entry.max_rel_err < tolerance {
                            "ok"
                        } else {
                            "FAIL"
                        }
                    );
                }
            }
        }
        println!(
            "{:<16} seeds {}  worst rel err {:.3e}  tol {:.0e}  {}",
            target,
            if args.seeds == 1 {
                format!("{}", args.seed)
            } else {
                format!("{}..{}", args.seed, args.seed + args.seeds - 1)
            },
            worst,
            tolerance,
            if pass { "PASS" } else { "FAIL" }
        );
        all_pass &= pass;
    }
    Ok(if all_pass { 0 } else { 1 })
}

// ------------------------------------------------------------------ params

#[derive(Debug, Args)]
struct ParamsArgs {
    /// JSON config file ({"model": {...}}); flags override
    #[arg(long)]
    config: Option<PathBuf>,
    /// attend_fusion | fc_late_fusion | visual_only | audio_only
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    visual_dim: Option<usize>,
    #[arg(long)]
    audio_dim: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    /// Comma-separated hidden widths for each modality branch
    #[arg(long, value_delimiter = ',')]
    branch_hidden: Option<Vec<usize>>,
    /// Comma-separated hidden widths for the fusion MLP
    #[arg(long, value_delimiter = ',')]
    fusion_hidden: Option<Vec<usize>>,
    /// Print as JSON (stable key order)
    #[arg(long)]
    json: bool,
}

#[derive(Serialize)]
struct ParamsJson {
    arch: String,
    total: u64,
    millions: u64,
    tensors: Vec<TensorJson>,
}

#[derive(Serialize)]
struct TensorJson {
    name: String,
    shape: Vec<usize>,
    params: u64,
}

fn cmd_params(args: ParamsArgs) -> Result<i32> {
    let file: FileConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => FileConfig::default(),
    };
    let mut config = file.model.unwrap_or_default();
    if let Some(arch) = &args.arch {
        config.arch = Arch::from_str(arch)?;
    }
    if let Some(v) = args.visual_dim {
        config.visual_dim = v;
    }
    if let Some(v) = args.audio_dim {
        config.audio_dim = v;
    }
    if let Some(v) = args.vocab {
        config.vocab_size = v;
    }
    if let Some(v) = args.seq_len {
        config.seq_len = v;
    }
    if let Some(v) = args.branch_hidden {
        config.branch_hidden = v;
    }
    if let Some(v) = args.fusion_hidden {
        config.fusion_hidden = v;
    }

    let shapes = param_shapes(&config)?;
    let total = param_count(&config)?;
    let millions = (total as f64 / 1e6).round() as u64;
    let tensors: Vec<TensorJson> = shapes
        .into_iter()
        .map(|(name, shape)| {
            let params = shape.iter().product::<usize>() as u64;
            TensorJson {
                name,
                shape,
                params,
            }
        })
        .collect();

    if args.json {
        let out = ParamsJson {
            arch: config.arch.name().to_string(),
            total,
            millions,
            tensors,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&out).expect("ledger serializes")
        );
    } else {
        println!("{:<16} {}", "arch", config.arch);
        println!(
            "{:<16} visual {}, audio {}, vocab {}, seq {}",
            "dims", config.visual_dim, config.audio_dim, config.vocab_size, config.seq_len
        );
        println!();
        println!("{:<16} {:<16} {:>12}", "name", "shape", "params");
        for t in &tensors {
            println!(
                "{:<16} {:<16} {:>12}",
                t.name,
                format!("{:?}", t.shape),
                t.params
            );
        }
        println!();
        println!("total {total} parameters (~{millions}M)");
    }
    Ok(0)
}

// ----------------------------------------------------------------- predict

#[derive(Debug, Args)]
struct PredictArgs {
    /// Checkpoint directory from `train`
    #[arg(long)]
    ckpt: PathBuf,
    /// Which checkpoint weights to load: best | last
    #[arg(long, default_value = "best")]
    weights: String,
    /// Dataset file; defaults to the one recorded in the run config
    #[arg(long)]
    data: Option<PathBuf>,
    /// Portion to predict on: val | train | all
    #[arg(long, default_value = "val")]
    split: String,
    /// Scored classes per video, highest first (clamped to the vocabulary)
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    /// Output file (stdout if omitted)
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write the split's true labels to this file
    #[arg(long)]
    labels_out: Option<PathBuf>,
}

fn cmd_predict(args: PredictArgs) -> Result<i32> {
    if args.top_k == 0 {
        return Err(Error::InvalidConfig("--top-k must be >= 1".into()));
    }
    let run = read_sidecar(&args.ckpt)?;
    let data_path = args.data.clone().unwrap_or_else(|| run.data.clone());
    let dataset = load(&data_path)?;
    let subset = select_split(&dataset, &run, &args.split)?;
    check_dataset(&run.model, &subset, "prediction")?;
    let mut model = load_weights(&run.model, &weights_path(&args.ckpt, &args.weights)?)?;

    let mut top_k = args.top_k;
    if top_k > subset.vocab_size {
        eprintln!(
            "warning: --top-k {top_k} exceeds the vocabulary size {}; clamping",
            subset.vocab_size
        );
        top_k = subset.vocab_size;
    }

    let mut lines = Vec::with_capacity(subset.len());
    for batch in subset.ordered_batches(64) {
        let probs = model.forward(&batch.visual, &batch.audio)?;
        for (row, &video) in batch.indices.iter().enumerate() {
            let mut scored: ScoredClasses = (0..subset.vocab_size)
                .map(|c| (c as u32, probs.at2(row, c)))
                .collect();
            // Highest score first; ties broken by class index, matching
            // the ranking metric.
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            scored.truncate(top_k);
            lines.push(PredictionLine {
                video_id: subset.records()[video].id,
                scored,
            });
        }
    }
    match &args.out {
        Some(path) => {
            write_predictions(std::fs::File::create(path)?, &lines)?;
            println!(
                "wrote {} prediction lines to {}",
                lines.len(),
                path.display()
            );
        }
        None => write_predictions(std::io::stdout().lock(), &lines)?,
    }
    if let Some(path) = &args.labels_out {
        let labels: Vec<LabelLine> = subset
            .records()
            .iter()
            .map(|r| LabelLine {
                video_id: r.id,
                labels: r.labels.clone(),
            })
            .collect();
        write_labels(std::fs::File::create(path)?, &labels)?;
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).expect("args parse")
    }

    #[test]
    fn subcommands_parse() {
        parse(&[
            "attend-fusion",
            "gen-data",
            "--videos",
            "10",
            "-o",
            "x.avf1",
        ]);
        parse(&[
            "attend-fusion",
            "train",
            "--data",
            "x.avf1",
            "--ckpt",
            "ckpt",
        ]);
        parse(&["attend-fusion", "eval", "--ckpt", "ckpt", "--json"]);
        parse(&["attend-fusion", "eval", "--from-file", "p.txt", "l.txt"]);
        parse(&["attend-fusion", "gradcheck", "--all", "--seeds", "20"]);
        parse(&[
            "attend-fusion",
            "gradcheck",
            "attention",
            "--d",
            "4",
            "--t",
            "3",
        ]);
        parse(&["attend-fusion", "params", "--arch", "attend_fusion"]);
        parse(&["attend-fusion", "predict", "--ckpt", "ckpt", "--top-k", "3"]);
    }

    #[test]
    fn eval_requires_exactly_one_source() {
        assert!(Cli::try_parse_from(["attend-fusion", "eval"]).is_err());
        assert!(Cli::try_parse_from([
            "attend-fusion",
            "eval",
            "--ckpt",
            "c",
            "--from-file",
            "p",
            "l"
        ])
        .is_err());
    }

    #[test]
    fn gradcheck_requires_a_target_or_all() {
        assert!(Cli::try_parse_from(["attend-fusion", "gradcheck"]).is_err());
        assert!(Cli::try_parse_from(["attend-fusion", "gradcheck", "linear", "--all"]).is_err());
    }

    #[test]
    fn gradcheck_targets_cover_layers_and_models() {
        for target in LAYER_TARGETS {
            let tol = default_tolerance(target);
            let report = run_one_gradcheck(target, 4, 3, tol, 7, false).unwrap();
            assert!(report.pass(), "{target}: {}", report.max_rel_err());
        }
        let report = run_one_gradcheck("attend_fusion", 4, 3, 1e-5, 7, false).unwrap();
        assert!(report.pass());
        assert!(run_one_gradcheck("nonesuch", 4, 3, 1e-5, 7, false).is_err());
    }

    #[test]
    fn corrupt_mode_fails_every_target() {
        for target in ["linear", "attention", "fc_late_fusion"] {
            let tol = default_tolerance(target);
            let report = run_one_gradcheck(target, 4, 3, tol, 7, true).unwrap();
            assert!(!report.pass(), "{target} passed with doubled gradients");
        }
    }

    #[test]
    fn weights_and_split_choices_are_validated() {
        assert!(weights_path(Path::new("c"), "best").is_ok());
        assert!(weights_path(Path::new("c"), "last").is_ok());
        assert!(matches!(
            weights_path(Path::new("c"), "oldest"),
            Err(Error::InvalidConfig(_))
        ));

        let run = RunSidecar {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: PathBuf::from("x.avf1"),
            train_fraction: 0.8,
            split_seed: 1,
            model_seed: 2,
        };
        let dataset = crate::data::generate(&crate::data::SyntheticSpec {
            num_videos: 10,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(select_split(&dataset, &run, "all").unwrap().len(), 10);
        assert_eq!(select_split(&dataset, &run, "train").unwrap().len(), 8);
        assert_eq!(select_split(&dataset, &run, "val").unwrap().len(), 2);
        assert!(select_split(&dataset, &run, "test").is_err());
    }

    #[test]
    fn file_config_rejects_unknown_keys_at_both_levels() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"modle": {}}"#).is_err());
        assert!(serde_json::from_str::<FileConfig>(r#"{"model": {"epochs": 3}}"#).is_err());
        assert!(serde_json::from_str::<FileConfig>(r#"{"train": {"epochs": 3}}"#).is_ok());
        let parsed: FileConfig =
            serde_json::from_str(r#"{"model": {"arch": "audio_only"}}"#).unwrap();
        assert_eq!(parsed.model.unwrap().arch, Arch::AudioOnly);
    }

    #[test]
    fn history_table_includes_every_evaluation() {
        use crate::metrics::MetricsReport;
        use crate::train::EvalPoint;
        let history = TrainHistory {
            entries: vec![
                EvalPoint {
                    epoch: 0,
                    train_loss: None,
                    report: MetricsReport {
                        gap: 0.125,
                        micro_f1: 0.0,
                        mean_loss: Some(16.5),
                        num_videos: 50,
                        gap_k: 20,
                        f1_threshold: 0.5,
                    },
                },
                EvalPoint {
                    epoch: 5,
                    train_loss: Some(12.25),
                    report: MetricsReport {
                        gap: 0.5,
                        micro_f1: 0.25,
                        mean_loss: Some(11.0),
                        num_videos: 50,
                        gap_k: 20,
                        f1_threshold: 0.5,
                    },
                },
            ],
            best_epoch: 5,
            best_gap: 0.5,
        };
        let table = history_table(&history);
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains("epoch"));
        assert!(table.lines().nth(1).unwrap().contains('-'));
        assert!(table.contains("12.250000"));
    }
}
