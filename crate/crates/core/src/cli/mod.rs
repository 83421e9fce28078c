//! Command-line front end.
//!
//! Every artifact-producing command writes its outputs plus a
//! `manifest.json` into one output directory. Usage errors exit with
//! status 2, runtime failures with status 1.

pub mod experiments;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::detector::{checkpoint, AttentionKind, Detector, DetectorConfig};
use crate::error::Error;
use crate::eval::{self, DEFAULT_IOU_THRESHOLD, INTERPOLATION};
use crate::fusion::{make_fusion_with, FusionTag, InitMode, KernelMode};
use crate::rng::Rng;
use crate::synth::{self, FrameFormat, Profile, Split, SuiteConfig};
use crate::trainer::{self, OptimizerKind, TrainConfig};
use crate::window::CacheStats;
use experiments::{ArmSummary, ExperimentConfig};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "FFAVOD_OUT_ROOT";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Parser)]
#[command(
    name = "ffavod",
    version,
    about = "Frame-window feature fusion for video object detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic video benchmark.
    Generate(GenerateArgs),
    /// Train stage 1 (single frame) or stage 2 (fusion).
    Train(TrainArgs),
    /// Run a checkpoint over a dataset split and write detections.
    Detect(DetectArgs),
    /// Score a detection CSV against ground truth.
    Eval(EvalArgs),
    /// Compare fusion strategies over several seeds.
    AblateFusion(AblateArgs),
    /// Test mAP of learned fusion as a function of the half-window n.
    SweepN(SweepArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Train(_) => "train",
            Command::Detect(_) => "detect",
            Command::Eval(_) => "eval",
            Command::AblateFusion(_) => "ablate-fusion",
            Command::SweepN(_) => "sweep-n",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Output directory (defaults to $FFAVOD_OUT_ROOT/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace an existing output directory previously written by this tool.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum ProfileArg {
    Easy,
    OcclusionHeavy,
    SmallObjects,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Easy => Profile::Easy,
            ProfileArg::OcclusionHeavy => Profile::OcclusionHeavy,
            ProfileArg::SmallObjects => Profile::SmallObjects,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub profile: ProfileArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Frame file format: fftn or ppm.
    #[arg(long, default_value = "fftn")]
    pub format: String,
    #[arg(long, default_value_t = 20)]
    pub train: usize,
    #[arg(long, default_value_t = 4)]
    pub val: usize,
    #[arg(long, default_value_t = 6)]
    pub test: usize,
    /// Frames per sequence.
    #[arg(long, default_value_t = 40)]
    pub length: usize,
    /// Square frame size in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Backbone channels.
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    /// Attention: none, three_conv, unet (two levels) or unetL.
    #[arg(long, default_value = "none")]
    pub attention: String,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    /// Learning-rate multiplier for the fusion parameters in stage 2 [default: 10].
    #[arg(long)]
    pub fusion_lr_scale: Option<f32>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// 1 trains the single-frame detector; 2 adds fusion on top of a stage-1 checkpoint.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Half-window size; the window spans 2n+1 frames.
    #[arg(long)]
    pub n: Option<usize>,
    /// Fusion strategy: none, learned, learned_past_only, mean, max, median, concat_conv.
    #[arg(long)]
    pub fusion: Option<String>,
    /// Fusion weight initialisation: identity, uniform or seeded_random.
    #[arg(long, default_value = "identity")]
    pub fusion_init: String,
    /// One frame-axis kernel per channel instead of a shared one.
    #[arg(long)]
    pub per_channel: bool,
    /// Add a per-channel bias to learned fusion.
    #[arg(long)]
    pub fusion_bias: bool,
    /// Stage-1 checkpoint directory (required for stage 2).
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Train the deeper backbone layers in stage 2 too; only the first convolution stays frozen.
    #[arg(long)]
    pub unfreeze: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training epochs [default: 20 for stage 1, 10 for stage 2].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// adam or sgd.
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Reuse each frame's backbone features across overlapping windows.
    #[arg(long, value_enum, default_value = "on")]
    pub cache: Toggle,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Detection CSV written by `detect`.
    #[arg(long)]
    pub dets: PathBuf,
    /// Ground-truth CSV, e.g. <dataset>/test/gt.csv.
    #[arg(long)]
    pub gt: PathBuf,
    /// Minimum IoU for a detection to count as a true positive.
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou_thresh: f64,
    /// Output directory; metrics go to stdout when neither this nor $FFAVOD_OUT_ROOT is set.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    /// Shared stage-1 checkpoint; without it stage 1 is trained per seed.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub stage1_epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub stage2_epochs: usize,
    /// Stage-2 learning rate; defaults to --lr.
    #[arg(long)]
    pub stage2_lr: Option<f32>,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou_thresh: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    /// Number of seeds (0, 1, ..., k-1).
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Half-window of the fused arms.
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[command(flatten)]
    pub common: ExperimentArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Largest half-window; the sweep covers n = 0..=max_n.
    #[arg(long, default_value_t = 4)]
    pub max_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: ExperimentArgs,
}

/// What a command records about itself.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub seed: Option<u64>,
    pub dataset_hash: Option<String>,
    pub checkpoints: Vec<String>,
    pub outputs: Vec<String>,
    pub duration_secs: f64,
}

struct Run {
    command: &'static str,
    flags: serde_json::Value,
    seed: Option<u64>,
    dataset_hash: Option<String>,
    checkpoints: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    fn new(command: &'static str, flags: &impl Serialize) -> CliResult<Self> {
        Ok(Self {
            command,
            flags: serde_json::to_value(flags)?,
            seed: None,
            dataset_hash: None,
            checkpoints: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn finish(self, dir: &Path) -> CliResult<()> {
        let m = RunManifest {
            command: self.command.to_string(),
            flags: self.flags,
            seed: self.seed,
            dataset_hash: self.dataset_hash,
            checkpoints: self
                .checkpoints
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&m)? + "\n",
        )?;
        Ok(())
    }
}

fn resolve_out(out: &Option<PathBuf>, command: &str) -> CliResult<PathBuf> {
    match out {
        Some(p) => Ok(p.clone()),
        None => match std::env::var_os(OUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => Ok(PathBuf::from(root).join(command)),
            _ => usage(format!("--out is required (or set {})", OUT_ROOT_ENV)),
        },
    }
}

/// Creates the output directory. An existing non-empty directory is only
/// replaced with `--force`, and only if it holds a manifest from this tool.
fn prepare_out(dir: &Path, force: bool) -> CliResult<()> {
    let non_empty = dir.is_dir() && fs::read_dir(dir)?.next().is_some();
    if non_empty {
        if !force {
            return usage(format!(
                "output directory {} is not empty (use --force)",
                dir.display()
            ));
        }
        if !dir.join(MANIFEST_FILE).is_file() {
            return usage(format!(
                "refusing to replace {}: it was not written by this tool",
                dir.display()
            ));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn parse<T: std::str::FromStr<Err = Error>>(value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

pub fn run(cli: Cli) -> CliResult<()> {
    let name = cli.command.name();
    match cli.command {
        Command::Generate(a) => cmd_generate(a, name),
        Command::Train(a) => cmd_train(a, name),
        Command::Detect(a) => cmd_detect(a, name),
        Command::Eval(a) => cmd_eval(a, name),
        Command::AblateFusion(a) => cmd_ablate(a, name),
        Command::SweepN(a) => cmd_sweep(a, name),
    }
}

fn cmd_generate(a: GenerateArgs, name: &'static str) -> CliResult<()> {
    let out = resolve_out(&a.out.out, name)?;
    let format: FrameFormat = parse(&a.format)?;
    let config = SuiteConfig {
        train: a.train,
        val: a.val,
        test: a.test,
        length: a.length,
        size: a.size,
    };
    if a.size == 0 || !a.size.is_multiple_of(4) {
        return usage("--size must be a positive multiple of 4");
    }
    let mut run = Run::new(name, &a)?;
    let ds = synth::benchmark_suite_with(a.profile.into(), a.seed, config)?;
    prepare_out(&out, a.out.force)?;
    let meta = synth::save_dataset(&ds, &out, format)?;
    run.seed = Some(a.seed);
    run.dataset_hash = Some(meta.hash.clone());
    run.outputs = vec![out.join(synth::DATASET_META)];
    run.outputs.extend(
        Split::ALL
            .iter()
            .map(|s| out.join(s.as_str()).join(synth::GT_FILE)),
    );
    run.finish(&out)?;
    println!("{}", meta.hash);
    Ok(())
}

fn detector_config(model: &ModelArgs, meta: &synth::DatasetMeta) -> CliResult<DetectorConfig> {
    let cfg = DetectorConfig {
        channels: model.channels,
        attention: parse::<AttentionKind>(&model.attention)?,
        ..DetectorConfig::new(meta.config.size, meta.config.size, meta.num_classes)
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs, name: &'static str) -> CliResult<()> {
    let out = resolve_out(&a.out.out, name)?;
    let optimizer: OptimizerKind = parse(&a.optimizer)?;
    let (fusion_tag, n) = match a.stage {
        1 => {
            if a.n.unwrap_or(0) != 0 || a.fusion.as_deref().unwrap_or("none") != "none" {
                return usage("stage 1 trains the single-frame detector: use --n 0 --fusion none");
            }
            if a.init_from.is_some() {
                return usage("--init-from applies to stage 2 only");
            }
            (FusionTag::None, 0)
        }
        _ => {
            if a.init_from.is_none() {
                return usage("stage 2 requires --init-from <stage-1 checkpoint>");
            }
            (
                parse::<FusionTag>(a.fusion.as_deref().unwrap_or("learned"))?,
                a.n.unwrap_or(2),
            )
        }
    };
    if fusion_tag == FusionTag::None && n != 0 {
        return usage("--fusion none requires --n 0");
    }
    let init: InitMode = parse(&a.fusion_init)?;
    let mode = if a.per_channel {
        KernelMode::PerChannel
    } else {
        KernelMode::Shared
    };
    let meta = synth::load_meta(&a.data)?;

    let mut run = Run::new(name, &a)?;
    run.seed = Some(a.seed);
    run.dataset_hash = Some(meta.hash.clone());
    let train = synth::load_split(&a.data, Split::Train)?;
    let val = synth::load_split(&a.data, Split::Val)?;

    let outcome = if a.stage == 1 {
        let det = Detector::new(detector_config(&a.model, &meta)?, a.seed)?;
        let cfg = TrainConfig {
            epochs: a.epochs.unwrap_or(TrainConfig::stage1(0).epochs),
            batch_size: a.model.batch_size,
            lr: a.model.lr,
            optimizer,
            ..TrainConfig::stage1(a.seed)
        };
        trainer::train_stage1(det, &train, &val, &cfg)?
    } else {
        let init_from = a.init_from.as_ref().expect("checked above");
        let stage1 = checkpoint::load(init_from)?;
        if stage1.cfg.height != meta.config.size || stage1.cfg.width != meta.config.size {
            return Err(
                Error::Invalid("checkpoint input size does not match the dataset".into()).into(),
            );
        }
        run.checkpoints.push(init_from.clone());
        let mut rng = Rng::new(a.seed).fork(n as u64);
        let fusion = make_fusion_with(
            fusion_tag,
            n,
            stage1.cfg.channels,
            init,
            mode,
            a.fusion_bias,
            &mut rng,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
        let cfg = TrainConfig {
            epochs: a.epochs.unwrap_or(TrainConfig::stage2(0).epochs),
            batch_size: a.model.batch_size,
            lr: a.model.lr,
            optimizer,
            fusion_lr_scale: a
                .model
                .fusion_lr_scale
                .unwrap_or(trainer::STAGE2_FUSION_LR_SCALE),
            freeze: if a.unfreeze {
                vec!["backbone.conv1".into()]
            } else {
                vec!["backbone".into()]
            },
            ..TrainConfig::stage2(a.seed)
        };
        trainer::train_stage2(&stage1, fusion, &train, &val, &cfg)?
    };

    prepare_out(&out, a.out.force)?;
    let ckpt = out.join("checkpoint");
    checkpoint::save(&outcome.best, &ckpt)?;
    let curve = out.join("training_curve.csv");
    let mut w = create(&curve)?;
    trainer::write_curve_csv(&mut w, &outcome.curve)?;
    w.flush()?;
    run.checkpoints.push(ckpt);
    run.outputs.push(curve);
    run.finish(&out)?;
    println!(
        "best epoch {} validation loss {:.6}",
        outcome.best_epoch, outcome.best_val_loss
    );
    Ok(())
}

fn cmd_detect(a: DetectArgs, name: &'static str) -> CliResult<()> {
    let out = resolve_out(&a.out.out, name)?;
    let det = checkpoint::load(&a.ckpt)?;
    let meta = synth::load_meta(&a.data)?;
    if det.cfg.height != meta.config.size
        || det.cfg.width != meta.config.size
        || det.cfg.num_classes != meta.num_classes
    {
        return Err(Error::Invalid(format!(
            "checkpoint expects {}×{} frames with {} classes; dataset has {}×{} with {}",
            det.cfg.height,
            det.cfg.width,
            det.cfg.num_classes,
            meta.config.size,
            meta.config.size,
            meta.num_classes
        ))
        .into());
    }
    let seqs = synth::load_split(&a.data, a.split.into())?;
    let mut run = Run::new(name, &a)?;
    run.dataset_hash = Some(meta.hash);
    run.checkpoints.push(a.ckpt.clone());
    let (records, stats) = experiments::detect_sequences(&det, &seqs, a.cache == Toggle::On)?;

    prepare_out(&out, a.out.force)?;
    let dets_path = out.join("detections.csv");
    let mut w = create(&dets_path)?;
    eval::write_detections(&mut w, &records)?;
    w.flush()?;
    let stats_path = out.join("cache_stats.csv");
    let mut w = create(&stats_path)?;
    writeln!(w, "{}", CacheStats::CSV_HEADER)?;
    for (id, frames, s) in &stats {
        s.write_csv_row(&mut w, *id, *frames)?;
    }
    w.flush()?;
    run.outputs = vec![dets_path, stats_path];
    run.finish(&out)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, name: &'static str) -> CliResult<()> {
    if !(a.iou_thresh > 0.0 && a.iou_thresh < 1.0) {
        return usage("--iou-thresh must lie in (0, 1)");
    }
    let gts = eval::load_ground_truth(&a.gt).map_err(|e| {
        Error::Invalid(format!(
            "cannot read ground truth {}: {}",
            a.gt.display(),
            e
        ))
    })?;
    let dets = eval::load_detections(&a.dets).map_err(|e| {
        Error::Invalid(format!(
            "cannot read detections {}: {}",
            a.dets.display(),
            e
        ))
    })?;
    let ev = eval::evaluate(&dets, &gts, a.iou_thresh)?;
    let out = match resolve_out(&a.out, name) {
        Ok(dir) => dir,
        Err(_) => {
            ev.write_csv(std::io::stdout().lock())?;
            return Ok(());
        }
    };
    let mut run = Run::new(name, &a)?;
    prepare_out(&out, a.force)?;
    let metrics = out.join("metrics.csv");
    let mut w = create(&metrics)?;
    ev.write_csv(&mut w)?;
    w.flush()?;
    let pr = out.join("pr_curve.csv");
    let mut w = create(&pr)?;
    ev.write_pr_csv(&mut w)?;
    w.flush()?;
    run.flags["interpolation"] = serde_json::Value::from(INTERPOLATION);
    run.outputs = vec![metrics, pr];
    run.finish(&out)?;
    match ev.map {
        Some(m) => println!("mAP {:.6}", m),
        None => println!("mAP undefined (no ground truth)"),
    }
    Ok(())
}

fn experiment_setup(
    c: &ExperimentArgs,
) -> CliResult<(synth::Dataset, ExperimentConfig, Option<Detector>)> {
    if !(c.iou_thresh > 0.0 && c.iou_thresh < 1.0) {
        return usage("--iou-thresh must lie in (0, 1)");
    }
    let meta = synth::load_meta(&c.data)?;
    let ds = synth::load_dataset(&c.data)?;
    let shared = c.init_from.as_ref().map(checkpoint::load).transpose()?;
    let detector = match &shared {
        Some(d) => d.cfg,
        None => detector_config(&c.model, &meta)?,
    };
    let cfg = ExperimentConfig {
        detector,
        stage1_epochs: c.stage1_epochs,
        stage2_epochs: c.stage2_epochs,
        batch_size: c.model.batch_size,
        lr: c.model.lr,
        stage2_lr: c.stage2_lr.unwrap_or(c.model.lr),
        fusion_lr_scale: c
            .model
            .fusion_lr_scale
            .unwrap_or(trainer::STAGE2_FUSION_LR_SCALE),
        iou_threshold: c.iou_thresh,
    };
    Ok((ds, cfg, shared))
}

fn cmd_ablate(a: AblateArgs, name: &'static str) -> CliResult<()> {
    let out = resolve_out(&a.common.out.out, name)?;
    if a.seeds == 0 || a.n == 0 {
        return usage("--seeds and --n must be positive");
    }
    let (ds, cfg, shared) = experiment_setup(&a.common)?;
    let mut run = Run::new(name, &a)?;
    run.dataset_hash = Some(ds.content_hash());
    run.checkpoints.extend(a.common.init_from.clone());
    let arms = experiments::ablation_arms(a.n);
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let results = experiments::ablation(&ds, &cfg, &arms, &seeds, shared.as_ref())?;
    let summary: Vec<ArmSummary> = experiments::summarize(&results, &arms);

    prepare_out(&out, a.common.out.force)?;
    let table = out.join("ablation.csv");
    experiments::write_rows(create(&table)?, &summary)?;
    let runs = out.join("ablation_runs.csv");
    experiments::write_rows(create(&runs)?, &results)?;
    run.outputs = vec![table, runs];
    run.finish(&out)?;
    for s in &summary {
        println!(
            "{:<18} n={} mAP {:.4} ± {:.4}",
            s.strategy, s.n, s.map_mean, s.map_std
        );
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs, name: &'static str) -> CliResult<()> {
    let out = resolve_out(&a.common.out.out, name)?;
    let (ds, cfg, shared) = experiment_setup(&a.common)?;
    let mut run = Run::new(name, &a)?;
    run.seed = Some(a.seed);
    run.dataset_hash = Some(ds.content_hash());
    run.checkpoints.extend(a.common.init_from.clone());
    let stage1 = match shared {
        Some(d) => d,
        None => experiments::run_stage1(&ds, &cfg, a.seed)?.best,
    };
    let points = experiments::sweep_n(&ds, &cfg, &stage1, a.max_n, a.seed)?;

    prepare_out(&out, a.common.out.force)?;
    let curve = out.join("sweep_n.csv");
    experiments::write_rows(create(&curve)?, &points)?;
    run.outputs = vec![curve];
    run.finish(&out)?;
    for p in &points {
        println!("n={} mAP {:.4}", p.n, p.map);
    }
    Ok(())
}
