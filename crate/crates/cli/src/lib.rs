//! The `engage` command line: every pipeline stage as a subcommand, plus
//! `pipeline`, which chains them from one config file.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use engage_core::dataset::{build_volumes, generate_corpus, load_volume_cache, parse_corpus, save_volume_cache, write_corpus, CorpusConfig, Split};
use engage_core::engagement::{write_timeline_csv, Kernel, SvmParams};
use engage_core::features::{extract_features, write_features, WindowConfig};
use engage_core::gaze::GazeConfig;
use engage_core::heatmap::SamplerConfig;
use engage_core::ingest::write_session;
use engage_core::net3d::checkpoint::{load_checkpoint, save_checkpoint};
use engage_core::net3d::{ModelConfig, Net, TrainConfig};
use engage_core::synth::{generate_calibration, generate_session, SessionTruth, SynthConfig};
use engage_core::tracker::{associate, write_tracks, TrackerConfig};

use config::KvConfig;
use error::CliError;
use io::{create, open, read_features, read_json, read_session, read_svm, read_tracks, write_json};
use pipeline::{
    calibrate_gaze, engagement_timeline, evaluate_actions, evaluate_engagement, label_rows, predict_rows, run_pipeline, sampler_for,
    synth_from_kv, train_action_model, train_engagement, PipelineConfig, SYNTH_KEYS,
};

#[derive(Parser, Debug)]
#[command(name = "engage", version, about = "Classroom action recognition and engagement estimation from skeleton streams")]
pub struct Cli {
    /// Worker threads (falls back to ENGAGE_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic classroom session and/or a labelled clip corpus.
    Synth(SynthArgs),
    /// Validate a skeleton session file.
    Ingest(IngestArgs),
    /// Link detections into per-student tracks.
    Track(TrackArgs),
    /// Turn a clip corpus into cached heatmap volumes with a 3:1 split.
    Volumes(VolumesArgs),
    /// Train the 3D-CNN action classifier on cached volumes.
    TrainActions(TrainActionsArgs),
    /// Report action accuracy of a checkpoint on cached volumes.
    EvalActions(EvalActionsArgs),
    /// Build per-window histogram-of-actions and gaze features.
    Features(FeaturesArgs),
    /// Estimate the gaze target yaw from a calibration session.
    GazeCalibrate(GazeCalibrateArgs),
    /// Train the engagement SVM on labelled features.
    TrainEngagement(TrainEngagementArgs),
    /// Evaluate the engagement SVM on labelled features.
    EvalEngagement(EvalEngagementArgs),
    /// Class-mean engagement per window.
    Timeline(TimelineArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Session output (JSONL).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ground truth of the session (JSON).
    #[arg(long, requires = "out")]
    pub truth: Option<PathBuf>,
    /// Labelled clip corpus output (JSONL).
    #[arg(long)]
    pub clips: Option<PathBuf>,
    /// Gaze calibration session output (JSONL).
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub validate_only: bool,
    /// Re-serialized session.
    #[arg(long, conflicts_with = "validate_only")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub iou: f64,
    #[arg(long, default_value_t = 15)]
    pub max_gap: u64,
    #[arg(long, default_value_t = 0.3)]
    pub conf: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VolumesArgs {
    #[arg(long)]
    pub clips: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the train/test split.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 56)]
    pub size: usize,
    #[arg(long, default_value_t = 0.6)]
    pub sigma: f64,
}

#[derive(Args, Debug)]
pub struct TrainActionsArgs {
    #[arg(long, alias = "data")]
    pub volumes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to fine-tune instead of training from scratch.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 140)]
    pub epochs: usize,
    #[arg(long, alias = "batch", default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0025)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, alias = "freeze")]
    pub freeze_prefix: Option<usize>,
    /// Weight classes by inverse training frequency.
    #[arg(long)]
    pub inverse_frequency: bool,
    /// Per-epoch loss (CSV).
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalActionsArgs {
    #[arg(long, alias = "data")]
    pub volumes: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// train, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Calibrated gaze configuration (JSON).
    #[arg(long)]
    pub gaze: PathBuf,
    /// Synthetic ground truth used to label the rows.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 120.0)]
    pub window_seconds: f64,
    #[arg(long, default_value_t = 10.0)]
    pub subclip_seconds: f64,
    #[arg(long, default_value_t = 0.6)]
    pub sigma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GazeCalibrateArgs {
    #[arg(long, alias = "frames")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0.3)]
    pub min_conf: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainEngagementArgs {
    #[arg(long, required = true)]
    pub features: Vec<PathBuf>,
    /// linear or rbf.
    #[arg(long, default_value = "linear")]
    pub kernel: String,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long)]
    pub no_class_weighting: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalEngagementArgs {
    #[arg(long, required = true)]
    pub features: Vec<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Per-row predictions (CSV).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TimelineArgs {
    #[arg(long, required = true)]
    pub features: Vec<PathBuf>,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Timeline with its correlation (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parses `argv` and runs the subcommand; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    let threads = match threads {
        Some(n) => Some(n),
        None => match std::env::var("ENGAGE_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| CliError::usage(format!("ENGAGE_THREADS={v} is not a number")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        // Already configured when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Track(a) => track(a),
        Command::Volumes(a) => volumes(a),
        Command::TrainActions(a) => train_actions(a),
        Command::EvalActions(a) => eval_actions(a),
        Command::Features(a) => features(a),
        Command::GazeCalibrate(a) => gaze_calibrate(a),
        Command::TrainEngagement(a) => train_engagement_cmd(a),
        Command::EvalEngagement(a) => eval_engagement(a),
        Command::Timeline(a) => timeline(a),
        Command::Pipeline(a) => pipeline_cmd(a),
    }
}

fn print_json<T: Serialize>(value: &T) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer(&mut out, value);
    let _ = writeln!(out);
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    if a.out.is_none() && a.clips.is_none() && a.calibration.is_none() {
        return Err(CliError::usage("synth needs at least one of --out, --clips, --calibration"));
    }
    let mut config = SynthConfig::default();
    let mut corpus = CorpusConfig::default();
    let calibration_seconds = match &a.config {
        Some(path) => {
            let kv = KvConfig::load(path)?;
            kv.check_keys(&[("synth", SYNTH_KEYS)])?;
            synth_from_kv(&kv, &mut config, &mut corpus)?
        }
        None => 10.0,
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
        corpus.seed = seed;
    }
    let mut summary = serde_json::Map::new();
    if let Some(out) = &a.out {
        let (session, truth) = generate_session(&config)?;
        let mut w = create(out)?;
        write_session(&session, &mut w).and_then(|_| w.flush()).map_err(io_err(out))?;
        if let Some(path) = &a.truth {
            write_json(path, &truth)?;
        }
        summary.insert("frames".into(), session.frames.len().into());
        summary.insert("detections".into(), session.detection_count().into());
    }
    if let Some(path) = &a.calibration {
        let calibration = generate_calibration(&config, calibration_seconds)?;
        let mut w = create(path)?;
        write_session(&calibration, &mut w).and_then(|_| w.flush()).map_err(io_err(path))?;
    }
    if let Some(path) = &a.clips {
        corpus.fps = config.fps;
        let clips = generate_corpus(&corpus);
        let mut w = create(path)?;
        write_corpus(&clips, &mut w).and_then(|_| w.flush()).map_err(io_err(path))?;
        summary.insert("clips".into(), clips.clips.len().into());
    }
    print_json(&summary);
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    frames: usize,
    detections: usize,
    width: u32,
    height: u32,
    fps: f64,
}

fn ingest(a: IngestArgs) -> Result<(), CliError> {
    let session = read_session(&a.input)?;
    if let Some(out) = &a.out {
        let mut w = create(out)?;
        write_session(&session, &mut w).and_then(|_| w.flush()).map_err(io_err(out))?;
    }
    print_json(&IngestSummary {
        frames: session.frames.len(),
        detections: session.detection_count(),
        width: session.meta.width,
        height: session.meta.height,
        fps: session.meta.fps,
    });
    Ok(())
}

fn track(a: TrackArgs) -> Result<(), CliError> {
    let session = read_session(&a.input)?;
    let config = TrackerConfig {
        iou_threshold: a.iou,
        max_gap: a.max_gap,
        conf_threshold: a.conf,
    };
    let tracks = associate(&session, &config)?;
    let mut w = create(&a.out)?;
    write_tracks(&session.meta, &tracks, &mut w).and_then(|_| w.flush()).map_err(io_err(&a.out))?;
    print_json(&serde_json::json!({ "tracks": tracks.len() }));
    Ok(())
}

fn volumes(a: VolumesArgs) -> Result<(), CliError> {
    let corpus = parse_corpus(open(&a.clips)?).map_err(|e| CliError::data(format!("{}: {e}", a.clips.display())))?;
    let sampler = SamplerConfig {
        frames: a.frames,
        height: a.size,
        width: a.size,
        sigma: a.sigma,
        ..SamplerConfig::default()
    };
    let entries = build_volumes(&corpus, &sampler, a.seed)?;
    save_volume_cache(&entries, &a.out)?;
    let train = entries.iter().filter(|e| e.split == Split::Train).count();
    print_json(&serde_json::json!({ "train": train, "test": entries.len() - train }));
    Ok(())
}

fn train_actions(a: TrainActionsArgs) -> Result<(), CliError> {
    let entries = load_volume_cache(&a.volumes)?;
    let first = entries.first().ok_or_else(|| CliError::data("volume cache is empty"))?;
    let [k, t, h, w] = first.volume.shape();
    let init: Option<Net<f32>> = match &a.init {
        Some(path) => {
            let mut net: Net<f32> = load_checkpoint(path)?;
            if let Some(f) = a.freeze_prefix {
                net.config.freeze_prefix = f;
                net.config.validate()?;
            }
            Some(net)
        }
        None => None,
    };
    let model = ModelConfig {
        in_channels: k,
        input: [t, h, w],
        freeze_prefix: a.freeze_prefix.unwrap_or(0),
        ..ModelConfig::default()
    };
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        momentum: a.momentum,
        seed: a.seed,
    };
    let (net, log) = train_action_model(&entries, model, init, &config, a.inverse_frequency)?;
    save_checkpoint(&net, &a.out)?;
    if let Some(path) = &a.loss_log {
        let mut out = create(path)?;
        let mut text = String::from("epoch,loss\n");
        for l in &log {
            text.push_str(&format!("{},{}\n", l.epoch, l.loss));
        }
        out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(io_err(path))?;
    }
    print_json(&serde_json::json!({ "epochs": log.len(), "final_loss": log.last().map(|l| l.loss) }));
    Ok(())
}

fn eval_actions(a: EvalActionsArgs) -> Result<(), CliError> {
    let split = match a.split.as_str() {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        "all" => None,
        other => return Err(CliError::usage(format!("unknown split {other:?}"))),
    };
    let entries = load_volume_cache(&a.volumes)?;
    let net: Net<f32> = load_checkpoint(&a.model)?;
    let report = evaluate_actions(&net, &entries, split)?;
    write_json(&a.report, &report)?;
    print_json(&serde_json::json!({
        "top1_accuracy": report.top1_accuracy,
        "mean_class_accuracy": report.mean_class_accuracy,
    }));
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<(), CliError> {
    let (meta, tracks) = read_tracks(&a.tracks)?;
    let net: Net<f32> = load_checkpoint(&a.model)?;
    let gaze: GazeConfig = read_json(&a.gaze)?;
    gaze.validate()?;
    let windows = WindowConfig {
        window_seconds: a.window_seconds,
        subclip_seconds: a.subclip_seconds,
    };
    let sampler = sampler_for(&net.config, a.sigma);
    let mut rows = extract_features(&tracks, meta.fps, &net, &sampler, &windows, &gaze)?;
    if let Some(path) = &a.truth {
        let truth: SessionTruth = read_json(path)?;
        label_rows(&mut rows, &tracks, &truth);
    }
    let mut w = create(&a.out)?;
    write_features(&rows, &mut w)?;
    w.flush().map_err(io_err(&a.out))?;
    print_json(&serde_json::json!({ "rows": rows.len() }));
    Ok(())
}

fn gaze_calibrate(a: GazeCalibrateArgs) -> Result<(), CliError> {
    let session = read_session(&a.input)?;
    let config = calibrate_gaze(&session, a.tolerance, a.min_conf)?;
    write_json(&a.out, &config)?;
    print_json(&config);
    Ok(())
}

fn train_engagement_cmd(a: TrainEngagementArgs) -> Result<(), CliError> {
    let kernel = match a.kernel.as_str() {
        "linear" => Kernel::Linear,
        "rbf" => Kernel::Rbf {
            gamma: a.gamma.unwrap_or(1.0 / engage_core::features::FEATURE_DIM as f64),
        },
        other => return Err(CliError::usage(format!("unknown kernel {other:?}"))),
    };
    let params = SvmParams {
        c: a.c,
        kernel,
        class_weighting: !a.no_class_weighting,
        tol: a.tol,
        max_iter: a.max_iter,
    };
    let rows = read_features(&a.features)?;
    let model = train_engagement(&rows, &params)?;
    std::fs::write(&a.out, model.to_json()).map_err(io_err(&a.out))?;
    print_json(&serde_json::json!({ "support_vectors": model.support_vectors.len(), "bias": model.bias }));
    Ok(())
}

fn eval_engagement(a: EvalEngagementArgs) -> Result<(), CliError> {
    let rows = read_features(&a.features)?;
    let model = read_svm(&a.model)?;
    let report = evaluate_engagement(&model, &rows)?;
    write_json(&a.report, &report)?;
    if let Some(path) = &a.predictions {
        let mut text = String::from("track_id,window_id,predicted,decision,label\n");
        for (r, (p, d)) in rows.iter().zip(predict_rows(&model, &rows)?) {
            let label = r.label.map(|l| l.name()).unwrap_or("");
            text.push_str(&format!("{},{},{},{},{}\n", r.track_id, r.window_id, p.name(), d, label));
        }
        std::fs::write(path, text).map_err(io_err(path))?;
    }
    print_json(&serde_json::json!({
        "weighted_f1": report.weighted_avg.f1,
        "accuracy": report.accuracy,
    }));
    Ok(())
}

fn timeline(a: TimelineArgs) -> Result<(), CliError> {
    let rows = read_features(&a.features)?;
    let model = read_svm(&a.model)?;
    let timeline = engagement_timeline(&model, &rows)?;
    let mut w = create(&a.out)?;
    write_timeline_csv(&timeline, &mut w).and_then(|_| w.flush()).map_err(io_err(&a.out))?;
    if let Some(path) = &a.report {
        write_json(path, &timeline)?;
    }
    print_json(&serde_json::json!({ "windows": timeline.points.len(), "correlation": timeline.correlation }));
    Ok(())
}

fn pipeline_cmd(a: PipelineArgs) -> Result<(), CliError> {
    let mut config = match &a.config {
        Some(path) => PipelineConfig::from_kv(&KvConfig::load(path)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.set_seed(seed);
    }
    if let Some(dir) = a.out_dir {
        config.out_dir = dir;
    }
    let report = run_pipeline(&config)?;
    print_json(&serde_json::json!({
        "out_dir": config.out_dir,
        "top1_accuracy": report.actions.top1_accuracy,
        "mean_class_accuracy": report.actions.mean_class_accuracy,
        "weighted_f1": report.engagement.weighted_avg.f1,
        "correlation": report.timeline.correlation,
    }));
    Ok(())
}
