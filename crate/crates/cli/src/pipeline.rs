//! Pipeline stages shared by the subcommands and `engage pipeline`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use engage_core::dataset::{build_volumes, generate_corpus, save_volume_cache, write_corpus, CorpusConfig, Split, VolumeEntry};
use engage_core::engagement::{
    action_metrics, compute_metrics, mean_engagement_timeline, train_svm, write_timeline_csv, ActionReport, EngagementReport,
    Kernel, SvmModel, SvmParams, Timeline, WindowPrediction,
};
use engage_core::features::{extract_features, write_features, ActionLabel, EngagementLabel, FeatureRow, WindowConfig};
use engage_core::gaze::{calibrate_target_yaw, GazeConfig};
use engage_core::heatmap::SamplerConfig;
use engage_core::ingest::{select_upper_body, write_session, SessionStream};
use engage_core::net3d::checkpoint::save_checkpoint;
use engage_core::net3d::{fine_tune, train, ClassWeights, EpochLog, ModelConfig, Net, Sample, TrainConfig};
use engage_core::synth::{derive_seed, generate_calibration, generate_session, EngagementScript, SessionTruth, SynthConfig};
use engage_core::tracker::{associate, write_tracks, TrackerConfig};

use crate::config::KvConfig;
use crate::error::CliError;
use crate::io::{create, write_json};

/// Sampler matching a model's input extent.
pub fn sampler_for(model: &ModelConfig, sigma: f64) -> SamplerConfig {
    SamplerConfig {
        frames: model.input[0],
        height: model.input[1],
        width: model.input[2],
        sigma,
        ..SamplerConfig::default()
    }
}

pub fn training_samples(entries: &[VolumeEntry], split: Split) -> Vec<Sample<f32>> {
    entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| Sample::from((&e.volume, e.label.code())))
        .collect()
}

/// Trains the action model on the train split of `entries`, or fine-tunes
/// `init` when given.
pub fn train_action_model(
    entries: &[VolumeEntry],
    model: ModelConfig,
    init: Option<Net<f32>>,
    config: &TrainConfig,
    inverse_frequency: bool,
) -> Result<(Net<f32>, Vec<EpochLog>), CliError> {
    let samples = training_samples(entries, Split::Train);
    if samples.is_empty() {
        return Err(CliError::data("no training volumes"));
    }
    let num_classes = init.as_ref().map_or(model.num_classes, |n| n.config.num_classes);
    let weights = if inverse_frequency {
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        ClassWeights::inverse_frequency(&labels, num_classes)?
    } else {
        ClassWeights::uniform(num_classes)
    };
    let out = match init {
        Some(net) => fine_tune(net, &samples, config, &weights)?,
        None => train(&samples, model, config, &weights)?,
    };
    Ok(out)
}

/// Evaluates the model on one split (`None`: every entry).
pub fn evaluate_actions(net: &Net<f32>, entries: &[VolumeEntry], split: Option<Split>) -> Result<ActionReport, CliError> {
    use rayon::prelude::*;
    let chosen: Vec<&VolumeEntry> = entries.iter().filter(|e| split.is_none_or(|s| e.split == s)).collect();
    if chosen.is_empty() {
        return Err(CliError::data("no volumes to evaluate"));
    }
    let predicted: Vec<usize> = chosen
        .par_iter()
        .map(|e| net.predict_volume(&e.volume).map(|p| p.class))
        .collect::<Result<_, _>>()?;
    let truth: Vec<usize> = chosen.iter().map(|e| e.label.code()).collect();
    let names: Vec<&str> = ActionLabel::ALL.iter().map(|a| a.name()).collect();
    Ok(action_metrics(&names, &truth, &predicted)?)
}

/// Calibrates the gaze target from a session in which everyone faces it.
pub fn calibrate_gaze(session: &SessionStream, tolerance: f64, min_visible_conf: f64) -> Result<GazeConfig, CliError> {
    let poses: Vec<_> = session
        .frames
        .iter()
        .flat_map(|f| f.poses.iter().map(select_upper_body))
        .collect();
    let target_yaw = calibrate_target_yaw(&poses, min_visible_conf)
        .ok_or_else(|| CliError::data("calibration session has no pose with a defined head yaw"))?;
    let config = GazeConfig {
        target_yaw,
        tolerance,
        min_visible_conf,
    };
    config.validate()?;
    Ok(config)
}

/// Attaches reference labels from a synthetic ground truth to feature rows.
/// Each track is matched to the student whose seat it occupies.
pub fn label_rows(rows: &mut [FeatureRow], tracks: &[engage_core::tracker::Track], truth: &SessionTruth) {
    let student: HashMap<u64, Option<usize>> = tracks.iter().map(|t| (t.id, truth.student_for_track(t))).collect();
    for row in rows {
        row.label = student
            .get(&row.track_id)
            .copied()
            .flatten()
            .and_then(|s| truth.window_label(s, row.window_id));
    }
}

pub fn svm_inputs(rows: &[FeatureRow]) -> Result<(Vec<Vec<f64>>, Vec<EngagementLabel>), CliError> {
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for row in rows {
        let label = row.label.ok_or_else(|| {
            CliError::data(format!("feature row (track {}, window {}) has no label", row.track_id, row.window_id))
        })?;
        x.push(row.feature.to_array().to_vec());
        y.push(label);
    }
    if x.is_empty() {
        return Err(CliError::data("no feature rows"));
    }
    Ok((x, y))
}

pub fn train_engagement(rows: &[FeatureRow], params: &SvmParams) -> Result<SvmModel, CliError> {
    let (x, y) = svm_inputs(rows)?;
    Ok(train_svm(&x, &y, params)?)
}

pub fn predict_rows(model: &SvmModel, rows: &[FeatureRow]) -> Result<Vec<(EngagementLabel, f64)>, CliError> {
    rows.iter()
        .map(|r| model.predict(&r.feature.to_array()).map_err(CliError::from))
        .collect()
}

pub fn evaluate_engagement(model: &SvmModel, rows: &[FeatureRow]) -> Result<EngagementReport, CliError> {
    let (_, labels) = svm_inputs(rows)?;
    let predicted: Vec<EngagementLabel> = predict_rows(model, rows)?.into_iter().map(|p| p.0).collect();
    Ok(compute_metrics(&predicted, &labels)?)
}

pub fn engagement_timeline(model: &SvmModel, rows: &[FeatureRow]) -> Result<Timeline, CliError> {
    let predictions: Vec<WindowPrediction> = rows
        .iter()
        .zip(predict_rows(model, rows)?)
        .map(|(r, (predicted, _))| WindowPrediction {
            window_id: r.window_id,
            predicted,
            reference: r.label,
        })
        .collect();
    Ok(mean_engagement_timeline(&predictions)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub train_sessions: usize,
    pub test_sessions: usize,
    pub synth: SynthConfig,
    pub corpus: CorpusConfig,
    pub sampler_sigma: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inverse_frequency: bool,
    pub tracker: TrackerConfig,
    pub windows: WindowConfig,
    pub gaze_tolerance: f64,
    pub gaze_min_conf: f64,
    pub calibration_seconds: f64,
    pub svm: SvmParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            out_dir: PathBuf::from("engage-run"),
            train_sessions: 2,
            test_sessions: 1,
            synth: SynthConfig::default(),
            corpus: CorpusConfig::default(),
            sampler_sigma: SamplerConfig::default().sigma,
            model: ModelConfig::default(),
            train: TrainConfig {
                epochs: 60,
                ..TrainConfig::default()
            },
            inverse_frequency: false,
            tracker: TrackerConfig::default(),
            windows: WindowConfig::default(),
            gaze_tolerance: 0.25,
            gaze_min_conf: 0.3,
            calibration_seconds: 10.0,
            svm: SvmParams::default(),
        }
    }
}

pub const SYNTH_KEYS: &[&str] = &[
    "seed",
    "students",
    "duration_seconds",
    "fps",
    "noise_sigma",
    "class_mix",
    "seat_columns",
    "seat_origin",
    "seat_spacing",
    "script",
    "disengaged_fraction",
    "width",
    "height",
    "subclip_seconds",
    "window_seconds",
    "dropout_rate",
    "clips_per_class",
    "clip_seconds",
    "calibration_seconds",
];

/// Reads the `[synth]` section into session and clip-corpus settings.
pub fn synth_from_kv(kv: &KvConfig, synth: &mut SynthConfig, corpus: &mut CorpusConfig) -> Result<f64, CliError> {
    let s = "synth";
    kv.set(s, "seed", &mut synth.seed)?;
    kv.set(s, "students", &mut synth.students)?;
    kv.set(s, "duration_seconds", &mut synth.duration_seconds)?;
    kv.set(s, "fps", &mut synth.fps)?;
    kv.set(s, "noise_sigma", &mut synth.noise_sigma)?;
    if let Some(mix) = kv.list(s, "class_mix")? {
        synth.class_mix = mix
            .try_into()
            .map_err(|_| CliError::data("class_mix needs 13 proportions"))?;
    }
    kv.set(s, "seat_columns", &mut synth.seat_layout.columns)?;
    if let Some(p) = kv.pair(s, "seat_origin")? {
        synth.seat_layout.origin = p;
    }
    if let Some(p) = kv.pair(s, "seat_spacing")? {
        synth.seat_layout.spacing = p;
    }
    let fraction = kv.get::<f64>(s, "disengaged_fraction")?;
    match kv.get::<String>(s, "script")?.as_deref() {
        Some("none") => synth.engagement_script = None,
        Some("random") | None => {
            if let Some(f) = fraction {
                synth.engagement_script = Some(EngagementScript::Random { disengaged_fraction: f });
            }
        }
        Some(other) => return Err(CliError::data(format!("unknown engagement script {other:?}"))),
    }
    kv.set(s, "width", &mut synth.width)?;
    kv.set(s, "height", &mut synth.height)?;
    kv.set(s, "subclip_seconds", &mut synth.subclip_seconds)?;
    kv.set(s, "window_seconds", &mut synth.window_seconds)?;
    kv.set(s, "dropout_rate", &mut synth.dropout_rate)?;
    corpus.seed = synth.seed;
    corpus.fps = synth.fps;
    corpus.noise_sigma = synth.noise_sigma;
    kv.set(s, "clips_per_class", &mut corpus.clips_per_class)?;
    kv.set(s, "clip_seconds", &mut corpus.clip_seconds)?;
    let mut calibration = 10.0;
    kv.set(s, "calibration_seconds", &mut calibration)?;
    Ok(calibration)
}

pub fn svm_from_kv(kv: &KvConfig, section: &str, params: &mut SvmParams) -> Result<(), CliError> {
    kv.set(section, "c", &mut params.c)?;
    kv.set(section, "class_weighting", &mut params.class_weighting)?;
    kv.set(section, "tol", &mut params.tol)?;
    kv.set(section, "max_iter", &mut params.max_iter)?;
    let gamma = kv.get::<f64>(section, "gamma")?;
    match kv.get::<String>(section, "kernel")?.as_deref() {
        None | Some("linear") => {}
        Some("rbf") => {
            params.kernel = Kernel::Rbf {
                gamma: gamma.unwrap_or(1.0 / engage_core::features::FEATURE_DIM as f64),
            }
        }
        Some(other) => return Err(CliError::data(format!("unknown kernel {other:?}"))),
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self, CliError> {
        kv.check_keys(&[
            ("pipeline", &["seed", "out_dir", "train_sessions", "test_sessions"]),
            ("synth", SYNTH_KEYS),
            ("heatmap", &["frames", "size", "sigma"]),
            ("net3d", &["freeze_prefix", "epochs", "batch_size", "learning_rate", "momentum", "class_weights"]),
            ("tracker", &["iou", "max_gap", "conf"]),
            ("features", &["window_seconds", "subclip_seconds"]),
            ("gaze", &["tolerance", "min_conf"]),
            ("svm", &["kernel", "gamma", "c", "class_weighting", "tol", "max_iter"]),
        ])?;
        let mut c = PipelineConfig::default();
        kv.set("pipeline", "seed", &mut c.seed)?;
        if let Some(dir) = kv.get::<String>("pipeline", "out_dir")? {
            c.out_dir = PathBuf::from(dir);
        }
        kv.set("pipeline", "train_sessions", &mut c.train_sessions)?;
        kv.set("pipeline", "test_sessions", &mut c.test_sessions)?;
        c.calibration_seconds = synth_from_kv(kv, &mut c.synth, &mut c.corpus)?;
        if let Some(t) = kv.get::<usize>("heatmap", "frames")? {
            c.model.input[0] = t;
        }
        if let Some(s) = kv.get::<usize>("heatmap", "size")? {
            c.model.input[1] = s;
            c.model.input[2] = s;
        }
        kv.set("heatmap", "sigma", &mut c.sampler_sigma)?;
        kv.set("net3d", "freeze_prefix", &mut c.model.freeze_prefix)?;
        kv.set("net3d", "epochs", &mut c.train.epochs)?;
        kv.set("net3d", "batch_size", &mut c.train.batch_size)?;
        kv.set("net3d", "learning_rate", &mut c.train.learning_rate)?;
        kv.set("net3d", "momentum", &mut c.train.momentum)?;
        match kv.get::<String>("net3d", "class_weights")?.as_deref() {
            None | Some("uniform") => {}
            Some("inverse_frequency") => c.inverse_frequency = true,
            Some(other) => return Err(CliError::data(format!("unknown class weighting {other:?}"))),
        }
        kv.set("tracker", "iou", &mut c.tracker.iou_threshold)?;
        kv.set("tracker", "max_gap", &mut c.tracker.max_gap)?;
        kv.set("tracker", "conf", &mut c.tracker.conf_threshold)?;
        kv.set("features", "window_seconds", &mut c.windows.window_seconds)?;
        kv.set("features", "subclip_seconds", &mut c.windows.subclip_seconds)?;
        kv.set("gaze", "tolerance", &mut c.gaze_tolerance)?;
        kv.set("gaze", "min_conf", &mut c.gaze_min_conf)?;
        svm_from_kv(kv, "svm", &mut c.svm)?;
        c.set_seed(c.seed);
        Ok(c)
    }

    /// Propagates the pipeline seed to every seeded stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.corpus.seed = seed;
        self.train.seed = seed;
    }

    /// Synthetic session `k` (train sessions first).
    pub fn session_config(&self, k: usize) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, 0x5345_5353, k as u64),
            ..self.synth.clone()
        }
    }
}

/// Features of one synthetic session, labelled from its ground truth. The
/// tracks and the calibrated gaze target are returned alongside.
pub struct SessionRun {
    pub session: SessionStream,
    pub truth: SessionTruth,
    pub tracks: Vec<engage_core::tracker::Track>,
    pub gaze: GazeConfig,
    pub rows: Vec<FeatureRow>,
}

pub fn run_session(config: &PipelineConfig, k: usize, net: &Net<f32>) -> Result<SessionRun, CliError> {
    let synth = config.session_config(k);
    let (session, truth) = generate_session(&synth)?;
    let calibration = generate_calibration(&synth, config.calibration_seconds)?;
    let gaze = calibrate_gaze(&calibration, config.gaze_tolerance, config.gaze_min_conf)?;
    let tracks = associate(&session, &config.tracker)?;
    let sampler = sampler_for(&net.config, config.sampler_sigma);
    let mut rows = extract_features(&tracks, session.meta.fps, net, &sampler, &config.windows, &gaze)?;
    label_rows(&mut rows, &tracks, &truth);
    Ok(SessionRun {
        session,
        truth,
        tracks,
        gaze,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session: usize,
    pub split: &'static str,
    pub frames: usize,
    pub detections: usize,
    pub tracks: usize,
    pub feature_rows: usize,
    pub target_yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub action_train_samples: usize,
    pub action_test_samples: usize,
    pub final_train_loss: f64,
    pub actions: ActionReport,
    pub sessions: Vec<SessionSummary>,
    pub engagement: EngagementReport,
    pub timeline: Timeline,
}

fn path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Runs every stage and writes artifacts and reports into `out_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport, CliError> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let corpus = generate_corpus(&config.corpus);
    write_corpus(&corpus, create(&path(dir, "clips.jsonl"))?).map_err(|e| CliError::io(dir, e))?;
    let sampler = sampler_for(&config.model, config.sampler_sigma);
    let volumes = build_volumes(&corpus, &sampler, config.seed)?;
    save_volume_cache(&volumes, &path(dir, "volumes"))?;
    let (net, log) = train_action_model(&volumes, config.model.clone(), None, &config.train, config.inverse_frequency)?;
    save_checkpoint(&net, &path(dir, "actions.egkm"))?;
    let actions = evaluate_actions(&net, &volumes, Some(Split::Test))?;
    write_json(&path(dir, "actions_report.json"), &actions)?;

    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    let mut sessions = Vec::new();
    for k in 0..config.train_sessions + config.test_sessions {
        let run = run_session(config, k, &net)?;
        let is_train = k < config.train_sessions;
        write_session(&run.session, create(&path(dir, &format!("session{k}.jsonl")))?).map_err(|e| CliError::io(dir, e))?;
        write_json(&path(dir, &format!("truth{k}.json")), &run.truth)?;
        write_tracks(&run.session.meta, &run.tracks, create(&path(dir, &format!("tracks{k}.jsonl")))?)
            .map_err(|e| CliError::io(dir, e))?;
        write_features(&run.rows, create(&path(dir, &format!("features{k}.csv")))?)?;
        sessions.push(SessionSummary {
            session: k,
            split: if is_train { "train" } else { "test" },
            frames: run.session.frames.len(),
            detections: run.session.detection_count(),
            tracks: run.tracks.len(),
            feature_rows: run.rows.len(),
            target_yaw: run.gaze.target_yaw,
        });
        if is_train {
            train_rows.extend(run.rows);
        } else {
            test_rows.extend(run.rows);
        }
    }
    let svm = train_engagement(&train_rows, &config.svm)?;
    std::fs::write(path(dir, "engagement_svm.json"), svm.to_json()).map_err(|e| CliError::io(dir, e))?;
    let engagement = evaluate_engagement(&svm, &test_rows)?;
    write_json(&path(dir, "engagement_report.json"), &engagement)?;
    let timeline = engagement_timeline(&svm, &test_rows)?;
    write_timeline_csv(&timeline, create(&path(dir, "timeline.csv"))?).map_err(|e| CliError::io(dir, e))?;

    let report = PipelineReport {
        seed: config.seed,
        action_train_samples: volumes.iter().filter(|v| v.split == Split::Train).count(),
        action_test_samples: volumes.iter().filter(|v| v.split == Split::Test).count(),
        final_train_loss: log.last().map_or(f64::NAN, |l| l.loss),
        actions,
        sessions,
        engagement,
        timeline,
    };
    write_json(&path(dir, "pipeline_report.json"), &report)?;
    Ok(report)
}
