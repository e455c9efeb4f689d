//! Windowing of tracks, histogram-of-actions features and the feature CSV.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaze::{gaze_at_target_frequency, GazeConfig};
use crate::heatmap::{build_volume, HeatmapError, SamplerConfig};
use crate::ingest::UpperBodyPose;
use crate::net3d::{Net, Net3dError};
use crate::tracker::Track;

pub const NUM_ACTIONS: usize = 13;
pub const FEATURE_DIM: usize = NUM_ACTIONS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionLabel {
    Writing,
    RaisingHand,
    Reading,
    Discussing,
    TypingKeyboard,
    PlayingPhone,
    WipingFace,
    Yawning,
    CheckingTime,
    FiddlingHair,
    Drinking,
    Eating,
    CrossingArmsOrSupportingHead,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; NUM_ACTIONS] = [
        ActionLabel::Writing,
        ActionLabel::RaisingHand,
        ActionLabel::Reading,
        ActionLabel::Discussing,
        ActionLabel::TypingKeyboard,
        ActionLabel::PlayingPhone,
        ActionLabel::WipingFace,
        ActionLabel::Yawning,
        ActionLabel::CheckingTime,
        ActionLabel::FiddlingHair,
        ActionLabel::Drinking,
        ActionLabel::Eating,
        ActionLabel::CrossingArmsOrSupportingHead,
    ];

    /// On-task actions.
    pub const ENGAGED: [ActionLabel; 5] = [
        ActionLabel::Writing,
        ActionLabel::RaisingHand,
        ActionLabel::Reading,
        ActionLabel::Discussing,
        ActionLabel::TypingKeyboard,
    ];

    /// Off-task actions.
    pub const DISENGAGED: [ActionLabel; 7] = [
        ActionLabel::PlayingPhone,
        ActionLabel::WipingFace,
        ActionLabel::Yawning,
        ActionLabel::CheckingTime,
        ActionLabel::FiddlingHair,
        ActionLabel::Drinking,
        ActionLabel::Eating,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionLabel::Writing => "writing",
            ActionLabel::RaisingHand => "raising_hand",
            ActionLabel::Reading => "reading",
            ActionLabel::Discussing => "discussing",
            ActionLabel::TypingKeyboard => "typing_keyboard",
            ActionLabel::PlayingPhone => "playing_phone",
            ActionLabel::WipingFace => "wiping_face",
            ActionLabel::Yawning => "yawning",
            ActionLabel::CheckingTime => "checking_time",
            ActionLabel::FiddlingHair => "fiddling_hair",
            ActionLabel::Drinking => "drinking",
            ActionLabel::Eating => "eating",
            ActionLabel::CrossingArmsOrSupportingHead => "crossing_arms_or_supporting_head",
        }
    }

    /// Whether the action is ambiguous between engaged and disengaged.
    pub fn is_pose_dependent(self) -> bool {
        self == ActionLabel::CrossingArmsOrSupportingHead
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionLabel {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| FeatureError::UnknownAction(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngagementLabel {
    Engaged,
    Disengaged,
}

impl EngagementLabel {
    pub fn name(self) -> &'static str {
        match self {
            EngagementLabel::Engaged => "engaged",
            EngagementLabel::Disengaged => "disengaged",
        }
    }

    /// `+1` for engaged, `-1` for disengaged.
    pub fn sign(self) -> f64 {
        match self {
            EngagementLabel::Engaged => 1.0,
            EngagementLabel::Disengaged => -1.0,
        }
    }
}

impl fmt::Display for EngagementLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EngagementLabel {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "engaged" => Ok(EngagementLabel::Engaged),
            "disengaged" => Ok(EngagementLabel::Disengaged),
            other => Err(FeatureError::UnknownEngagement(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("track is empty")]
    EmptyTrack,
    #[error("no predictions to build a histogram from")]
    EmptyPredictions,
    #[error("invalid window configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("gaze frequency {0} is outside [0, 1]")]
    GazeOutOfRange(f64),
    #[error("unknown action label {0:?}")]
    UnknownAction(String),
    #[error("unknown engagement label {0:?}")]
    UnknownEngagement(String),
    #[error("feature file line {line}: {reason}")]
    Csv { line: u64, reason: String },
    #[error("model error: {0}")]
    Model(#[from] Net3dError),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub window_seconds: f64,
    pub subclip_seconds: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_seconds: 120.0,
            subclip_seconds: 10.0,
        }
    }
}

impl WindowConfig {
    /// Window and sub-clip lengths in frames.
    pub fn frames(&self, fps: f64) -> Result<(u64, u64), FeatureError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(FeatureError::InvalidConfig("fps must be positive"));
        }
        let wf = (self.window_seconds * fps).round();
        let sf = (self.subclip_seconds * fps).round();
        if !(wf >= 1.0 && sf >= 1.0 && wf.is_finite()) {
            return Err(FeatureError::InvalidConfig(
                "window and sub-clip must span at least one frame",
            ));
        }
        if sf > wf {
            return Err(FeatureError::InvalidConfig("sub-clip longer than window"));
        }
        Ok((wf as u64, sf as u64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubClip {
    pub start_frame: u64,
    /// Exclusive.
    pub end_frame: u64,
    pub poses: Vec<UpperBodyPose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub window_id: u64,
    pub start_frame: u64,
    /// Exclusive.
    pub end_frame: u64,
    pub subclips: Vec<SubClip>,
}

impl Window {
    pub fn poses(&self) -> impl Iterator<Item = &UpperBodyPose> {
        self.subclips.iter().flat_map(|s| s.poses.iter())
    }
}

fn overlap(a: (u64, u64), b: (u64, u64)) -> u64 {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Splits a track into windows aligned to session frame 0, so window `k`
/// covers frames `[k * Wf, (k + 1) * Wf)` for every track of a session.
///
/// A window is kept when the track covers at least half of it, a sub-clip
/// when the track covers at least half of the sub-clip and it holds at least
/// one pose. Windows left without sub-clips are dropped.
pub fn window_segments(track: &Track, fps: f64, config: &WindowConfig) -> Result<Vec<Window>, FeatureError> {
    let (wf, sf) = config.frames(fps)?;
    let (first, last) = match (track.entries.first(), track.entries.last()) {
        (Some(f), Some(l)) => (f.frame, l.frame),
        _ => return Err(FeatureError::EmptyTrack),
    };
    let extent = (first, last + 1);
    let mut windows = Vec::new();
    let mut cursor = 0;
    for k in first / wf..=last / wf {
        let range = (k * wf, (k + 1) * wf);
        if 2 * overlap(range, extent) < wf {
            continue;
        }
        let mut subclips = Vec::new();
        let mut start = range.0;
        while start < range.1 {
            let end = (start + sf).min(range.1);
            let covered = overlap((start, end), extent);
            while cursor < track.entries.len() && track.entries[cursor].frame < start {
                cursor += 1;
            }
            let mut poses = Vec::new();
            while cursor < track.entries.len() && track.entries[cursor].frame < end {
                poses.push(track.entries[cursor].pose);
                cursor += 1;
            }
            if 2 * covered >= sf && !poses.is_empty() {
                subclips.push(SubClip {
                    start_frame: start,
                    end_frame: end,
                    poses,
                });
            }
            start = end;
        }
        if !subclips.is_empty() {
            windows.push(Window {
                window_id: k,
                start_frame: range.0,
                end_frame: range.1,
                subclips,
            });
        }
    }
    Ok(windows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionHistogram {
    pub freq: [f64; NUM_ACTIONS],
}

impl ActionHistogram {
    /// The all-zero histogram of a window without classified sub-clips.
    pub fn invalid() -> Self {
        ActionHistogram {
            freq: [0.0; NUM_ACTIONS],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.freq.iter().all(|&f| f >= 0.0) && (self.freq.iter().sum::<f64>() - 1.0).abs() < 1e-9
    }
}

pub fn histogram_of_actions(predictions: &[ActionLabel]) -> Result<ActionHistogram, FeatureError> {
    if predictions.is_empty() {
        return Err(FeatureError::EmptyPredictions);
    }
    let mut counts = [0usize; NUM_ACTIONS];
    for p in predictions {
        counts[p.code()] += 1;
    }
    let total = predictions.len() as f64;
    Ok(ActionHistogram {
        freq: counts.map(|c| c as f64 / total),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngagementFeature {
    pub action_freqs: [f64; NUM_ACTIONS],
    pub gaze_freq: f64,
}

impl EngagementFeature {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        out[..NUM_ACTIONS].copy_from_slice(&self.action_freqs);
        out[NUM_ACTIONS] = self.gaze_freq;
        out
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        if values.len() != FEATURE_DIM {
            return None;
        }
        let mut action_freqs = [0.0; NUM_ACTIONS];
        action_freqs.copy_from_slice(&values[..NUM_ACTIONS]);
        Some(EngagementFeature {
            action_freqs,
            gaze_freq: values[NUM_ACTIONS],
        })
    }
}

pub fn build_feature(hist: &ActionHistogram, gaze_freq: f64) -> Result<EngagementFeature, FeatureError> {
    if !(0.0..=1.0).contains(&gaze_freq) {
        return Err(FeatureError::GazeOutOfRange(gaze_freq));
    }
    Ok(EngagementFeature {
        action_freqs: hist.freq,
        gaze_freq,
    })
}

/// One line of the feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub track_id: u64,
    pub window_id: u64,
    pub feature: EngagementFeature,
    pub label: Option<EngagementLabel>,
}

pub fn feature_header() -> Vec<String> {
    let mut h = vec!["track_id".to_string(), "window_id".to_string()];
    h.extend((0..NUM_ACTIONS).map(|i| format!("f{i}")));
    h.push("gaze".into());
    h.push("label".into());
    h
}

pub fn write_features<W: Write>(rows: &[FeatureRow], out: W) -> Result<(), FeatureError> {
    let io = |e: csv::Error| FeatureError::Io(e.to_string());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(feature_header()).map_err(io)?;
    for row in rows {
        let mut rec = vec![row.track_id.to_string(), row.window_id.to_string()];
        rec.extend(row.feature.to_array().iter().map(|v| v.to_string()));
        rec.push(row.label.map(|l| l.name()).unwrap_or("").to_string());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| FeatureError::Io(e.to_string()))
}

pub fn parse_features<R: Read>(input: R) -> Result<Vec<FeatureRow>, FeatureError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = Vec::new();
    let mut seen_header = false;
    for rec in r.records() {
        let rec = rec.map_err(|e| FeatureError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| FeatureError::Csv { line, reason };
        if !seen_header {
            if rec.iter().ne(feature_header().iter().map(String::as_str)) {
                return Err(bad("unexpected header".into()));
            }
            seen_header = true;
            continue;
        }
        if rec.len() != FEATURE_DIM + 3 {
            return Err(bad(format!("expected {} fields, found {}", FEATURE_DIM + 3, rec.len())));
        }
        let id = |i: usize| rec[i].parse::<u64>().map_err(|e| bad(format!("field {i}: {e}")));
        let track_id = id(0)?;
        let window_id = id(1)?;
        let mut values = [0.0; FEATURE_DIM];
        for (j, v) in values.iter_mut().enumerate() {
            *v = rec[j + 2]
                .parse::<f64>()
                .map_err(|e| bad(format!("field {}: {e}", j + 2)))?;
            if !(0.0..=1.0).contains(v) {
                return Err(bad(format!("field {} outside [0, 1]", j + 2)));
            }
        }
        let label = match &rec[FEATURE_DIM + 2] {
            "" => None,
            s => Some(s.parse::<EngagementLabel>().map_err(|e| bad(e.to_string()))?),
        };
        rows.push(FeatureRow {
            track_id,
            window_id,
            feature: EngagementFeature::from_slice(&values).expect("fixed length"),
            label,
        });
    }
    if !seen_header {
        return Err(FeatureError::Csv {
            line: 1,
            reason: "missing header".into(),
        });
    }
    Ok(rows)
}

/// Classifies one sub-clip, or `None` when no joint is visible in it.
pub fn classify_subclip(
    net: &Net<f32>,
    poses: &[UpperBodyPose],
    sampler: &SamplerConfig,
) -> Result<Option<ActionLabel>, FeatureError> {
    match build_volume(poses, sampler) {
        Ok(volume) => {
            let p = net.predict_volume(&volume)?;
            Ok(ActionLabel::from_code(p.class))
        }
        Err(HeatmapError::AllJointsMissing) | Err(HeatmapError::EmptySegment) => Ok(None),
        Err(HeatmapError::InvalidConfig(m)) => Err(FeatureError::InvalidConfig(m)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowActions {
    pub track_id: u64,
    pub window_id: u64,
    pub predictions: Vec<ActionLabel>,
    pub gaze: f64,
}

/// Runs action inference over every sub-clip of every window and returns
/// one unlabelled feature row per window with at least one classified
/// sub-clip, ordered by track then window.
pub fn extract_features(
    tracks: &[Track],
    fps: f64,
    net: &Net<f32>,
    sampler: &SamplerConfig,
    windows: &WindowConfig,
    gaze: &GazeConfig,
) -> Result<Vec<FeatureRow>, FeatureError> {
    gaze.validate().map_err(|_| FeatureError::InvalidConfig("invalid gaze configuration"))?;
    let mut jobs = Vec::new();
    for track in tracks {
        for window in window_segments(track, fps, windows)? {
            jobs.push((track.id, window));
        }
    }
    let results: Vec<Option<FeatureRow>> = jobs
        .par_iter()
        .map(|(track_id, window)| {
            let mut predictions = Vec::with_capacity(window.subclips.len());
            for clip in &window.subclips {
                if let Some(label) = classify_subclip(net, &clip.poses, sampler)? {
                    predictions.push(label);
                }
            }
            if predictions.is_empty() {
                return Ok(None);
            }
            let hist = histogram_of_actions(&predictions)?;
            let g = gaze_at_target_frequency(window.poses(), gaze)
                .map_err(|_| FeatureError::EmptyTrack)?;
            Ok(Some(FeatureRow {
                track_id: *track_id,
                window_id: window.window_id,
                feature: build_feature(&hist, g.frequency)?,
                label: None,
            }))
        })
        .collect::<Result<_, FeatureError>>()?;
    Ok(results.into_iter().flatten().collect())
}
