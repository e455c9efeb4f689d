//! Head-yaw proxy from facial keypoints and gaze-at-target frequency.
//!
//! The proxy compares the nose's distance to the two lateral landmarks
//! (ears, falling back to eyes): `r = (|n - eL| - |n - eR|) / (|n - eL| + |n - eR|)`.
//! A frontal face gives `0`, a nose on top of the right ear gives `1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    Keypoint, UpperBodyPose, LEFT_EAR, LEFT_EYE, NOSE, RIGHT_EAR, RIGHT_EYE,
};

#[derive(Debug, Error, PartialEq)]
pub enum GazeError {
    #[error("gaze window is empty")]
    EmptyWindow,
    #[error("invalid gaze configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeConfig {
    pub target_yaw: f64,
    pub tolerance: f64,
    #[serde(default = "default_min_conf")]
    pub min_visible_conf: f64,
}

fn default_min_conf() -> f64 {
    0.3
}

impl Default for GazeConfig {
    fn default() -> Self {
        GazeConfig {
            target_yaw: 0.0,
            tolerance: 0.25,
            min_visible_conf: default_min_conf(),
        }
    }
}

impl GazeConfig {
    pub fn validate(&self) -> Result<(), GazeError> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(GazeError::InvalidConfig("tolerance must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.target_yaw) {
            return Err(GazeError::InvalidConfig("target yaw must lie in [-1, 1]"));
        }
        Ok(())
    }
}

fn lateral(pose: &UpperBodyPose, ear: usize, eye: usize, min_conf: f64) -> Option<Keypoint> {
    let visible = |k: &Keypoint| k.c > 0.0 && k.c >= min_conf;
    [pose.keypoints[ear], pose.keypoints[eye]]
        .into_iter()
        .find(visible)
}

fn dist(a: &Keypoint, b: &Keypoint) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Yaw proxy in `[-1, 1]`, or `None` when the nose or either side's
/// landmarks are not visible.
pub fn head_yaw_proxy(pose: &UpperBodyPose, min_visible_conf: f64) -> Option<f64> {
    let nose = pose.keypoints[NOSE];
    if !(nose.c > 0.0 && nose.c >= min_visible_conf) {
        return None;
    }
    let left = lateral(pose, LEFT_EAR, LEFT_EYE, min_visible_conf)?;
    let right = lateral(pose, RIGHT_EAR, RIGHT_EYE, min_visible_conf)?;
    let dl = dist(&nose, &left);
    let dr = dist(&nose, &right);
    let total = dl + dr;
    if total <= 0.0 {
        return None;
    }
    Some(((dl - dr) / total).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeFrequency {
    /// Fraction of frames with a defined proxy that look at the target.
    pub frequency: f64,
    pub defined_frames: usize,
    pub total_frames: usize,
}

impl GazeFrequency {
    /// No frame in the window had a usable head pose.
    pub fn low_coverage(&self) -> bool {
        self.defined_frames == 0
    }
}

pub fn gaze_at_target_frequency<'a, I>(window: I, config: &GazeConfig) -> Result<GazeFrequency, GazeError>
where
    I: IntoIterator<Item = &'a UpperBodyPose>,
{
    config.validate()?;
    let mut total = 0;
    let mut defined = 0;
    let mut hits = 0;
    for pose in window {
        total += 1;
        if let Some(r) = head_yaw_proxy(pose, config.min_visible_conf) {
            defined += 1;
            if (r - config.target_yaw).abs() <= config.tolerance {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(GazeError::EmptyWindow);
    }
    let frequency = if defined == 0 {
        0.0
    } else {
        hits as f64 / defined as f64
    };
    Ok(GazeFrequency {
        frequency,
        defined_frames: defined,
        total_frames: total,
    })
}

/// Mean proxy over frames labelled as looking at the target, or `None` if no
/// frame has a defined proxy.
pub fn calibrate_target_yaw<'a, I>(poses: I, min_visible_conf: f64) -> Option<f64>
where
    I: IntoIterator<Item = &'a UpperBodyPose>,
{
    let (sum, n) = poses
        .into_iter()
        .filter_map(|p| head_yaw_proxy(p, min_visible_conf))
        .fold((0.0, 0usize), |(s, n), r| (s + r, n + 1));
    (n > 0).then(|| sum / n as f64)
}
