use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::EngagementError;
use crate::features::EngagementLabel;

/// One student's prediction in one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowPrediction {
    pub window_id: u64,
    pub predicted: EngagementLabel,
    pub reference: Option<EngagementLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub window_id: u64,
    pub students: usize,
    pub mean_predicted: f64,
    pub mean_reference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub points: Vec<TimelinePoint>,
    /// Pearson correlation of the two mean series, when both are defined
    /// and neither is constant.
    pub correlation: Option<f64>,
}

fn engaged(label: EngagementLabel) -> f64 {
    match label {
        EngagementLabel::Engaged => 1.0,
        EngagementLabel::Disengaged => 0.0,
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Per-window mean engagement (engaged = 1) across the students present.
/// The reference mean is reported for windows where every student has a
/// reference label.
pub fn mean_engagement_timeline(predictions: &[WindowPrediction]) -> Result<Timeline, EngagementError> {
    if predictions.is_empty() {
        return Err(EngagementError::EmptyInput);
    }
    let mut by_window: BTreeMap<u64, Vec<&WindowPrediction>> = BTreeMap::new();
    for p in predictions {
        by_window.entry(p.window_id).or_default().push(p);
    }
    let points: Vec<TimelinePoint> = by_window
        .into_iter()
        .map(|(window_id, ps)| {
            let n = ps.len() as f64;
            let mean_predicted = ps.iter().map(|p| engaged(p.predicted)).sum::<f64>() / n;
            let mean_reference = ps
                .iter()
                .map(|p| p.reference.map(engaged))
                .sum::<Option<f64>>()
                .map(|s| s / n);
            TimelinePoint {
                window_id,
                students: ps.len(),
                mean_predicted,
                mean_reference,
            }
        })
        .collect();
    let paired: (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter_map(|p| p.mean_reference.map(|r| (p.mean_predicted, r)))
        .unzip();
    let correlation = if paired.0.len() == points.len() {
        pearson(&paired.0, &paired.1)
    } else {
        None
    };
    Ok(Timeline { points, correlation })
}

/// Writes `window,mean_predicted,mean_reference`; the last column is empty
/// when unknown.
pub fn write_timeline_csv<W: Write>(timeline: &Timeline, mut out: W) -> std::io::Result<()> {
    writeln!(out, "window,mean_predicted,mean_reference")?;
    for p in &timeline.points {
        let reference = p.mean_reference.map(|r| r.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", p.window_id, p.mean_predicted, reference)?;
    }
    Ok(())
}
