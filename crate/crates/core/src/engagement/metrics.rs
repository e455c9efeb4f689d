use serde::{Deserialize, Serialize};

use super::EngagementError;
use crate::features::EngagementLabel;

/// Square confusion matrix, `counts[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, zero when both inputs are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self, EngagementError> {
        if truth.len() != predicted.len() {
            return Err(EngagementError::LengthMismatch {
                predictions: predicted.len(),
                labels: truth.len(),
            });
        }
        if truth.is_empty() {
            return Err(EngagementError::EmptyInput);
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(EngagementError::LabelOutOfRange(t.max(p)));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> usize {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.support(class))
    }

    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.predicted(class))
    }

    pub fn f1(&self, class: usize) -> f64 {
        f1_score(self.precision(class), self.recall(class))
    }

    /// Fraction of correct predictions.
    pub fn accuracy(&self) -> f64 {
        ratio((0..self.classes()).map(|c| self.counts[c][c]).sum(), self.total())
    }

    /// Unweighted mean of per-class recall over classes that occur.
    pub fn mean_class_accuracy(&self) -> f64 {
        let present: Vec<usize> = (0..self.classes()).filter(|&c| self.support(c) > 0).collect();
        if present.is_empty() {
            return 0.0;
        }
        present.iter().map(|&c| self.recall(c)).sum::<f64>() / present.len() as f64
    }

    pub fn class_report(&self, class: usize) -> ClassReport {
        ClassReport {
            recall: self.recall(class),
            precision: self.precision(class),
            f1: self.f1(class),
            support: self.support(class),
        }
    }

    /// Support-weighted average of the per-class scores.
    pub fn weighted_average(&self) -> ClassReport {
        let total = self.total();
        let mut avg = ClassReport {
            recall: 0.0,
            precision: 0.0,
            f1: 0.0,
            support: total,
        };
        for c in 0..self.classes() {
            let w = ratio(self.support(c), total);
            avg.recall += w * self.recall(c);
            avg.precision += w * self.precision(c);
            avg.f1 += w * self.f1(c);
        }
        avg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub support: usize,
}

/// Binary engagement evaluation laid out as a per-class table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementReport {
    pub disengaged: ClassReport,
    pub engaged: ClassReport,
    pub weighted_avg: ClassReport,
    pub accuracy: f64,
    /// Rows are the true class, columns the prediction, in the order
    /// disengaged, engaged.
    pub confusion: [[usize; 2]; 2],
}

fn binary_index(label: EngagementLabel) -> usize {
    match label {
        EngagementLabel::Disengaged => 0,
        EngagementLabel::Engaged => 1,
    }
}

pub fn compute_metrics(
    predictions: &[EngagementLabel],
    labels: &[EngagementLabel],
) -> Result<EngagementReport, EngagementError> {
    let truth: Vec<usize> = labels.iter().map(|&l| binary_index(l)).collect();
    let pred: Vec<usize> = predictions.iter().map(|&l| binary_index(l)).collect();
    let m = ConfusionMatrix::from_pairs(2, &truth, &pred)?;
    Ok(EngagementReport {
        disengaged: m.class_report(0),
        engaged: m.class_report(1),
        weighted_avg: m.weighted_average(),
        accuracy: m.accuracy(),
        confusion: [[m.counts[0][0], m.counts[0][1]], [m.counts[1][0], m.counts[1][1]]],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedClassReport {
    pub label: String,
    #[serde(flatten)]
    pub report: ClassReport,
}

/// Multi-class action evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    pub top1_accuracy: f64,
    pub mean_class_accuracy: f64,
    pub samples: usize,
    pub per_class: Vec<NamedClassReport>,
    pub confusion: Vec<Vec<usize>>,
}

pub fn action_metrics(names: &[&str], truth: &[usize], predicted: &[usize]) -> Result<ActionReport, EngagementError> {
    let m = ConfusionMatrix::from_pairs(names.len(), truth, predicted)?;
    Ok(ActionReport {
        top1_accuracy: m.accuracy(),
        mean_class_accuracy: m.mean_class_accuracy(),
        samples: m.total(),
        per_class: names
            .iter()
            .enumerate()
            .map(|(c, name)| NamedClassReport {
                label: name.to_string(),
                report: m.class_report(c),
            })
            .collect(),
        confusion: m.counts,
    })
}
