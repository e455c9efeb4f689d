use super::Net3dError;

/// Per-class multipliers for the cross-entropy loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub w: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights {
            w: vec![1.0; num_classes],
        }
    }

    /// `w_k = N / (K * n_k)`. Classes absent from `labels` get weight 1;
    /// they never contribute to the loss.
    pub fn inverse_frequency(labels: &[usize], num_classes: usize) -> Result<Self, Net3dError> {
        let mut counts = vec![0usize; num_classes];
        for &l in labels {
            *counts.get_mut(l).ok_or(Net3dError::LabelOutOfRange(l))? += 1;
        }
        let n = labels.len() as f64;
        let w = counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    1.0
                } else {
                    n / (num_classes as f64 * c as f64)
                }
            })
            .collect();
        Ok(ClassWeights { w })
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), Net3dError> {
        if self.w.len() != num_classes {
            return Err(Net3dError::InvalidConfig(format!(
                "expected {num_classes} class weights, found {}",
                self.w.len()
            )));
        }
        if self.w.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Net3dError::InvalidConfig(
                "class weights must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// `-w_k * log softmax(logits)_k`.
pub fn weighted_cross_entropy(logits: &[f64], label: usize, weights: &ClassWeights) -> f64 {
    let lse = log_sum_exp(logits);
    (weights.w[label] * (lse - logits[label])).max(0.0)
}

/// Loss together with its gradient `w_k * (softmax - onehot_k)`.
pub fn weighted_cross_entropy_grad(
    logits: &[f64],
    label: usize,
    weights: &ClassWeights,
) -> (f64, Vec<f64>) {
    let loss = weighted_cross_entropy(logits, label, weights);
    let wk = weights.w[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    for g in &mut grad {
        *g *= wk;
    }
    (loss, grad)
}
