//! Soft-margin SVM trained by sequential minimal optimization.
//!
//! Solves `min 1/2 a'Qa - e'a` subject to `0 <= a_i <= C_i`, `y'a = 0` with
//! `Q_ij = y_i y_j K(x_i, x_j)`. Each step updates the maximal violating
//! pair; ties are broken by the lowest index, so training is deterministic.

use serde::{Deserialize, Serialize};

use super::EngagementError;
use crate::features::EngagementLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
    /// Scale the penalty of class `k` by `N / (2 n_k)`.
    pub class_weighting: bool,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            kernel: Kernel::Linear,
            class_weighting: true,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<(), EngagementError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(EngagementError::InvalidParams("C must be positive"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(EngagementError::InvalidParams("tolerance must be positive"));
        }
        if let Kernel::Rbf { gamma } = self.kernel {
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(EngagementError::InvalidParams("gamma must be positive"));
            }
        }
        Ok(())
    }

    /// Penalties `(C_engaged, C_disengaged)` for the given label counts.
    pub fn penalties(&self, n_engaged: usize, n_disengaged: usize) -> (f64, f64) {
        if !self.class_weighting {
            return (self.c, self.c);
        }
        let n = (n_engaged + n_disengaged) as f64;
        (
            self.c * n / (2.0 * n_engaged as f64),
            self.c * n / (2.0 * n_disengaged as f64),
        )
    }
}

/// Dual solution over the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Per-sample upper bound `C_i`.
    pub upper: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportVector {
    pub x: Vec<f64>,
    pub alpha: f64,
    pub label: EngagementLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub dim: usize,
    pub c_engaged: f64,
    pub c_disengaged: f64,
    pub bias: f64,
    pub support_vectors: Vec<SupportVector>,
    /// Primal weights of a linear model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

fn check_inputs(x: &[Vec<f64>], y: &[EngagementLabel]) -> Result<usize, EngagementError> {
    if x.is_empty() {
        return Err(EngagementError::EmptyInput);
    }
    if x.len() != y.len() {
        return Err(EngagementError::LengthMismatch {
            predictions: x.len(),
            labels: y.len(),
        });
    }
    let dim = x[0].len();
    for row in x {
        if row.len() != dim {
            return Err(EngagementError::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(EngagementError::InvalidParams("features must be finite"));
        }
    }
    let n_pos = y.iter().filter(|&&l| l == EngagementLabel::Engaged).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(EngagementError::SingleClassData);
    }
    Ok(dim)
}

/// Runs SMO to the `tol` stopping criterion on the maximal violation.
pub fn solve_smo(x: &[Vec<f64>], y: &[EngagementLabel], params: &SvmParams) -> Result<SmoSolution, EngagementError> {
    params.validate()?;
    check_inputs(x, y)?;
    let n = x.len();
    let ys: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let n_pos = ys.iter().filter(|&&s| s > 0.0).count();
    let (c_pos, c_neg) = params.penalties(n_pos, n - n_pos);
    let upper: Vec<f64> = ys.iter().map(|&s| if s > 0.0 { c_pos } else { c_neg }).collect();

    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = ys[i] * ys[j] * params.kernel.eval(&x[i], &x[j]);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let at_upper = |a: f64, c: f64| a >= c;
    let at_lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    loop {
        // i maximizes -y G over I_up, j minimizes it over I_low
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -ys[t] * grad[t];
            let in_up = if ys[t] > 0.0 { !at_upper(alpha[t], upper[t]) } else { !at_lower(alpha[t]) };
            let in_low = if ys[t] > 0.0 { !at_lower(alpha[t]) } else { !at_upper(alpha[t], upper[t]) };
            if in_up && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < params.tol {
            break;
        }
        if iterations >= params.max_iter {
            return Err(EngagementError::NoConvergence(params.max_iter));
        }
        iterations += 1;

        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qii = q[i * n + i];
        let qjj = q[j * n + j];
        let qij = q[i * n + j];
        if ys[i] != ys[j] {
            let quad = (qii + qjj + 2.0 * qij).max(1e-12);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(1e-12);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q[i * n + t] * di + q[j * n + t] * dj;
        }
    }

    // bias from free vectors, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..n {
        let yg = ys[t] * grad[t];
        if at_upper(alpha[t], upper[t]) {
            if ys[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower(alpha[t]) {
            if ys[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 { free_sum / free as f64 } else { (ub + lb) / 2.0 };
    Ok(SmoSolution {
        alpha,
        bias: -rho,
        upper,
        iterations,
    })
}

/// Largest KKT residual of a dual solution: for `a_i = 0` the margin must
/// be at least `1`, for `a_i = C_i` at most `1`, and exactly `1` in between.
pub fn max_kkt_violation(x: &[Vec<f64>], y: &[EngagementLabel], kernel: &Kernel, sol: &SmoSolution) -> f64 {
    let ys: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    (0..x.len())
        .map(|i| {
            let f: f64 = (0..x.len())
                .filter(|&j| sol.alpha[j] != 0.0)
                .map(|j| sol.alpha[j] * ys[j] * kernel.eval(&x[j], &x[i]))
                .sum::<f64>()
                + sol.bias;
            let m = ys[i] * f;
            if sol.alpha[i] <= 0.0 {
                (1.0 - m).max(0.0)
            } else if sol.alpha[i] >= sol.upper[i] {
                (m - 1.0).max(0.0)
            } else {
                (m - 1.0).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn train_svm(x: &[Vec<f64>], y: &[EngagementLabel], params: &SvmParams) -> Result<SvmModel, EngagementError> {
    let sol = solve_smo(x, y, params)?;
    let dim = x[0].len();
    let n_pos = y.iter().filter(|&&l| l == EngagementLabel::Engaged).count();
    let (c_engaged, c_disengaged) = params.penalties(n_pos, y.len() - n_pos);
    let support_vectors: Vec<SupportVector> = x
        .iter()
        .zip(y)
        .zip(&sol.alpha)
        .filter(|(_, &a)| a > 0.0)
        .map(|((x, &label), &alpha)| SupportVector {
            x: x.clone(),
            alpha,
            label,
        })
        .collect();
    let weights = (params.kernel == Kernel::Linear).then(|| {
        let mut w = vec![0.0; dim];
        for sv in &support_vectors {
            let coef = sv.alpha * sv.label.sign();
            for (wk, xk) in w.iter_mut().zip(&sv.x) {
                *wk += coef * xk;
            }
        }
        w
    });
    Ok(SvmModel {
        kernel: params.kernel,
        dim,
        c_engaged,
        c_disengaged,
        bias: sol.bias,
        support_vectors,
        weights,
    })
}

impl SvmModel {
    pub fn decision_value(&self, x: &[f64]) -> Result<f64, EngagementError> {
        if x.len() != self.dim {
            return Err(EngagementError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let raw = match &self.weights {
            Some(w) => w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>(),
            None => self
                .support_vectors
                .iter()
                .map(|sv| sv.alpha * sv.label.sign() * self.kernel.eval(&sv.x, x))
                .sum(),
        };
        Ok(raw + self.bias)
    }

    /// Label and decision value; a value of exactly zero is engaged.
    pub fn predict(&self, x: &[f64]) -> Result<(EngagementLabel, f64), EngagementError> {
        let d = self.decision_value(x)?;
        let label = if d >= 0.0 {
            EngagementLabel::Engaged
        } else {
            EngagementLabel::Disengaged
        };
        Ok((label, d))
    }

    /// Checks the structural invariants of a deserialized model.
    pub fn validate(&self) -> Result<(), EngagementError> {
        let bad = EngagementError::InvalidModel;
        if !self.bias.is_finite() || !(self.c_engaged > 0.0 && self.c_disengaged > 0.0) {
            return Err(bad("bias and penalties must be finite and positive"));
        }
        if let Kernel::Rbf { gamma } = self.kernel {
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(bad("gamma must be positive"));
            }
        }
        for sv in &self.support_vectors {
            let c = match sv.label {
                EngagementLabel::Engaged => self.c_engaged,
                EngagementLabel::Disengaged => self.c_disengaged,
            };
            if sv.x.len() != self.dim || sv.x.iter().any(|v| !v.is_finite()) {
                return Err(bad("support vector has wrong dimension"));
            }
            if !(sv.alpha >= 0.0 && sv.alpha <= c * (1.0 + 1e-9)) {
                return Err(bad("dual coefficient outside [0, C]"));
            }
        }
        match &self.weights {
            Some(w) if w.len() != self.dim || w.iter().any(|v| !v.is_finite()) => {
                Err(bad("weights have wrong dimension"))
            }
            Some(_) if self.kernel != Kernel::Linear => Err(bad("primal weights on a non-linear kernel")),
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EngagementError> {
        let model: SvmModel =
            serde_json::from_str(text).map_err(|e| EngagementError::Parse(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }
}
