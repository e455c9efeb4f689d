//! Gaussian blob problems and a primal sub-gradient SVM solver.

use engage_core::engagement::{max_kkt_violation, solve_smo, train_svm, EngagementError, Kernel, SvmModel, SvmParams};
use engage_core::features::EngagementLabel::{self, Disengaged, Engaged};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn blobs(rng: &mut ChaCha8Rng, n: usize, dim: usize, gap: f64) -> (Vec<Vec<f64>>, Vec<EngagementLabel>) {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let label = if i % 3 == 0 { Disengaged } else { Engaged };
        let centre = label.sign() * gap / 2.0;
        x.push((0..dim).map(|_| centre + noise.sample(rng)).collect());
        y.push(label);
    }
    (x, y)
}

/// Primal soft-margin objective `1/2 |w|^2 + sum C_i hinge_i`, minimised by
/// averaged sub-gradient descent.
pub fn primal_oracle(x: &[Vec<f64>], y: &[EngagementLabel], c: &[f64]) -> (Vec<f64>, f64) {
    let dim = x[0].len();
    let objective = |w: &[f64], b: f64| {
        let reg: f64 = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        reg + x
            .iter()
            .zip(y)
            .zip(c)
            .map(|((xi, yi), ci)| {
                let f: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + b;
                ci * (1.0 - yi.sign() * f).max(0.0)
            })
            .sum::<f64>()
    };
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut best = (objective(&w, b), w.clone(), b);
    for t in 1..=200_000 {
        let eta = 0.05 / (t as f64).sqrt();
        let mut gw = w.clone();
        let mut gb = 0.0;
        for ((xi, yi), ci) in x.iter().zip(y).zip(c) {
            let f: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + b;
            if yi.sign() * f < 1.0 {
                for (g, v) in gw.iter_mut().zip(xi) {
                    *g -= ci * yi.sign() * v;
                }
                gb -= ci * yi.sign();
            }
        }
        for (wk, g) in w.iter_mut().zip(&gw) {
            *wk -= eta * g;
        }
        b -= eta * gb;
        let o = objective(&w, b);
        if o < best.0 {
            best = (o, w.clone(), b);
        }
    }
    (best.1, best.2)
}


/// Points of a 10 x 10 grid over `[-3, 3]^2` on which the model and the
/// hyperplane `w.x + b` give the same side.
pub fn probe_grid_agreement(model: &SvmModel, w: &[f64], b: f64) -> usize {
    let mut agree = 0;
    for i in 0..10 {
        for j in 0..10 {
            let p = [-3.0 + 6.0 * i as f64 / 9.0, -3.0 + 6.0 * j as f64 / 9.0];
            let oracle = w[0] * p[0] + w[1] * p[1] + b >= 0.0;
            let svm = model.predict(&p).unwrap().0 == Engaged;
            agree += (oracle == svm) as usize;
        }
    }
    agree
}

/// Grid agreement for each of `problems` 20-sample 2D linear problems.
pub fn linear_agreements(seed: u64, problems: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..problems)
        .map(|_| {
            let (x, y) = blobs(&mut rng, 20, 2, 2.0);
            let params = SvmParams {
                c: 0.5,
                ..SvmParams::default()
            };
            let model = train_svm(&x, &y, &params).unwrap();
            let c: Vec<f64> = y
                .iter()
                .map(|l| match l {
                    Engaged => model.c_engaged,
                    Disengaged => model.c_disengaged,
                })
                .collect();
            let (w, b) = primal_oracle(&x, &y, &c);
            probe_grid_agreement(&model, &w, b)
        })
        .collect()
}

pub struct KktSummary {
    pub runs: usize,
    pub converged: usize,
    pub worst_violation: f64,
    pub worst_balance: f64,
    pub box_respected: bool,
}

/// Random linear and RBF problems, with and without class weighting.
pub fn kkt_runs(seed: u64, runs: usize) -> KktSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = KktSummary {
        runs,
        converged: 0,
        worst_violation: 0.0,
        worst_balance: 0.0,
        box_respected: true,
    };
    for run in 0..runs {
        let n = rng.gen_range(6..60);
        let dim = rng.gen_range(1..6);
        let gap = rng.gen_range(0.0..3.0);
        let (x, y) = blobs(&mut rng, n, dim, gap);
        let kernel = if run % 2 == 0 {
            Kernel::Linear
        } else {
            Kernel::Rbf {
                gamma: rng.gen_range(0.05..2.0),
            }
        };
        let params = SvmParams {
            c: rng.gen_range(0.1..10.0),
            kernel,
            class_weighting: run % 3 != 0,
            ..SvmParams::default()
        };
        match solve_smo(&x, &y, &params) {
            Ok(sol) => {
                s.converged += 1;
                s.worst_violation = s.worst_violation.max(max_kkt_violation(&x, &y, &kernel, &sol));
                let balance: f64 = sol.alpha.iter().zip(&y).map(|(a, l)| a * l.sign()).sum();
                s.worst_balance = s.worst_balance.max(balance.abs());
                s.box_respected &= sol.alpha.iter().zip(&sol.upper).all(|(a, u)| (0.0..=*u).contains(a));
            }
            Err(EngagementError::NoConvergence(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
    s
}

/// A separable 2D set and whether linear and RBF models fit it exactly.
pub fn separable_fits() -> bool {
    let x: Vec<Vec<f64>> = vec![
        vec![0.1, 0.2],
        vec![0.2, 0.1],
        vec![0.3, 0.3],
        vec![0.8, 0.9],
        vec![0.9, 0.7],
        vec![0.7, 0.8],
        vec![1.0, 1.0],
    ];
    let y = [Disengaged, Disengaged, Disengaged, Engaged, Engaged, Engaged, Engaged];
    [Kernel::Linear, Kernel::Rbf { gamma: 2.0 }].into_iter().all(|kernel| {
        let params = SvmParams {
            c: 100.0,
            kernel,
            ..SvmParams::default()
        };
        let model = train_svm(&x, &y, &params).unwrap();
        x.iter().zip(&y).all(|(xi, yi)| model.predict(xi).unwrap().0 == *yi)
    })
}
