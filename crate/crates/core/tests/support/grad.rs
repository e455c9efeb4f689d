//! Central finite-difference checks. Each returns the worst relative error
//! over the coordinates it probed.

use engage_core::net3d::layers::{global_avg_pool, global_avg_pool_backward, relu_backward, relu_forward, Conv3d, Linear, MaxPool3d};
use engage_core::net3d::{weighted_cross_entropy, weighted_cross_entropy_grad, ClassWeights, ConvStage, Gradients, ModelConfig, Net, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numeric derivative of `f` along coordinate `i` of `x`.
fn numeric<T: Clone>(x: &T, coord: impl Fn(&mut T) -> &mut f64, f: impl Fn(&T) -> f64) -> f64 {
    let (mut p, mut m) = (x.clone(), x.clone());
    *coord(&mut p) += H;
    *coord(&mut m) -= H;
    (f(&p) - f(&m)) / (2.0 * H)
}

/// Conv layer under the objective `<g, conv(x)>`, every input and parameter
/// coordinate.
pub fn conv(in_channels: usize, out_channels: usize, kernel: [usize; 3], stride: [usize; 3], dims: [usize; 3], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conv = Conv3d::<f64>::zeros(in_channels, out_channels, kernel, stride);
    conv.weight.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    conv.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
    let x = random_tensor(&mut rng, &[in_channels, dims[0], dims[1], dims[2]]);
    let (y, cache) = conv.forward(&x);
    let g = random_tensor(&mut rng, &y.shape);
    let mut gw = vec![0.0; conv.weight.len()];
    let mut gb = vec![0.0; conv.bias.len()];
    let dx = conv.backward(&cache, &g, &mut gw, &mut gb, true).unwrap();
    let objective = |c: &Conv3d<f64>, x: &Tensor<f64>| dot(&c.forward(x).0.data, &g.data);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let n = numeric(&x, |t| &mut t.data[i], |t| objective(&conv, t));
        worst = worst.max(rel_err(dx.data[i], n));
    }
    for i in 0..conv.weight.len() {
        let n = numeric(&conv, |c| &mut c.weight[i], |c| objective(c, &x));
        worst = worst.max(rel_err(gw[i], n));
    }
    for i in 0..conv.bias.len() {
        let n = numeric(&conv, |c| &mut c.bias[i], |c| objective(c, &x));
        worst = worst.max(rel_err(gb[i], n));
    }
    worst
}

pub fn maxpool(window: [usize; 3], seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = MaxPool3d { window };
    let x = random_tensor(&mut rng, &[2, 4, 5, 5]);
    let (y, cache) = pool.forward(&x);
    let g = random_tensor(&mut rng, &y.shape);
    let dx = pool.backward(&cache, &g);
    (0..x.len())
        .map(|i| rel_err(dx.data[i], numeric(&x, |t| &mut t.data[i], |t| dot(&pool.forward(t).0.data, &g.data))))
        .fold(0.0, f64::max)
}

pub fn relu(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, &[3, 2, 3, 3]);
    let g = random_tensor(&mut rng, &x.shape);
    let forward = |x: &Tensor<f64>| {
        let mut y = x.clone();
        relu_forward(&mut y);
        y
    };
    let mut dx = g.clone();
    relu_backward(&forward(&x), &mut dx);
    (0..x.len())
        .map(|i| rel_err(dx.data[i], numeric(&x, |t| &mut t.data[i], |t| dot(&forward(t).data, &g.data))))
        .fold(0.0, f64::max)
}

pub fn average_pool(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, &[3, 2, 3, 3]);
    let g: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dx = global_avg_pool_backward(&x.shape, &g);
    (0..x.len())
        .map(|i| rel_err(dx.data[i], numeric(&x, |t| &mut t.data[i], |t| dot(&global_avg_pool(t), &g))))
        .fold(0.0, f64::max)
}

pub fn linear(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lin = Linear::<f64>::zeros(5, 4);
    lin.weight.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    lin.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
    let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut gw = vec![0.0; 20];
    let mut gb = vec![0.0; 4];
    let dx = lin.backward(&x, &g, &mut gw, &mut gb, true).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        worst = worst.max(rel_err(dx[i], numeric(&x, |v| &mut v[i], |v| dot(&lin.forward(v), &g))));
    }
    for i in 0..20 {
        worst = worst.max(rel_err(gw[i], numeric(&lin, |l| &mut l.weight[i], |l| dot(&l.forward(&x), &g))));
    }
    for i in 0..4 {
        worst = worst.max(rel_err(gb[i], numeric(&lin, |l| &mut l.bias[i], |l| dot(&l.forward(&x), &g))));
    }
    worst
}

/// Two-class model on `2 x 4 x 8 x 8` inputs.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        in_channels: 2,
        num_classes: 2,
        input: [4, 8, 8],
        stages: vec![ConvStage::new(3, [1, 1, 1], [1, 2, 2]), ConvStage::new(4, [1, 1, 1], [2, 2, 2])],
        freeze_prefix: 0,
    }
}

fn nudge(net: &Net<f64>, layer: usize, bias: bool, idx: usize, delta: f64) -> Net<f64> {
    let mut n = net.clone();
    let mut layers = n.param_layers_mut();
    let (w, b) = &mut layers[layer];
    if bias {
        b[idx] += delta;
    } else {
        w[idx] += delta;
    }
    n
}

/// Weighted loss of the tiny model against random parameter probes.
pub fn full_model(probes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Net::<f64>::new(tiny_config(), seed).unwrap();
    let weights = ClassWeights { w: vec![1.3, 0.7] };
    let x = random_tensor(&mut rng, &[2, 4, 8, 8]);
    let label = 1;
    let loss = |n: &Net<f64>| weighted_cross_entropy(&n.forward(&x).unwrap(), label, &weights);
    let trace = net.forward_trace(&x).unwrap();
    let (_, gl) = weighted_cross_entropy_grad(&trace.logits, label, &weights);
    let mut grads = Gradients::<f64>::zeros_like(&net);
    net.backward(&trace, &gl, &mut grads);
    let sizes: Vec<(usize, usize)> = net.param_layers().iter().map(|(w, b)| (w.len(), b.len())).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let layer = rng.gen_range(0..sizes.len());
        let bias = rng.gen_bool(0.2);
        let idx = rng.gen_range(0..if bias { sizes[layer].1 } else { sizes[layer].0 });
        let n = (loss(&nudge(&net, layer, bias, idx, H)) - loss(&nudge(&net, layer, bias, idx, -H))) / (2.0 * H);
        let (gw, gb) = &grads.layers[layer];
        worst = worst.max(rel_err(if bias { gb[idx] } else { gw[idx] }, n));
    }
    worst
}

/// Logit gradient of the weighted loss against central differences.
pub fn loss_logits(logits: &[f64], label: usize, weights: &ClassWeights) -> f64 {
    let (_, g) = weighted_cross_entropy_grad(logits, label, weights);
    let x = logits.to_vec();
    (0..logits.len())
        .map(|i| {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let n = (weighted_cross_entropy(&p, label, weights) - weighted_cross_entropy(&m, label, weights)) / 2e-6;
            rel_err(g[i], n)
        })
        .fold(0.0, f64::max)
}
