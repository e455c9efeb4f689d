use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{weighted_cross_entropy_grad, ClassWeights};
use super::model::{Gradients, ModelConfig, Net};
use super::tensor::{Real, Tensor};
use super::Net3dError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 140,
            batch_size: 16,
            learning_rate: 0.0025,
            momentum: 0.9,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Net3dError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Net3dError::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Net3dError::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Net3dError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// A labelled training example.
#[derive(Debug, Clone)]
pub struct Sample<F> {
    pub input: Tensor<F>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample weighted loss over the epoch.
    pub loss: f64,
}

fn sample_gradient<F: Real>(
    net: &Net<F>,
    sample: &Sample<F>,
    weights: &ClassWeights,
) -> Result<(f64, Gradients<F>), Net3dError> {
    if sample.label >= net.config.num_classes {
        return Err(Net3dError::LabelOutOfRange(sample.label));
    }
    let trace = net.forward_trace(&sample.input)?;
    let logits: Vec<f64> = trace.logits.iter().map(|v| v.to_f64()).collect();
    let (loss, grad) = weighted_cross_entropy_grad(&logits, sample.label, weights);
    let grad: Vec<F> = grad.into_iter().map(F::from_f64).collect();
    let mut grads = Gradients::<F>::zeros_like(net);
    net.backward(&trace, &grad, &mut grads);
    Ok((loss, grads))
}

/// Mean loss and gradient of a batch. Per-sample gradients may be computed
/// in parallel; they are summed in `f64` in batch order, so the result does
/// not depend on the thread count.
pub fn batch_gradients<F: Real>(
    net: &Net<F>,
    batch: &[&Sample<F>],
    weights: &ClassWeights,
) -> Result<(f64, Gradients<f64>), Net3dError> {
    let per_sample: Vec<_> = batch
        .par_iter()
        .map(|s| sample_gradient(net, s, weights))
        .collect::<Result<_, _>>()?;
    let mut total = Gradients::<f64>::zeros_like(net);
    let mut loss_sum = 0.0;
    for (loss, grads) in &per_sample {
        loss_sum += loss;
        for ((tw, tb), (sw, sb)) in total.layers.iter_mut().zip(&grads.layers) {
            for (t, s) in tw.iter_mut().zip(sw) {
                *t += s.to_f64();
            }
            for (t, s) in tb.iter_mut().zip(sb) {
                *t += s.to_f64();
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for (w, b) in &mut total.layers {
        w.iter_mut().chain(b.iter_mut()).for_each(|g| *g *= inv);
    }
    Ok((loss_sum * inv, total))
}

/// SGD with momentum: `v <- mu v - lr g`, `p <- p + v`, skipping frozen layers.
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Gradients<f64>,
}

impl Sgd {
    pub fn new<F: Real>(net: &Net<F>, lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Gradients::zeros_like(net),
        }
    }

    pub fn step<F: Real>(&mut self, net: &mut Net<F>, grads: &Gradients<f64>) {
        let freeze = net.config.freeze_prefix;
        for (i, ((pw, pb), ((vw, vb), (gw, gb)))) in net
            .param_layers_mut()
            .into_iter()
            .zip(self.velocity.layers.iter_mut().zip(&grads.layers))
            .enumerate()
        {
            if i < freeze {
                continue;
            }
            let params = pw.iter_mut().chain(pb.iter_mut());
            let vel = vw.iter_mut().chain(vb.iter_mut());
            let grad = gw.iter().chain(gb.iter());
            for ((p, v), g) in params.zip(vel).zip(grad) {
                *v = self.momentum * *v - self.lr * g;
                *p = F::from_f64(p.to_f64() + *v);
            }
        }
    }
}

/// Trains from a fresh seeded initialisation.
pub fn train<F: Real>(
    dataset: &[Sample<F>],
    model_config: ModelConfig,
    config: &TrainConfig,
    weights: &ClassWeights,
) -> Result<(Net<F>, Vec<EpochLog>), Net3dError> {
    let net = Net::new(model_config, config.seed)?;
    fine_tune(net, dataset, config, weights)
}

/// Continues training an existing model (for example an imported
/// checkpoint) with its configured freeze prefix.
pub fn fine_tune<F: Real>(
    mut net: Net<F>,
    dataset: &[Sample<F>],
    config: &TrainConfig,
    weights: &ClassWeights,
) -> Result<(Net<F>, Vec<EpochLog>), Net3dError> {
    config.validate()?;
    weights.validate(net.config.num_classes)?;
    if dataset.is_empty() {
        return Err(Net3dError::EmptyDataset);
    }
    if let Some(s) = dataset.iter().find(|s| s.label >= net.config.num_classes) {
        return Err(Net3dError::LabelOutOfRange(s.label));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5348_5546_464c_4521);
    let mut opt = Sgd::new(&net, config.learning_rate, config.momentum);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample<F>> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, grads) = batch_gradients(&net, &batch, weights)?;
            if !loss.is_finite() {
                return Err(Net3dError::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            opt.step(&mut net, &grads);
        }
        log.push(EpochLog {
            epoch,
            loss: epoch_loss / dataset.len() as f64,
        });
    }
    Ok((net, log))
}
