use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward, relu_forward, Conv3d, ConvCache,
    Linear, MaxPool3d, PoolCache,
};
use super::tensor::{Real, Tensor};
use super::Net3dError;

/// One `conv -> ReLU -> max-pool` block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    /// Pool window over `(T, H, W)`; `[1, 1, 1]` disables pooling.
    pub pool: [usize; 3],
}

impl ConvStage {
    pub fn new(out_channels: usize, stride: [usize; 3], pool: [usize; 3]) -> Self {
        ConvStage {
            out_channels,
            kernel: [3, 3, 3],
            stride,
            pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Input extent `(T, H, W)`.
    pub input: [usize; 3],
    /// Stem first, then the stages. Each contributes one parameterized layer;
    /// the linear head is the last one.
    pub stages: Vec<ConvStage>,
    /// Number of leading parameterized layers excluded from training.
    pub freeze_prefix: usize,
}

impl Default for ModelConfig {
    /// Stem (11 -> 32) and three stages (32, 64, 128 channels) feeding a
    /// global average pool and a 13-way linear head.
    fn default() -> Self {
        ModelConfig {
            in_channels: 11,
            num_classes: 13,
            input: [16, 56, 56],
            stages: vec![
                ConvStage::new(32, [1, 2, 2], [1, 2, 2]),
                ConvStage::new(32, [1, 1, 1], [1, 2, 2]),
                ConvStage::new(64, [1, 1, 1], [2, 2, 2]),
                ConvStage::new(128, [1, 1, 1], [2, 2, 2]),
            ],
            freeze_prefix: 0,
        }
    }
}

impl ModelConfig {
    pub fn param_layer_count(&self) -> usize {
        self.stages.len() + 1
    }

    pub fn validate(&self) -> Result<(), Net3dError> {
        let bad = |m: &str| Err(Net3dError::InvalidConfig(m.to_string()));
        if self.in_channels == 0 || self.num_classes < 2 {
            return bad("need at least one input channel and two classes");
        }
        if self.stages.is_empty() {
            return bad("at least one convolution stage required");
        }
        if self.input.contains(&0) {
            return bad("input extent must be positive");
        }
        for s in &self.stages {
            if s.out_channels == 0
                || s.kernel.iter().chain(&s.stride).chain(&s.pool).any(|&v| v == 0)
            {
                return bad("stage sizes must be positive");
            }
        }
        if self.freeze_prefix > self.param_layer_count() {
            return bad("freeze prefix exceeds the number of parameterized layers");
        }
        Ok(())
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut names = vec!["stem".to_string()];
        names.extend((1..self.stages.len()).map(|i| format!("stage{i}")));
        names.push("head".to_string());
        names
    }
}

/// The classifier: convolution stages, global average pooling, linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct Net<F> {
    pub config: ModelConfig,
    pub convs: Vec<Conv3d<F>>,
    pub pools: Vec<MaxPool3d>,
    pub head: Linear<F>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub struct ForwardTrace<F> {
    stages: Vec<StageTrace<F>>,
    last_shape: Vec<usize>,
    pooled: Vec<F>,
    pub logits: Vec<F>,
}

struct StageTrace<F> {
    conv: ConvCache<F>,
    activation: Tensor<F>,
    pool: Option<PoolCache>,
}

/// Gradient buffers laid out like the parameters: one `(weight, bias)` pair
/// per parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<G> {
    pub layers: Vec<(Vec<G>, Vec<G>)>,
}

impl<G: Clone + Default> Gradients<G> {
    pub fn zeros_like<F: Real>(net: &Net<F>) -> Self {
        Gradients {
            layers: net
                .param_layers()
                .into_iter()
                .map(|(w, b)| (vec![G::default(); w.len()], vec![G::default(); b.len()]))
                .collect(),
        }
    }
}

impl<G> Gradients<G> {
    pub fn iter(&self) -> impl Iterator<Item = &G> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()))
    }
}

impl<F: Real> Net<F> {
    /// He-uniform initialisation: weights `U(-sqrt(6 / fan_in), +)`, zero bias.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, Net3dError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(config)?;
        for conv in &mut net.convs {
            let bound = (6.0 / conv.fan_in() as f64).sqrt();
            for w in &mut conv.weight {
                *w = F::from_f64(rng.gen_range(-bound..bound));
            }
        }
        let bound = (6.0 / net.head.in_features as f64).sqrt();
        for w in &mut net.head.weight {
            *w = F::from_f64(rng.gen_range(-bound..bound));
        }
        Ok(net)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self, Net3dError> {
        config.validate()?;
        let mut convs = Vec::with_capacity(config.stages.len());
        let mut pools = Vec::with_capacity(config.stages.len());
        let mut channels = config.in_channels;
        for s in &config.stages {
            convs.push(Conv3d::zeros(channels, s.out_channels, s.kernel, s.stride));
            pools.push(MaxPool3d { window: s.pool });
            channels = s.out_channels;
        }
        let head = Linear::zeros(channels, config.num_classes);
        Ok(Net {
            config,
            convs,
            pools,
            head,
        })
    }

    pub fn input_shape(&self) -> Vec<usize> {
        let [t, h, w] = self.config.input;
        vec![self.config.in_channels, t, h, w]
    }

    pub fn param_layers(&self) -> Vec<(&[F], &[F])> {
        let mut out: Vec<(&[F], &[F])> = self
            .convs
            .iter()
            .map(|c| (c.weight.as_slice(), c.bias.as_slice()))
            .collect();
        out.push((&self.head.weight, &self.head.bias));
        out
    }

    pub fn param_layers_mut(&mut self) -> Vec<(&mut Vec<F>, &mut Vec<F>)> {
        let mut out: Vec<(&mut Vec<F>, &mut Vec<F>)> = self
            .convs
            .iter_mut()
            .map(|c| (&mut c.weight, &mut c.bias))
            .collect();
        out.push((&mut self.head.weight, &mut self.head.bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_layers().iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    pub fn is_frozen(&self, layer: usize) -> bool {
        layer < self.config.freeze_prefix
    }

    fn check_input(&self, x: &Tensor<F>) -> Result<(), Net3dError> {
        let expected = self.input_shape();
        if x.shape != expected {
            return Err(Net3dError::ShapeMismatch {
                expected,
                found: x.shape.clone(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping everything the backward pass needs.
    pub fn forward_trace(&self, x: &Tensor<F>) -> Result<ForwardTrace<F>, Net3dError> {
        self.check_input(x)?;
        let mut stages = Vec::with_capacity(self.convs.len());
        let mut current: Option<Tensor<F>> = None;
        for (conv, pool) in self.convs.iter().zip(&self.pools) {
            let input = current.as_ref().unwrap_or(x);
            let (mut act, conv_cache) = conv.forward(input);
            relu_forward(&mut act);
            let (next, pool_cache) = if pool.is_identity() {
                (act.clone(), None)
            } else {
                let (y, c) = pool.forward(&act);
                (y, Some(c))
            };
            stages.push(StageTrace {
                conv: conv_cache,
                activation: act,
                pool: pool_cache,
            });
            current = Some(next);
        }
        let last = current.expect("at least one stage");
        let pooled = global_avg_pool(&last);
        let logits = self.head.forward(&pooled);
        Ok(ForwardTrace {
            stages,
            last_shape: last.shape,
            pooled,
            logits,
        })
    }

    /// Forward pass without caches.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Vec<F>, Net3dError> {
        self.check_input(x)?;
        let mut current: Option<Tensor<F>> = None;
        for (conv, pool) in self.convs.iter().zip(&self.pools) {
            let input = current.as_ref().unwrap_or(x);
            let (mut act, _) = conv.forward(input);
            relu_forward(&mut act);
            current = Some(if pool.is_identity() {
                act
            } else {
                pool.forward(&act).0
            });
        }
        let pooled = global_avg_pool(current.as_ref().expect("at least one stage"));
        Ok(self.head.forward(&pooled))
    }

    /// Backpropagates `grad_logits` and adds parameter gradients into
    /// `grads`. Frozen layers receive nothing, and propagation stops below the
    /// last trainable layer.
    pub fn backward(&self, trace: &ForwardTrace<F>, grad_logits: &[F], grads: &mut Gradients<F>) {
        let n_layers = self.config.param_layer_count();
        let head_idx = n_layers - 1;
        let freeze = self.config.freeze_prefix;
        if freeze >= n_layers {
            return;
        }
        let (gw, gb) = &mut grads.layers[head_idx];
        let Some(d_pooled) =
            self.head
                .backward(&trace.pooled, grad_logits, gw, gb, head_idx > freeze)
        else {
            return;
        };
        let mut grad = global_avg_pool_backward(&trace.last_shape, &d_pooled);
        for i in (freeze..self.convs.len()).rev() {
            let st = &trace.stages[i];
            if let Some(pc) = &st.pool {
                grad = self.pools[i].backward(pc, &grad);
            }
            relu_backward(&st.activation, &mut grad);
            let (gw, gb) = &mut grads.layers[i];
            match self.convs[i].backward(&st.conv, &grad, gw, gb, i > freeze) {
                Some(g) => grad = g,
                None => break,
            }
        }
    }
}
