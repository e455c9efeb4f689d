//! Layer kernels with explicit forward caches and backward passes.
//!
//! Activations are `[C, T, H, W]` tensors for a single sample. Convolutions
//! run as im2col followed by one GEMM.

use super::tensor::{gemm, Real, Strides, Tensor};

fn out_len_conv(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad).saturating_sub(kernel) / stride + 1
}

/// 3D convolution with zero padding of `kernel / 2` on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<F> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    /// `out_channels x (in_channels * kt * kh * kw)`, row-major.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

#[derive(Debug, Clone)]
pub struct ConvCache<F> {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    input: Vec<F>,
}

/// Upper bound on the im2col buffer, in elements; the convolution is
/// evaluated over runs of output frames that fit in it.
const COL_TILE_ELEMS: usize = 1 << 18;

/// Output columns `lo..hi` whose input column `wo * stride + offset - pad`
/// falls inside `0..in_len`.
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
    let lo = if offset >= pad { 0 } else { (pad - offset).div_ceil(stride) };
    let hi = if in_len + pad > offset {
        ((in_len + pad - offset - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

impl<F: Real> Conv3d<F> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: [usize; 3], stride: [usize; 3]) -> Self {
        let fan_in = in_channels * kernel.iter().product::<usize>();
        Conv3d {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight: vec![F::ZERO; out_channels * fan_in],
            bias: vec![F::ZERO; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn pad(&self) -> [usize; 3] {
        [self.kernel[0] / 2, self.kernel[1] / 2, self.kernel[2] / 2]
    }

    pub fn output_dims(&self, in_dims: [usize; 3]) -> [usize; 3] {
        let pad = self.pad();
        std::array::from_fn(|a| out_len_conv(in_dims[a], self.kernel[a], self.stride[a], pad[a]))
    }

    fn tile_frames(&self, out_dims: [usize; 3]) -> usize {
        let per_frame = self.fan_in() * out_dims[1] * out_dims[2];
        (COL_TILE_ELEMS / per_frame.max(1)).clamp(1, out_dims[0].max(1))
    }

    /// Fills `col` with the im2col rows for output frames `t0..t1`.
    fn im2col(&self, x: &[F], in_dims: [usize; 3], out_dims: [usize; 3], t0: usize, t1: usize, col: &mut [F]) {
        let [it, ih, iw] = in_dims;
        let [_, oh, ow] = out_dims;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.pad();
        let positions = (t1 - t0) * oh * ow;
        col[..self.fan_in() * positions].fill(F::ZERO);
        let mut row = 0;
        for c in 0..self.in_channels {
            let xc = &x[c * it * ih * iw..(c + 1) * it * ih * iw];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let dst = &mut col[row * positions..(row + 1) * positions];
                        row += 1;
                        let (lo, hi) = valid_range(ow, iw, sw, dw, pw);
                        for to in t0..t1 {
                            let t = (to * st + dt) as isize - pt as isize;
                            if t < 0 || t >= it as isize {
                                continue;
                            }
                            for ho in 0..oh {
                                let h = (ho * sh + dh) as isize - ph as isize;
                                if h < 0 || h >= ih as isize {
                                    continue;
                                }
                                let src = &xc[(t as usize * ih + h as usize) * iw..][..iw];
                                let out = &mut dst[((to - t0) * oh + ho) * ow..][..ow];
                                if sw == 1 {
                                    let start = lo + dw - pw;
                                    out[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                                } else {
                                    for (wo, o) in out[lo..hi].iter_mut().enumerate() {
                                        *o = src[(wo + lo) * sw + dw - pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatters the im2col gradient of output frames `t0..t1` into `x`.
    fn col2im(&self, col: &[F], in_dims: [usize; 3], out_dims: [usize; 3], t0: usize, t1: usize, x: &mut [F]) {
        let [it, ih, iw] = in_dims;
        let [_, oh, ow] = out_dims;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.pad();
        let positions = (t1 - t0) * oh * ow;
        let mut row = 0;
        for c in 0..self.in_channels {
            let xc = &mut x[c * it * ih * iw..(c + 1) * it * ih * iw];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let src = &col[row * positions..(row + 1) * positions];
                        row += 1;
                        let (lo, hi) = valid_range(ow, iw, sw, dw, pw);
                        for to in t0..t1 {
                            let t = (to * st + dt) as isize - pt as isize;
                            if t < 0 || t >= it as isize {
                                continue;
                            }
                            for ho in 0..oh {
                                let h = (ho * sh + dh) as isize - ph as isize;
                                if h < 0 || h >= ih as isize {
                                    continue;
                                }
                                let dst = &mut xc[(t as usize * ih + h as usize) * iw..][..iw];
                                let g = &src[((to - t0) * oh + ho) * ow..][..ow];
                                for (wo, &gv) in g[lo..hi].iter().enumerate() {
                                    dst[(wo + lo) * sw + dw - pw] += gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> (Tensor<F>, ConvCache<F>) {
        assert_eq!(x.shape.len(), 4);
        assert_eq!(x.shape[0], self.in_channels);
        let in_dims = [x.shape[1], x.shape[2], x.shape[3]];
        let out_dims = self.output_dims(in_dims);
        let plane = out_dims[1] * out_dims[2];
        let positions = out_dims[0] * plane;
        let k = self.fan_in();
        let mut out = vec![F::ZERO; self.out_channels * positions];
        for (o, row) in out.chunks_exact_mut(positions).enumerate() {
            row.fill(self.bias[o]);
        }
        let tile = self.tile_frames(out_dims);
        let mut col = vec![F::ZERO; k * tile * plane];
        for t0 in (0..out_dims[0]).step_by(tile) {
            let t1 = (t0 + tile).min(out_dims[0]);
            let n = (t1 - t0) * plane;
            self.im2col(&x.data, in_dims, out_dims, t0, t1, &mut col);
            gemm(
                self.out_channels,
                k,
                n,
                &self.weight,
                Strides(k, 1),
                &col,
                Strides(n, 1),
                F::ONE,
                &mut out[t0 * plane..],
                Strides(positions, 1),
            );
        }
        let shape = vec![self.out_channels, out_dims[0], out_dims[1], out_dims[2]];
        (
            Tensor::new(shape, out),
            ConvCache {
                in_dims,
                out_dims,
                input: x.data.clone(),
            },
        )
    }

    /// Accumulates parameter gradients into `grad_w`/`grad_b` and returns
    /// the input gradient when requested.
    pub fn backward(
        &self,
        cache: &ConvCache<F>,
        grad_out: &Tensor<F>,
        grad_w: &mut [F],
        grad_b: &mut [F],
        need_input_grad: bool,
    ) -> Option<Tensor<F>> {
        let out_dims = cache.out_dims;
        let plane = out_dims[1] * out_dims[2];
        let positions = out_dims[0] * plane;
        let k = self.fan_in();
        assert_eq!(grad_out.len(), self.out_channels * positions);
        for (o, g) in grad_out.data.chunks_exact(positions).enumerate() {
            grad_b[o] += g.iter().copied().sum::<F>();
        }
        let tile = self.tile_frames(out_dims);
        let mut col = vec![F::ZERO; k * tile * plane];
        let mut dcol = if need_input_grad { vec![F::ZERO; k * tile * plane] } else { Vec::new() };
        let [t, h, w] = cache.in_dims;
        let mut dx = if need_input_grad { vec![F::ZERO; self.in_channels * t * h * w] } else { Vec::new() };
        for t0 in (0..out_dims[0]).step_by(tile) {
            let t1 = (t0 + tile).min(out_dims[0]);
            let n = (t1 - t0) * plane;
            let dy = &grad_out.data[t0 * plane..];
            self.im2col(&cache.input, cache.in_dims, out_dims, t0, t1, &mut col);
            // dW += dY * col^T
            gemm(
                self.out_channels,
                n,
                k,
                dy,
                Strides(positions, 1),
                &col,
                Strides(1, n),
                F::ONE,
                grad_w,
                Strides(k, 1),
            );
            if need_input_grad {
                // dcol = W^T * dY
                gemm(
                    k,
                    self.out_channels,
                    n,
                    &self.weight,
                    Strides(1, k),
                    dy,
                    Strides(positions, 1),
                    F::ZERO,
                    &mut dcol,
                    Strides(n, 1),
                );
                self.col2im(&dcol, cache.in_dims, out_dims, t0, t1, &mut dx);
            }
        }
        need_input_grad.then(|| Tensor::new(vec![self.in_channels, t, h, w], dx))
    }
}

/// Elementwise `max(0, x)`.
pub fn relu_forward<F: Real>(x: &mut Tensor<F>) {
    for v in &mut x.data {
        if *v < F::ZERO {
            *v = F::ZERO;
        }
    }
}

/// Masks `grad` by the positive entries of the activation output.
pub fn relu_backward<F: Real>(output: &Tensor<F>, grad: &mut Tensor<F>) {
    for (g, &y) in grad.data.iter_mut().zip(&output.data) {
        if y <= F::ZERO {
            *g = F::ZERO;
        }
    }
}

/// Non-overlapping max pooling. Partial windows at the far edges are kept,
/// so every output axis is `ceil(input / window)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxPool3d {
    pub window: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    in_shape: Vec<usize>,
    argmax: Vec<u32>,
}

impl MaxPool3d {
    pub fn output_dims(&self, in_dims: [usize; 3]) -> [usize; 3] {
        std::array::from_fn(|a| in_dims[a].div_ceil(self.window[a]))
    }

    pub fn is_identity(&self) -> bool {
        self.window == [1, 1, 1]
    }

    pub fn forward<F: Real>(&self, x: &Tensor<F>) -> (Tensor<F>, PoolCache) {
        let c = x.shape[0];
        let in_dims = [x.shape[1], x.shape[2], x.shape[3]];
        let [it, ih, iw] = in_dims;
        let [ot, oh, ow] = self.output_dims(in_dims);
        let [wt, wh, ww] = self.window;
        let mut out = Vec::with_capacity(c * ot * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for ch in 0..c {
            let base = ch * it * ih * iw;
            for to in 0..ot {
                for ho in 0..oh {
                    for wo in 0..ow {
                        let mut best = usize::MAX;
                        let mut best_v = F::ZERO;
                        for t in to * wt..((to + 1) * wt).min(it) {
                            for h in ho * wh..((ho + 1) * wh).min(ih) {
                                for w in wo * ww..((wo + 1) * ww).min(iw) {
                                    let idx = base + (t * ih + h) * iw + w;
                                    let v = x.data[idx];
                                    if best == usize::MAX || v > best_v {
                                        best = idx;
                                        best_v = v;
                                    }
                                }
                            }
                        }
                        out.push(best_v);
                        argmax.push(best as u32);
                    }
                }
            }
        }
        (
            Tensor::new(vec![c, ot, oh, ow], out),
            PoolCache {
                in_shape: x.shape.clone(),
                argmax,
            },
        )
    }

    pub fn backward<F: Real>(&self, cache: &PoolCache, grad_out: &Tensor<F>) -> Tensor<F> {
        let mut dx = Tensor::zeros(cache.in_shape.clone());
        for (&idx, &g) in cache.argmax.iter().zip(&grad_out.data) {
            dx.data[idx as usize] += g;
        }
        dx
    }
}

/// Mean over every position of each channel: `[C, T, H, W] -> [C]`.
pub fn global_avg_pool<F: Real>(x: &Tensor<F>) -> Vec<F> {
    let c = x.shape[0];
    let n = x.len() / c;
    let inv = F::from_f64(1.0 / n as f64);
    x.data
        .chunks_exact(n)
        .map(|ch| ch.iter().copied().sum::<F>() * inv)
        .collect()
}

pub fn global_avg_pool_backward<F: Real>(shape: &[usize], grad: &[F]) -> Tensor<F> {
    let c = shape[0];
    let n: usize = shape[1..].iter().product();
    let inv = F::from_f64(1.0 / n as f64);
    let mut data = Vec::with_capacity(c * n);
    for &g in grad.iter().take(c) {
        data.extend(std::iter::repeat_n(g * inv, n));
    }
    Tensor::new(shape.to_vec(), data)
}

/// Fully connected layer, `weight` is `out x in` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> Linear<F> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weight: vec![F::ZERO; in_features * out_features],
            bias: vec![F::ZERO; out_features],
        }
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.in_features);
        self.weight
            .chunks_exact(self.in_features)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).map(|(&w, &v)| w * v).sum::<F>() + b)
            .collect()
    }

    pub fn backward(
        &self,
        x: &[F],
        grad_out: &[F],
        grad_w: &mut [F],
        grad_b: &mut [F],
        need_input_grad: bool,
    ) -> Option<Vec<F>> {
        for (o, &g) in grad_out.iter().enumerate() {
            grad_b[o] += g;
            let row = &mut grad_w[o * self.in_features..(o + 1) * self.in_features];
            for (gw, &v) in row.iter_mut().zip(x) {
                *gw += g * v;
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dx = vec![F::ZERO; self.in_features];
        for (row, &g) in self.weight.chunks_exact(self.in_features).zip(grad_out) {
            for (d, &w) in dx.iter_mut().zip(row) {
                *d += w * g;
            }
        }
        Some(dx)
    }
}
