//! Pseudo-heatmap volumes.
//!
//! A pose sub-sequence becomes a `K x T x H x W` tensor: `T` frames are
//! sampled uniformly, all joints are mapped into a single crop box shared by
//! the whole segment, and each joint is rendered as a confidence-weighted
//! Gaussian.

use thiserror::Error;

use crate::ingest::{UpperBodyPose, UPPER_BODY_JOINTS};

#[derive(Debug, Error, PartialEq)]
pub enum HeatmapError {
    #[error("segment has no visible joint")]
    AllJointsMissing,
    #[error("segment is empty")]
    EmptySegment,
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Gaussian standard deviation in output pixels.
    pub sigma: f64,
    /// Relative margin added on each side of the crop box.
    pub padding: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            frames: 16,
            height: 56,
            width: 56,
            sigma: 0.6,
            padding: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), HeatmapError> {
        if self.frames < 1 {
            return Err(HeatmapError::InvalidConfig("at least one sampled frame required"));
        }
        if self.height < 8 || self.width < 8 {
            return Err(HeatmapError::InvalidConfig("height and width must be at least 8"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(HeatmapError::InvalidConfig("sigma must be positive"));
        }
        if !(0.0..=1.0).contains(&self.padding) {
            return Err(HeatmapError::InvalidConfig("padding must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `floor((i + 0.5) * n / t)` for `i in 0..t`, in exact integer arithmetic.
pub fn uniform_sample_frames(n: usize, t: usize) -> Vec<usize> {
    assert!(n >= 1 && t >= 1, "sampling needs n >= 1 and t >= 1");
    let (n, t) = (n as u128, t as u128);
    (0..t)
        .map(|i| ((2 * i + 1) * n / (2 * t)) as usize)
        .collect()
}

/// Affine map from pixel coordinates into the heatmap grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    origin_x: f64,
    origin_y: f64,
    half_w: f64,
    half_h: f64,
    scale: f64,
    out_cx: f64,
    out_cy: f64,
}

impl CropTransform {
    /// Builds the crop from the union box of every visible joint in the
    /// segment, padded on each side, fitted into `[0, W-1] x [0, H-1]` with
    /// the aspect ratio kept and the shorter side centred.
    pub fn fit(segment: &[UpperBodyPose], config: &SamplerConfig) -> Result<Self, HeatmapError> {
        let mut visible = segment
            .iter()
            .flat_map(|p| p.keypoints.iter())
            .filter(|k| k.is_visible());
        let first = visible.next().ok_or(HeatmapError::AllJointsMissing)?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for k in visible {
            x0 = x0.min(k.x);
            y0 = y0.min(k.y);
            x1 = x1.max(k.x);
            y1 = y1.max(k.y);
        }
        // Work relative to the box corner so that translating every joint by
        // the same offset yields identical arithmetic downstream.
        let w = x1 - x0;
        let h = y1 - y0;
        let box_w = w * (1.0 + 2.0 * config.padding);
        let box_h = h * (1.0 + 2.0 * config.padding);
        let out_w = (config.width - 1) as f64;
        let out_h = (config.height - 1) as f64;
        let sx = if box_w > 0.0 { out_w / box_w } else { f64::INFINITY };
        let sy = if box_h > 0.0 { out_h / box_h } else { f64::INFINITY };
        let scale = match sx.min(sy) {
            s if s.is_finite() => s,
            _ => 0.0,
        };
        Ok(CropTransform {
            origin_x: x0,
            origin_y: y0,
            half_w: w / 2.0,
            half_h: h / 2.0,
            scale,
            out_cx: out_w / 2.0,
            out_cy: out_h / 2.0,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let rx = (x - self.origin_x) - self.half_w;
        let ry = (y - self.origin_y) - self.half_h;
        (rx * self.scale + self.out_cx, ry * self.scale + self.out_cy)
    }
}

/// Joint coordinates of each pose mapped into heatmap pixels; confidences are
/// carried along unchanged.
pub fn normalize_coords(
    segment: &[UpperBodyPose],
    config: &SamplerConfig,
) -> Result<Vec<[(f64, f64, f64); UPPER_BODY_JOINTS]>, HeatmapError> {
    let crop = CropTransform::fit(segment, config)?;
    Ok(segment
        .iter()
        .map(|p| {
            std::array::from_fn(|j| {
                let k = p.keypoints[j];
                if k.is_visible() {
                    let (x, y) = crop.apply(k.x, k.y);
                    (x, y, k.c)
                } else {
                    (0.0, 0.0, 0.0)
                }
            })
        })
        .collect())
}

fn gaussian_profile(center: f64, len: usize, sigma: f64) -> Vec<f64> {
    let denom = 2.0 * sigma * sigma;
    (0..len)
        .map(|p| {
            let d = p as f64 - center;
            (-(d * d) / denom).exp()
        })
        .collect()
}

/// Renders `c * exp(-((j - x)^2 + (i - y)^2) / (2 sigma^2))` into `out`
/// (row-major `H x W`).
fn render_joint(x: f64, y: f64, c: f64, config: &SamplerConfig, out: &mut [f32]) {
    if c <= 0.0 {
        out.fill(0.0);
        return;
    }
    let gx = gaussian_profile(x, config.width, config.sigma);
    let gy = gaussian_profile(y, config.height, config.sigma);
    for (row, &vy) in out.chunks_exact_mut(config.width).zip(&gy) {
        let cy = c * vy;
        for (v, &vx) in row.iter_mut().zip(&gx) {
            *v = (cy * vx) as f32;
        }
    }
}

/// A single joint heatmap, row-major `H x W`.
pub fn joint_heatmap(x: f64, y: f64, c: f64, config: &SamplerConfig) -> Vec<f32> {
    let mut out = vec![0.0; config.height * config.width];
    render_joint(x, y, c, config, &mut out);
    out
}

/// Dense `K x T x H x W` volume of heatmap values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapVolume {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl HeatmapVolume {
    pub fn zeros(channels: usize, frames: usize, height: usize, width: usize) -> Self {
        HeatmapVolume {
            channels,
            frames,
            height,
            width,
            data: vec![0.0; channels * frames * height * width],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.channels, self.frames, self.height, self.width]
    }

    pub fn slice(&self, channel: usize, frame: usize) -> &[f32] {
        let hw = self.height * self.width;
        let start = (channel * self.frames + frame) * hw;
        &self.data[start..start + hw]
    }

    fn slice_mut(&mut self, channel: usize, frame: usize) -> &mut [f32] {
        let hw = self.height * self.width;
        let start = (channel * self.frames + frame) * hw;
        &mut self.data[start..start + hw]
    }
}

/// Samples, normalizes and renders a pose segment into a heatmap volume.
pub fn build_volume(
    segment: &[UpperBodyPose],
    config: &SamplerConfig,
) -> Result<HeatmapVolume, HeatmapError> {
    config.validate()?;
    if segment.is_empty() {
        return Err(HeatmapError::EmptySegment);
    }
    let crop = CropTransform::fit(segment, config)?;
    let picks = uniform_sample_frames(segment.len(), config.frames);
    let mut volume = HeatmapVolume::zeros(
        UPPER_BODY_JOINTS,
        config.frames,
        config.height,
        config.width,
    );
    for (t, &src) in picks.iter().enumerate() {
        let pose = &segment[src];
        for (k, kp) in pose.keypoints.iter().enumerate() {
            if !kp.is_visible() {
                continue;
            }
            let (x, y) = crop.apply(kp.x, kp.y);
            render_joint(x, y, kp.c, config, volume.slice_mut(k, t));
        }
    }
    Ok(volume)
}

pub mod io {
    //! `EGKV` binary volume dumps: magic, `u16` version, `K, T, H, W` as
    //! `u32`, then `K*T*H*W` `f32` values, all little-endian.

    use std::io::Write;

    use thiserror::Error;

    use super::HeatmapVolume;

    pub const MAGIC: &[u8; 4] = b"EGKV";
    pub const VERSION: u16 = 1;
    const HEADER_LEN: usize = 4 + 2 + 16;

    #[derive(Debug, Error, PartialEq)]
    pub enum VolumeFileError {
        #[error("not a heatmap volume (bad magic)")]
        BadMagic,
        #[error("unsupported volume version {0}")]
        VersionMismatch(u16),
        #[error("volume file is truncated")]
        TruncatedFile,
        #[error("volume file has {0} trailing bytes")]
        TrailingBytes(usize),
        #[error("volume value out of range at offset {0}")]
        ValueOutOfRange(usize),
    }

    pub fn write_volume<W: Write>(volume: &HeatmapVolume, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        for d in volume.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut payload = Vec::with_capacity(volume.data.len() * 4);
        for v in &volume.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&payload)
    }

    pub fn encode_volume(volume: &HeatmapVolume) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + volume.data.len() * 4);
        write_volume(volume, &mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn decode_volume(bytes: &[u8]) -> Result<HeatmapVolume, VolumeFileError> {
        if bytes.len() < 4 {
            return Err(VolumeFileError::TruncatedFile);
        }
        if &bytes[..4] != MAGIC {
            return Err(VolumeFileError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(VolumeFileError::TruncatedFile);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(VolumeFileError::VersionMismatch(version));
        }
        let dim = |i: usize| {
            let o = 6 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as u64
        };
        let count = (0..4)
            .try_fold(1u64, |acc, i| acc.checked_mul(dim(i)))
            .ok_or(VolumeFileError::TruncatedFile)?;
        let payload = &bytes[HEADER_LEN..];
        let needed = count.checked_mul(4).ok_or(VolumeFileError::TruncatedFile)?;
        if (payload.len() as u64) < needed {
            return Err(VolumeFileError::TruncatedFile);
        }
        if payload.len() as u64 > needed {
            return Err(VolumeFileError::TrailingBytes(
                (payload.len() as u64 - needed) as usize,
            ));
        }
        let mut data = Vec::with_capacity(count as usize);
        for (i, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !(0.0..=1.0).contains(&v) {
                return Err(VolumeFileError::ValueOutOfRange(i));
            }
            data.push(v);
        }
        Ok(HeatmapVolume {
            channels: dim(0) as usize,
            frames: dim(1) as usize,
            height: dim(2) as usize,
            width: dim(3) as usize,
            data,
        })
    }
}
