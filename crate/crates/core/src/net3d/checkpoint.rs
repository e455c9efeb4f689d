//! `EGKM` checkpoints.
//!
//! Layout (little-endian): magic `EGKM`, `u16` version, `u16` entry count,
//! then per entry a `u16` name length, the UTF-8 name, a `u8` rank, `rank`
//! `u32` dims and the `f32` payload. The first entry, `config`, is a rank-1
//! tensor holding the architecture as small integers; the rest are
//! `<layer>.weight` / `<layer>.bias` pairs.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::model::{ConvStage, ModelConfig, Net};
use super::tensor::Real;

pub const MAGIC: &[u8; 4] = b"EGKM";
pub const VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u16),
    #[error("checkpoint file is truncated")]
    TruncatedFile,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

fn config_entry(cfg: &ModelConfig) -> Entry {
    let mut v: Vec<usize> = vec![
        cfg.in_channels,
        cfg.num_classes,
        cfg.input[0],
        cfg.input[1],
        cfg.input[2],
        cfg.freeze_prefix,
        cfg.stages.len(),
    ];
    for s in &cfg.stages {
        v.push(s.out_channels);
        v.extend(s.kernel);
        v.extend(s.stride);
        v.extend(s.pool);
    }
    Entry {
        name: "config".into(),
        dims: vec![v.len() as u32],
        data: v.into_iter().map(|x| x as f32).collect(),
    }
}

fn parse_config(entry: &Entry) -> Result<ModelConfig, CheckpointError> {
    let bad = |m: &str| CheckpointError::Malformed(m.to_string());
    if entry.name != "config" || entry.dims.len() != 1 {
        return Err(bad("first entry must be the rank-1 config"));
    }
    let mut ints = Vec::with_capacity(entry.data.len());
    for &v in &entry.data {
        if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 16_777_216.0) {
            return Err(bad("config values must be small non-negative integers"));
        }
        ints.push(v as usize);
    }
    if ints.len() < 7 {
        return Err(bad("config entry too short"));
    }
    let n_stages = ints[6];
    if ints.len() != 7 + 10 * n_stages {
        return Err(bad("config entry length does not match stage count"));
    }
    let stages = ints[7..]
        .chunks_exact(10)
        .map(|c| ConvStage {
            out_channels: c[0],
            kernel: [c[1], c[2], c[3]],
            stride: [c[4], c[5], c[6]],
            pool: [c[7], c[8], c[9]],
        })
        .collect();
    let cfg = ModelConfig {
        in_channels: ints[0],
        num_classes: ints[1],
        input: [ints[2], ints[3], ints[4]],
        freeze_prefix: ints[5],
        stages,
    };
    cfg.validate()
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    Ok(cfg)
}

pub fn encode_entries(entries: &[Entry]) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for e in entries {
        let name = e.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(e.dims.len() as u8);
        for d in &e.dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::TruncatedFile)?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<Entry>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }
    let count = r.u16()?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::Malformed("entry name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(4))
            .ok_or(CheckpointError::TruncatedFile)?;
        let payload = r.take(len)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::Malformed(format!("entry {name:?} holds a non-finite value")));
        }
        entries.push(Entry { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes after last entry".into()));
    }
    Ok(entries)
}

pub fn encode_model<F: Real>(net: &Net<F>) -> Vec<u8> {
    let mut entries = vec![config_entry(&net.config)];
    let names = net.config.layer_names();
    for (i, (name, (w, b))) in names.iter().zip(net.param_layers()).enumerate() {
        let wdims: Vec<u32> = if i < net.convs.len() {
            let c = &net.convs[i];
            [c.out_channels, c.in_channels, c.kernel[0], c.kernel[1], c.kernel[2]]
                .iter()
                .map(|&d| d as u32)
                .collect()
        } else {
            vec![net.head.out_features as u32, net.head.in_features as u32]
        };
        entries.push(Entry {
            name: format!("{name}.weight"),
            dims: wdims,
            data: w.iter().map(|v| v.to_f32()).collect(),
        });
        entries.push(Entry {
            name: format!("{name}.bias"),
            dims: vec![b.len() as u32],
            data: b.iter().map(|v| v.to_f32()).collect(),
        });
    }
    encode_entries(&entries)
}

/// Weight and bias lengths of every parameterized layer, in order.
fn param_lengths(cfg: &ModelConfig) -> Option<Vec<usize>> {
    let mut lengths = Vec::new();
    let mut in_channels = cfg.in_channels;
    for stage in &cfg.stages {
        let mut w = stage.out_channels.checked_mul(in_channels)?;
        for k in stage.kernel {
            w = w.checked_mul(k)?;
        }
        lengths.extend([w, stage.out_channels]);
        in_channels = stage.out_channels;
    }
    lengths.extend([cfg.num_classes.checked_mul(in_channels)?, cfg.num_classes]);
    Some(lengths)
}

pub fn decode_model<F: Real>(bytes: &[u8]) -> Result<Net<F>, CheckpointError> {
    let entries = decode_entries(bytes)?;
    let (first, rest) = entries
        .split_first()
        .ok_or_else(|| CheckpointError::Malformed("checkpoint has no entries".into()))?;
    let cfg = parse_config(first)?;
    let names = cfg.layer_names();
    if rest.len() != 2 * names.len() {
        return Err(CheckpointError::Malformed(format!(
            "expected {} tensors, found {}",
            2 * names.len(),
            rest.len()
        )));
    }
    // Check sizes against the payload before allocating anything.
    let expected = param_lengths(&cfg).ok_or_else(|| CheckpointError::Malformed("layer sizes overflow".into()))?;
    for (len, entry) in expected.iter().zip(rest) {
        if *len != entry.data.len() {
            return Err(CheckpointError::Malformed(format!("tensor {} has the wrong size", entry.name)));
        }
    }
    let mut net = Net::<F>::zeros(cfg).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    for ((name, (w, b)), pair) in names
        .iter()
        .zip(net.param_layers_mut())
        .zip(rest.chunks_exact(2))
    {
        for (dst, entry, suffix) in [(w, &pair[0], "weight"), (b, &pair[1], "bias")] {
            if entry.name != format!("{name}.{suffix}") || entry.data.len() != dst.len() {
                return Err(CheckpointError::Malformed(format!(
                    "unexpected tensor {} for {name}.{suffix}",
                    entry.name
                )));
            }
            for (d, &v) in dst.iter_mut().zip(&entry.data) {
                *d = F::from_f32(v);
            }
        }
    }
    Ok(net)
}

pub fn save_checkpoint<F: Real>(net: &Net<F>, path: &Path) -> Result<(), CheckpointError> {
    let mut file = std::fs::File::create(path).map_err(|e| CheckpointError::Io(e.to_string()))?;
    file.write_all(&encode_model(net))
        .map_err(|e| CheckpointError::Io(e.to_string()))
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<Net<F>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io(e.to_string()))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            in_channels: 2,
            num_classes: 3,
            input: [4, 8, 8],
            stages: vec![
                ConvStage::new(3, [1, 2, 2], [1, 1, 1]),
                ConvStage::new(4, [1, 1, 1], [2, 2, 2]),
            ],
            freeze_prefix: 1,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Net::<f32>::new(small_config(), 3).unwrap();
        let back: Net<f32> = decode_model(&encode_model(&net)).unwrap();
        assert_eq!(back, net);
        let full = Net::<f32>::new(ModelConfig::default(), 11).unwrap();
        assert_eq!(decode_model::<f32>(&encode_model(&full)).unwrap(), full);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = encode_model(&Net::<f32>::new(small_config(), 3).unwrap());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert_eq!(decode_model::<f32>(&bad), Err(CheckpointError::BadMagic));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert_eq!(
            decode_model::<f32>(&bad),
            Err(CheckpointError::VersionMismatch(2))
        );
        assert_eq!(
            decode_model::<f32>(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::TruncatedFile)
        );
        assert_eq!(decode_model::<f32>(&bytes[..2]), Err(CheckpointError::TruncatedFile));
    }

    #[test]
    fn oversized_config_is_rejected_without_allocating() {
        let net = Net::<f32>::new(small_config(), 3).unwrap();
        let mut entries = decode_entries(&encode_model(&net)).unwrap();
        entries[0].data[7] = 12_582_912.0;
        assert!(matches!(
            decode_model::<f32>(&encode_entries(&entries)),
            Err(CheckpointError::Malformed(_))
        ));
    }
}
