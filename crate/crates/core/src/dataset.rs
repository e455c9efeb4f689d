//! Labelled action-clip corpora, the stratified train/test split and the
//! on-disk volume cache.
//!
//! Clip corpus format (JSONL): a header line `{"meta":{"width":..,
//! "height":..,"fps":..}}`, then one line per clip
//! `{"clip_id":"..","label":"writing","frames":[[[x,y,c] x 11], ...]}`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::ActionLabel;
use crate::heatmap::io::{decode_volume, encode_volume};
use crate::heatmap::{build_volume, HeatmapError, HeatmapVolume, SamplerConfig};
use crate::ingest::{keypoint_triples, validate_keypoint, IngestError, Keypoint, SessionMeta, UpperBodyPose, UPPER_BODY_JOINTS};
use crate::synth::{derive_seed, generate_action_clip, CLIP_FRAME};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("clip corpus is empty")]
    Empty,
    #[error("duplicate clip id {0}")]
    DuplicateId(String),
    #[error("clip {clip_id}: {source}")]
    Volume {
        clip_id: String,
        source: HeatmapError,
    },
    #[error("volume cache: {0}")]
    Cache(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub clip_id: String,
    pub label: ActionLabel,
    pub poses: Vec<UpperBodyPose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipCorpus {
    pub meta: SessionMeta,
    pub clips: Vec<LabeledClip>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub clips_per_class: usize,
    pub clip_seconds: f64,
    pub fps: f64,
    pub noise_sigma: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 7,
            clips_per_class: 40,
            clip_seconds: 10.0,
            fps: 15.0,
            noise_sigma: 1.5,
        }
    }
}

/// `clips_per_class` synthetic clips of every action, ids `<action>-<nnn>`.
pub fn generate_corpus(config: &CorpusConfig) -> ClipCorpus {
    let jobs: Vec<(ActionLabel, usize)> = ActionLabel::ALL
        .iter()
        .flat_map(|&a| (0..config.clips_per_class).map(move |i| (a, i)))
        .collect();
    let clips = jobs
        .par_iter()
        .map(|&(action, i)| {
            let seed = derive_seed(config.seed, action.code() as u64, i as u64);
            let clip = generate_action_clip(action, config.clip_seconds, config.fps, config.noise_sigma, seed);
            LabeledClip {
                clip_id: format!("{}-{i:03}", action.name()),
                label: action,
                poses: clip.poses,
            }
        })
        .collect();
    ClipCorpus {
        meta: SessionMeta {
            width: CLIP_FRAME.0,
            height: CLIP_FRAME.1,
            fps: config.fps,
        },
        clips,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: SessionMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClip {
    clip_id: String,
    label: String,
    frames: Vec<Vec<[f64; 3]>>,
}

#[derive(Serialize)]
struct OutClip<'a> {
    clip_id: &'a str,
    label: &'a str,
    frames: Vec<Vec<[f64; 3]>>,
}

pub fn write_corpus<W: Write>(corpus: &ClipCorpus, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &Header { meta: corpus.meta })?;
    out.write_all(b"\n")?;
    for clip in &corpus.clips {
        let record = OutClip {
            clip_id: &clip.clip_id,
            label: clip.label.name(),
            frames: clip.poses.iter().map(|p| keypoint_triples(&p.keypoints)).collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn ingest_error(e: IngestError, line: usize) -> DatasetError {
    DatasetError::Malformed {
        line,
        reason: e.to_string(),
    }
}

pub fn parse_corpus<R: BufRead>(reader: R) -> Result<ClipCorpus, DatasetError> {
    let mut meta = None;
    let mut clips = Vec::new();
    let mut seen = HashSet::new();
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::Malformed { line, reason };
        let Some(meta) = meta else {
            let header: Header = serde_json::from_str(&text).map_err(|e| bad(format!("bad header: {e}")))?;
            let m = header.meta;
            if m.width == 0 || m.height == 0 || !(m.fps.is_finite() && m.fps > 0.0) {
                return Err(bad("frame size and fps must be positive".into()));
            }
            meta = Some(m);
            continue;
        };
        let raw: RawClip = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let label: ActionLabel = raw.label.parse().map_err(|_| bad(format!("unknown action {:?}", raw.label)))?;
        if raw.frames.is_empty() {
            return Err(bad("clip has no frames".into()));
        }
        let mut poses = Vec::with_capacity(raw.frames.len());
        for frame in raw.frames {
            if frame.len() != UPPER_BODY_JOINTS {
                return Err(bad(format!("expected {UPPER_BODY_JOINTS} keypoints, found {}", frame.len())));
            }
            let mut keypoints = [Keypoint::MISSING; UPPER_BODY_JOINTS];
            for (joint, kp) in frame.into_iter().enumerate() {
                keypoints[joint] = validate_keypoint(kp, &meta, line, joint).map_err(|e| ingest_error(e, line))?;
            }
            poses.push(UpperBodyPose::new(keypoints));
        }
        if !seen.insert(raw.clip_id.clone()) {
            return Err(DatasetError::DuplicateId(raw.clip_id));
        }
        clips.push(LabeledClip {
            clip_id: raw.clip_id,
            label,
            poses,
        });
    }
    let meta = meta.ok_or(DatasetError::Empty)?;
    if clips.is_empty() {
        return Err(DatasetError::Empty);
    }
    Ok(ClipCorpus { meta, clips })
}

pub fn parse_corpus_bytes(bytes: &[u8]) -> Result<ClipCorpus, DatasetError> {
    parse_corpus(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

fn id_hash(seed: u64, id: &str) -> u64 {
    // FNV-1a, then mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive_seed(seed, h, 0x53_504c_4954)
}

/// Stratified 3:1 split: within each class the clips are ordered by a
/// seeded hash of their id and the first `round(n / 4)` go to test.
pub fn stratified_split(items: &[(&str, ActionLabel)], seed: u64) -> Vec<Split> {
    let mut by_class: BTreeMap<ActionLabel, Vec<usize>> = BTreeMap::new();
    for (i, (_, label)) in items.iter().enumerate() {
        by_class.entry(*label).or_default().push(i);
    }
    let mut split = vec![Split::Train; items.len()];
    for members in by_class.values_mut() {
        members.sort_by_key(|&i| (id_hash(seed, items[i].0), items[i].0));
        let n_test = (members.len() + 2) / 4;
        for &i in &members[..n_test] {
            split[i] = Split::Test;
        }
    }
    split
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeEntry {
    pub clip_id: String,
    pub label: ActionLabel,
    pub split: Split,
    pub volume: HeatmapVolume,
}

pub fn build_volumes(corpus: &ClipCorpus, sampler: &SamplerConfig, seed: u64) -> Result<Vec<VolumeEntry>, DatasetError> {
    let items: Vec<(&str, ActionLabel)> = corpus.clips.iter().map(|c| (c.clip_id.as_str(), c.label)).collect();
    let split = stratified_split(&items, seed);
    corpus
        .clips
        .par_iter()
        .zip(split.par_iter())
        .map(|(clip, &split)| {
            let volume = build_volume(&clip.poses, sampler).map_err(|source| DatasetError::Volume {
                clip_id: clip.clip_id.clone(),
                source,
            })?;
            Ok(VolumeEntry {
                clip_id: clip.clip_id.clone(),
                label: clip.label,
                split,
                volume,
            })
        })
        .collect()
}

const INDEX_HEADER: [&str; 4] = ["clip_id", "label", "split", "file"];

fn file_name(clip_id: &str) -> String {
    let safe: String = clip_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.egkv")
}

/// Writes `index.csv` and one `.egkv` file per volume into `dir`.
pub fn save_volume_cache(entries: &[VolumeEntry], dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut index = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(dir.join("index.csv"))
        .map_err(|e| DatasetError::Cache(e.to_string()))?;
    index.write_record(INDEX_HEADER).map_err(|e| DatasetError::Cache(e.to_string()))?;
    let mut used = HashSet::new();
    for (i, e) in entries.iter().enumerate() {
        let mut name = file_name(&e.clip_id);
        if !used.insert(name.clone()) {
            name = format!("{i}-{name}");
            used.insert(name.clone());
        }
        fs::write(dir.join(&name), encode_volume(&e.volume))?;
        index
            .write_record([e.clip_id.as_str(), e.label.name(), e.split.name(), name.as_str()])
            .map_err(|e| DatasetError::Cache(e.to_string()))?;
    }
    index.flush()?;
    Ok(())
}

pub fn load_volume_cache(dir: &Path) -> Result<Vec<VolumeEntry>, DatasetError> {
    let mut reader = csv::Reader::from_path(dir.join("index.csv")).map_err(|e| DatasetError::Cache(e.to_string()))?;
    let header = reader.headers().map_err(|e| DatasetError::Cache(e.to_string()))?;
    if header.iter().ne(INDEX_HEADER) {
        return Err(DatasetError::Cache("index.csv has an unexpected header".into()));
    }
    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| DatasetError::Malformed {
            line,
            reason: e.to_string(),
        })?;
        let bad = |reason: String| DatasetError::Malformed { line, reason };
        if record.len() != 4 {
            return Err(bad("expected 4 fields".into()));
        }
        let label: ActionLabel = record[1].parse().map_err(|_| bad(format!("unknown action {:?}", &record[1])))?;
        let split = match &record[2] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(bad(format!("unknown split {other:?}"))),
        };
        let bytes = fs::read(dir.join(&record[3]))?;
        let volume = decode_volume(&bytes).map_err(|e| bad(format!("{}: {e}", &record[3])))?;
        entries.push(VolumeEntry {
            clip_id: record[0].to_string(),
            label,
            split,
            volume,
        });
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ClipCorpus {
        generate_corpus(&CorpusConfig {
            clips_per_class: 2,
            clip_seconds: 1.0,
            ..CorpusConfig::default()
        })
    }

    #[test]
    fn corpus_round_trip() {
        let corpus = small();
        assert_eq!(corpus.clips.len(), 26);
        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf).unwrap();
        assert_eq!(parse_corpus_bytes(&buf).unwrap(), corpus);
    }

    #[test]
    fn parse_errors_carry_lines() {
        let corpus = small();
        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("{\"clip_id\":\"x\",\"label\":\"dancing\",\"frames\":[]}\n");
        match parse_corpus_bytes(text.as_bytes()) {
            Err(DatasetError::Malformed { line, .. }) => assert_eq!(line, 28),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_corpus_bytes(b""), Err(DatasetError::Empty)));
    }

    #[test]
    fn split_is_three_to_one_per_class() {
        let ids: Vec<String> = (0..40).map(|i| format!("c-{i}")).collect();
        let items: Vec<(&str, ActionLabel)> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), if i % 2 == 0 { ActionLabel::Writing } else { ActionLabel::Eating }))
            .collect();
        let split = stratified_split(&items, 7);
        for label in [ActionLabel::Writing, ActionLabel::Eating] {
            let test = items
                .iter()
                .zip(&split)
                .filter(|((_, l), s)| *l == label && **s == Split::Test)
                .count();
            assert_eq!(test, 5);
        }
        assert_eq!(split, stratified_split(&items, 7));
        let mut reversed = items.clone();
        reversed.reverse();
        let mut split_rev = stratified_split(&reversed, 7);
        split_rev.reverse();
        assert_eq!(split, split_rev);
    }
}
