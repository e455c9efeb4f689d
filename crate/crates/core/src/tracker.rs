//! Greedy IoU association of per-frame detections into per-student tracks.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    self, keypoint_triples, select_upper_body, IngestError, Keypoint, SessionMeta, SessionStream,
    UpperBodyPose, UPPER_BODY_JOINTS,
};

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("session contains no frames")]
    EmptySession,
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max);
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Axis-aligned box over all joints whose confidence reaches `conf_threshold`.
pub fn keypoint_bbox(pose: &UpperBodyPose, conf_threshold: f64) -> Option<BBox> {
    let mut visible = pose
        .keypoints
        .iter()
        .filter(|k| k.c > 0.0 && k.c >= conf_threshold);
    let first = visible.next()?;
    let init = BBox::new(first.x, first.y, first.x, first.y);
    Some(visible.fold(init, |b, k| BBox {
        x_min: b.x_min.min(k.x),
        y_min: b.y_min.min(k.y),
        x_max: b.x_max.max(k.x),
        y_max: b.y_max.max(k.y),
    }))
}

/// Intersection over union. Identical zero-area boxes overlap fully.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    /// Frames a track may stay unseen before it is closed.
    pub max_gap: u64,
    pub conf_threshold: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            iou_threshold: 0.3,
            max_gap: 15,
            conf_threshold: 0.3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(TrackerError::InvalidConfig("iou threshold must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(TrackerError::InvalidConfig(
                "confidence threshold must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub frame: u64,
    pub pose: UpperBodyPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    /// Strictly increasing in `frame`.
    pub entries: Vec<TrackEntry>,
}

impl Track {
    pub fn last_seen(&self) -> u64 {
        self.entries.last().map(|e| e.frame).unwrap_or(0)
    }

    pub fn first_frame(&self) -> u64 {
        self.entries.first().map(|e| e.frame).unwrap_or(0)
    }

    pub fn poses(&self) -> impl Iterator<Item = &UpperBodyPose> {
        self.entries.iter().map(|e| &e.pose)
    }
}

struct ActiveTrack {
    track: usize,
    bbox: BBox,
    last_seen: u64,
}

/// Links detections frame by frame. In each frame every (active track,
/// detection) pair is ranked by IoU (ties: lower track id, then lower
/// detection index) and accepted greedily when both sides are still free and
/// the IoU reaches the threshold. Leftover detections open new tracks.
///
/// Detections with no joint above `conf_threshold` carry no box and are
/// dropped.
pub fn associate(
    stream: &SessionStream,
    config: &TrackerConfig,
) -> Result<Vec<Track>, TrackerError> {
    config.validate()?;
    if stream.frames.is_empty() {
        return Err(TrackerError::EmptySession);
    }
    let mut tracks: Vec<Track> = Vec::new();
    let mut active: Vec<ActiveTrack> = Vec::new();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();

    for frame in &stream.frames {
        active.retain(|a| frame.index - a.last_seen - 1 <= config.max_gap);

        let detections: Vec<(UpperBodyPose, BBox)> = frame
            .poses
            .iter()
            .map(select_upper_body)
            .filter_map(|p| keypoint_bbox(&p, config.conf_threshold).map(|b| (p, b)))
            .collect();

        pairs.clear();
        for (ai, a) in active.iter().enumerate() {
            for (di, (_, bbox)) in detections.iter().enumerate() {
                let overlap = iou(&a.bbox, bbox);
                if overlap >= config.iou_threshold {
                    pairs.push((overlap, ai, di));
                }
            }
        }
        // Active tracks are kept in creation order, so `ai` orders like track ids.
        pairs.sort_by(|x, y| {
            y.0.total_cmp(&x.0)
                .then(x.1.cmp(&y.1))
                .then(x.2.cmp(&y.2))
        });

        let mut det_used = vec![false; detections.len()];
        let mut track_used = vec![false; active.len()];
        for &(_, ai, di) in &pairs {
            if track_used[ai] || det_used[di] {
                continue;
            }
            track_used[ai] = true;
            det_used[di] = true;
            let (pose, bbox) = detections[di];
            let a = &mut active[ai];
            a.bbox = bbox;
            a.last_seen = frame.index;
            tracks[a.track].entries.push(TrackEntry {
                frame: frame.index,
                pose,
            });
        }

        for (di, (pose, bbox)) in detections.iter().enumerate() {
            if det_used[di] {
                continue;
            }
            let id = tracks.len();
            tracks.push(Track {
                id: id as u64,
                entries: vec![TrackEntry {
                    frame: frame.index,
                    pose: *pose,
                }],
            });
            active.push(ActiveTrack {
                track: id,
                bbox: *bbox,
                last_seen: frame.index,
            });
        }
    }
    Ok(tracks)
}

#[derive(Debug, Error, PartialEq)]
pub enum TrackFileError {
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Keypoint(#[from] IngestError),
    #[error("track file contains no header")]
    Empty,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackHeader {
    meta: SessionMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackRecord {
    id: u64,
    entries: Vec<EntryRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryRecord {
    frame: u64,
    kp: Vec<[f64; 3]>,
}

/// Writes tracks as JSONL: a meta header line, then one object per track.
pub fn write_tracks<W: Write>(
    meta: &SessionMeta,
    tracks: &[Track],
    mut out: W,
) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &TrackHeader { meta: *meta })?;
    out.write_all(b"\n")?;
    for t in tracks {
        let rec = TrackRecord {
            id: t.id,
            entries: t
                .entries
                .iter()
                .map(|e| EntryRecord {
                    frame: e.frame,
                    kp: keypoint_triples(&e.pose.keypoints),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_tracks<R: BufRead>(reader: R) -> Result<(SessionMeta, Vec<Track>), TrackFileError> {
    let mut meta: Option<SessionMeta> = None;
    let mut tracks = Vec::new();
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text.map_err(|e| TrackFileError::Malformed {
            line,
            reason: e.to_string(),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| TrackFileError::Malformed { line, reason };
        let Some(m) = meta.as_ref() else {
            let header: TrackHeader = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            if header.meta.width == 0
                || header.meta.height == 0
                || !(header.meta.fps.is_finite() && header.meta.fps > 0.0)
            {
                return Err(bad("invalid frame geometry".into()));
            }
            meta = Some(header.meta);
            continue;
        };
        let rec: TrackRecord = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let mut entries = Vec::with_capacity(rec.entries.len());
        for e in rec.entries {
            if e.kp.len() != UPPER_BODY_JOINTS {
                return Err(bad(format!(
                    "expected {UPPER_BODY_JOINTS} keypoints, found {}",
                    e.kp.len()
                )));
            }
            if entries
                .last()
                .is_some_and(|p: &TrackEntry| p.frame >= e.frame)
            {
                return Err(bad("entry frames must increase".into()));
            }
            let mut kps = [Keypoint::MISSING; UPPER_BODY_JOINTS];
            for (j, raw) in e.kp.into_iter().enumerate() {
                kps[j] = ingest::validate_keypoint(raw, m, line, j)?;
            }
            entries.push(TrackEntry {
                frame: e.frame,
                pose: UpperBodyPose::new(kps),
            });
        }
        tracks.push(Track {
            id: rec.id,
            entries,
        });
    }
    meta.map(|m| (m, tracks)).ok_or(TrackFileError::Empty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Frame, PersonPose, NUM_JOINTS};

    fn point_pose(points: &[(f64, f64, f64)]) -> UpperBodyPose {
        let mut kps = [Keypoint::MISSING; UPPER_BODY_JOINTS];
        for (i, &(x, y, c)) in points.iter().enumerate() {
            kps[i] = Keypoint::new(x, y, c);
        }
        UpperBodyPose::new(kps)
    }

    fn box_person(x0: f64, y0: f64, x1: f64, y1: f64) -> PersonPose {
        let mut keypoints = [Keypoint::MISSING; NUM_JOINTS];
        keypoints[0] = Keypoint::new(x0, y0, 1.0);
        keypoints[10] = Keypoint::new(x1, y1, 1.0);
        PersonPose { keypoints }
    }

    fn stream(frames: Vec<(u64, Vec<PersonPose>)>) -> SessionStream {
        SessionStream {
            meta: SessionMeta {
                width: 1000,
                height: 1000,
                fps: 15.0,
            },
            frames: frames
                .into_iter()
                .map(|(index, poses)| Frame { index, poses })
                .collect(),
        }
    }

    #[test]
    fn bbox_examples() {
        let b = keypoint_bbox(&point_pose(&[(10.0, 20.0, 0.9)]), 0.3).unwrap();
        assert_eq!(b, BBox::new(10.0, 20.0, 10.0, 20.0));
        let b = keypoint_bbox(&point_pose(&[(0.0, 0.0, 1.0), (4.0, 8.0, 1.0)]), 0.3).unwrap();
        assert_eq!(b, BBox::new(0.0, 0.0, 4.0, 8.0));
        let weak = point_pose(&[(1.0, 1.0, 0.1), (5.0, 5.0, 0.1)]);
        assert_eq!(keypoint_bbox(&weak, 0.3), None);
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(
            iou(&BBox::new(0.0, 0.0, 1.0, 1.0), &BBox::new(2.0, 2.0, 3.0, 3.0)),
            0.0
        );
        let v = iou(&a, &BBox::new(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-12);
        let p = BBox::new(5.0, 5.0, 5.0, 5.0);
        assert_eq!(iou(&p, &p), 1.0);
        assert_eq!(iou(&p, &BBox::new(6.0, 5.0, 6.0, 5.0)), 0.0);
        assert_eq!(iou(&p, &a), 0.0);
    }

    #[test]
    fn two_stationary_people() {
        let frames = (0..10)
            .map(|i| {
                (
                    i,
                    vec![
                        box_person(0.0, 0.0, 50.0, 50.0),
                        box_person(200.0, 0.0, 250.0, 50.0),
                    ],
                )
            })
            .collect();
        let tracks = associate(&stream(frames), &TrackerConfig::default()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.entries.len() == 10));
        assert_eq!(tracks[0].entries[0].pose.keypoints[0].x, 0.0);
    }

    fn dropout_stream(missing: std::ops::Range<u64>) -> SessionStream {
        stream(
            (0..30)
                .map(|i| {
                    let poses = if missing.contains(&i) {
                        vec![]
                    } else {
                        vec![box_person(10.0, 10.0, 60.0, 80.0)]
                    };
                    (i, poses)
                })
                .collect(),
        )
    }

    #[test]
    fn short_dropout_bridged() {
        let cfg = TrackerConfig {
            max_gap: 5,
            ..Default::default()
        };
        let tracks = associate(&dropout_stream(10..13), &cfg).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].entries.len(), 27);
    }

    #[test]
    fn long_dropout_splits_track() {
        let cfg = TrackerConfig {
            max_gap: 5,
            ..Default::default()
        };
        let tracks = associate(&dropout_stream(10..16), &cfg).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[1].first_frame(), 16);
        // exactly at the boundary the track survives
        let tracks = associate(&dropout_stream(10..15), &cfg).unwrap();
        assert_eq!(tracks.len(), 1);
    }

    #[test]
    fn empty_session_and_bad_config() {
        assert_eq!(
            associate(&stream(vec![]), &TrackerConfig::default()),
            Err(TrackerError::EmptySession)
        );
        let cfg = TrackerConfig {
            iou_threshold: 1.0,
            ..Default::default()
        };
        assert!(associate(&dropout_stream(0..0), &cfg).is_err());
    }

    #[test]
    fn greedy_prefers_highest_overlap() {
        // track A sits between two detections; the better overlap wins.
        let frames = vec![
            (0, vec![box_person(0.0, 0.0, 100.0, 100.0)]),
            (
                1,
                vec![
                    box_person(40.0, 0.0, 140.0, 100.0),
                    box_person(10.0, 0.0, 110.0, 100.0),
                ],
            ),
        ];
        let tracks = associate(&stream(frames), &TrackerConfig::default()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].entries[1].pose.keypoints[0].x, 10.0);
        assert_eq!(tracks[1].entries[0].pose.keypoints[0].x, 40.0);
    }

    #[test]
    fn track_file_round_trip() {
        let frames = (0..4)
            .map(|i| (i * 2, vec![box_person(1.0, 2.0, 30.5, 40.25)]))
            .collect();
        let s = stream(frames);
        let tracks = associate(&s, &TrackerConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_tracks(&s.meta, &tracks, &mut buf).unwrap();
        let (meta, back) = parse_tracks(&buf[..]).unwrap();
        assert_eq!(meta, s.meta);
        assert_eq!(back, tracks);
    }

    #[test]
    fn track_file_rejects_bad_entries() {
        let header = r#"{"meta":{"width":100,"height":100,"fps":15.0}}"#;
        let kp = serde_json::json!(vec![[1.0, 1.0, 1.0]; 11]);
        let text = format!(
            "{header}\n{{\"id\":0,\"entries\":[{{\"frame\":3,\"kp\":{kp}}},{{\"frame\":3,\"kp\":{kp}}}]}}\n"
        );
        assert!(matches!(
            parse_tracks(text.as_bytes()),
            Err(TrackFileError::Malformed { line: 2, .. })
        ));
        assert_eq!(parse_tracks(&b""[..]), Err(TrackFileError::Empty));
    }
}
