//! Skeleton stream ingestion.
//!
//! A session file is line-delimited JSON. The first line carries the frame
//! geometry, every following line one video frame:
//!
//! ```text
//! {"meta": {"width": 1920, "height": 1080, "fps": 15.0}}
//! {"frame": 0, "persons": [{"kp": [[x, y, c], ... 17 entries]}]}
//! ```
//!
//! Keypoints follow the COCO-17 order. Confidence `0` marks a joint that was
//! not detected.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of joints in a full COCO pose.
pub const NUM_JOINTS: usize = 17;
/// Number of joints kept for the upper-body representation.
pub const UPPER_BODY_JOINTS: usize = 11;

pub const NOSE: usize = 0;
pub const LEFT_EYE: usize = 1;
pub const RIGHT_EYE: usize = 2;
pub const LEFT_EAR: usize = 3;
pub const RIGHT_EAR: usize = 4;
pub const LEFT_SHOULDER: usize = 5;
pub const RIGHT_SHOULDER: usize = 6;
pub const LEFT_ELBOW: usize = 7;
pub const RIGHT_ELBOW: usize = 8;
pub const LEFT_WRIST: usize = 9;
pub const RIGHT_WRIST: usize = 10;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: confidence of joint {joint} is outside [0, 1]")]
    ConfidenceOutOfRange { line: usize, joint: usize },
    #[error("line {line}: joint {joint} lies outside the frame")]
    CoordinateOutOfBounds { line: usize, joint: usize },
    #[error("line {line}: pose has no detected joint")]
    EmptyPose { line: usize },
    #[error("line {line}: frame index does not increase")]
    NonMonotonicFrameIndex { line: usize },
    #[error("session contains no frames")]
    EmptySession,
    #[error("i/o error: {0}")]
    Io(String),
}

impl IngestError {
    /// 1-based line number the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::MalformedLine { line, .. }
            | IngestError::ConfidenceOutOfRange { line, .. }
            | IngestError::CoordinateOutOfBounds { line, .. }
            | IngestError::EmptyPose { line }
            | IngestError::NonMonotonicFrameIndex { line } => Some(*line),
            IngestError::EmptySession | IngestError::Io(_) => None,
        }
    }
}

/// A single 2D joint detection in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub c: f64,
}

impl Keypoint {
    pub const MISSING: Keypoint = Keypoint { x: 0.0, y: 0.0, c: 0.0 };

    pub fn new(x: f64, y: f64, c: f64) -> Self {
        Keypoint { x, y, c }
    }

    pub fn is_visible(&self) -> bool {
        self.c > 0.0
    }
}

/// Full-body pose in COCO-17 order.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonPose {
    pub keypoints: [Keypoint; NUM_JOINTS],
}

/// The 11-joint upper-body prefix of a COCO pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperBodyPose {
    pub keypoints: [Keypoint; UPPER_BODY_JOINTS],
}

impl UpperBodyPose {
    pub fn new(keypoints: [Keypoint; UPPER_BODY_JOINTS]) -> Self {
        UpperBodyPose { keypoints }
    }

    /// True when no joint was detected; consumers treat this as no detection.
    pub fn is_empty(&self) -> bool {
        self.keypoints.iter().all(|k| !k.is_visible())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub poses: Vec<PersonPose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionStream {
    pub meta: SessionMeta,
    pub frames: Vec<Frame>,
}

impl SessionStream {
    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(|f| f.poses.len()).sum()
    }
}

/// Projects a full pose onto its upper-body joints, copying values unchanged.
pub fn select_upper_body(pose: &PersonPose) -> UpperBodyPose {
    let mut keypoints = [Keypoint::MISSING; UPPER_BODY_JOINTS];
    keypoints.copy_from_slice(&pose.keypoints[..UPPER_BODY_JOINTS]);
    UpperBodyPose { keypoints }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    meta: SessionMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    frame: u64,
    persons: Vec<RawPerson>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerson {
    kp: Vec<[f64; 3]>,
}

fn malformed(line: usize, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedLine {
        line,
        reason: reason.into(),
    }
}

/// Validates one raw joint triple and applies the missing-joint normalization.
pub(crate) fn validate_keypoint(
    raw: [f64; 3],
    meta: &SessionMeta,
    line: usize,
    joint: usize,
) -> Result<Keypoint, IngestError> {
    let [x, y, c] = raw;
    if !(x.is_finite() && y.is_finite() && c.is_finite()) {
        return Err(malformed(line, format!("non-finite value in joint {joint}")));
    }
    if !(0.0..=1.0).contains(&c) {
        return Err(IngestError::ConfidenceOutOfRange { line, joint });
    }
    let inside = x >= 0.0 && y >= 0.0 && x < meta.width as f64 && y < meta.height as f64;
    if c == 0.0 {
        if inside {
            return Ok(Keypoint { x, y, c: 0.0 });
        }
        return Ok(Keypoint::MISSING);
    }
    if !inside {
        return Err(IngestError::CoordinateOutOfBounds { line, joint });
    }
    Ok(Keypoint { x, y, c })
}

fn parse_header(text: &str, line: usize) -> Result<SessionMeta, IngestError> {
    let header: RawHeader =
        serde_json::from_str(text).map_err(|e| malformed(line, format!("bad header: {e}")))?;
    let meta = header.meta;
    if meta.width == 0 || meta.height == 0 {
        return Err(malformed(line, "frame size must be positive"));
    }
    if !(meta.fps.is_finite() && meta.fps > 0.0) {
        return Err(malformed(line, "fps must be positive"));
    }
    Ok(meta)
}

fn parse_frame(text: &str, meta: &SessionMeta, line: usize) -> Result<Frame, IngestError> {
    let raw: RawFrame = serde_json::from_str(text).map_err(|e| malformed(line, e.to_string()))?;
    let mut poses = Vec::with_capacity(raw.persons.len());
    for person in raw.persons {
        if person.kp.len() != NUM_JOINTS {
            return Err(malformed(
                line,
                format!("expected {NUM_JOINTS} keypoints, found {}", person.kp.len()),
            ));
        }
        let mut keypoints = [Keypoint::MISSING; NUM_JOINTS];
        for (joint, raw_kp) in person.kp.into_iter().enumerate() {
            keypoints[joint] = validate_keypoint(raw_kp, meta, line, joint)?;
        }
        if keypoints.iter().all(|k| !k.is_visible()) {
            return Err(IngestError::EmptyPose { line });
        }
        poses.push(PersonPose { keypoints });
    }
    Ok(Frame {
        index: raw.frame,
        poses,
    })
}

/// Parses a complete session from a buffered reader.
pub fn parse_session<R: BufRead>(reader: R) -> Result<SessionStream, IngestError> {
    let mut meta: Option<SessionMeta> = None;
    let mut frames: Vec<Frame> = Vec::new();
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => malformed(line, "invalid UTF-8"),
            _ => IngestError::Io(e.to_string()),
        })?;
        if text.trim().is_empty() {
            continue;
        }
        let Some(meta) = meta.as_ref() else {
            meta = Some(parse_header(&text, line)?);
            continue;
        };
        let frame = parse_frame(&text, meta, line)?;
        if let Some(prev) = frames.last() {
            if frame.index <= prev.index {
                return Err(IngestError::NonMonotonicFrameIndex { line });
            }
        }
        frames.push(frame);
    }
    match meta {
        Some(meta) if !frames.is_empty() => Ok(SessionStream { meta, frames }),
        _ => Err(IngestError::EmptySession),
    }
}

pub fn parse_session_bytes(bytes: &[u8]) -> Result<SessionStream, IngestError> {
    parse_session(bytes)
}

#[derive(Serialize)]
struct OutHeader<'a> {
    meta: &'a SessionMeta,
}

#[derive(Serialize)]
struct OutFrame {
    frame: u64,
    persons: Vec<OutPerson>,
}

#[derive(Serialize)]
struct OutPerson {
    kp: Vec<[f64; 3]>,
}

pub(crate) fn keypoint_triples(keypoints: &[Keypoint]) -> Vec<[f64; 3]> {
    keypoints.iter().map(|k| [k.x, k.y, k.c]).collect()
}

/// Writes a session in the line-delimited format read by [`parse_session`].
pub fn write_session<W: Write>(session: &SessionStream, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &OutHeader { meta: &session.meta })?;
    out.write_all(b"\n")?;
    for frame in &session.frames {
        let record = OutFrame {
            frame: frame.index,
            persons: frame
                .poses
                .iter()
                .map(|p| OutPerson {
                    kp: keypoint_triples(&p.keypoints),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn session_to_string(session: &SessionStream) -> String {
    let mut buf = Vec::new();
    write_session(session, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_with(kp: &[[f64; 3]]) -> String {
        let persons = serde_json::json!([{ "kp": kp }]);
        format!("{{\"frame\": 0, \"persons\": {persons}}}")
    }

    const HEADER: &str = r#"{"meta": {"width": 640, "height": 480, "fps": 15.0}}"#;

    fn full_pose(c: f64) -> Vec<[f64; 3]> {
        (0..NUM_JOINTS).map(|j| [10.0 + j as f64, 20.0, c]).collect()
    }

    #[test]
    fn minimal_two_frame_session() {
        let kp = serde_json::json!(full_pose(1.0));
        let text = format!(
            "{HEADER}\n{{\"frame\": 0, \"persons\": [{{\"kp\": {kp}}}]}}\n{{\"frame\": 1, \"persons\": [{{\"kp\": {kp}}}]}}\n"
        );
        let s = parse_session(text.as_bytes()).unwrap();
        assert_eq!(s.frames.len(), 2);
        assert!(s.frames.iter().all(|f| f.poses.len() == 1));
        assert_eq!(s.meta.fps, 15.0);
    }

    #[test]
    fn confidence_out_of_range_reports_joint() {
        let mut kp = full_pose(0.5);
        kp[3][2] = 1.5;
        let text = format!("{HEADER}\n{}\n", line_with(&kp));
        assert_eq!(
            parse_session(text.as_bytes()),
            Err(IngestError::ConfidenceOutOfRange { line: 2, joint: 3 })
        );
    }

    #[test]
    fn gaps_in_frame_indices_are_preserved() {
        let kp = serde_json::json!(full_pose(1.0));
        let mut text = format!("{HEADER}\n");
        for idx in [0, 2, 5] {
            text.push_str(&format!("{{\"frame\": {idx}, \"persons\": [{{\"kp\": {kp}}}]}}\n"));
        }
        let s = parse_session(text.as_bytes()).unwrap();
        let idx: Vec<u64> = s.frames.iter().map(|f| f.index).collect();
        assert_eq!(idx, vec![0, 2, 5]);
    }

    #[test]
    fn non_monotonic_index_rejected() {
        let kp = serde_json::json!(full_pose(1.0));
        let text = format!(
            "{HEADER}\n{{\"frame\": 3, \"persons\": [{{\"kp\": {kp}}}]}}\n{{\"frame\": 3, \"persons\": []}}\n"
        );
        assert_eq!(
            parse_session(text.as_bytes()),
            Err(IngestError::NonMonotonicFrameIndex { line: 3 })
        );
    }

    #[test]
    fn empty_inputs() {
        assert_eq!(parse_session(&b""[..]), Err(IngestError::EmptySession));
        assert_eq!(
            parse_session(format!("{HEADER}\n").as_bytes()),
            Err(IngestError::EmptySession)
        );
    }

    #[test]
    fn malformed_lines() {
        let text = format!("{HEADER}\nnot json\n");
        assert!(matches!(
            parse_session(text.as_bytes()),
            Err(IngestError::MalformedLine { line: 2, .. })
        ));
        let short: Vec<[f64; 3]> = full_pose(1.0).into_iter().take(11).collect();
        let text = format!("{HEADER}\n{}\n", line_with(&short));
        assert!(matches!(
            parse_session(text.as_bytes()),
            Err(IngestError::MalformedLine { line: 2, .. })
        ));
        let text = "{\"meta\": {\"width\": 0, \"height\": 10, \"fps\": 15}}\n";
        assert!(matches!(
            parse_session(text.as_bytes()),
            Err(IngestError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn all_zero_pose_rejected() {
        let text = format!("{HEADER}\n{}\n", line_with(&full_pose(0.0)));
        assert_eq!(
            parse_session(text.as_bytes()),
            Err(IngestError::EmptyPose { line: 2 })
        );
    }

    #[test]
    fn missing_joint_with_negative_coords_normalized() {
        let mut kp = full_pose(1.0);
        kp[12] = [-5.0, -7.0, 0.0];
        let text = format!("{HEADER}\n{}\n", line_with(&kp));
        let s = parse_session(text.as_bytes()).unwrap();
        assert_eq!(s.frames[0].poses[0].keypoints[12], Keypoint::MISSING);

        kp[12] = [-5.0, 7.0, 0.4];
        let text = format!("{HEADER}\n{}\n", line_with(&kp));
        assert_eq!(
            parse_session(text.as_bytes()),
            Err(IngestError::CoordinateOutOfBounds { line: 2, joint: 12 })
        );
    }

    #[test]
    fn frames_without_persons_are_kept() {
        let text = format!("{HEADER}\n{{\"frame\": 0, \"persons\": []}}\n");
        let s = parse_session(text.as_bytes()).unwrap();
        assert_eq!(s.frames.len(), 1);
        assert!(s.frames[0].poses.is_empty());
    }

    #[test]
    fn upper_body_projection() {
        let pose = PersonPose {
            keypoints: std::array::from_fn(|j| Keypoint::new(j as f64, 2.0 * j as f64, 1.0)),
        };
        let upper = select_upper_body(&pose);
        assert_eq!(&upper.keypoints[..], &pose.keypoints[..UPPER_BODY_JOINTS]);
        assert!(upper.keypoints.iter().all(|k| k.c == 1.0));

        let mut mixed = pose.clone();
        for j in 0..NUM_JOINTS {
            mixed.keypoints[j].c = if j >= UPPER_BODY_JOINTS { 0.9 } else { 0.2 };
        }
        let upper = select_upper_body(&mixed);
        assert!(upper.keypoints.iter().all(|k| k.c == 0.2));
    }

    #[test]
    fn lower_body_only_projects_to_empty_detection() {
        let pose = PersonPose {
            keypoints: std::array::from_fn(|j| {
                if j >= UPPER_BODY_JOINTS {
                    Keypoint::new(100.0, 200.0, 0.8)
                } else {
                    Keypoint::MISSING
                }
            }),
        };
        let upper = select_upper_body(&pose);
        assert!(upper.keypoints.iter().all(|k| k.c == 0.0));
        assert!(upper.is_empty());
    }
}
