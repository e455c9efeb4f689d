//! Seeded generator of labelled synthetic classrooms.
//!
//! Students sit on a seat grid facing the camera. Each sub-clip of a student
//! plays one action template; the action is drawn from the class mix,
//! restricted to the engaged or disengaged actions (plus the pose-ambiguous
//! class, in both) by the student's state in that window when an engagement
//! script is configured. Gaze follows the same state.

pub mod templates;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ActionLabel, EngagementLabel, NUM_ACTIONS};
use crate::ingest::{Frame, Keypoint, PersonPose, SessionMeta, SessionStream, UpperBodyPose, NUM_JOINTS, UPPER_BODY_JOINTS};
use crate::tracker::{Track, TrackEntry};

pub use templates::{signature_holds, template_pose, Variation, SHOULDER_WIDTH_PX, TEMPLATE_CONFIDENCE};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("class mix must hold 13 non-negative proportions summing to 1")]
    InvalidMix,
    #[error("invalid synth configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatLayout {
    pub columns: usize,
    /// Shoulder midpoint of the first seat, in pixels.
    pub origin: (f64, f64),
    pub spacing: (f64, f64),
}

impl Default for SeatLayout {
    fn default() -> Self {
        SeatLayout {
            columns: 5,
            origin: (280.0, 380.0),
            spacing: (340.0, 420.0),
        }
    }
}

impl SeatLayout {
    pub fn seat(&self, student: usize) -> (f64, f64) {
        let (row, col) = (student / self.columns, student % self.columns);
        (
            self.origin.0 + col as f64 * self.spacing.0,
            self.origin.1 + row as f64 * self.spacing.1,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngagementScript {
    /// `schedule[student][window]`; windows past the end repeat the last entry.
    Explicit(Vec<Vec<EngagementLabel>>),
    /// Each window gets a class-wide off-task rate drawn uniformly from
    /// `[0, 2 f]`, and each student is off-task with that probability.
    Random { disengaged_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub students: usize,
    pub duration_seconds: f64,
    pub fps: f64,
    pub noise_sigma: f64,
    pub class_mix: [f64; NUM_ACTIONS],
    pub seat_layout: SeatLayout,
    pub engagement_script: Option<EngagementScript>,
    pub width: u32,
    pub height: u32,
    pub subclip_seconds: f64,
    pub window_seconds: f64,
    /// Per-frame probability that a detection gap of 1 to 4 frames starts.
    pub dropout_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            students: 10,
            duration_seconds: 1200.0,
            fps: 15.0,
            noise_sigma: 1.5,
            class_mix: [1.0 / NUM_ACTIONS as f64; NUM_ACTIONS],
            seat_layout: SeatLayout::default(),
            engagement_script: Some(EngagementScript::Random {
                disengaged_fraction: 0.2,
            }),
            width: 1920,
            height: 1080,
            subclip_seconds: 10.0,
            window_seconds: 120.0,
            dropout_rate: 0.002,
        }
    }
}

/// Largest body scale drawn for a student.
const MAX_SCALE: f64 = 1.1;

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        let sum: f64 = self.class_mix.iter().sum();
        if self.class_mix.iter().any(|&p| !(p >= 0.0 && p.is_finite())) || (sum - 1.0).abs() > 1e-6 {
            return Err(SynthError::InvalidMix);
        }
        if self.students == 0 {
            return bad("students must be at least 1");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.fps > 0.0 && self.fps.is_finite() && self.duration_seconds > 0.0 && self.duration_seconds.is_finite()) {
            return bad("fps and duration must be positive");
        }
        if !(self.subclip_seconds * self.fps >= 1.0 && self.window_seconds >= self.subclip_seconds) {
            return bad("sub-clips must span a frame and fit in a window");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.seat_layout.columns == 0 {
            return bad("seat layout needs at least one column");
        }
        let unit = SHOULDER_WIDTH_PX * MAX_SCALE;
        for s in 0..self.students {
            let (x, y) = self.seat_layout.seat(s);
            if x - 1.2 * unit < 0.0
                || x + 1.2 * unit >= self.width as f64
                || y - 1.6 * unit < 0.0
                || y + 1.2 * unit >= self.height as f64
            {
                return bad(&format!("seat {s} does not fit in the frame"));
            }
        }
        match &self.engagement_script {
            Some(EngagementScript::Explicit(rows)) => {
                if rows.len() != self.students || rows.iter().any(|r| r.is_empty()) {
                    return bad("explicit script needs a non-empty schedule per student");
                }
            }
            Some(EngagementScript::Random { disengaged_fraction: f }) => {
                if !(0.0..=0.5).contains(f) {
                    return bad("disengaged_fraction must lie in [0, 0.5]");
                }
            }
            None => {}
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration_seconds * self.fps).round() as u64
    }

    pub fn subclip_frames(&self) -> u64 {
        (self.subclip_seconds * self.fps).round() as u64
    }

    pub fn window_frames(&self) -> u64 {
        (self.window_seconds * self.fps).round() as u64
    }

    pub fn meta(&self) -> SessionMeta {
        SessionMeta {
            width: self.width,
            height: self.height,
            fps: self.fps,
        }
    }
}

/// Mixes a seed with stream and index tags (splitmix64 finaliser).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_CLIP: u64 = 1;
const STREAM_STUDENT: u64 = 2;
const STREAM_SUBCLIP: u64 = 3;
const STREAM_SCRIPT: u64 = 4;
const STREAM_CALIBRATION: u64 = 5;

fn noisy<R: Rng>(pose: UpperBodyPose, sigma: f64, width: f64, height: f64, rng: &mut R) -> UpperBodyPose {
    if sigma == 0.0 {
        return pose;
    }
    let jitter = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let conf = Normal::new(0.0, 0.04).expect("constant");
    UpperBodyPose::new(pose.keypoints.map(|k| {
        let x = (k.x + jitter.sample(rng)).clamp(0.0, width - 1.0);
        let y = (k.y + jitter.sample(rng)).clamp(0.0, height - 1.0);
        let c = (k.c + conf.sample(rng)).clamp(0.3, 1.0);
        Keypoint::new(x, y, c)
    }))
}

fn sample_gaze<R: Rng>(rng: &mut R, at_target: bool) -> f64 {
    if at_target {
        Normal::new(0.0, 0.05).expect("constant").sample(rng)
    } else {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        side * rng.gen_range(0.35..0.75)
    }
}

/// A labelled action clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionClip {
    pub label: ActionLabel,
    pub variation: Variation,
    pub poses: Vec<UpperBodyPose>,
}

/// Frame size used for standalone clips.
pub const CLIP_FRAME: (u32, u32) = (1920, 1080);

/// Template poses of `action` with a seeded variation, placement and gaze,
/// plus Gaussian jitter of `noise_sigma` pixels.
pub fn generate_action_clip(action: ActionLabel, seconds: f64, fps: f64, noise_sigma: f64, seed: u64) -> ActionClip {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_CLIP, action.code() as u64));
    let center = (rng.gen_range(240.0..1680.0), rng.gen_range(260.0..860.0));
    let scale = rng.gen_range(0.85..1.15);
    let at_target = rng.gen_bool(0.5);
    let gaze = sample_gaze(&mut rng, at_target);
    let variation = Variation::sample(&mut rng, center, scale, gaze);
    let n = (seconds * fps).round().max(1.0) as usize;
    let (w, h) = (CLIP_FRAME.0 as f64, CLIP_FRAME.1 as f64);
    let poses = (0..n)
        .map(|i| noisy(template_pose(action, &variation, i as f64 / fps), noise_sigma, w, h, &mut rng))
        .collect();
    ActionClip {
        label: action,
        variation,
        poses,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclipTruth {
    pub start: u64,
    /// Exclusive.
    pub end: u64,
    pub action: ActionLabel,
    pub gaze_yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTruth {
    pub window: u64,
    pub label: Option<EngagementLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentTruth {
    pub student: usize,
    pub seat: (f64, f64),
    pub scale: f64,
    /// Frames without a detection; the student's track is every other frame.
    pub dropouts: Vec<u64>,
    pub subclips: Vec<SubclipTruth>,
    pub windows: Vec<WindowTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTruth {
    pub meta: SessionMeta,
    pub frames: u64,
    pub subclip_frames: u64,
    pub window_frames: u64,
    pub students: Vec<StudentTruth>,
}

impl SessionTruth {
    /// Student whose seat is closest to the track's mean shoulder midpoint.
    pub fn student_for_track(&self, track: &Track) -> Option<usize> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for e in &track.entries {
            let (l, r) = (e.pose.keypoints[5], e.pose.keypoints[6]);
            if l.is_visible() && r.is_visible() {
                sx += 0.5 * (l.x + r.x);
                sy += 0.5 * (l.y + r.y);
                n += 1.0;
            }
        }
        if n == 0.0 {
            return None;
        }
        let (mx, my) = (sx / n, sy / n);
        self.students
            .iter()
            .min_by(|a, b| {
                let da = (a.seat.0 - mx).hypot(a.seat.1 - my);
                let db = (b.seat.0 - mx).hypot(b.seat.1 - my);
                da.total_cmp(&db)
            })
            .map(|s| s.student)
    }

    pub fn window_label(&self, student: usize, window: u64) -> Option<EngagementLabel> {
        self.students
            .get(student)?
            .windows
            .iter()
            .find(|w| w.window == window)?
            .label
    }
}

fn categorical<R: Rng>(rng: &mut R, mix: &[f64; NUM_ACTIONS], allowed: &[ActionLabel]) -> Option<ActionLabel> {
    let weights: Vec<f64> = allowed.iter().map(|a| mix[a.code()]).collect();
    let dist = WeightedIndex::new(&weights).ok()?;
    Some(allowed[dist.sample(rng)])
}

fn draw_action<R: Rng>(rng: &mut R, mix: &[f64; NUM_ACTIONS], state: Option<EngagementLabel>) -> ActionLabel {
    let amb = ActionLabel::CrossingArmsOrSupportingHead;
    let on: Vec<ActionLabel> = ActionLabel::ENGAGED.iter().copied().chain([amb]).collect();
    let off: Vec<ActionLabel> = ActionLabel::DISENGAGED.iter().copied().chain([amb]).collect();
    let pick = match state {
        None => None,
        Some(EngagementLabel::Engaged) => categorical(rng, mix, &on),
        Some(EngagementLabel::Disengaged) => categorical(rng, mix, &off),
    };
    pick.or_else(|| categorical(rng, mix, &ActionLabel::ALL))
        .expect("validated mix has positive mass")
}

fn gaze_at_target_probability(state: Option<EngagementLabel>) -> f64 {
    match state {
        None => 0.7,
        Some(EngagementLabel::Engaged) => 0.9,
        Some(EngagementLabel::Disengaged) => 0.35,
    }
}

fn script_states(config: &SynthConfig, windows: u64) -> Vec<Vec<Option<EngagementLabel>>> {
    match &config.engagement_script {
        None => vec![vec![None; windows as usize]; config.students],
        Some(EngagementScript::Explicit(rows)) => rows
            .iter()
            .map(|r| {
                (0..windows as usize)
                    .map(|w| Some(*r.get(w).unwrap_or(r.last().expect("validated"))))
                    .collect()
            })
            .collect(),
        Some(EngagementScript::Random { disengaged_fraction }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SCRIPT, 0));
            let rates: Vec<f64> = (0..windows)
                .map(|_| (2.0 * disengaged_fraction * rng.gen::<f64>()).min(1.0))
                .collect();
            (0..config.students)
                .map(|_| {
                    rates
                        .iter()
                        .map(|&p| {
                            Some(if rng.gen_bool(p) {
                                EngagementLabel::Disengaged
                            } else {
                                EngagementLabel::Engaged
                            })
                        })
                        .collect()
                })
                .collect()
        }
    }
}

fn round_to(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

struct StudentStream {
    truth: StudentTruth,
    /// `None` where the detection dropped out.
    poses: Vec<Option<UpperBodyPose>>,
}

fn generate_student(config: &SynthConfig, student: usize, states: &[Option<EngagementLabel>]) -> StudentStream {
    let n = config.frame_count();
    let sf = config.subclip_frames();
    let wf = config.window_frames();
    let (w, h) = (config.width as f64, config.height as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_STUDENT, student as u64));
    let seat = config.seat_layout.seat(student);
    let scale = rng.gen_range(0.9..MAX_SCALE);

    let mut dropouts = Vec::new();
    let mut gap = 0u32;
    for f in 0..n {
        if gap == 0 && config.dropout_rate > 0.0 && rng.gen_bool(config.dropout_rate) {
            gap = rng.gen_range(1..=4);
        }
        if gap > 0 {
            dropouts.push(f);
            gap -= 1;
        }
    }

    let mut subclips = Vec::new();
    let mut poses = Vec::with_capacity(n as usize);
    let mut dropped = dropouts.iter().peekable();
    for (j, start) in (0..n).step_by(sf as usize).enumerate() {
        let end = (start + sf).min(n);
        let state = states[(start / wf) as usize];
        let index = (student as u64) << 32 | j as u64;
        let mut clip_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SUBCLIP, index));
        let action = draw_action(&mut clip_rng, &config.class_mix, state);
        let at_target = clip_rng.gen_bool(gaze_at_target_probability(state));
        let gaze = sample_gaze(&mut clip_rng, at_target);
        let variation = Variation::sample(&mut clip_rng, seat, scale, gaze);
        for f in start..end {
            let pose = template_pose(action, &variation, (f - start) as f64 / config.fps);
            let pose = noisy(pose, config.noise_sigma, w, h, &mut clip_rng);
            if dropped.peek() == Some(&&f) {
                dropped.next();
                poses.push(None);
            } else {
                poses.push(Some(UpperBodyPose::new(pose.keypoints.map(|k| {
                    Keypoint::new(round_to(k.x, 0.01), round_to(k.y, 0.01), round_to(k.c, 0.001))
                }))));
            }
        }
        subclips.push(SubclipTruth {
            start,
            end,
            action,
            gaze_yaw: gaze,
        });
    }
    let windows = states
        .iter()
        .enumerate()
        .map(|(k, &label)| WindowTruth {
            window: k as u64,
            label,
        })
        .collect();
    StudentStream {
        truth: StudentTruth {
            student,
            seat,
            scale,
            dropouts,
            subclips,
            windows,
        },
        poses,
    }
}

fn full_pose(pose: &UpperBodyPose) -> PersonPose {
    let mut keypoints = [Keypoint::MISSING; NUM_JOINTS];
    keypoints[..UPPER_BODY_JOINTS].copy_from_slice(&pose.keypoints);
    PersonPose { keypoints }
}

/// Generates a session and its ground truth. Detections in a frame are
/// listed in seat order.
pub fn generate_session(config: &SynthConfig) -> Result<(SessionStream, SessionTruth), SynthError> {
    config.validate()?;
    let n = config.frame_count();
    let windows = n.div_ceil(config.window_frames());
    let states = script_states(config, windows);
    let students: Vec<StudentStream> = (0..config.students)
        .into_par_iter()
        .map(|s| generate_student(config, s, &states[s]))
        .collect();
    let frames = (0..n)
        .map(|f| Frame {
            index: f,
            poses: students
                .iter()
                .filter_map(|s| s.poses[f as usize].as_ref().map(full_pose))
                .collect(),
        })
        .collect();
    let truth = SessionTruth {
        meta: config.meta(),
        frames: n,
        subclip_frames: config.subclip_frames(),
        window_frames: config.window_frames(),
        students: students.into_iter().map(|s| s.truth).collect(),
    };
    Ok((
        SessionStream {
            meta: config.meta(),
            frames,
        },
        truth,
    ))
}

/// Ground-truth tracks (one per student, id = student index) recovered from
/// a generated session.
pub fn ground_truth_tracks(session: &SessionStream, truth: &SessionTruth) -> Vec<Track> {
    let mut tracks: Vec<Track> = truth
        .students
        .iter()
        .map(|s| Track {
            id: s.student as u64,
            entries: Vec::new(),
        })
        .collect();
    let mut cursors = vec![0usize; truth.students.len()];
    for frame in &session.frames {
        let mut detections = frame.poses.iter();
        for (s, student) in truth.students.iter().enumerate() {
            let c = &mut cursors[s];
            while *c < student.dropouts.len() && student.dropouts[*c] < frame.index {
                *c += 1;
            }
            if student.dropouts.get(*c) == Some(&frame.index) {
                continue;
            }
            if let Some(p) = detections.next() {
                tracks[s].entries.push(TrackEntry {
                    frame: frame.index,
                    pose: crate::ingest::select_upper_body(p),
                });
            }
        }
    }
    tracks
}

/// A short session in which every student faces the target, for gaze
/// calibration.
pub fn generate_calibration(config: &SynthConfig, seconds: f64) -> Result<SessionStream, SynthError> {
    config.validate()?;
    let n = (seconds * config.fps).round().max(1.0) as u64;
    let (w, h) = (config.width as f64, config.height as f64);
    let mut per_student = Vec::with_capacity(config.students);
    for s in 0..config.students {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_CALIBRATION, s as u64));
        let mut v = Variation::neutral(config.seat_layout.seat(s), rng.gen_range(0.9..MAX_SCALE));
        v.phase = rng.gen_range(0.0..1.0);
        let poses: Vec<UpperBodyPose> = (0..n)
            .map(|f| {
                v.gaze_yaw = sample_gaze(&mut rng, true);
                let p = template_pose(ActionLabel::CrossingArmsOrSupportingHead, &v, f as f64 / config.fps);
                noisy(p, config.noise_sigma, w, h, &mut rng)
            })
            .collect();
        per_student.push(poses);
    }
    let frames = (0..n)
        .map(|f| Frame {
            index: f,
            poses: per_student.iter().map(|p| full_pose(&p[f as usize])).collect(),
        })
        .collect();
    Ok(SessionStream {
        meta: config.meta(),
        frames,
    })
}
