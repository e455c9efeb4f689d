//! Kinematic sketches of the 13 actions.
//!
//! Poses are built in a body frame centred on the shoulder midpoint, with
//! unit length equal to the shoulder width and `y` pointing down. The
//! person's left is image `+x` (students face the camera). Every template
//! is a closed-form function of time and a sampled [`Variation`].
//!
//! Signatures checked by [`signature_holds`], in shoulder widths `S`:
//!
//! | action | signature |
//! |---|---|
//! | writing | right wrist below the shoulders in every frame, oscillation amplitude under 15 px |
//! | raising_hand | right wrist above the right shoulder in at least half the frames |
//! | reading | wrists apart at book height, head pitched down |
//! | discussing | head-yaw proxy magnitude at least 0.3 in 70% of frames |
//! | typing_keyboard | both wrists low and less than `0.5 S` apart |
//! | playing_phone | wrists together at chest height, head pitched down |
//! | wiping_face | right wrist at the face in a quarter of frames, moving sideways |
//! | yawning | at least two left wrist approaches to the nose |
//! | checking_time | left wrist raised to the chest in 30% of frames |
//! | fiddling_hair | right wrist next to the right ear in 80% of frames |
//! | drinking | right wrist at the mouth with the elbow raised in 30% of frames |
//! | eating | at least three right wrist approaches to the nose |
//! | crossing_arms_or_supporting_head | wrists crossed, or a wrist under the chin |

use std::f64::consts::PI;

use rand::Rng;

use crate::gaze::head_yaw_proxy;
use crate::features::ActionLabel;
use crate::ingest::{
    Keypoint, UpperBodyPose, LEFT_EAR, LEFT_ELBOW, LEFT_EYE, LEFT_SHOULDER, LEFT_WRIST, NOSE,
    RIGHT_EAR, RIGHT_ELBOW, RIGHT_EYE, RIGHT_SHOULDER, RIGHT_WRIST, UPPER_BODY_JOINTS,
};

/// Shoulder width in pixels at scale 1.
pub const SHOULDER_WIDTH_PX: f64 = 80.0;
/// Confidence of every joint in a noiseless template.
pub const TEMPLATE_CONFIDENCE: f64 = 0.9;

/// Per-clip randomisation of a template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variation {
    /// Shoulder midpoint in pixels.
    pub center: (f64, f64),
    pub scale: f64,
    /// Phase offset in periods, `[0, 1)`.
    pub phase: f64,
    pub amplitude: f64,
    /// Multiplier on every period.
    pub tempo: f64,
    /// `-1` or `1`: which neighbour a discussing student turns to.
    pub side: f64,
    /// `0` crossing arms, `1` supporting head.
    pub variant: u8,
    /// Head-yaw proxy the student holds, outside of discussing.
    pub gaze_yaw: f64,
}

impl Variation {
    pub fn neutral(center: (f64, f64), scale: f64) -> Self {
        Variation {
            center,
            scale,
            phase: 0.0,
            amplitude: 1.0,
            tempo: 1.0,
            side: 1.0,
            variant: 0,
            gaze_yaw: 0.0,
        }
    }

    /// Draws phase, amplitude, tempo, side and variant; position, scale and
    /// gaze are left to the caller.
    pub fn sample<R: Rng>(rng: &mut R, center: (f64, f64), scale: f64, gaze_yaw: f64) -> Self {
        Variation {
            center,
            scale,
            phase: rng.gen_range(0.0..1.0),
            amplitude: rng.gen_range(0.85..1.15),
            tempo: rng.gen_range(0.85..1.15),
            side: if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            variant: rng.gen_range(0..2),
            gaze_yaw,
        }
    }
}

type P = (f64, f64);

fn lerp(a: P, b: P, t: f64) -> P {
    (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
}

fn osc(t: f64, period: f64, phase: f64) -> f64 {
    (2.0 * PI * (t / period + phase)).sin()
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Periodic plateau in `[0, 1]`: rises over `ramp`, holds, falls over
/// `ramp`, active for `duty` of each period.
fn plateau(t: f64, period: f64, phase: f64, duty: f64, ramp: f64) -> f64 {
    let u = (t / period + phase).rem_euclid(1.0);
    if u >= duty {
        0.0
    } else if u < ramp {
        smoothstep(u / ramp)
    } else if u > duty - ramp {
        smoothstep((duty - u) / ramp)
    } else {
        1.0
    }
}

struct Body {
    lw: P,
    rw: P,
    le: P,
    re: P,
    yaw: f64,
    pitch: f64,
    roll: f64,
}

const REST_LW: P = (0.35, 0.85);
const REST_RW: P = (-0.35, 0.85);
const REST_LE: P = (0.62, 0.55);
const REST_RE: P = (-0.62, 0.55);

fn body(action: ActionLabel, v: &Variation, t: f64) -> Body {
    let (ph, a, tp) = (v.phase, v.amplitude, v.tempo);
    let mut b = Body {
        lw: REST_LW,
        rw: REST_RW,
        le: REST_LE,
        re: REST_RE,
        yaw: v.gaze_yaw,
        pitch: 0.0,
        roll: 0.0,
    };
    match action {
        ActionLabel::Writing => {
            b.pitch = 0.12;
            b.rw = (-0.08 + 0.07 * a * osc(t, 1.3 * tp, ph), 0.8 + 0.03 * osc(t, 0.65 * tp, ph));
            b.re = (-0.55, 0.5);
            b.lw = (0.3, 0.88);
        }
        ActionLabel::RaisingHand => {
            let h = plateau(t, 12.0 * tp, ph, 0.8, 0.06);
            let wave = 0.05 * osc(t, 1.5 * tp, ph) * h;
            b.rw = lerp(REST_RW, (-0.62 + wave, -1.35 * a), h);
            b.re = lerp(REST_RE, (-0.68, -0.45), h);
        }
        ActionLabel::Reading => {
            b.pitch = 0.15;
            let turn = plateau(t, 4.0 * tp, ph, 0.25, 0.1);
            b.lw = (0.3, 0.62);
            b.rw = (-0.3 + 0.5 * turn * a, 0.62 - 0.05 * turn);
            b.le = (0.65, 0.5);
            b.re = (-0.65, 0.5);
            b.yaw += 0.05 * osc(t, 3.0 * tp, ph);
        }
        ActionLabel::Discussing => {
            b.yaw = v.side * (0.5 + 0.1 * osc(t, 4.0 * tp, ph));
            b.pitch = 0.04 * osc(t, 1.7 * tp, ph);
            b.rw = (
                -0.3 + 0.2 * a * osc(t, 2.4 * tp, ph),
                0.3 + 0.15 * osc(t, 1.9 * tp, ph + 0.3),
            );
            b.re = (-0.62, 0.5 + 0.1 * osc(t, 1.9 * tp, ph + 0.3));
        }
        ActionLabel::TypingKeyboard => {
            b.pitch = 0.05;
            b.lw = (0.18, 0.92 + 0.025 * osc(t, 0.9 * tp, ph));
            b.rw = (-0.18, 0.92 + 0.025 * osc(t, 0.9 * tp, ph + 0.5));
            b.le = (0.6, 0.6);
            b.re = (-0.6, 0.6);
        }
        ActionLabel::PlayingPhone => {
            b.pitch = 0.25;
            b.lw = (0.08, 0.45);
            b.rw = (-0.08 + 0.02 * osc(t, 0.7 * tp, ph), 0.45 + 0.02 * a * osc(t, 1.1 * tp, ph));
            b.le = (0.55, 0.62);
            b.re = (-0.55, 0.62);
        }
        ActionLabel::WipingFace => {
            let h = plateau(t, 3.5 * tp, ph, 0.6, 0.1);
            let face = (-0.05 + 0.18 * a * osc(t, 0.9 * tp, ph), -0.5);
            b.rw = lerp(REST_RW, face, h);
            b.re = lerp(REST_RE, (-0.45, 0.1), h);
        }
        ActionLabel::Yawning => {
            let h = plateau(t, 3.6 * tp, ph, 0.45, 0.15);
            b.lw = lerp(REST_LW, (0.03, -0.52), h);
            b.le = lerp(REST_LE, (0.4, 0.15), h);
            b.pitch = -0.12 * a * h;
        }
        ActionLabel::CheckingTime => {
            let h = plateau(t, 5.0 * tp, ph, 0.6, 0.1);
            b.lw = lerp(REST_LW, (0.05, 0.3), h);
            b.le = lerp(REST_LE, (0.55, 0.35), h);
            b.pitch = 0.18 * h;
            b.yaw -= 0.15 * h;
        }
        ActionLabel::FiddlingHair => {
            let w = 2.0 * PI * (t / (1.4 * tp) + ph);
            b.rw = (-0.32 + 0.06 * a * w.cos(), -0.62 + 0.06 * a * w.sin());
            b.re = (-0.7, -0.05);
            b.roll = -0.1;
        }
        ActionLabel::Drinking => {
            let h = plateau(t, 7.0 * tp, ph, 0.7, 0.12);
            b.rw = lerp(REST_RW, (-0.06, -0.48), h);
            b.re = lerp(REST_RE, (-0.7, -0.15), h);
            b.pitch = -0.2 * a * h;
        }
        ActionLabel::Eating => {
            let h = plateau(t, 2.2 * tp, ph, 0.5, 0.2);
            b.rw = lerp((-0.15, 0.55), (-0.04, -0.5), h);
            b.re = lerp((-0.6, 0.6), (-0.5, 0.2), h);
            b.lw = (0.2, 0.55);
            b.pitch = 0.08;
        }
        ActionLabel::CrossingArmsOrSupportingHead => {
            let breath = 0.01 * osc(t, 4.0 * tp, ph);
            if v.variant == 0 {
                b.lw = (-0.28, 0.4 + breath);
                b.rw = (0.28, 0.42 + breath);
                b.le = (0.58, 0.5);
                b.re = (-0.58, 0.5);
            } else {
                b.le = (0.3, 0.95);
                b.lw = (0.12, -0.35 + breath);
                b.roll = 0.15;
                b.pitch = 0.05;
            }
        }
    }
    b
}

/// Noiseless pose of `action` at time `t` seconds.
pub fn template_pose(action: ActionLabel, v: &Variation, t: f64) -> UpperBodyPose {
    let b = body(action, v, t);
    let mut local = [(0.0, 0.0); UPPER_BODY_JOINTS];
    // The nose sits on the ear row, so with no pitch or roll the yaw proxy
    // equals `b.yaw` exactly.
    let delta = -b.yaw * 0.24;
    local[NOSE] = (delta, -0.6 + b.pitch);
    local[LEFT_EYE] = (delta + 0.11, -0.7 + 0.5 * b.pitch);
    local[RIGHT_EYE] = (delta - 0.11, -0.7 + 0.5 * b.pitch);
    local[LEFT_EAR] = (0.24, -0.6);
    local[RIGHT_EAR] = (-0.24, -0.6);
    if b.roll != 0.0 {
        let (s, c) = b.roll.sin_cos();
        let pivot = (0.0, -0.35);
        for p in &mut local[..=RIGHT_EAR] {
            let (dx, dy) = (p.0 - pivot.0, p.1 - pivot.1);
            *p = (pivot.0 + c * dx - s * dy, pivot.1 + s * dx + c * dy);
        }
    }
    local[LEFT_SHOULDER] = (0.5, 0.0);
    local[RIGHT_SHOULDER] = (-0.5, 0.0);
    local[LEFT_ELBOW] = b.le;
    local[RIGHT_ELBOW] = b.re;
    local[LEFT_WRIST] = b.lw;
    local[RIGHT_WRIST] = b.rw;
    let unit = SHOULDER_WIDTH_PX * v.scale;
    UpperBodyPose::new(local.map(|(u, w)| {
        Keypoint::new(v.center.0 + u * unit, v.center.1 + w * unit, TEMPLATE_CONFIDENCE)
    }))
}

struct Measure {
    s: f64,
    mid_x: f64,
    shoulder_y: f64,
}

impl Measure {
    fn of(poses: &[UpperBodyPose]) -> Self {
        let mut widths: Vec<f64> = poses
            .iter()
            .map(|p| (p.keypoints[LEFT_SHOULDER].x - p.keypoints[RIGHT_SHOULDER].x).abs())
            .collect();
        let mut mids: Vec<f64> = poses
            .iter()
            .map(|p| 0.5 * (p.keypoints[LEFT_SHOULDER].x + p.keypoints[RIGHT_SHOULDER].x))
            .collect();
        let mut ys: Vec<f64> = poses
            .iter()
            .map(|p| 0.5 * (p.keypoints[LEFT_SHOULDER].y + p.keypoints[RIGHT_SHOULDER].y))
            .collect();
        Measure {
            s: median(&mut widths).max(1e-9),
            mid_x: median(&mut mids),
            shoulder_y: median(&mut ys),
        }
    }

    fn uv(&self, k: &Keypoint) -> P {
        ((k.x - self.mid_x) / self.s, (k.y - self.shoulder_y) / self.s)
    }

    fn dist(&self, a: &Keypoint, b: &Keypoint) -> f64 {
        (a.x - b.x).hypot(a.y - b.y) / self.s
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn fraction(poses: &[UpperBodyPose], f: impl Fn(&UpperBodyPose) -> bool) -> f64 {
    poses.iter().filter(|p| f(p)).count() as f64 / poses.len().max(1) as f64
}

/// Number of times the distance series enters `< near` after having been
/// above `far` (a series starting near counts once).
fn approaches(d: impl Iterator<Item = f64>, near: f64, far: f64) -> usize {
    let mut armed = true;
    let mut count = 0;
    for x in d {
        if armed && x < near {
            count += 1;
            armed = false;
        } else if x > far {
            armed = true;
        }
    }
    count
}

fn percentile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

/// Checks the documented kinematic signature of `action` on a clip.
pub fn signature_holds(action: ActionLabel, poses: &[UpperBodyPose]) -> bool {
    if poses.is_empty() {
        return false;
    }
    let m = Measure::of(poses);
    let kp = |p: &UpperBodyPose, j: usize| p.keypoints[j];
    let uv = |p: &UpperBodyPose, j: usize| m.uv(&p.keypoints[j]);
    let pitch = |p: &UpperBodyPose| {
        let ear = 0.5 * (kp(p, LEFT_EAR).y + kp(p, RIGHT_EAR).y);
        (kp(p, NOSE).y - ear) / m.s
    };
    match action {
        ActionLabel::Writing => {
            let mut xs: Vec<f64> = poses.iter().map(|p| kp(p, RIGHT_WRIST).x).collect();
            let amp = (percentile(&mut xs, 0.95) - percentile(&mut xs, 0.05)) / 2.0;
            amp < 15.0 && fraction(poses, |p| uv(p, RIGHT_WRIST).1 > 0.3) == 1.0
        }
        ActionLabel::RaisingHand => {
            fraction(poses, |p| kp(p, RIGHT_WRIST).y < kp(p, RIGHT_SHOULDER).y) >= 0.5
        }
        ActionLabel::Reading => {
            let book = |p: &UpperBodyPose| {
                let (l, r) = (uv(p, LEFT_WRIST).1, uv(p, RIGHT_WRIST).1);
                (0.35..0.9).contains(&l) && (0.35..0.9).contains(&r)
            };
            let mut sep: Vec<f64> = poses
                .iter()
                .map(|p| uv(p, LEFT_WRIST).0 - uv(p, RIGHT_WRIST).0)
                .collect();
            let mut pitches: Vec<f64> = poses.iter().map(pitch).collect();
            fraction(poses, book) >= 0.9 && median(&mut sep) >= 0.4 && median(&mut pitches) > 0.08
        }
        ActionLabel::Discussing => {
            fraction(poses, |p| head_yaw_proxy(p, 0.0).is_some_and(|r| r.abs() >= 0.3)) >= 0.7
        }
        ActionLabel::TypingKeyboard => {
            let mut sep: Vec<f64> = poses
                .iter()
                .map(|p| (uv(p, LEFT_WRIST).0 - uv(p, RIGHT_WRIST).0).abs())
                .collect();
            fraction(poses, |p| uv(p, LEFT_WRIST).1 > 0.75 && uv(p, RIGHT_WRIST).1 > 0.75) >= 0.9
                && median(&mut sep) < 0.5
        }
        ActionLabel::PlayingPhone => {
            let mut gap: Vec<f64> = poses
                .iter()
                .map(|p| m.dist(&kp(p, LEFT_WRIST), &kp(p, RIGHT_WRIST)))
                .collect();
            let mut height: Vec<f64> = poses.iter().map(|p| uv(p, RIGHT_WRIST).1).collect();
            let mut pitches: Vec<f64> = poses.iter().map(pitch).collect();
            let h = median(&mut height);
            median(&mut gap) < 0.3 && (0.3..0.6).contains(&h) && median(&mut pitches) > 0.15
        }
        ActionLabel::WipingFace => {
            let near: Vec<&UpperBodyPose> = poses
                .iter()
                .filter(|p| m.dist(&kp(p, RIGHT_WRIST), &kp(p, NOSE)) < 0.45)
                .collect();
            let mut xs: Vec<f64> = near.iter().map(|p| uv(p, RIGHT_WRIST).0).collect();
            near.len() as f64 >= 0.25 * poses.len() as f64
                && percentile(&mut xs, 0.95) - percentile(&mut xs, 0.05) >= 0.2
        }
        ActionLabel::Yawning => {
            let d = poses.iter().map(|p| m.dist(&kp(p, LEFT_WRIST), &kp(p, NOSE)));
            approaches(d, 0.4, 0.7) >= 2
        }
        ActionLabel::CheckingTime => fraction(poses, |p| uv(p, LEFT_WRIST).1 < 0.5) >= 0.3,
        ActionLabel::FiddlingHair => {
            fraction(poses, |p| m.dist(&kp(p, RIGHT_WRIST), &kp(p, RIGHT_EAR)) < 0.35) >= 0.8
        }
        ActionLabel::Drinking => {
            fraction(poses, |p| {
                m.dist(&kp(p, RIGHT_WRIST), &kp(p, NOSE)) < 0.45 && uv(p, RIGHT_ELBOW).1 < 0.1
            }) >= 0.3
        }
        ActionLabel::Eating => {
            let d = poses.iter().map(|p| m.dist(&kp(p, RIGHT_WRIST), &kp(p, NOSE)));
            approaches(d, 0.4, 0.7) >= 3
        }
        ActionLabel::CrossingArmsOrSupportingHead => {
            let crossed = fraction(poses, |p| uv(p, LEFT_WRIST).0 < 0.0 && uv(p, RIGHT_WRIST).0 > 0.0);
            let chin = fraction(poses, |p| m.dist(&kp(p, LEFT_WRIST), &kp(p, NOSE)) < 0.45);
            crossed >= 0.9 || chin >= 0.9
        }
    }
}
