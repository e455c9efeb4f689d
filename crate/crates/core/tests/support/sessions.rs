//! Seeded random skeleton sessions and pose segments.

use engage_core::ingest::{Frame, Keypoint, PersonPose, SessionMeta, SessionStream, UpperBodyPose, NUM_JOINTS, UPPER_BODY_JOINTS};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn keypoint(rng: &mut ChaCha8Rng, width: u32, height: u32) -> Keypoint {
    let (x, y) = (rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64));
    match rng.gen_range(0..8) {
        0 => Keypoint::MISSING,
        1 => Keypoint::new(x, y, 0.0),
        _ => Keypoint::new(x, y, rng.gen_range(0.0001..=1.0)),
    }
}

/// A valid session with arbitrary `f64` coordinates and gaps in the frame
/// index.
pub fn random_session(rng: &mut ChaCha8Rng) -> SessionStream {
    let width = rng.gen_range(1..4000);
    let height = rng.gen_range(1..3000);
    let meta = SessionMeta {
        width,
        height,
        fps: rng.gen_range(1.0..120.0),
    };
    let mut index = 0;
    let frames = (0..rng.gen_range(1..8))
        .map(|_| {
            index += rng.gen_range(1..5);
            let poses = (0..rng.gen_range(0..4))
                .map(|_| {
                    let mut keypoints = [Keypoint::MISSING; NUM_JOINTS];
                    for k in &mut keypoints {
                        *k = keypoint(rng, width, height);
                    }
                    keypoints[rng.gen_range(0..NUM_JOINTS)].c = rng.gen_range(0.0001..=1.0);
                    PersonPose { keypoints }
                })
                .collect();
            Frame { index, poses }
        })
        .collect();
    SessionStream { meta, frames }
}

/// Segment with joints on a 1/16 pixel grid, so that grid translations are
/// exact in floating point.
pub fn grid_segment(rng: &mut ChaCha8Rng) -> Vec<UpperBodyPose> {
    let frames = rng.gen_range(1..40);
    let mut segment: Vec<UpperBodyPose> = (0..frames)
        .map(|_| {
            let mut keypoints = [Keypoint::MISSING; UPPER_BODY_JOINTS];
            for k in &mut keypoints {
                if rng.gen_range(0..6) > 0 {
                    *k = Keypoint::new(
                        rng.gen_range(0..16_000) as f64 / 16.0,
                        rng.gen_range(0..16_000) as f64 / 16.0,
                        rng.gen_range(1..=1000) as f64 / 1000.0,
                    );
                }
            }
            UpperBodyPose::new(keypoints)
        })
        .collect();
    if segment.iter().all(|p| p.is_empty()) {
        segment[0].keypoints[0] = Keypoint::new(10.0, 10.0, 1.0);
    }
    segment
}

pub fn map_joints(segment: &[UpperBodyPose], f: impl Fn(f64, f64) -> (f64, f64)) -> Vec<UpperBodyPose> {
    segment
        .iter()
        .map(|p| {
            let mut q = *p;
            for k in q.keypoints.iter_mut().filter(|k| k.is_visible()) {
                (k.x, k.y) = f(k.x, k.y);
            }
            q
        })
        .collect()
}
