//! Exhaustive per-frame assignment tracker and random drifting-box streams.

use engage_core::ingest::{select_upper_body, Frame, Keypoint, PersonPose, SessionMeta, SessionStream, NUM_JOINTS};
use engage_core::tracker::{iou, keypoint_bbox, BBox, Track, TrackEntry, TrackerConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn person(b: &BBox) -> PersonPose {
    let mut keypoints = [Keypoint::MISSING; NUM_JOINTS];
    keypoints[0] = Keypoint::new(b.x_min, b.y_min, 1.0);
    keypoints[1] = Keypoint::new(b.x_max, b.y_max, 1.0);
    PersonPose { keypoints }
}

/// Persons drifting from random starting boxes, each missing from some
/// frames.
pub fn random_stream(rng: &mut ChaCha8Rng) -> SessionStream {
    let persons = rng.gen_range(1..=3);
    let frames = rng.gen_range(1..=8);
    let mut boxes: Vec<(f64, f64, f64, f64)> = (0..persons)
        .map(|_| (rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0), rng.gen_range(10.0..30.0), rng.gen_range(10.0..30.0)))
        .collect();
    let mut out = Vec::new();
    for f in 0..frames {
        let mut poses = Vec::new();
        for b in &mut boxes {
            b.0 = (b.0 + rng.gen_range(-4.0..4.0)).clamp(0.0, 60.0);
            b.1 = (b.1 + rng.gen_range(-4.0..4.0)).clamp(0.0, 60.0);
            if rng.gen_bool(0.85) {
                poses.push(person(&BBox::new(b.0, b.1, b.0 + b.2, b.1 + b.3)));
            }
        }
        if rng.gen_bool(0.3) {
            poses.reverse();
        }
        out.push(Frame { index: f, poses });
    }
    SessionStream {
        meta: SessionMeta {
            width: 100,
            height: 100,
            fps: 15.0,
        },
        frames: out,
    }
}

struct Active {
    track: usize,
    bbox: BBox,
    last_seen: u64,
}

/// Best matching of `pairs` by total IoU, by exhaustive search.
fn best_matching(pairs: &[(f64, usize, usize)], tracks: usize, dets: usize) -> Vec<(usize, usize)> {
    fn go(
        pairs: &[(f64, usize, usize)],
        i: usize,
        t_used: &mut Vec<bool>,
        d_used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        score: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if i == pairs.len() {
            if score > best.0 {
                *best = (score, cur.clone());
            }
            return;
        }
        go(pairs, i + 1, t_used, d_used, cur, score, best);
        let (w, t, d) = pairs[i];
        if !t_used[t] && !d_used[d] {
            t_used[t] = true;
            d_used[d] = true;
            cur.push((t, d));
            go(pairs, i + 1, t_used, d_used, cur, score + w, best);
            cur.pop();
            t_used[t] = false;
            d_used[d] = false;
        }
    }
    let mut best = (-1.0, Vec::new());
    go(pairs, 0, &mut vec![false; tracks], &mut vec![false; dets], &mut Vec::new(), 0.0, &mut best);
    best.1
}

/// Tracker with exhaustive optimal per-frame assignment. Returns `None`
/// when two pairs sharing a track or a detection have IoUs within
/// `separation` of each other.
pub fn oracle(stream: &SessionStream, config: &TrackerConfig, separation: f64) -> Option<Vec<Track>> {
    let mut tracks: Vec<Track> = Vec::new();
    let mut active: Vec<Active> = Vec::new();
    for frame in &stream.frames {
        active.retain(|a| frame.index - a.last_seen - 1 <= config.max_gap);
        let dets: Vec<_> = frame
            .poses
            .iter()
            .map(select_upper_body)
            .filter_map(|p| keypoint_bbox(&p, config.conf_threshold).map(|b| (p, b)))
            .collect();
        let mut pairs = Vec::new();
        let mut overlapping = Vec::new();
        for (ai, a) in active.iter().enumerate() {
            for (di, (_, b)) in dets.iter().enumerate() {
                let v = iou(&a.bbox, b);
                if v > 0.0 {
                    overlapping.push((v, ai, di));
                }
                if v >= config.iou_threshold {
                    pairs.push((v, ai, di));
                }
            }
        }
        // Pairs competing for a track or a detection must be well separated.
        for (i, p) in overlapping.iter().enumerate() {
            for q in &overlapping[i + 1..] {
                if (p.1 == q.1 || p.2 == q.2) && (p.0 - q.0).abs() <= separation {
                    return None;
                }
            }
        }
        let matching = best_matching(&pairs, active.len(), dets.len());
        let mut det_used = vec![false; dets.len()];
        for (ai, di) in matching {
            det_used[di] = true;
            let (pose, bbox) = dets[di];
            active[ai].bbox = bbox;
            active[ai].last_seen = frame.index;
            tracks[active[ai].track].entries.push(TrackEntry { frame: frame.index, pose });
        }
        for (di, (pose, bbox)) in dets.iter().enumerate() {
            if !det_used[di] {
                let id = tracks.len();
                tracks.push(Track {
                    id: id as u64,
                    entries: vec![TrackEntry { frame: frame.index, pose: *pose }],
                });
                active.push(Active {
                    track: id,
                    bbox: *bbox,
                    last_seen: frame.index,
                });
            }
        }
    }
    Some(tracks)
}


/// Number of accepted instances, out of `cases`, on which greedy association
/// equals the oracle. Instances with confusable IoUs are redrawn.
pub fn greedy_agreement(seed: u64, cases: usize) -> usize {
    use rand::SeedableRng;
    let config = TrackerConfig {
        max_gap: 2,
        ..TrackerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut agree) = (0, 0);
    while checked < cases {
        let stream = random_stream(&mut rng);
        let Some(expected) = oracle(&stream, &config, 0.2) else {
            continue;
        };
        checked += 1;
        if engage_core::tracker::associate(&stream, &config).unwrap() == expected {
            agree += 1;
        }
    }
    agree
}
