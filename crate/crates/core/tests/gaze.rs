use engage_core::gaze::{gaze_at_target_frequency, head_yaw_proxy, GazeConfig};
use engage_core::ingest::{Keypoint, UpperBodyPose, LEFT_EAR, LEFT_EYE, NOSE, RIGHT_EAR, RIGHT_EYE, UPPER_BODY_JOINTS};
use proptest::prelude::*;

fn joint() -> impl Strategy<Value = Keypoint> {
    prop_oneof![
        1 => Just(Keypoint::MISSING),
        6 => (0.0..1000.0f64, 0.0..1000.0f64, 0.0..=1.0f64).prop_map(|(x, y, c)| Keypoint::new(x, y, c)),
    ]
}

fn pose() -> impl Strategy<Value = UpperBodyPose> {
    prop::collection::vec(joint(), UPPER_BODY_JOINTS).prop_map(|k| UpperBodyPose::new(k.try_into().unwrap()))
}

fn transform(p: &UpperBodyPose, f: impl Fn(f64, f64) -> (f64, f64)) -> UpperBodyPose {
    let mut q = *p;
    for k in &mut q.keypoints {
        (k.x, k.y) = f(k.x, k.y);
    }
    q
}

proptest! {
    #[test]
    fn proxy_ignores_similarity_transforms(p in pose(), s in 0.05..20.0f64, dx in -500.0..500.0f64, dy in -500.0..500.0f64) {
        let q = transform(&p, |x, y| (s * x + dx, s * y + dy));
        match (head_yaw_proxy(&p, 0.3), head_yaw_proxy(&q, 0.3)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
    }

    #[test]
    fn mirroring_negates_proxy(p in pose()) {
        let mut q = transform(&p, |x, y| (1000.0 - x, y));
        q.keypoints.swap(LEFT_EAR, RIGHT_EAR);
        q.keypoints.swap(LEFT_EYE, RIGHT_EYE);
        if let Some(a) = head_yaw_proxy(&p, 0.3) {
            let b = head_yaw_proxy(&q, 0.3).unwrap();
            prop_assert!((a + b).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&a));
        } else {
            prop_assert_eq!(head_yaw_proxy(&q, 0.3), None);
        }
    }

    #[test]
    fn frequency_ignores_frame_order(mut window in prop::collection::vec(pose(), 1..40), seed in any::<u64>()) {
        let config = GazeConfig { tolerance: 0.3, ..GazeConfig::default() };
        let before = gaze_at_target_frequency(&window, &config).unwrap();
        let n = window.len();
        for i in 0..n {
            window.swap(i, (seed.rotate_left(i as u32) as usize) % n);
        }
        let after = gaze_at_target_frequency(&window, &config).unwrap();
        prop_assert_eq!(before, after);
        prop_assert!((0.0..=1.0).contains(&before.frequency));
    }
}

#[test]
fn undefined_frames_leave_the_denominator() {
    let mut frontal = [Keypoint::MISSING; UPPER_BODY_JOINTS];
    frontal[NOSE] = Keypoint::new(100.0, 100.0, 0.9);
    frontal[LEFT_EAR] = Keypoint::new(120.0, 95.0, 0.9);
    frontal[RIGHT_EAR] = Keypoint::new(80.0, 95.0, 0.9);
    let mut turned = frontal;
    turned[NOSE].x = 116.0;
    let blind = UpperBodyPose::new([Keypoint::MISSING; UPPER_BODY_JOINTS]);
    let mut window = vec![blind; 4];
    window.extend([UpperBodyPose::new(frontal); 3]);
    window.extend([UpperBodyPose::new(turned); 3]);
    let g = gaze_at_target_frequency(&window, &GazeConfig::default()).unwrap();
    assert_eq!((g.defined_frames, g.total_frames), (6, 10));
    assert_eq!(g.frequency, 0.5);
}
