use gcndance::audio::StyleLabel;
use gcndance::skeleton::{
    knot_frames, normalize_motion, normalize_pose, recover_missing_joints, smooth_motion, Motion, NormalizeMode, Pose,
    SkeletonTopology, JOINTS, RECOVERED_CONFIDENCE, ROOT,
};
use proptest::prelude::*;

fn pose_strategy() -> impl Strategy<Value = Pose> {
    proptest::collection::vec((-500.0f64..500.0, -500.0f64..500.0), JOINTS).prop_filter_map("degenerate", |xy| {
        let mut j = [[0.0; 2]; JOINTS];
        for (dst, (x, y)) in j.iter_mut().zip(xy) {
            *dst = [x, y];
        }
        let p = Pose::new(j);
        let bb = p.bbox()?;
        ((bb[2] - bb[0]).hypot(bb[3] - bb[1]) > 1e-3).then_some(p)
    })
}

fn motion_strategy(max_frames: usize) -> impl Strategy<Value = Motion> {
    proptest::collection::vec(pose_strategy(), 1..max_frames).prop_map(|f| Motion::new(f, 24, Some(StyleLabel::MJ)))
}

fn transform(p: &Pose, s: f64, t: [f64; 2]) -> Pose {
    let mut q = p.clone();
    for j in q.joints.iter_mut() {
        *j = [s * j[0] + t[0], s * j[1] + t[1]];
    }
    q
}

fn max_diff(a: &Pose, b: &Pose) -> f64 {
    a.joints.iter().zip(&b.joints).map(|(x, y)| (x[0] - y[0]).abs().max((x[1] - y[1]).abs())).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn normalization_ignores_scale_and_translation(
        p in pose_strategy(), s in 0.01f64..100.0, tx in -1e4f64..1e4, ty in -1e4f64..1e4,
    ) {
        let a = normalize_pose(&p).unwrap();
        let b = normalize_pose(&transform(&p, s, [tx, ty])).unwrap();
        prop_assert!(max_diff(&a, &b) < 1e-9);
    }

    #[test]
    fn normalization_is_idempotent_and_centred(p in pose_strategy()) {
        let once = normalize_pose(&p).unwrap();
        let twice = normalize_pose(&once).unwrap();
        prop_assert!(max_diff(&once, &twice) < 1e-9);
        let bb = once.bbox().unwrap();
        prop_assert!(((bb[0] + bb[2]) / 2.0 - 0.5).abs() < 1e-12);
        prop_assert!(((bb[1] + bb[3]) / 2.0 - 0.5).abs() < 1e-12);
        prop_assert!(((bb[2] - bb[0]).hypot(bb[3] - bb[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn per_sequence_mode_keeps_relative_motion(m in motion_strategy(6), dx in -50.0f64..50.0) {
        let mut shifted = m.clone();
        for p in &mut shifted.frames {
            *p = transform(p, 1.0, [dx, 0.0]);
        }
        let a = normalize_motion(&m, NormalizeMode::PerSequence).unwrap();
        let b = normalize_motion(&shifted, NormalizeMode::PerSequence).unwrap();
        for (x, y) in a.frames.iter().zip(&b.frames) {
            prop_assert!(max_diff(x, y) < 1e-9);
        }
    }

    #[test]
    fn recovery_keeps_observed_values(
        m in motion_strategy(8),
        drops in proptest::collection::vec((1usize..8, 0usize..JOINTS), 0..30),
    ) {
        let mut holes = m.clone();
        for (t, j) in drops {
            // frame 0 stays complete, so every joint has a reference frame
            if t < holes.len() && j != ROOT {
                holes.frames[t].confidence[j] = 0.0;
                holes.frames[t].joints[j] = [f64::NAN, f64::NAN];
            }
        }
        let out = recover_missing_joints(&holes, &SkeletonTopology::body25()).unwrap();
        for (a, b) in holes.frames.iter().zip(&out.frames) {
            for j in 0..JOINTS {
                if a.is_present(j) {
                    prop_assert_eq!(a.joints[j][0].to_bits(), b.joints[j][0].to_bits());
                    prop_assert_eq!(a.joints[j][1].to_bits(), b.joints[j][1].to_bits());
                    prop_assert_eq!(a.confidence[j], b.confidence[j]);
                } else {
                    prop_assert_eq!(b.confidence[j], RECOVERED_CONFIDENCE);
                    prop_assert!(b.joints[j][0].is_finite() && b.joints[j][1].is_finite());
                }
            }
        }
    }

    #[test]
    fn smoothing_keeps_length_fps_and_knots(m in motion_strategy(40), stride in 1usize..6) {
        prop_assume!(m.len() >= 2 * stride && m.len() >= 2);
        let s = smooth_motion(&m, stride).unwrap();
        prop_assert_eq!(s.len(), m.len());
        prop_assert_eq!(s.fps, m.fps);
        for k in knot_frames(m.len(), stride) {
            prop_assert!(max_diff(&s.frames[k], &m.frames[k]) < 1e-9);
        }
    }

    #[test]
    fn json_round_trip_is_exact(m in motion_strategy(5)) {
        let back = Motion::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn topology_is_a_rooted_tree() {
    let topo = SkeletonTopology::body25();
    assert!(topo.validate().is_ok());
    assert_eq!(topo.joint_count(), JOINTS);
    assert_eq!(topo.root(), ROOT);
    assert_eq!(topo.parent(ROOT), None);
    let order = topo.topological_order();
    assert_eq!(order.len(), JOINTS);
    for (pos, &j) in order.iter().enumerate() {
        if let Some(p) = topo.parent(j) {
            assert!(order[..pos].contains(&p));
        }
    }
}

#[test]
fn smoothing_rejects_zero_stride_and_short_motions() {
    let m = Motion::new(vec![Pose::new([[1.0, 2.0]; JOINTS]); 6], 24, None);
    assert!(smooth_motion(&m, 0).is_err());
    assert!(smooth_motion(&m, 4).is_err());
    assert_eq!(smooth_motion(&m, 1).unwrap(), m);
}
