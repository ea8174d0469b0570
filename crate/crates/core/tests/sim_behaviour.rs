use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viewscale::sim::{
    clip_action, collect_demo, evaluate, make_rig, project_keypoint, render_observation, reset,
    rollout, scripted_expert, standard_rig, standard_rotations, state_is_consistent, step,
    CameraView, ExpertPolicy, RandomPolicy, RigRotation, RolloutConfig, TaskSpec,
    MAX_STEP_ROTATION, MAX_STEP_TRANSLATION,
};
use viewscale::{Action, Pose, Rotation, Vec3};

fn expert_success_rate(task: TaskSpec) -> f64 {
    let rig = vec![CameraView::front()];
    let ok = (0..200u64)
        .filter(|&s| collect_demo(&task, &rig, s, 0.0, s).is_some())
        .count();
    ok as f64 / 200.0
}

#[test]
fn expert_solves_both_tasks() {
    assert!(expert_success_rate(TaskSpec::reach()) >= 0.99);
    assert!(expert_success_rate(TaskSpec::pick_lift()) >= 0.95);
}

#[test]
fn expert_actions_respect_clip_bounds() {
    let task = TaskSpec::pick_lift();
    for seed in 0..50 {
        let mut s = reset(&task, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..60 {
            let a = scripted_expert(&s, &task, 0.05, &mut rng);
            assert!(a.dp.norm() <= MAX_STEP_TRANSLATION + 1e-12);
            assert!(a.dr.angle() <= MAX_STEP_ROTATION + 1e-9);
            assert!(!clip_action(&a).1);
            let (next, done) = step(&s, &task, &a);
            s = next;
            if done {
                break;
            }
        }
    }
}

#[test]
fn reset_is_deterministic_and_varied() {
    for task in [TaskSpec::reach(), TaskSpec::pick_lift()] {
        assert_eq!(reset(&task, 7), reset(&task, 7));
        let distinct: HashSet<[u64; 3]> = (0..100)
            .map(|s| reset(&task, s).object_pos.0.map(f64::to_bits))
            .collect();
        assert!(distinct.len() >= 99);
        for s in 0..100 {
            assert!(state_is_consistent(&reset(&task, s)));
        }
    }
}

#[test]
fn zero_action_only_advances_the_clock() {
    let task = TaskSpec::pick_lift();
    let s = reset(&task, 3);
    let (next, done) = step(&s, &task, &Action::zero());
    assert!(!done);
    assert_eq!(next.step_count, s.step_count + 1);
    assert_eq!(next.eef_pose, s.eef_pose);
    assert_eq!(next.object_pos, s.object_pos);
    assert_eq!(next.gripper_closed, s.gripper_closed);
}

#[test]
fn full_step_moves_exactly_the_clip_length() {
    let task = TaskSpec::pick_lift();
    let s = reset(&task, 5);
    let dir = (s.object_pos - s.eef_pose.translation).normalized();
    let a = Action::new(dir * MAX_STEP_TRANSLATION, Rotation::identity(), 0.0);
    let (next, _) = step(&s, &task, &a);
    let moved = next.eef_pose.translation - s.eef_pose.translation;
    assert!((moved.norm() - 0.05).abs() < 1e-12);
    assert!(moved.normalized().max_abs_diff(&dir) < 1e-12);
}

#[test]
fn grasp_requires_the_attach_radius() {
    let task = TaskSpec::pick_lift();
    let mut s = reset(&task, 11);
    let at = |d: f64| Vec3::new(s.object_pos.x(), s.object_pos.y(), s.object_pos.z() + d);
    s.eef_pose = Pose::new(s.eef_pose.rotation, at(0.05));
    let close = Action::new(Vec3::zero(), Rotation::identity(), 1.0);
    let (far, _) = step(&s, &task, &close);
    assert!(!far.object_held && far.gripper_closed);
    s.eef_pose = Pose::new(s.eef_pose.rotation, at(0.03));
    let (near, _) = step(&s, &task, &close);
    assert!(near.object_held);
    // The held object follows the end-effector.
    let up = Action::new(Vec3::new(0.0, 0.0, 0.05), Rotation::identity(), 1.0);
    let (lifted, _) = step(&near, &task, &up);
    assert!((lifted.object_pos.z() - near.object_pos.z() - 0.05).abs() < 1e-12);
}

#[test]
fn projection_examples() {
    let cam = CameraView::front();
    let k = cam.intrinsics;
    // A point on the optical axis one meter in front of the camera.
    let p = cam.extrinsics.translation + cam.forward();
    let uvd = project_keypoint(&cam, &p);
    assert!((uvd[0] * k.width - k.cu).abs() < 1e-9);
    assert!((uvd[1] * k.height - k.cv).abs() < 1e-9);
    assert!((uvd[2] - 0.5).abs() < 1e-12);
    // Moving along the camera's +x raises u monotonically.
    let right = {
        let m = cam.extrinsics.rotation.matrix();
        Vec3::new(m[0][0], m[0][1], m[0][2])
    };
    let mut last = f64::NEG_INFINITY;
    for i in 0..20 {
        let u = project_keypoint(&cam, &(p + right * (i as f64 * 1e-3)))[0];
        assert!(u > last);
        last = u;
    }
    // Behind the camera: clamped, never a failure.
    let behind = project_keypoint(&cam, &(cam.extrinsics.translation - cam.forward()));
    assert_eq!(behind[2], 1.0);
    assert!(behind.iter().all(|v| v.is_finite() && v.abs() <= 2.0));
}

#[test]
fn cameras_see_the_same_state_differently() {
    let s = reset(&TaskSpec::pick_lift(), 2);
    let rig = standard_rig(15.0);
    let obs: Vec<_> = rig.iter().map(|c| render_observation(&s, c)).collect();
    for i in 0..obs.len() {
        for j in i + 1..obs.len() {
            assert_ne!(obs[i], obs[j]);
        }
    }
}

#[test]
fn rig_geometry() {
    let base = CameraView::front();
    assert_eq!(make_rig(&base, &[]), vec![base.clone()]);
    let rig = standard_rig(15.0);
    let names: Vec<_> = rig.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["F", "FL", "FR", "FU", "FD"]);
    for cam in &rig {
        // The workspace center stays on the optical axis.
        let to_center = (Vec3::zero() - cam.extrinsics.translation).normalized();
        let angle = to_center.dot(&cam.forward()).clamp(-1.0, 1.0).acos();
        assert!(angle < 1e-6, "{}: {angle}", cam.name);
        assert!((cam.extrinsics.translation.norm() - 1.0).abs() < 1e-12);
    }
    // Raising the camera increases its height.
    assert!(rig[3].extrinsics.translation.z() > rig[0].extrinsics.translation.z());
    assert!(rig[4].extrinsics.translation.z() < rig[0].extrinsics.translation.z());
    // Rotating there and back again returns the base pose.
    let axis = standard_rotations(&base, 15.0)[2].1.axis;
    let there = make_rig(
        &base,
        &[(
            "a".into(),
            RigRotation {
                axis,
                degrees: 15.0,
            },
        )],
    )[1]
    .clone();
    let back = make_rig(
        &there,
        &[(
            "b".into(),
            RigRotation {
                axis,
                degrees: -15.0,
            },
        )],
    )[1]
    .clone();
    assert!(
        back.extrinsics
            .rotation
            .max_abs_diff(&base.extrinsics.rotation)
            < 1e-9
    );
    assert!(
        back.extrinsics
            .translation
            .max_abs_diff(&base.extrinsics.translation)
            < 1e-9
    );
}

#[test]
fn recorded_demos_are_kinematically_consistent() {
    let rig = standard_rig(15.0);
    for seed in 0..10 {
        let t = collect_demo(&TaskSpec::pick_lift(), &rig, seed, 0.01, seed).unwrap();
        t.validate().unwrap();
        assert_eq!(t.n_views(), 5);
        assert!(t.observations.iter().all(|o| o.len() == t.horizon()));
    }
}

#[test]
fn expert_and_random_policies_as_rollout_baselines() {
    let task = TaskSpec::pick_lift();
    let cfg = RolloutConfig::new(task);
    let rig = standard_rig(15.0);
    let seeds: Vec<u64> = (0..100).collect();
    let mut expert = ExpertPolicy::new(task, 0.0, 8);
    let wins = evaluate(&mut expert, &cfg, &rig, &[0], &seeds).unwrap();
    assert!(wins.iter().filter(|o| o.success).count() >= 95);
    let mut random = RandomPolicy::new(8);
    let outcomes = evaluate(&mut random, &cfg, &rig, &[0], &seeds).unwrap();
    assert!(outcomes.iter().filter(|o| o.success).count() < 5);
    assert!(outcomes.iter().all(|o| !o.nonfinite));
}

#[test]
fn rollouts_are_deterministic() {
    let task = TaskSpec::pick_lift();
    let cfg = RolloutConfig::new(task);
    let rig = standard_rig(15.0);
    let run = || rollout(&mut RandomPolicy::new(8), &cfg, &rig, &[0, 2], 42).unwrap();
    assert_eq!(run(), run());
}
