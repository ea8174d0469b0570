//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! shown.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use viewscale::compose::{compose_latents_batch, compose_sample, decode_chunk, CompositionConfig};
use viewscale::dataset::{
    encode_action, expand_all, load_dataset, save_dataset, NormStats, ACTION_DIM,
};
use viewscale::diffusion::{sample, DenoiserConfig, DenoiserParams, NoiseSchedule, ScheduleSpec};
use viewscale::error::DatasetError;
use viewscale::experiment::{
    collect_stage, evaluate_stage, train_stage, ExperimentConfig, SeedResult,
};
use viewscale::geometry::{action_from_camera, action_to_camera, Action, Pose, Rotation, Vec3};
use viewscale::sim::standard_rig;
use viewscale::ActionSpace;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// ---------------------------------------------------------------- oracles

type M3 = [[f64; 3]; 3];

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn mat_t(a: &M3) -> M3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

fn mat_vec(a: &M3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| (0..3).map(|k| a[i][k] * v[k]).sum())
}

fn max_diff(a: &M3, b: &M3) -> f64 {
    (0..9)
        .map(|i| (a[i / 3][i % 3] - b[i / 3][i % 3]).abs())
        .fold(0.0, f64::max)
}

/// Rotation angle from the trace, clamped against rounding.
fn angle_of(m: &M3) -> f64 {
    ((m[0][0] + m[1][1] + m[2][2] - 1.0) / 2.0)
        .clamp(-1.0, 1.0)
        .acos()
}

fn orthonormality_error(m: &M3) -> f64 {
    let mut id = [[0.0; 3]; 3];
    for (i, row) in id.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    max_diff(&mat_mul(m, &mat_t(m)), &id)
}

fn det(m: &M3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Uniform random rotation from a normalized Gaussian quaternion.
fn random_rotation(rng: &mut ChaCha8Rng) -> M3 {
    let q: [f64; 4] = [0; 4].map(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn random_vec(rng: &mut ChaCha8Rng, r: f64) -> [f64; 3] {
    [0; 3].map(|_| rng.random_range(-r..r))
}

fn group_ok(r: &Rotation<f64>) -> bool {
    orthonormality_error(r.matrix()) < 1e-9 && (det(r.matrix()) - 1.0).abs() < 1e-9
}

// ------------------------------------------------------------- criteria

fn geometry_exactness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_oracle: f64 = 0.0;
    let mut worst_round_trip: f64 = 0.0;
    let mut worst_angle: f64 = 0.0;
    let mut group_failures = 0;
    for _ in 0..10_000 {
        let r_ext = random_rotation(&mut rng);
        let r_delta = random_rotation(&mut rng);
        let dp = random_vec(&mut rng, 0.1);
        let ext = Pose::new(
            Rotation::from_matrix(r_ext).unwrap(),
            Vec3(random_vec(&mut rng, 1.0)),
        );
        let a = Action::new(
            Vec3(dp),
            Rotation::from_matrix(r_delta).unwrap(),
            rng.random_range(0.0..1.0),
        );
        let cam = action_to_camera(&a, &ext);
        let back = action_from_camera(&cam, &ext);

        let want_dp = mat_vec(&r_ext, dp);
        let want_dr = mat_mul(&mat_mul(&r_ext, &r_delta), &mat_t(&r_ext));
        let dp_err = (0..3)
            .map(|i| (cam.dp[i] - want_dp[i]).abs())
            .fold(0.0, f64::max);
        worst_oracle = worst_oracle
            .max(dp_err)
            .max(max_diff(cam.dr.matrix(), &want_dr));
        worst_round_trip = worst_round_trip.max(back.max_abs_diff(&a));
        worst_angle = worst_angle.max((angle_of(cam.dr.matrix()) - angle_of(&r_delta)).abs());
        for r in [
            &cam.dr,
            &back.dr,
            &ext.rotation.compose(&a.dr),
            &a.dr.conjugate(&ext.rotation),
        ] {
            if !group_ok(r) {
                group_failures += 1;
            }
        }
        if cam.gripper.to_bits() != a.gripper.to_bits() {
            group_failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_oracle < 1e-9
        && worst_round_trip < 1e-9
        && worst_angle < 1e-9
        && group_failures == 0
        && secs < 5.0;
    verdict(
        pass,
        format!(
            "oracle {worst_oracle:.1e}, round trip {worst_round_trip:.1e}, angle {worst_angle:.1e}, \
             group violations {group_failures}, {secs:.2}s"
        ),
    )
}

fn gradient_oracle() -> Verdict {
    let start = Instant::now();
    let worst = (0..20)
        .map(common::max_relative_gradient_error)
        .fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 30.0,
        format!("max relative error {worst:.2e} over 20 nets, {secs:.2}s"),
    )
}

fn sampler_degeneracy() -> Verdict {
    let rig: Vec<Pose<f64>> = standard_rig(15.0).iter().map(|c| c.extrinsics).collect();
    let horizon = 8;
    let config = DenoiserConfig::new(20, ACTION_DIM * horizon);
    let schedule = NoiseSchedule::<f64>::from_spec(&ScheduleSpec::default()).unwrap();
    let mut min = Vec::new();
    let mut max = Vec::new();
    for _ in 0..horizon {
        min.extend([-0.05, -0.04, -0.05, -0.1, -0.1, -0.1, 0.0]);
        max.extend([0.05, 0.05, 0.03, 0.1, 0.12, 0.1, 1.0]);
    }
    let stats = NormStats { horizon, min, max }.with_isotropic_blocks();
    let spaces = [ActionSpace::Base, ActionSpace::Eef, ActionSpace::Camera];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for pair in 0..100u64 {
        let params = DenoiserParams::<f64>::init_dense(config.clone(), pair / 10);
        let obs: Vec<f64> = (0..config.obs_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let seed: u64 = rng.random();
        let view = (pair % 5) as usize;
        let space = spaces[(pair % 3) as usize];
        let mut cfg = CompositionConfig::uniform(vec![view], space);
        cfg.gamma = 1.0;

        let single = sample(&params, &schedule, &obs, seed).unwrap();
        let mut gen = [ChaCha8Rng::seed_from_u64(seed)];
        let composed = compose_latents_batch(
            &params,
            &schedule,
            &[vec![obs.as_slice()]],
            &rig,
            &stats,
            &cfg,
            &mut gen,
        )
        .unwrap()
        .pop()
        .unwrap();
        if single
            .iter()
            .map(|v| v.to_bits())
            .ne(composed.iter().map(|v| v.to_bits()))
        {
            mismatches += 1;
            continue;
        }
        let eef = Pose::identity();
        let expected = decode_chunk(&single, &stats, space, &rig[view], &eef);
        let actions = compose_sample(
            &params,
            &schedule,
            &[obs.as_slice()],
            &rig,
            &stats,
            &cfg,
            &eef,
            seed,
        )
        .unwrap();
        let bits = |xs: &[Action<f64>]| {
            xs.iter()
                .flat_map(|a| encode_action(a).map(f64::to_bits))
                .collect::<Vec<_>>()
        };
        if bits(&expected) != bits(&actions) {
            mismatches += 1;
        }
    }
    verdict(
        mismatches == 0,
        format!("{mismatches} of 100 (obs, seed) pairs differ"),
    )
}

fn dataset_integrity() -> Verdict {
    let cfg = ExperimentConfig::default();
    let ds = collect_stage(&cfg, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    let bit_exact = back == ds
        && back
            .trajectories
            .iter()
            .zip(&ds.trajectories)
            .all(|(a, b)| {
                a.actions.iter().zip(&b.actions).all(|(x, y)| {
                    encode_action(x).map(f64::to_bits) == encode_action(y).map(f64::to_bits)
                }) && a
                    .observations
                    .iter()
                    .flatten()
                    .zip(b.observations.iter().flatten())
                    .all(|(x, y)| {
                        x.0.iter()
                            .map(|v| v.to_bits())
                            .eq(y.0.iter().map(|v| v.to_bits()))
                    })
            });

    let file = dir.path().join("traj_0.bin");
    let mut bytes = std::fs::read(&file).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x04;
    std::fs::write(&file, bytes).unwrap();
    let rejected = matches!(load_dataset(dir.path()), Err(DatasetError::Checksum { .. }));

    let views: Vec<usize> = (0..ds.rig.len()).collect();
    let mut cardinality_ok = true;
    for space in [ActionSpace::Base, ActionSpace::Eef, ActionSpace::Camera] {
        let demos = expand_all(&ds.trajectories, &ds.extrinsics(), space, &views).unwrap();
        cardinality_ok &= demos.len() == ds.trajectories.len() * views.len();
    }
    verdict(
        bit_exact && rejected && cardinality_ok,
        format!(
            "bit-exact {bit_exact}, corrupted file rejected {rejected}, N*V = {}*{} pseudo-demos {cardinality_ok}",
            ds.trajectories.len(),
            views.len()
        ),
    )
}

fn forward_process() -> Verdict {
    let spec = ScheduleSpec::default();
    let schedule = NoiseSchedule::<f64>::from_spec(&spec).unwrap();
    let t = spec.steps;
    let dim = ACTION_DIM * 8;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let clean: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let clean_sq: f64 = clean.iter().map(|v| v * v).sum();
    let samples = 20_000;
    let mut worst_z: f64 = 0.0;
    let mut parts = Vec::new();
    for k in [1, t / 2, t] {
        let alpha_bar: f64 = (1..=k)
            .map(|i| {
                1.0 - (spec.beta_start
                    + (spec.beta_end - spec.beta_start) * (i - 1) as f64 / (t - 1) as f64)
            })
            .product();
        let expected = alpha_bar * clean_sq + (1.0 - alpha_bar) * dim as f64;
        let norms: Vec<f64> = (0..samples)
            .map(|_| {
                let noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                schedule
                    .add_noise(&clean, &noise, k)
                    .iter()
                    .map(|v| v * v)
                    .sum()
            })
            .collect();
        let mean = norms.iter().sum::<f64>() / samples as f64;
        let var = norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let se = (var / samples as f64).sqrt();
        let z = (mean - expected).abs() / se;
        worst_z = worst_z.max(z);
        parts.push(format!("k={k}: {mean:.3} vs {expected:.3} ({z:.2} SE)"));
    }
    verdict(worst_z < 3.0, parts.join(", "))
}

// ------------------------------------------------------- trend criteria

const SEEDS: u64 = 5;

#[derive(Default)]
struct SeedRates {
    single_base_f: f64,
    single_base_fl: f64,
    multi_base_f: f64,
    multi_base_fl: f64,
    multi_base_fu: f64,
    multi_camera_f: f64,
    multi_camera_composed: f64,
    multi_eef_f: f64,
}

fn success(
    policy: &viewscale::checkpoint::Checkpoint<f32>,
    cfg: &ExperimentConfig,
    rig: &[viewscale::sim::CameraView],
    views: &[usize],
    compose: bool,
    seed: u64,
) -> f64 {
    let gamma = 1.0 / views.len() as f64;
    let outcomes = evaluate_stage(
        policy,
        rig,
        &cfg.rollout(),
        views,
        compose,
        gamma,
        seed,
        cfg.episodes,
    )
    .unwrap();
    SeedResult::from_outcomes(seed, &outcomes, None).success_rate
}

fn run_seed(seed: u64) -> SeedRates {
    let all = vec![0, 1, 2, 3, 4];
    let base = ExperimentConfig::default();
    let ds = collect_stage(&base, seed).unwrap();
    let with = |views: Vec<usize>, space: ActionSpace| ExperimentConfig {
        train_views: views,
        space,
        ..base.clone()
    };
    let train = |cfg: &ExperimentConfig, ds| train_stage::<f32>(cfg, ds, seed).unwrap().checkpoint;
    let mut r = SeedRates::default();

    let cfg = with(vec![0], ActionSpace::Base);
    let p = train(&cfg, &ds);
    r.single_base_f = success(&p, &cfg, &ds.rig, &[0], false, seed);
    r.single_base_fl = success(&p, &cfg, &ds.rig, &[1], false, seed);

    let cfg = with(all.clone(), ActionSpace::Base);
    let p = train(&cfg, &ds);
    r.multi_base_f = success(&p, &cfg, &ds.rig, &[0], false, seed);
    r.multi_base_fl = success(&p, &cfg, &ds.rig, &[1], false, seed);
    r.multi_base_fu = success(&p, &cfg, &ds.rig, &[3], false, seed);

    let cfg = with(all.clone(), ActionSpace::Camera);
    let p = train(&cfg, &ds);
    r.multi_camera_f = success(&p, &cfg, &ds.rig, &[0], false, seed);
    r.multi_camera_composed = success(&p, &cfg, &ds.rig, &[0, 1, 2], true, seed);

    let cfg = with(all, ActionSpace::Eef);
    let p = train(&cfg, &ds);
    r.multi_eef_f = success(&p, &cfg, &ds.rig, &[0], false, seed);
    r
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean and standard error of the paired differences `a - b`.
fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    (m, (var / d.len() as f64).sqrt())
}

fn trend_criteria() -> [Verdict; 4] {
    let start = Instant::now();
    let runs: Vec<SeedRates> = (0..SEEDS).map(run_seed).collect();
    let col = |f: fn(&SeedRates) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    let single = col(|r| r.single_base_f);
    let multi = col(|r| r.multi_base_f);
    let camera = col(|r| r.multi_camera_f);
    let eef = col(|r| r.multi_eef_f);
    let minutes = start.elapsed().as_secs_f64() / 60.0;

    let (gain, gain_se) = paired(&multi, &single);
    let q1 = verdict(
        gain > 2.0 * gain_se,
        format!(
            "5-view base {:.3} vs 1-view {:.3}, paired gain {gain:.3} > 2 x SE {gain_se:.3} over {SEEDS} seeds ({minutes:.1} min for all trend runs)",
            mean(&multi),
            mean(&single)
        ),
    );

    let (eef_gap, eef_se) = paired(&multi, &eef);
    let q2 = verdict(
        mean(&camera) >= mean(&multi) - 0.05 && eef_gap > 0.0,
        format!(
            "(a) camera {:.3} >= base {:.3} - 0.05; (b) eef {:.3}, base - eef = {eef_gap:.3} (SE {eef_se:.3})",
            mean(&camera),
            mean(&multi),
            mean(&eef)
        ),
    );

    let f = mean(&multi);
    let fl = mean(&col(|r| r.multi_base_fl));
    let fu = mean(&col(|r| r.multi_base_fu));
    let gf = mean(&single);
    let gfl = mean(&col(|r| r.single_base_fl));
    let q4 = verdict(
        fl >= 0.6 * f && fu >= 0.6 * f && gfl < 0.25 * gf,
        format!(
            "5-view F {f:.3}, FL {:.0}%, FU {:.0}%; 1-view F {gf:.3}, FL {:.0}%",
            100.0 * fl / f,
            100.0 * fu / f,
            100.0 * gfl / gf
        ),
    );

    let (delta, delta_se) = paired(&col(|r| r.multi_camera_composed), &camera);
    let q5 = verdict(
        delta >= -0.02,
        format!(
            "3-view composition {:.3} vs single view {:.3}, paired delta {delta:.3} (SE {delta_se:.3})",
            mean(&col(|r| r.multi_camera_composed)),
            mean(&camera)
        ),
    );
    [q1, q2, q4, q5]
}

fn main() -> ExitCode {
    let mut results = vec![
        ("1 geometry exactness", geometry_exactness()),
        ("2 gradient oracle", gradient_oracle()),
        ("3 sampler degeneracy", sampler_degeneracy()),
    ];
    let [q1, q2, q4, q5] = trend_criteria();
    results.extend([
        ("4 view scaling trend", q1),
        ("5 action space trend", q2),
        ("6 view generalization", q4),
        ("7 multiview composition", q5),
        ("8 dataset integrity", dataset_integrity()),
        ("9 forward process", forward_process()),
    ]);
    let mut failed = 0;
    for (name, v) in &results {
        println!(
            "criterion {name}: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.pass);
    }
    println!(
        "{} of {} criteria pass",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
