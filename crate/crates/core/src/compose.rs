//! Multiview composition of a single-view diffusion policy.
//!
//! One shared latent is denoised. At every step the policy is queried once
//! per view, each prediction is mapped into a common frame, the predictions
//! are summed with weight γ, and the sum replaces the single-view noise
//! estimate in the usual reverse step. Because each view's prediction is a
//! score estimate, the weighted sum samples from (a tempered) product of the
//! per-view action distributions.
//!
//! The common frame is the reference camera for camera-space policies and
//! the policy's own frame otherwise (base and end-effector frames do not
//! depend on the view).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{decode_action, NormStats, ObsStats, ACTION_DIM};
use crate::diffusion::{
    clip_sample, denoise_step, forward_rows, initial_latent, sample_batch, time_embedding,
    DenoiserParams, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::geometry::{
    action_from_camera, action_from_eef, Action, ActionSpace, Pose, Rotation, Vec3,
};
use crate::scalar::Real;
use crate::sim::{clip_action, PlanRequest, Policy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionConfig {
    pub gamma: f64,
    pub views: Vec<usize>,
    /// Action space the policy was trained in.
    pub output_space: ActionSpace,
    /// Camera whose frame hosts the aggregation for camera-space policies.
    pub reference_view: usize,
}

impl CompositionConfig {
    /// γ = 1/V over `views`, reference view = first listed view.
    pub fn uniform(views: Vec<usize>, output_space: ActionSpace) -> Self {
        let gamma = 1.0 / views.len().max(1) as f64;
        let reference_view = views.first().copied().unwrap_or(0);
        CompositionConfig {
            gamma,
            views,
            output_space,
            reference_view,
        }
    }

    pub fn validate(&self, n_cameras: usize) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.views.is_empty() {
            return Err(Error::Config("composition needs at least one view".into()));
        }
        if let Some(v) = self.views.iter().find(|&&v| v >= n_cameras) {
            return Err(Error::Config(format!(
                "view {v} outside rig of {n_cameras} cameras"
            )));
        }
        if self.output_space == ActionSpace::Camera && !self.views.contains(&self.reference_view) {
            return Err(Error::Config(format!(
                "reference view {} is not among the composed views {:?}",
                self.reference_view, self.views
            )));
        }
        Ok(())
    }
}

/// Applies `r` to the dp and axis-angle 3-blocks of every chunk step; the
/// gripper entries are copied.
pub fn rotate_chunk<T: Real>(chunk: &[T], r: &Rotation<T>) -> Vec<T> {
    let mut out = chunk.to_vec();
    for step in out.chunks_exact_mut(ACTION_DIM) {
        for block in [0, 3] {
            let v = Vec3([step[block], step[block + 1], step[block + 2]]);
            let w = r.apply(&v);
            step[block..block + 3].copy_from_slice(&w.0);
        }
    }
    out
}

/// Maps a camera-frame noise chunk into the Base frame: `(R^ext)ᵀ` per block.
pub fn noise_to_base<T: Real>(noise_chunk: &[T], ext: &Pose<T>) -> Vec<T> {
    rotate_chunk(noise_chunk, &ext.rotation.transpose())
}

/// Inverse of [`noise_to_base`].
pub fn noise_from_base<T: Real>(noise_chunk: &[T], ext: &Pose<T>) -> Vec<T> {
    rotate_chunk(noise_chunk, &ext.rotation)
}

/// Maps a normalized chunk point between frames related by `r` under
/// isotropic per-block statistics: `n' = r n + (r c - c) / h` per block,
/// where `c` is the block midpoint and `h` its half-width.
fn map_latent<T: Real>(latent: &[T], r: &Rotation<T>, stats: &NormStats) -> Vec<T> {
    let mut out = rotate_chunk(latent, r);
    for (s, step) in out.chunks_exact_mut(ACTION_DIM).enumerate() {
        for block in [0, 3] {
            let base = s * ACTION_DIM + block;
            let mid: Vec3<T> =
                Vec3([0, 1, 2].map(|i| T::lit(0.5 * (stats.min[base + i] + stats.max[base + i]))));
            let half = T::lit(stats.half_range(base));
            let shift = (r.apply(&mid) - mid) * (T::one() / half);
            for i in 0..3 {
                step[block + i] += shift[i];
            }
        }
    }
    out
}

/// Per-view rotation from the aggregation frame into each view's policy frame.
fn view_rotations<T: Real>(
    cfg: &CompositionConfig,
    rig: &[Pose<T>],
    views: &[usize],
) -> Vec<Option<Rotation<T>>> {
    views
        .iter()
        .map(|&v| match cfg.output_space {
            ActionSpace::Camera if v != cfg.reference_view => Some(
                rig[v]
                    .rotation
                    .compose(&rig[cfg.reference_view].rotation.transpose()),
            ),
            _ => None,
        })
        .collect()
}

/// Composed sampling for a batch of requests. `observations[r][i]` is the
/// observation stack of request `r` from `cfg.views[i]`. Returns normalized
/// chunks in the aggregation frame.
pub fn compose_latents_batch<T: Real, R: Rng>(
    params: &DenoiserParams<T>,
    schedule: &NoiseSchedule<T>,
    observations: &[Vec<&[T]>],
    rig: &[Pose<T>],
    stats: &NormStats,
    cfg: &CompositionConfig,
    rngs: &mut [R],
) -> Result<Vec<Vec<T>>> {
    cfg.validate(rig.len())?;
    let n_views = cfg.views.len();
    if observations.iter().any(|o| o.len() != n_views) || rngs.len() != observations.len() {
        return Err(Error::Config(format!(
            "composition over {n_views} views needs one observation per view and one generator per request"
        )));
    }
    let net = &params.config;
    if observations
        .iter()
        .flatten()
        .any(|o| o.len() != net.obs_dim)
    {
        return Err(Error::Config(format!(
            "observations must have length {}",
            net.obs_dim
        )));
    }
    if cfg.output_space == ActionSpace::Camera && !stats.is_isotropic() {
        return Err(Error::Config(
            "camera-space composition requires isotropic normalization blocks".into(),
        ));
    }
    // Fixed summation order by view index, whatever order the caller used.
    let mut order: Vec<usize> = (0..n_views).collect();
    order.sort_by_key(|&i| cfg.views[i]);
    let sorted_views: Vec<usize> = order.iter().map(|&i| cfg.views[i]).collect();
    let to_view = view_rotations(cfg, rig, &sorted_views);
    let from_view: Vec<Option<Rotation<T>>> =
        to_view.iter().map(|r| r.map(|r| r.transpose())).collect();
    let gamma = T::lit(cfg.gamma);
    let dim = net.chunk_dim;

    let mut latents: Vec<Vec<T>> = rngs.iter_mut().map(|r| initial_latent(dim, r)).collect();
    for k in (1..=schedule.steps()).rev() {
        let emb = time_embedding(k, net.time_dim);
        let view_latents: Vec<Vec<Vec<T>>> = latents
            .iter()
            .map(|l| {
                to_view
                    .iter()
                    .map(|r| match r {
                        Some(r) => map_latent(l, r, stats),
                        None => l.clone(),
                    })
                    .collect()
            })
            .collect();
        let mut obs_rows: Vec<&[T]> = Vec::with_capacity(latents.len() * n_views);
        let mut noisy_rows: Vec<&[T]> = Vec::with_capacity(latents.len() * n_views);
        for (req, vl) in observations.iter().zip(&view_latents) {
            for (slot, &i) in order.iter().enumerate() {
                obs_rows.push(req[i]);
                noisy_rows.push(&vl[slot]);
            }
        }
        let eps = forward_rows(params, &obs_rows, &noisy_rows, &emb);
        for (r, (latent, rng)) in latents.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let mut delta: Option<Vec<T>> = None;
            for (slot, back) in from_view.iter().enumerate() {
                let row = &eps[(r * n_views + slot) * dim..(r * n_views + slot + 1) * dim];
                let mapped = match back {
                    Some(b) => rotate_chunk(row, b),
                    None => row.to_vec(),
                };
                match delta.as_mut() {
                    None => delta = Some(mapped.iter().map(|&e| gamma * e).collect()),
                    Some(d) => d
                        .iter_mut()
                        .zip(&mapped)
                        .for_each(|(d, &e)| *d += gamma * e),
                }
            }
            let delta = delta.expect("at least one view");
            if delta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Sampling(format!(
                    "non-finite aggregated noise at step {k}"
                )));
            }
            denoise_step(schedule, latent, &delta, k, rng)?;
        }
    }
    latents.iter_mut().for_each(|l| clip_sample(l));
    Ok(latents)
}

/// Converts a normalized chunk in `space` to Base-space actions. End-effector
/// chunks are converted step by step along the poses they induce.
pub fn decode_chunk(
    normalized: &[f64],
    stats: &NormStats,
    space: ActionSpace,
    camera: &Pose<f64>,
    eef_pose: &Pose<f64>,
) -> Vec<Action<f64>> {
    let raw = stats.denormalize(normalized);
    let mut pose = *eef_pose;
    raw.chunks_exact(ACTION_DIM)
        .map(|v| {
            let a = decode_action(v);
            match space {
                ActionSpace::Base => a,
                ActionSpace::Camera => action_from_camera(&a, camera),
                ActionSpace::Eef => {
                    let b = action_from_eef(&a, &pose);
                    pose = pose.apply_action(&clip_action(&b).0);
                    b
                }
            }
        })
        .collect()
}

/// Composed sampling for one set of observations, returned as denormalized
/// Base-space actions. `observations[i]` comes from `cfg.views[i]`.
#[allow(clippy::too_many_arguments)]
pub fn compose_sample<T: Real>(
    params: &DenoiserParams<T>,
    schedule: &NoiseSchedule<T>,
    observations: &[&[T]],
    rig: &[Pose<T>],
    stats: &NormStats,
    cfg: &CompositionConfig,
    eef_pose: &Pose<f64>,
    seed: u64,
) -> Result<Vec<Action<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = compose_latents_batch(
        params,
        schedule,
        &[observations.to_vec()],
        rig,
        stats,
        cfg,
        std::slice::from_mut(&mut rng),
    )?
    .pop()
    .expect("one request");
    let latent: Vec<f64> = latent.iter().map(|v| v.as_f64()).collect();
    let camera = rig[cfg.reference_view].cast::<f64>();
    Ok(decode_chunk(
        &latent,
        stats,
        cfg.output_space,
        &camera,
        eef_pose,
    ))
}

/// A trained diffusion policy packaged for rollouts: single-view sampling
/// from one camera, or composition across several.
pub struct DiffusionPolicy<T> {
    pub params: DenoiserParams<T>,
    pub schedule: NoiseSchedule<T>,
    pub stats: NormStats,
    /// Applied to raw observation stacks before they reach the network.
    pub obs_stats: ObsStats,
    pub space: ActionSpace,
    pub rig: Vec<Pose<f64>>,
    /// Inference views, in the order the rollout supplies observations.
    pub views: Vec<usize>,
    /// Composition weight; `None` means single-view sampling from `views[0]`.
    pub gamma: Option<f64>,
    rig_t: Vec<Pose<T>>,
    rngs: Vec<ChaCha8Rng>,
}

impl<T: Real> DiffusionPolicy<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: DenoiserParams<T>,
        schedule: NoiseSchedule<T>,
        stats: NormStats,
        obs_stats: ObsStats,
        space: ActionSpace,
        rig: Vec<Pose<f64>>,
        views: Vec<usize>,
        gamma: Option<f64>,
    ) -> Result<Self> {
        if views.is_empty() || views.iter().any(|&v| v >= rig.len()) {
            return Err(Error::Config(format!("invalid inference views {views:?}")));
        }
        if gamma.is_none() && views.len() != 1 {
            return Err(Error::Config(
                "single-view inference takes exactly one view".into(),
            ));
        }
        let rig_t = rig.iter().map(|p| p.cast()).collect();
        Ok(DiffusionPolicy {
            params,
            schedule,
            stats,
            obs_stats,
            space,
            rig,
            views,
            gamma,
            rig_t,
            rngs: Vec::new(),
        })
    }

    fn composition(&self) -> Option<CompositionConfig> {
        self.gamma.map(|gamma| CompositionConfig {
            gamma,
            views: self.views.clone(),
            output_space: self.space,
            reference_view: self.views[0],
        })
    }
}

impl<T: Real> Policy for DiffusionPolicy<T> {
    fn begin(&mut self, episode_seeds: &[u64]) {
        self.rngs = episode_seeds
            .iter()
            .map(|&s| ChaCha8Rng::seed_from_u64(s.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ 0x51ab))
            .collect();
    }

    fn plan(&mut self, requests: &[PlanRequest<'_>]) -> Vec<Result<Vec<Action<f64>>>> {
        let obs: Vec<Vec<Vec<T>>> = requests
            .iter()
            .map(|r| {
                r.observations
                    .iter()
                    .map(|o| {
                        self.obs_stats
                            .normalize(o)
                            .into_iter()
                            .map(T::lit)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        // Requests are processed together; their generators are taken out
        // and put back so each episode keeps its own stream.
        let mut rngs: Vec<ChaCha8Rng> = requests
            .iter()
            .map(|r| std::mem::replace(&mut self.rngs[r.episode], ChaCha8Rng::seed_from_u64(0)))
            .collect();
        let latents = match self.composition() {
            None => {
                let rows: Vec<&[T]> = obs.iter().map(|o| o[0].as_slice()).collect();
                sample_batch(&self.params, &self.schedule, &rows, &mut rngs)
            }
            Some(cfg) => {
                let rows: Vec<Vec<&[T]>> = obs
                    .iter()
                    .map(|o| o.iter().map(|v| v.as_slice()).collect())
                    .collect();
                compose_latents_batch(
                    &self.params,
                    &self.schedule,
                    &rows,
                    &self.rig_t,
                    &self.stats,
                    &cfg,
                    &mut rngs,
                )
            }
        };
        for (r, rng) in requests.iter().zip(rngs) {
            self.rngs[r.episode] = rng;
        }
        let camera = self.rig[self.views[0]];
        match latents {
            Ok(latents) => requests
                .iter()
                .zip(latents)
                .map(|(r, l)| {
                    let l: Vec<f64> = l.iter().map(|v| v.as_f64()).collect();
                    Ok(decode_chunk(
                        &l,
                        &self.stats,
                        self.space,
                        &camera,
                        &r.state.eef_pose,
                    ))
                })
                .collect(),
            Err(e) => {
                let msg = e.to_string();
                requests
                    .iter()
                    .map(|_| Err(Error::Sampling(msg.clone())))
                    .collect()
            }
        }
    }
}
