//! Conditional DDPM over normalized action chunks.
//!
//! The noise network is a plain MLP on `[observation stack, noisy chunk,
//! sinusoidal embedding of k]` with SiLU hidden activations and a linear
//! output. Gradients are computed by hand. All parameters live in one flat
//! vector (per layer: weights `in x out` row-major, then biases) so the
//! optimizer and the checkpoint format need no knowledge of the layout.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingPair;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Linear-β schedule tables, indexed by diffusion step `k = 1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule<T> {
    betas: Vec<T>,
    alphas: Vec<T>,
    alpha_bars: Vec<T>,
    sigmas: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl<T: Real> NoiseSchedule<T> {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "invalid schedule: {steps} steps, beta in [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        // Posterior standard deviation sqrt(β̃_k); β̃_1 = 0.
        let sigmas: Vec<f64> = (0..steps)
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                ((1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]).sqrt()
            })
            .collect();
        let cast = |v: &[f64]| v.iter().map(|x| T::lit(*x)).collect::<Vec<T>>();
        Ok(NoiseSchedule {
            alphas: betas.iter().map(|b| T::lit(1.0 - b)).collect(),
            betas: cast(&betas),
            alpha_bars: cast(&alpha_bars),
            sigmas: cast(&sigmas),
        })
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        Self::linear(spec.steps, spec.beta_start, spec.beta_end)
    }

    /// The same schedule with a deterministic reverse process.
    pub fn with_zero_variance(mut self) -> Self {
        self.sigmas.iter_mut().for_each(|s| *s = T::zero());
        self
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, k: usize) -> T {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> T {
        self.alphas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> T {
        self.alpha_bars[k - 1]
    }

    pub fn sigma(&self, k: usize) -> T {
        self.sigmas[k - 1]
    }

    /// Forward process: `√ᾱ_k · clean + √(1-ᾱ_k) · noise`.
    pub fn add_noise(&self, clean: &[T], noise: &[T], k: usize) -> Vec<T> {
        let ab = self.alpha_bar(k);
        let (s, n) = (ab.sqrt(), (T::one() - ab).sqrt());
        clean
            .iter()
            .zip(noise)
            .map(|(&c, &e)| s * c + n * e)
            .collect()
    }

    /// One reverse step in place:
    /// `a ← (a - β_k/√(1-ᾱ_k) · eps) / √α_k + σ_k z`.
    pub fn reverse_step(&self, latent: &mut [T], eps: &[T], k: usize, z: Option<&[T]>) {
        let coef = self.beta(k) / (T::one() - self.alpha_bar(k)).sqrt();
        let inv_sqrt_alpha = T::one() / self.alpha(k).sqrt();
        for (a, &e) in latent.iter_mut().zip(eps) {
            *a = (*a - coef * e) * inv_sqrt_alpha;
        }
        if let Some(z) = z {
            let s = self.sigma(k);
            for (a, &zi) in latent.iter_mut().zip(z) {
                *a += s * zi;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub obs_dim: usize,
    pub chunk_dim: usize,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
}

impl DenoiserConfig {
    pub fn new(obs_dim: usize, chunk_dim: usize) -> Self {
        DenoiserConfig {
            obs_dim,
            chunk_dim,
            time_dim: 32,
            hidden: vec![256, 256],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.chunk_dim + self.time_dim
    }

    /// `(in, out)` of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim();
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.chunk_dim));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams<T> {
    pub config: DenoiserConfig,
    pub data: Vec<T>,
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug)]
struct LayerSlot {
    input: usize,
    output: usize,
    w: usize,
    b: usize,
}

fn layer_slots(cfg: &DenoiserConfig) -> Vec<LayerSlot> {
    let mut off = 0;
    cfg.layer_dims()
        .into_iter()
        .map(|(input, output)| {
            let slot = LayerSlot {
                input,
                output,
                w: off,
                b: off + input * output,
            };
            off += input * output + output;
            slot
        })
        .collect()
}

impl<T: Real> DenoiserParams<T> {
    /// Uniform fan-in initialization; the output layer starts at zero.
    pub fn init(config: DenoiserConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = layer_slots(&config);
        let mut data = vec![T::zero(); config.n_params()];
        for s in &slots[..slots.len() - 1] {
            let bound = 1.0 / (s.input as f64).sqrt();
            for v in &mut data[s.w..s.b + s.output] {
                *v = T::lit(rng.random_range(-bound..bound));
            }
        }
        DenoiserParams { config, data }
    }

    /// Every parameter, including the output layer, drawn uniformly with
    /// fan-in scaling. Used for gradient checks.
    pub fn init_dense(config: DenoiserConfig, seed: u64) -> Self {
        let mut p = Self::init(config, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead_beef);
        let last = *layer_slots(&p.config).last().unwrap();
        let bound = 1.0 / (last.input as f64).sqrt();
        for v in &mut p.data[last.w..last.b + last.output] {
            *v = T::lit(rng.random_range(-bound..bound));
        }
        p
    }

    pub fn zeros(config: DenoiserConfig) -> Self {
        let n = config.n_params();
        DenoiserParams {
            config,
            data: vec![T::zero(); n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bias vector of the output layer.
    pub fn output_bias(&self) -> &[T] {
        let last = *layer_slots(&self.config).last().unwrap();
        &self.data[last.b..last.b + last.output]
    }

    pub fn output_bias_mut(&mut self) -> &mut [T] {
        let last = *layer_slots(&self.config).last().unwrap();
        &mut self.data[last.b..last.b + last.output]
    }

    pub fn cast<U: Real>(&self) -> DenoiserParams<U> {
        DenoiserParams {
            config: self.config.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Sinusoidal features of the diffusion index: sines then cosines of
/// `k · 10000^(-i/half)`.
pub fn time_embedding<T: Real>(k: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = k as f64 * freq;
        out[i] = T::lit(arg.sin());
        out[half + i] = T::lit(arg.cos());
    }
    out
}

fn silu<T: Real>(z: T) -> T {
    z / (T::one() + (-z).exp())
}

fn silu_grad<T: Real>(z: T) -> T {
    let s = T::one() / (T::one() + (-z).exp());
    s * (T::one() + z * (T::one() - s))
}

/// `y[r] = bias + x[r] · W` for every row `r`. Each row is accumulated in
/// the same order regardless of how many rows are processed together, so
/// results do not depend on batch composition.
fn affine_rows<T: Real>(
    x: &[T],
    in_d: usize,
    w: &[T],
    bias: Option<&[T]>,
    out_d: usize,
    y: &mut [T],
) {
    let init = |row: &mut [T]| match bias {
        Some(b) => row.copy_from_slice(b),
        None => row.iter_mut().for_each(|v| *v = T::zero()),
    };
    for (yc, xc) in y.chunks_mut(4 * out_d).zip(x.chunks(4 * in_d)) {
        if xc.len() == 4 * in_d {
            let (y0, rest) = yc.split_at_mut(out_d);
            let (y1, rest) = rest.split_at_mut(out_d);
            let (y2, y3) = rest.split_at_mut(out_d);
            init(y0);
            init(y1);
            init(y2);
            init(y3);
            for (k, wr) in w.chunks_exact(out_d).enumerate().take(in_d) {
                let (a0, a1, a2, a3) = (xc[k], xc[in_d + k], xc[2 * in_d + k], xc[3 * in_d + k]);
                for ((((o0, o1), o2), o3), &wj) in y0
                    .iter_mut()
                    .zip(y1.iter_mut())
                    .zip(y2.iter_mut())
                    .zip(y3.iter_mut())
                    .zip(wr)
                {
                    *o0 += a0 * wj;
                    *o1 += a1 * wj;
                    *o2 += a2 * wj;
                    *o3 += a3 * wj;
                }
            }
        } else {
            for (yr, xr) in yc.chunks_mut(out_d).zip(xc.chunks(in_d)) {
                init(yr);
                for (&a, wr) in xr.iter().zip(w.chunks_exact(out_d)) {
                    for (o, &wj) in yr.iter_mut().zip(wr) {
                        *o += a * wj;
                    }
                }
            }
        }
    }
}

fn transpose<T: Real>(w: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); w.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = w[r * cols + c];
        }
    }
    t
}

/// Activations kept from the forward pass for backpropagation.
struct ForwardCache<T> {
    /// Layer inputs; `inputs[0]` is the assembled network input.
    inputs: Vec<Vec<T>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Vec<T>>,
    output: Vec<T>,
}

fn forward_cached<T: Real>(
    params: &DenoiserParams<T>,
    input: Vec<T>,
    rows: usize,
) -> ForwardCache<T> {
    let slots = layer_slots(&params.config);
    let n = slots.len();
    let mut inputs = vec![input];
    let mut pre = Vec::with_capacity(n - 1);
    let mut output = Vec::new();
    for (l, s) in slots.iter().enumerate() {
        let mut z = vec![T::zero(); rows * s.output];
        affine_rows(
            &inputs[l],
            s.input,
            &params.data[s.w..s.b],
            Some(&params.data[s.b..s.b + s.output]),
            s.output,
            &mut z,
        );
        if l + 1 < n {
            inputs.push(z.iter().map(|&v| silu(v)).collect());
            pre.push(z);
        } else {
            output = z;
        }
    }
    ForwardCache {
        inputs,
        pre,
        output,
    }
}

/// Writes `[obs, noisy, emb(k)]` into `out`.
pub fn assemble_input<T: Real>(
    cfg: &DenoiserConfig,
    obs: &[T],
    noisy: &[T],
    emb: &[T],
    out: &mut Vec<T>,
) {
    debug_assert_eq!(obs.len(), cfg.obs_dim);
    debug_assert_eq!(noisy.len(), cfg.chunk_dim);
    out.extend_from_slice(obs);
    out.extend_from_slice(noisy);
    out.extend_from_slice(emb);
}

fn check_shapes<T>(cfg: &DenoiserConfig, obs: &[T], noisy: &[T]) -> Result<()> {
    if obs.len() != cfg.obs_dim || noisy.len() != cfg.chunk_dim {
        return Err(Error::Config(format!(
            "denoiser expects obs {} / chunk {}, got {} / {}",
            cfg.obs_dim,
            cfg.chunk_dim,
            obs.len(),
            noisy.len()
        )));
    }
    Ok(())
}

/// Predicted noise for one input.
pub fn forward<T: Real>(
    params: &DenoiserParams<T>,
    obs: &[T],
    noisy: &[T],
    k: usize,
) -> Result<Vec<T>> {
    check_shapes(&params.config, obs, noisy)?;
    let emb = time_embedding(k, params.config.time_dim);
    Ok(forward_rows(params, &[obs], &[noisy], &emb))
}

/// Predicted noise for a batch sharing the diffusion step (row-major output).
pub fn forward_rows<T: Real>(
    params: &DenoiserParams<T>,
    obs: &[&[T]],
    noisy: &[&[T]],
    emb: &[T],
) -> Vec<T> {
    let cfg = &params.config;
    let mut input = Vec::with_capacity(obs.len() * cfg.input_dim());
    for (o, a) in obs.iter().zip(noisy) {
        assemble_input(cfg, o, a, emb, &mut input);
    }
    forward_cached(params, input, obs.len()).output
}

/// One regression example: predict `noise` from `(obs, noisy_chunk, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseSample<T> {
    pub obs: Vec<T>,
    pub noisy_chunk: Vec<T>,
    pub k: usize,
    pub noise: Vec<T>,
}

/// Mean squared error over the batch and all output dimensions, and its
/// exact gradient with respect to every parameter.
pub fn backward<T: Real>(
    params: &DenoiserParams<T>,
    batch: &[DenoiseSample<T>],
) -> Result<(T, Vec<T>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let cfg = &params.config;
    let mut input = Vec::with_capacity(batch.len() * cfg.input_dim());
    let mut target = Vec::with_capacity(batch.len() * cfg.chunk_dim);
    for s in batch {
        check_shapes(cfg, &s.obs, &s.noisy_chunk)?;
        if s.noise.len() != cfg.chunk_dim {
            return Err(Error::Config("noise target has the wrong length".into()));
        }
        let emb = time_embedding(s.k, cfg.time_dim);
        assemble_input(cfg, &s.obs, &s.noisy_chunk, &emb, &mut input);
        target.extend_from_slice(&s.noise);
    }
    let (loss, grad) = loss_and_grad(params, input, &target, batch.len());
    if !loss.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            reason: format!("non-finite loss {loss}"),
        });
    }
    Ok((loss, grad))
}

/// Loss only.
pub fn loss<T: Real>(params: &DenoiserParams<T>, batch: &[DenoiseSample<T>]) -> Result<T> {
    let cfg = &params.config;
    let mut input = Vec::with_capacity(batch.len() * cfg.input_dim());
    let mut target = Vec::with_capacity(batch.len() * cfg.chunk_dim);
    for s in batch {
        check_shapes(cfg, &s.obs, &s.noisy_chunk)?;
        let emb = time_embedding(s.k, cfg.time_dim);
        assemble_input(cfg, &s.obs, &s.noisy_chunk, &emb, &mut input);
        target.extend_from_slice(&s.noise);
    }
    let out = forward_cached(params, input, batch.len()).output;
    Ok(mse(&out, &target))
}

fn mse<T: Real>(pred: &[T], target: &[T]) -> T {
    let n = T::lit(pred.len() as f64);
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<T>()
        / n
}

fn loss_and_grad<T: Real>(
    params: &DenoiserParams<T>,
    input: Vec<T>,
    target: &[T],
    rows: usize,
) -> (T, Vec<T>) {
    let cache = forward_cached(params, input, rows);
    let loss = mse(&cache.output, target);
    let scale = T::lit(2.0 / cache.output.len() as f64);
    let delta: Vec<T> = cache
        .output
        .iter()
        .zip(target)
        .map(|(&p, &t)| scale * (p - t))
        .collect();
    let (grad, _) = backprop(params, &cache, delta, rows, false);
    (loss, grad)
}

/// Pulls the output cotangent `delta` back through the network. Returns the
/// parameter gradient and, if requested, the gradient with respect to the
/// assembled input.
fn backprop<T: Real>(
    params: &DenoiserParams<T>,
    cache: &ForwardCache<T>,
    mut delta: Vec<T>,
    rows: usize,
    want_input: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let slots = layer_slots(&params.config);
    let mut grad = vec![T::zero(); params.data.len()];
    for (l, s) in slots.iter().enumerate().rev() {
        let x = &cache.inputs[l];
        {
            let (gw, gb) = grad[s.w..s.b + s.output].split_at_mut(s.input * s.output);
            for (r, d) in delta.chunks_exact(s.output).enumerate() {
                for (b, &dv) in gb.iter_mut().zip(d) {
                    *b += dv;
                }
                let xr = &x[r * s.input..(r + 1) * s.input];
                for (&a, gwr) in xr.iter().zip(gw.chunks_exact_mut(s.output)) {
                    if a == T::zero() {
                        continue;
                    }
                    for (g, &dv) in gwr.iter_mut().zip(d) {
                        *g += a * dv;
                    }
                }
            }
        }
        if l == 0 && !want_input {
            return (grad, None);
        }
        let wt = transpose(&params.data[s.w..s.b], s.input, s.output);
        let mut dx = vec![T::zero(); rows * s.input];
        affine_rows(&delta, s.output, &wt, None, s.input, &mut dx);
        if l == 0 {
            return (grad, Some(dx));
        }
        for (g, &z) in dx.iter_mut().zip(&cache.pre[l - 1]) {
            *g *= silu_grad(z);
        }
        delta = dx;
    }
    unreachable!("network has at least one layer")
}

/// Vector-Jacobian product of the network output with respect to its
/// `(obs, noisy_chunk)` inputs: returns `cotangentᵀ · ∂ε/∂[obs, noisy]`.
pub fn input_vjp<T: Real>(
    params: &DenoiserParams<T>,
    obs: &[T],
    noisy: &[T],
    k: usize,
    cotangent: &[T],
) -> Result<Vec<T>> {
    let cfg = &params.config;
    check_shapes(cfg, obs, noisy)?;
    if cotangent.len() != cfg.chunk_dim {
        return Err(Error::Config("cotangent has the wrong length".into()));
    }
    let mut input = Vec::with_capacity(cfg.input_dim());
    assemble_input(
        cfg,
        obs,
        noisy,
        &time_embedding(k, cfg.time_dim),
        &mut input,
    );
    let cache = forward_cached(params, input, 1);
    let (_, dx) = backprop(params, &cache, cotangent.to_vec(), 1, true);
    let mut dx = dx.expect("input gradient requested");
    dx.truncate(cfg.obs_dim + cfg.chunk_dim);
    Ok(dx)
}

/// Adam moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        OptimizerState {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            step: 0,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 256,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            hidden: vec![256, 256],
            time_dim: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

const DIVERGENCE_LOSS: f64 = 1e3;

/// Noise-prediction training with uniformly drawn diffusion steps.
pub fn train<T: Real>(
    pairs: &[TrainingPair],
    schedule: &NoiseSchedule<T>,
    cfg: &TrainConfig,
) -> Result<(DenoiserParams<T>, TrainReport)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Config("no training pairs".into()))?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let obs_dim = first.observation_stack.len();
    let chunk_dim = first.action_chunk.len();
    if pairs
        .iter()
        .any(|p| p.observation_stack.len() != obs_dim || p.action_chunk.len() != chunk_dim)
    {
        return Err(Error::Config(
            "training pairs have inconsistent shapes".into(),
        ));
    }
    let net_cfg = DenoiserConfig {
        obs_dim,
        chunk_dim,
        time_dim: cfg.time_dim,
        hidden: cfg.hidden.clone(),
    };
    let mut params = DenoiserParams::<T>::init(net_cfg.clone(), cfg.seed);
    let mut opt = OptimizerState::<T>::new(params.data.len(), cfg.lr, cfg.beta1, cfg.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let embeddings: Vec<Vec<T>> = (1..=schedule.steps())
        .map(|k| time_embedding(k, cfg.time_dim))
        .collect();
    let obs: Vec<Vec<T>> = pairs
        .iter()
        .map(|p| p.observation_stack.iter().map(|&v| T::lit(v)).collect())
        .collect();
    let chunks: Vec<Vec<T>> = pairs
        .iter()
        .map(|p| p.action_chunk.iter().map(|&v| T::lit(v)).collect())
        .collect();

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut report = TrainReport::default();
    let mut input = Vec::new();
    let mut target = Vec::new();
    let mut noisy = vec![T::zero(); chunk_dim];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            input.clear();
            target.clear();
            for &i in idx {
                let k = rng.random_range(1..=schedule.steps());
                let ab = schedule.alpha_bar(k);
                let (s, n) = (ab.sqrt(), (T::one() - ab).sqrt());
                let start = target.len();
                for (j, &c) in chunks[i].iter().enumerate() {
                    let e = T::lit(rng.sample::<f64, _>(StandardNormal));
                    target.push(e);
                    noisy[j] = s * c + n * e;
                }
                debug_assert_eq!(target.len() - start, chunk_dim);
                assemble_input(&net_cfg, &obs[i], &noisy, &embeddings[k - 1], &mut input);
            }
            let (loss, grad) =
                loss_and_grad(&params, std::mem::take(&mut input), &target, idx.len());
            let loss = loss.as_f64();
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Err(Error::Training {
                    epoch,
                    reason: format!("minibatch loss {loss}"),
                });
            }
            opt.update(&mut params.data, &grad);
            total += loss;
            batches += 1;
        }
        report.epoch_losses.push(total / batches as f64);
    }
    if !params.is_finite() {
        return Err(Error::Training {
            epoch: cfg.epochs,
            reason: "non-finite parameters".into(),
        });
    }
    Ok((params, report))
}

fn draw_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, out: &mut [T]) {
    for v in out {
        *v = T::lit(rng.sample::<f64, _>(StandardNormal));
    }
}

const SAMPLE_CLIP: f64 = 1.1;

/// Draws the initial latent of a sampling run.
pub fn initial_latent<T: Real, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<T> {
    let mut a = vec![T::zero(); dim];
    draw_normal(rng, &mut a);
    a
}

/// Applies one reverse step given an aggregated noise estimate, drawing
/// fresh Gaussian noise from `rng` for every step with `k > 1`.
pub fn denoise_step<T: Real, R: Rng + ?Sized>(
    schedule: &NoiseSchedule<T>,
    latent: &mut [T],
    eps: &[T],
    k: usize,
    rng: &mut R,
) -> Result<()> {
    if k > 1 {
        let mut z = vec![T::zero(); latent.len()];
        draw_normal(rng, &mut z);
        schedule.reverse_step(latent, eps, k, Some(&z));
    } else {
        schedule.reverse_step(latent, eps, k, None);
    }
    if latent.iter().any(|v| !v.is_finite()) {
        return Err(Error::Sampling(format!("non-finite latent at step {k}")));
    }
    Ok(())
}

pub fn clip_sample<T: Real>(latent: &mut [T]) {
    let c = T::lit(SAMPLE_CLIP);
    latent.iter_mut().for_each(|v| *v = v.max(-c).min(c));
}

/// Ancestral sampling of one normalized chunk. Deterministic given `seed`.
pub fn sample<T: Real>(
    params: &DenoiserParams<T>,
    schedule: &NoiseSchedule<T>,
    obs: &[T],
    seed: u64,
) -> Result<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sample_batch(params, schedule, &[obs], std::slice::from_mut(&mut rng))?;
    Ok(out.pop().expect("one sample"))
}

/// Ancestral sampling for several observations at once, one generator per
/// row. Each row's result equals what [`sample`] would produce with that
/// row's generator.
pub fn sample_batch<T: Real, R: Rng>(
    params: &DenoiserParams<T>,
    schedule: &NoiseSchedule<T>,
    obs: &[&[T]],
    rngs: &mut [R],
) -> Result<Vec<Vec<T>>> {
    let cfg = &params.config;
    if obs.iter().any(|o| o.len() != cfg.obs_dim) || rngs.len() != obs.len() {
        return Err(Error::Config(format!(
            "sample_batch: expected {} generators and obs of length {}",
            obs.len(),
            cfg.obs_dim
        )));
    }
    let dim = cfg.chunk_dim;
    let mut latents: Vec<Vec<T>> = rngs.iter_mut().map(|r| initial_latent(dim, r)).collect();
    for k in (1..=schedule.steps()).rev() {
        let emb = time_embedding(k, cfg.time_dim);
        let noisy: Vec<&[T]> = latents.iter().map(|l| l.as_slice()).collect();
        let eps = forward_rows(params, obs, &noisy, &emb);
        for ((latent, e), rng) in latents
            .iter_mut()
            .zip(eps.chunks_exact(dim))
            .zip(rngs.iter_mut())
        {
            denoise_step(schedule, latent, e, k, rng)?;
        }
    }
    latents.iter_mut().for_each(|l| clip_sample(l));
    Ok(latents)
}
