//! Oracles shared between test targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viewscale::diffusion::{backward, loss, DenoiseSample, DenoiserConfig, DenoiserParams};

/// Largest relative error between the analytic gradient and central
/// differences over every parameter of a random small network.
pub fn max_relative_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = DenoiserConfig {
        obs_dim: rng.random_range(1..5),
        chunk_dim: rng.random_range(1..5),
        time_dim: 2 * rng.random_range(1..3),
        hidden: (0..rng.random_range(1..3))
            .map(|_| rng.random_range(2..7))
            .collect(),
    };
    let params = DenoiserParams::<f64>::init_dense(cfg.clone(), seed);
    let batch: Vec<DenoiseSample<f64>> = (0..rng.random_range(1..4))
        .map(|_| DenoiseSample {
            obs: (0..cfg.obs_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            noisy_chunk: (0..cfg.chunk_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            k: rng.random_range(1..50),
            noise: (0..cfg.chunk_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        })
        .collect();
    let (_, grad) = backward(&params, &batch).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, &g) in grad.iter().enumerate() {
        let mut plus = params.clone();
        plus.data[i] += h;
        let mut minus = params.clone();
        minus.data[i] -= h;
        let fd = (loss(&plus, &batch).unwrap() - loss(&minus, &batch).unwrap()) / (2.0 * h);
        let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}
