//! Mean-pooled logistic baseline.
//!
//! Parameter layout: input weights, burst weights, bias (last).

use rand_chacha::ChaCha8Rng;

use super::{burst_pool, uniform_init, ModelConfig, ModelInput};

pub(super) fn n_params(cfg: &ModelConfig) -> usize {
    cfg.input_dim + cfg.burst_dim + 1
}

pub(super) fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = 1.0 / ((cfg.input_dim + cfg.burst_dim) as f64).sqrt();
    let mut p = uniform_init(rng, cfg.input_dim + cfg.burst_dim, scale);
    p.push(0.0);
    p
}

pub(super) struct Cache {
    pooled: Vec<f64>,
    bpool: Vec<f64>,
}

pub(super) fn forward(cfg: &ModelConfig, params: &[f64], input: &ModelInput) -> (f64, Cache) {
    let d = cfg.input_dim;
    let mut pooled = vec![0.0f64; d];
    if input.valid > 0 {
        for (dim, row) in input.x.iter().enumerate() {
            let s: f64 = row[..input.valid].iter().map(|&v| v as f64).sum();
            pooled[dim] = s / input.valid as f64;
        }
    }
    let bpool = burst_pool(cfg, input);
    let mut logit = params[d + cfg.burst_dim];
    for (w, m) in params[..d].iter().zip(&pooled) {
        logit += w * m;
    }
    for (w, m) in params[d..d + cfg.burst_dim].iter().zip(&bpool) {
        logit += w * m;
    }
    (logit, Cache { pooled, bpool })
}

pub(super) fn backward(
    cfg: &ModelConfig,
    _input: &ModelInput,
    cache: &Cache,
    dlogit: f64,
    grad: &mut [f64],
) {
    let d = cfg.input_dim;
    for (g, m) in grad[..d].iter_mut().zip(&cache.pooled) {
        *g += dlogit * m;
    }
    for (g, m) in grad[d..d + cfg.burst_dim].iter_mut().zip(&cache.bpool) {
        *g += dlogit * m;
    }
    grad[d + cfg.burst_dim] += dlogit;
}
