//! Two-layer 1-D CNN with same-padding, ReLU, and masked global average
//! pooling.
//!
//! Parameter layout: conv1 weights (C x d x k), conv1 biases (C), conv2
//! weights (C x C x k), conv2 biases (C), head weights (C + burst_dim),
//! head bias.

use rand_chacha::ChaCha8Rng;

use super::{burst_pool, uniform_init, ModelConfig, ModelInput};

struct Layout {
    d: usize,
    c: usize,
    k: usize,
    bd: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    head_w: usize,
    head_b: usize,
}

fn layout(cfg: &ModelConfig) -> Layout {
    let (d, c, k, bd) = (cfg.input_dim, cfg.cnn_channels, cfg.cnn_kernel, cfg.burst_dim);
    let w1 = 0;
    let b1 = w1 + c * d * k;
    let w2 = b1 + c;
    let b2 = w2 + c * c * k;
    let head_w = b2 + c;
    let head_b = head_w + c + bd;
    Layout {
        d,
        c,
        k,
        bd,
        w1,
        b1,
        w2,
        b2,
        head_w,
        head_b,
    }
}

pub(super) fn n_params(cfg: &ModelConfig) -> usize {
    layout(cfg).head_b + 1
}

pub(super) fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let l = layout(cfg);
    let mut p = Vec::with_capacity(n_params(cfg));
    p.extend(uniform_init(rng, l.c * l.d * l.k, 1.0 / ((l.d * l.k) as f64).sqrt()));
    p.extend(vec![0.0; l.c]);
    p.extend(uniform_init(rng, l.c * l.c * l.k, 1.0 / ((l.c * l.k) as f64).sqrt()));
    p.extend(vec![0.0; l.c]);
    p.extend(uniform_init(rng, l.c + l.bd, 1.0 / ((l.c + l.bd) as f64).sqrt()));
    p.push(0.0);
    p
}

pub(super) struct Cache {
    z1: Vec<Vec<f64>>,
    a1: Vec<Vec<f64>>,
    z2: Vec<Vec<f64>>,
    pool: Vec<f64>,
    bpool: Vec<f64>,
}

pub(super) fn forward(cfg: &ModelConfig, params: &[f64], input: &ModelInput) -> (f64, Cache) {
    let l = layout(cfg);
    let t_len = input.valid;
    let pad = (l.k - 1) / 2;
    let mut z1 = vec![vec![0.0f64; t_len]; l.c];
    let mut a1 = vec![vec![0.0f64; t_len]; l.c];
    for c in 0..l.c {
        for t in 0..t_len {
            let mut acc = params[l.b1 + c];
            for i in 0..l.d {
                let w_base = l.w1 + (c * l.d + i) * l.k;
                for u in 0..l.k {
                    let src = t as isize + u as isize - pad as isize;
                    if src >= 0 && (src as usize) < t_len {
                        acc += params[w_base + u] * input.x[i][src as usize] as f64;
                    }
                }
            }
            z1[c][t] = acc;
            a1[c][t] = acc.max(0.0);
        }
    }

    let mut z2 = vec![vec![0.0f64; t_len]; l.c];
    let mut pool = vec![0.0f64; l.c];
    for c in 0..l.c {
        for t in 0..t_len {
            let mut acc = params[l.b2 + c];
            for cp in 0..l.c {
                let w_base = l.w2 + (c * l.c + cp) * l.k;
                for u in 0..l.k {
                    let src = t as isize + u as isize - pad as isize;
                    if src >= 0 && (src as usize) < t_len {
                        acc += params[w_base + u] * a1[cp][src as usize];
                    }
                }
            }
            z2[c][t] = acc;
            pool[c] += acc.max(0.0);
        }
        if t_len > 0 {
            pool[c] /= t_len as f64;
        }
    }

    let bpool = burst_pool(cfg, input);
    let mut logit = params[l.head_b];
    for c in 0..l.c {
        logit += params[l.head_w + c] * pool[c];
    }
    for (kx, &bp) in bpool.iter().enumerate() {
        logit += params[l.head_w + l.c + kx] * bp;
    }
    (
        logit,
        Cache {
            z1,
            a1,
            z2,
            pool,
            bpool,
        },
    )
}

pub(super) fn backward(
    cfg: &ModelConfig,
    params: &[f64],
    input: &ModelInput,
    cache: &Cache,
    dlogit: f64,
    grad: &mut [f64],
) {
    let l = layout(cfg);
    let t_len = input.valid;
    let pad = (l.k - 1) / 2;

    grad[l.head_b] += dlogit;
    for (kx, &bp) in cache.bpool.iter().enumerate() {
        grad[l.head_w + l.c + kx] += dlogit * bp;
    }
    for c in 0..l.c {
        grad[l.head_w + c] += dlogit * cache.pool[c];
    }
    if t_len == 0 {
        return;
    }

    // Through the pool and second ReLU.
    let mut dz2 = vec![vec![0.0f64; t_len]; l.c];
    for c in 0..l.c {
        let dp = dlogit * params[l.head_w + c] / t_len as f64;
        for t in 0..t_len {
            if cache.z2[c][t] > 0.0 {
                dz2[c][t] = dp;
            }
        }
    }

    // Second conv: weight grads and input grads.
    let mut da1 = vec![vec![0.0f64; t_len]; l.c];
    for c in 0..l.c {
        for t in 0..t_len {
            let g = dz2[c][t];
            if g == 0.0 {
                continue;
            }
            grad[l.b2 + c] += g;
            for cp in 0..l.c {
                let w_base = l.w2 + (c * l.c + cp) * l.k;
                for u in 0..l.k {
                    let src = t as isize + u as isize - pad as isize;
                    if src >= 0 && (src as usize) < t_len {
                        grad[w_base + u] += g * cache.a1[cp][src as usize];
                        da1[cp][src as usize] += g * params[w_base + u];
                    }
                }
            }
        }
    }

    // First conv through its ReLU.
    for c in 0..l.c {
        for t in 0..t_len {
            if cache.z1[c][t] <= 0.0 {
                continue;
            }
            let g = da1[c][t];
            if g == 0.0 {
                continue;
            }
            grad[l.b1 + c] += g;
            for i in 0..l.d {
                let w_base = l.w1 + (c * l.d + i) * l.k;
                for u in 0..l.k {
                    let src = t as isize + u as isize - pad as isize;
                    if src >= 0 && (src as usize) < t_len {
                        grad[w_base + u] += g * input.x[i][src as usize] as f64;
                    }
                }
            }
        }
    }
}
