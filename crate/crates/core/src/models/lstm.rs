//! Single-layer LSTM classifier with exact backpropagation through time.
//!
//! Parameter layout, in order: input weights Wx (4h x d), recurrent weights
//! Wh (4h x h), gate biases (4h), head weights (h + burst_dim), head bias.
//! Gate order within the 4h block: input, forget, cell, output.

use rand_chacha::ChaCha8Rng;

use super::{burst_pool, sigmoid, uniform_init, ModelConfig, ModelInput};

struct Layout {
    d: usize,
    h: usize,
    bd: usize,
    wx: usize,
    wh: usize,
    b: usize,
    head_w: usize,
    head_b: usize,
}

fn layout(cfg: &ModelConfig) -> Layout {
    let (d, h, bd) = (cfg.input_dim, cfg.hidden, cfg.burst_dim);
    let wx = 0;
    let wh = wx + 4 * h * d;
    let b = wh + 4 * h * h;
    let head_w = b + 4 * h;
    let head_b = head_w + h + bd;
    Layout {
        d,
        h,
        bd,
        wx,
        wh,
        b,
        head_w,
        head_b,
    }
}

pub(super) fn n_params(cfg: &ModelConfig) -> usize {
    layout(cfg).head_b + 1
}

pub(super) fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let l = layout(cfg);
    let scale = 1.0 / (l.h as f64).sqrt();
    let mut p = uniform_init(rng, 4 * l.h * l.d + 4 * l.h * l.h, scale);
    // Gate biases: zero except the forget gate, which starts open.
    let mut biases = vec![0.0; 4 * l.h];
    for j in 0..l.h {
        biases[l.h + j] = 1.0;
    }
    p.extend(biases);
    let head_scale = 1.0 / ((l.h + l.bd) as f64).sqrt();
    p.extend(uniform_init(rng, l.h + l.bd, head_scale));
    p.push(0.0);
    p
}

/// Per-timestep activations kept for the backward pass.
pub(super) struct Cache {
    gates_i: Vec<Vec<f64>>,
    gates_f: Vec<Vec<f64>>,
    gates_g: Vec<Vec<f64>>,
    gates_o: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    tanh_cells: Vec<Vec<f64>>,
    hiddens: Vec<Vec<f64>>,
    bpool: Vec<f64>,
}

pub(super) fn forward(cfg: &ModelConfig, params: &[f64], input: &ModelInput) -> (f64, Cache) {
    let l = layout(cfg);
    let t_len = input.valid;
    let mut cache = Cache {
        gates_i: Vec::with_capacity(t_len),
        gates_f: Vec::with_capacity(t_len),
        gates_g: Vec::with_capacity(t_len),
        gates_o: Vec::with_capacity(t_len),
        cells: Vec::with_capacity(t_len),
        tanh_cells: Vec::with_capacity(t_len),
        hiddens: Vec::with_capacity(t_len),
        bpool: burst_pool(cfg, input),
    };

    let mut h_prev = vec![0.0f64; l.h];
    let mut c_prev = vec![0.0f64; l.h];
    for t in 0..t_len {
        let mut pre = vec![0.0f64; 4 * l.h];
        for row in 0..4 * l.h {
            let mut a = params[l.b + row];
            let wx_base = l.wx + row * l.d;
            for i in 0..l.d {
                a += params[wx_base + i] * input.x[i][t] as f64;
            }
            let wh_base = l.wh + row * l.h;
            for j in 0..l.h {
                a += params[wh_base + j] * h_prev[j];
            }
            pre[row] = a;
        }
        let mut gi = vec![0.0; l.h];
        let mut gf = vec![0.0; l.h];
        let mut gg = vec![0.0; l.h];
        let mut go = vec![0.0; l.h];
        let mut c = vec![0.0; l.h];
        let mut tc = vec![0.0; l.h];
        let mut hh = vec![0.0; l.h];
        for j in 0..l.h {
            gi[j] = sigmoid(pre[j]);
            gf[j] = sigmoid(pre[l.h + j]);
            gg[j] = pre[2 * l.h + j].tanh();
            go[j] = sigmoid(pre[3 * l.h + j]);
            c[j] = gf[j] * c_prev[j] + gi[j] * gg[j];
            tc[j] = c[j].tanh();
            hh[j] = go[j] * tc[j];
        }
        cache.gates_i.push(gi);
        cache.gates_f.push(gf);
        cache.gates_g.push(gg);
        cache.gates_o.push(go);
        cache.cells.push(c.clone());
        cache.tanh_cells.push(tc);
        cache.hiddens.push(hh.clone());
        c_prev = c;
        h_prev = hh;
    }

    let mut logit = params[l.head_b];
    for j in 0..l.h {
        logit += params[l.head_w + j] * h_prev[j];
    }
    for (k, &bp) in cache.bpool.iter().enumerate() {
        logit += params[l.head_w + l.h + k] * bp;
    }
    (logit, cache)
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

    grad[l.head_b] += dlogit;
    for (k, &bp) in cache.bpool.iter().enumerate() {
        grad[l.head_w + l.h + k] += dlogit * bp;
    }
    if t_len == 0 {
        return;
    }
    let h_final = &cache.hiddens[t_len - 1];
    let mut dh = vec![0.0f64; l.h];
    for j in 0..l.h {
        grad[l.head_w + j] += dlogit * h_final[j];
        dh[j] = dlogit * params[l.head_w + j];
    }
    let mut dc = vec![0.0f64; l.h];

    for t in (0..t_len).rev() {
        let gi = &cache.gates_i[t];
        let gf = &cache.gates_f[t];
        let gg = &cache.gates_g[t];
        let go = &cache.gates_o[t];
        let tc = &cache.tanh_cells[t];
        let c_prev: &[f64] = if t == 0 { &[] } else { &cache.cells[t - 1] };
        let h_prev: &[f64] = if t == 0 { &[] } else { &cache.hiddens[t - 1] };

        let mut da = vec![0.0f64; 4 * l.h];
        for j in 0..l.h {
            let dcj = dc[j] + dh[j] * go[j] * (1.0 - tc[j] * tc[j]);
            let do_j = dh[j] * tc[j];
            let di = dcj * gg[j];
            let dg = dcj * gi[j];
            let cp = if t == 0 { 0.0 } else { c_prev[j] };
            let df = dcj * cp;
            da[j] = di * gi[j] * (1.0 - gi[j]);
            da[l.h + j] = df * gf[j] * (1.0 - gf[j]);
            da[2 * l.h + j] = dg * (1.0 - gg[j] * gg[j]);
            da[3 * l.h + j] = do_j * go[j] * (1.0 - go[j]);
            dc[j] = dcj * gf[j];
        }

        let mut dh_prev = vec![0.0f64; l.h];
        for row in 0..4 * l.h {
            let dar = da[row];
            if dar == 0.0 {
                continue;
            }
            grad[l.b + row] += dar;
            let wx_base = l.wx + row * l.d;
            for i in 0..l.d {
                grad[wx_base + i] += dar * input.x[i][t] as f64;
            }
            let wh_base = l.wh + row * l.h;
            if t > 0 {
                for j in 0..l.h {
                    grad[wh_base + j] += dar * h_prev[j];
                    dh_prev[j] += dar * params[wh_base + j];
                }
            }
        }
        dh = dh_prev;
    }
}
