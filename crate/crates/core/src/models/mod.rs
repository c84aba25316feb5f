//! Small sequence classifiers trained from scratch with exact analytic
//! gradients: a single-layer LSTM, a two-layer 1-D CNN, and a mean-pooled
//! logistic baseline.
//!
//! All parameters of a model live in one flat `Vec<f64>`; each architecture
//! defines its own layout over that vector. This keeps Adam, checkpointing,
//! and finite-difference checking architecture-agnostic.

mod cnn;
mod logistic;
mod lstm;

pub mod checkpoint;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::sequences::FeatureSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lstm,
    Cnn1d,
    Logistic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub input_dim: usize,
    /// Burst-path input rows; 0 disables the burst path.
    #[serde(default)]
    pub burst_dim: usize,
    pub hidden: usize,
    pub cnn_channels: usize,
    pub cnn_kernel: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(arch: Arch, input_dim: usize) -> Self {
        ModelConfig {
            arch,
            input_dim,
            burst_dim: 0,
            hidden: 64,
            cnn_channels: 32,
            cnn_kernel: 7,
            lr: 1e-3,
            batch_size: 32,
            epochs: 30,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.cnn_channels == 0 || self.cnn_kernel == 0
        {
            return Err(PipelineError::Config("zero model dimension".into()));
        }
        if self.lr <= 0.0 {
            return Err(PipelineError::Config("lr must be > 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(PipelineError::Config("batch_size and epochs must be > 0".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        match self.arch {
            Arch::Logistic => logistic::n_params(self),
            Arch::Lstm => lstm::n_params(self),
            Arch::Cnn1d => cnn::n_params(self),
        }
    }
}

/// Borrowed view of one sample's inputs.
pub struct ModelInput<'a> {
    /// `x[d]` is feature row d; only columns `< valid` are consumed.
    pub x: &'a [Vec<f32>],
    pub valid: usize,
    /// Optional burst matrix with its own valid count.
    pub burst: Option<(&'a [Vec<f32>], usize)>,
}

impl<'a> ModelInput<'a> {
    pub fn from_sequence(seq: &'a FeatureSequence) -> Self {
        ModelInput {
            x: &seq.spike_matrix,
            valid: seq.spike_valid,
            burst: seq
                .burst_matrix
                .as_deref()
                .map(|m| (m, seq.burst_valid)),
        }
    }
}

/// Mean over valid burst columns, zeros when the path is disabled or empty.
pub(crate) fn burst_pool(cfg: &ModelConfig, input: &ModelInput) -> Vec<f64> {
    let mut pool = vec![0.0f64; cfg.burst_dim];
    if let Some((bm, bvalid)) = input.burst {
        if bvalid > 0 {
            for d in 0..cfg.burst_dim.min(bm.len()) {
                let s: f64 = bm[d][..bvalid].iter().map(|&v| v as f64).sum();
                pool[d] = s / bvalid as f64;
            }
        }
    }
    pool
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// A classifier: config plus flat parameter vector.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Vec<f64>,
}

impl Model {
    /// Seeded initialization.
    pub fn init(cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = match cfg.arch {
            Arch::Logistic => logistic::init(&cfg, &mut rng),
            Arch::Lstm => lstm::init(&cfg, &mut rng),
            Arch::Cnn1d => cnn::init(&cfg, &mut rng),
        };
        Ok(Model { cfg, params })
    }

    /// Probability of class 1, strictly inside (0, 1).
    pub fn forward(&self, input: &ModelInput) -> Result<f64> {
        self.check_dims(input)?;
        let logit = match self.cfg.arch {
            Arch::Logistic => logistic::forward(&self.cfg, &self.params, input).0,
            Arch::Lstm => lstm::forward(&self.cfg, &self.params, input).0,
            Arch::Cnn1d => cnn::forward(&self.cfg, &self.params, input).0,
        };
        Ok(sigmoid(logit))
    }

    fn check_dims(&self, input: &ModelInput) -> Result<()> {
        if input.x.len() != self.cfg.input_dim {
            return Err(PipelineError::Data(format!(
                "input dim {} != model input_dim {}",
                input.x.len(),
                self.cfg.input_dim
            )));
        }
        if self.cfg.burst_dim > 0 {
            match input.burst {
                Some((bm, _)) if bm.len() == self.cfg.burst_dim => {}
                _ => {
                    return Err(PipelineError::Data(format!(
                        "burst path expects {} rows",
                        self.cfg.burst_dim
                    )))
                }
            }
        }
        Ok(())
    }

    /// Gradient of the single-sample loss w.r.t. every parameter, plus the
    /// loss itself and the predicted probability.
    pub fn loss_grad(&self, input: &ModelInput, label: u8) -> Result<(f64, f64, Vec<f64>)> {
        self.check_dims(input)?;
        let y = label as f64;
        let mut grad = vec![0.0f64; self.params.len()];
        let (logit, p) = match self.cfg.arch {
            Arch::Logistic => {
                let (logit, cache) = logistic::forward(&self.cfg, &self.params, input);
                let p = sigmoid(logit);
                logistic::backward(&self.cfg, input, &cache, p - y, &mut grad);
                (logit, p)
            }
            Arch::Lstm => {
                let (logit, cache) = lstm::forward(&self.cfg, &self.params, input);
                let p = sigmoid(logit);
                lstm::backward(&self.cfg, &self.params, input, &cache, p - y, &mut grad);
                (logit, p)
            }
            Arch::Cnn1d => {
                let (logit, cache) = cnn::forward(&self.cfg, &self.params, input);
                let p = sigmoid(logit);
                cnn::backward(&self.cfg, &self.params, input, &cache, p - y, &mut grad);
                (logit, p)
            }
        };
        let _ = logit;
        Ok((bce_loss(p, label), p, grad))
    }
}

const PROB_CLAMP: f64 = 1e-7;

/// Binary cross-entropy with probability clamping.
pub fn bce_loss(prob: f64, label: u8) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = label as f64;
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// One epoch row of a training report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_val_acc: Option<f64>,
    pub seed: u64,
    pub config: ModelConfig,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

fn labels_of(seqs: &[FeatureSequence]) -> Vec<u8> {
    seqs.iter().map(|s| s.label.as_u8()).collect()
}

/// Train with Adam over shuffled mini-batches. Deterministic for a fixed
/// seed; per-sample gradients are computed in parallel but reduced in sample
/// index order. Final parameters are snapped to f32 precision so a saved
/// checkpoint reproduces forward outputs bit-exactly.
pub fn train(
    cfg: &ModelConfig,
    train_seqs: &[FeatureSequence],
    val_seqs: &[FeatureSequence],
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if train_seqs.is_empty() {
        return Err(PipelineError::Data("empty training set".into()));
    }
    let labels = labels_of(train_seqs);
    if labels.iter().all(|&l| l == 0) || labels.iter().all(|&l| l == 1) {
        return Err(PipelineError::Data("training set has a single class".into()));
    }

    let mut model = Model::init(cfg.clone())?;
    let mut adam = Adam::new(model.params.len(), cfg.lr);
    // Shuffle stream separate from init so layouts don't couple to ordering.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train_seqs.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::new(),
        final_val_acc: None,
        seed: cfg.seed,
        config: cfg.clone(),
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            use rayon::prelude::*;
            let results: Vec<Result<(f64, f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    model.loss_grad(
                        &ModelInput::from_sequence(&train_seqs[i]),
                        labels[i],
                    )
                })
                .collect();
            let mut grad = vec![0.0f64; model.params.len()];
            let scale = 1.0 / batch.len() as f64;
            for (k, res) in results.into_iter().enumerate() {
                let (loss, p, g) = res?;
                if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(PipelineError::Numerical(format!(
                        "non-finite loss/gradient at epoch {epoch}"
                    )));
                }
                epoch_loss += loss;
                let y = labels[batch[k]];
                if (p >= 0.5) == (y == 1) {
                    correct += 1;
                }
                for (gi, &v) in grad.iter_mut().zip(&g) {
                    *gi += v * scale;
                }
            }
            adam.step(&mut model.params, &grad);
        }
        report.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / train_seqs.len() as f64,
            train_acc: correct as f64 / train_seqs.len() as f64,
        });
    }

    // Snap to f32 so the on-disk f32 checkpoint equals the live model.
    for p in &mut model.params {
        *p = *p as f32 as f64;
    }

    if !val_seqs.is_empty() {
        let preds: Result<Vec<f64>> = val_seqs
            .iter()
            .map(|s| model.forward(&ModelInput::from_sequence(s)))
            .collect();
        let preds = preds?;
        let correct = preds
            .iter()
            .zip(labels_of(val_seqs))
            .filter(|(&p, y)| (p >= 0.5) == (*y == 1))
            .count();
        report.final_val_acc = Some(correct as f64 / val_seqs.len() as f64);
    }
    Ok((model, report))
}

pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::io_store::ClassLabel;

    /// Central finite-difference gradient of the single-sample loss.
    pub fn fd_grad(model: &Model, input: &ModelInput, label: u8, h: f64) -> Vec<f64> {
        let mut g = vec![0.0; model.params.len()];
        let mut m = model.clone();
        for i in 0..g.len() {
            let orig = m.params[i];
            m.params[i] = orig + h;
            let lp = bce_loss(m.forward(input).unwrap(), label);
            m.params[i] = orig - h;
            let lm = bce_loss(m.forward(input).unwrap(), label);
            m.params[i] = orig;
            g[i] = (lp - lm) / (2.0 * h);
        }
        g
    }

    pub fn assert_grad_close(analytic: &[f64], fd: &[f64], tol: f64) {
        for (i, (&a, &f)) in analytic.iter().zip(fd).enumerate() {
            let denom = a.abs().max(f.abs()).max(1e-6);
            let rel = (a - f).abs() / denom;
            assert!(rel < tol, "param {i}: analytic {a} vs fd {f} (rel {rel})");
        }
    }

    /// Random sequence with the given dims; pads beyond `valid` stay zero.
    pub fn random_seq(
        rng: &mut ChaCha8Rng,
        dim: usize,
        len: usize,
        valid: usize,
        burst: Option<(usize, usize, usize)>,
        label: ClassLabel,
    ) -> FeatureSequence {
        let mut m = vec![vec![0.0f32; len]; dim];
        for row in &mut m {
            for v in row[..valid].iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let (bm, bvalid) = match burst {
            Some((bdim, blen, bvalid)) => {
                let mut bm = vec![vec![0.0f32; blen]; bdim];
                for row in &mut bm {
                    for v in row[..bvalid].iter_mut() {
                        *v = rng.gen_range(-1.0..1.0);
                    }
                }
                (Some(bm), bvalid)
            }
            None => (None, 0),
        };
        FeatureSequence {
            spike_matrix: m,
            spike_valid: valid,
            burst_matrix: bm,
            burst_valid: bvalid,
            label,
            well_id: "A1".into(),
            parent_id: "t".into(),
        }
    }
}
