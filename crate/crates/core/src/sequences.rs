//! Per-segment feature sequences for each pipeline variant, the binary-binned
//! baseline, and train-statistics normalization.

use serde::{Deserialize, Serialize};

use crate::dsp::SegmentMeta;
use crate::error::{PipelineError, Result};
use crate::features::{Burst, SpikeFeatures};
use crate::io_store::ClassLabel;
use crate::spikes::{SpikeEvent, WAVEFORM_LEN};

pub const N_SPIKE_FEATURES: usize = 3;
pub const N_BURST_FEATURES: usize = 3;

/// Spike-level handcrafted feature names, in row order.
pub const SPIKE_FEATURE_NAMES: [&str; 3] = ["amplitude", "isi", "duration"];
/// Burst-level feature names, in row order.
pub const BURST_FEATURE_NAMES: [&str; 3] = ["burst_duration", "n_spikes_per_burst", "bsr"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Raw 100-sample waveforms only.
    V1Waveform,
    /// Handcrafted spike features only.
    V2Features,
    /// Waveform rows 0..100 then feature rows 100..103.
    V3Combined,
    /// Zhao-style binary spike-presence bins.
    BaselineBinned,
}

impl Variant {
    pub fn spike_dim(self) -> usize {
        match self {
            Variant::V1Waveform => WAVEFORM_LEN,
            Variant::V2Features => N_SPIKE_FEATURES,
            Variant::V3Combined => WAVEFORM_LEN + N_SPIKE_FEATURES,
            Variant::BaselineBinned => 1,
        }
    }

    pub fn has_handcrafted(self) -> bool {
        matches!(self, Variant::V2Features | Variant::V3Combined)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub variant: Variant,
    pub len_spikes: usize,
    pub len_bursts: usize,
    pub include_bursts: bool,
    pub bin_width_s: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            variant: Variant::V3Combined,
            len_spikes: 500,
            len_bursts: 50,
            include_bursts: false,
            bin_width_s: 0.001,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.len_spikes == 0 || self.len_bursts == 0 {
            return Err(PipelineError::Config("sequence lengths must be > 0".into()));
        }
        if self.bin_width_s <= 0.0 {
            return Err(PipelineError::Config("bin_width_s must be > 0".into()));
        }
        Ok(())
    }
}

/// Column-time-ordered feature matrix for one segment. `matrix[d]` is row d,
/// length `len` columns; columns at and beyond `valid` are exactly zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub spike_matrix: Vec<Vec<f32>>,
    pub spike_valid: usize,
    pub burst_matrix: Option<Vec<Vec<f32>>>,
    pub burst_valid: usize,
    pub label: ClassLabel,
    pub well_id: String,
    pub parent_id: String,
}

impl FeatureSequence {
    pub fn spike_dim(&self) -> usize {
        self.spike_matrix.len()
    }
    pub fn len_spikes(&self) -> usize {
        self.spike_matrix.first().map_or(0, |r| r.len())
    }
}

fn zero_matrix(dim: usize, len: usize) -> Vec<Vec<f32>> {
    vec![vec![0.0f32; len]; dim]
}

/// Assemble the per-variant sequence for one segment. Events must come in
/// time order with their features index-aligned; truncation keeps the
/// earliest spikes, padding appends zero columns.
pub fn build_sequence(
    meta: &SegmentMeta,
    events: &[SpikeEvent],
    feats: &[SpikeFeatures],
    bursts: &[Burst],
    cfg: &SequenceConfig,
) -> Result<FeatureSequence> {
    cfg.validate()?;
    if events.len() != feats.len() {
        return Err(PipelineError::Data(format!(
            "{} events vs {} feature rows",
            events.len(),
            feats.len()
        )));
    }
    let dim = cfg.variant.spike_dim();
    if cfg.variant == Variant::BaselineBinned {
        return Err(PipelineError::Config(
            "binned baseline uses build_binned_baseline".into(),
        ));
    }
    let mut matrix = zero_matrix(dim, cfg.len_spikes);
    let valid = events.len().min(cfg.len_spikes);
    for col in 0..valid {
        let (e, f) = (&events[col], &feats[col]);
        match cfg.variant {
            Variant::V1Waveform => {
                for (d, &v) in e.waveform.iter().enumerate() {
                    matrix[d][col] = v;
                }
            }
            Variant::V2Features => {
                matrix[0][col] = f.amplitude_uv as f32;
                matrix[1][col] = f.isi_s as f32;
                matrix[2][col] = f.duration_s as f32;
            }
            Variant::V3Combined => {
                for (d, &v) in e.waveform.iter().enumerate() {
                    matrix[d][col] = v;
                }
                matrix[WAVEFORM_LEN][col] = f.amplitude_uv as f32;
                matrix[WAVEFORM_LEN + 1][col] = f.isi_s as f32;
                matrix[WAVEFORM_LEN + 2][col] = f.duration_s as f32;
            }
            Variant::BaselineBinned => unreachable!(),
        }
    }

    let (burst_matrix, burst_valid) = if cfg.include_bursts {
        let mut bm = zero_matrix(N_BURST_FEATURES, cfg.len_bursts);
        let bv = bursts.len().min(cfg.len_bursts);
        for (col, b) in bursts.iter().take(bv).enumerate() {
            bm[0][col] = b.duration_s as f32;
            bm[1][col] = b.n_spikes as f32;
            bm[2][col] = b.bsr as f32;
        }
        (Some(bm), bv)
    } else {
        (None, 0)
    };

    Ok(FeatureSequence {
        spike_matrix: matrix,
        spike_valid: valid,
        burst_matrix,
        burst_valid,
        label: meta.class_label,
        well_id: meta.well_id.clone(),
        parent_id: meta.parent_id.clone(),
    })
}

/// Zhao-style binary signal: one bin per `bin_width_s`, 1 where at least one
/// spike peak lands.
pub fn build_binned_baseline(events: &[SpikeEvent], meta: &SegmentMeta, cfg: &SequenceConfig) -> Vec<f32> {
    let n_bins = (meta.window_s / cfg.bin_width_s).ceil() as usize;
    let mut bins = vec![0.0f32; n_bins];
    for e in events {
        let b = (e.peak_time_s / cfg.bin_width_s).floor() as usize;
        if b < n_bins {
            bins[b] = 1.0;
        }
    }
    bins
}

/// Wrap a binned baseline signal as a 1 x n sequence so the model layer can
/// treat every variant uniformly.
pub fn binned_to_sequence(bins: Vec<f32>, meta: &SegmentMeta) -> FeatureSequence {
    let valid = bins.len();
    FeatureSequence {
        spike_matrix: vec![bins],
        spike_valid: valid,
        burst_matrix: None,
        burst_valid: 0,
        label: meta.class_label,
        well_id: meta.well_id.clone(),
        parent_id: meta.parent_id.clone(),
    }
}

/// Per-dimension mean and std over the training set's valid columns only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub spike_mean: Vec<f64>,
    pub spike_std: Vec<f64>,
    pub burst_mean: Vec<f64>,
    pub burst_std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-8;

pub fn fit_norm_stats(train: &[FeatureSequence]) -> Result<NormStats> {
    let Some(first) = train.first() else {
        return Err(PipelineError::Data("empty training set".into()));
    };
    let dim = first.spike_dim();
    let bdim = first.burst_matrix.as_ref().map_or(0, |m| m.len());

    let mut count = 0usize;
    let mut sum = vec![0.0f64; dim];
    let mut sumsq = vec![0.0f64; dim];
    let mut bcount = 0usize;
    let mut bsum = vec![0.0f64; bdim];
    let mut bsumsq = vec![0.0f64; bdim];
    for seq in train {
        if seq.spike_dim() != dim {
            return Err(PipelineError::Data("mixed sequence dimensions".into()));
        }
        count += seq.spike_valid;
        for d in 0..dim {
            for col in 0..seq.spike_valid {
                let v = seq.spike_matrix[d][col] as f64;
                sum[d] += v;
                sumsq[d] += v * v;
            }
        }
        if let Some(bm) = &seq.burst_matrix {
            bcount += seq.burst_valid;
            for d in 0..bdim {
                for col in 0..seq.burst_valid {
                    let v = bm[d][col] as f64;
                    bsum[d] += v;
                    bsumsq[d] += v * v;
                }
            }
        }
    }
    if count == 0 {
        return Err(PipelineError::Data("no valid columns in training set".into()));
    }
    let finish = |n: usize, sum: Vec<f64>, sumsq: Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        if n == 0 {
            let d = sum.len();
            return (vec![0.0; d], vec![1.0; d]);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std: Vec<f64> = sumsq
            .iter()
            .zip(&mean)
            .map(|(&sq, &m)| ((sq / n as f64 - m * m).max(0.0)).sqrt().max(STD_FLOOR))
            .collect();
        (mean, std)
    };
    let (spike_mean, spike_std) = finish(count, sum, sumsq);
    let (burst_mean, burst_std) = finish(bcount, bsum, bsumsq);
    Ok(NormStats {
        spike_mean,
        spike_std,
        burst_mean,
        burst_std,
    })
}

/// Z-score valid columns per dimension; padded columns stay exactly zero.
pub fn apply_norm(seq: &FeatureSequence, stats: &NormStats) -> Result<FeatureSequence> {
    if seq.spike_dim() != stats.spike_mean.len() {
        return Err(PipelineError::Data(format!(
            "sequence dim {} vs stats dim {}",
            seq.spike_dim(),
            stats.spike_mean.len()
        )));
    }
    let mut out = seq.clone();
    for d in 0..out.spike_dim() {
        for col in 0..out.spike_valid {
            let v = out.spike_matrix[d][col] as f64;
            out.spike_matrix[d][col] = ((v - stats.spike_mean[d]) / stats.spike_std[d]) as f32;
        }
    }
    if let Some(bm) = &mut out.burst_matrix {
        if bm.len() != stats.burst_mean.len() {
            return Err(PipelineError::Data("burst dim mismatch".into()));
        }
        for d in 0..bm.len() {
            for col in 0..out.burst_valid {
                let v = bm[d][col] as f64;
                bm[d][col] = ((v - stats.burst_mean[d]) / stats.burst_std[d]) as f32;
            }
        }
    }
    Ok(out)
}

/// Remove one handcrafted feature row (by name) from a sequence, for
/// retrain-ablation importance runs.
pub fn drop_feature(seq: &FeatureSequence, variant: Variant, feature: &str) -> Result<FeatureSequence> {
    let mut out = seq.clone();
    if let Some(idx) = SPIKE_FEATURE_NAMES.iter().position(|&n| n == feature) {
        let row = match variant {
            Variant::V2Features => idx,
            Variant::V3Combined => WAVEFORM_LEN + idx,
            _ => return Err(PipelineError::Config(format!("variant has no feature '{feature}'"))),
        };
        out.spike_matrix.remove(row);
        Ok(out)
    } else if let Some(idx) = BURST_FEATURE_NAMES.iter().position(|&n| n == feature) {
        let Some(bm) = &mut out.burst_matrix else {
            return Err(PipelineError::Config(format!(
                "burst feature '{feature}' requires include_bursts"
            )));
        };
        bm.remove(idx);
        Ok(out)
    } else {
        Err(PipelineError::Config(format!("unknown feature '{feature}'")))
    }
}

/// Flatten a sequence column-major into one vector, for external embedding
/// tools.
pub fn flatten(seq: &FeatureSequence) -> Vec<f32> {
    let mut out = Vec::with_capacity(seq.spike_dim() * seq.len_spikes());
    for col in 0..seq.len_spikes() {
        for d in 0..seq.spike_dim() {
            out.push(seq.spike_matrix[d][col]);
        }
    }
    if let Some(bm) = &seq.burst_matrix {
        let len = bm.first().map_or(0, |r| r.len());
        for col in 0..len {
            for row in bm {
                out.push(row[col]);
            }
        }
    }
    out
}
