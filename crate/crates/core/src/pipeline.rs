//! End-to-end orchestration: preprocessing recordings into feature
//! sequences, the on-disk sequence store, training/evaluation runs, feature
//! importance, and the preprocessing-variant comparison.

use std::collections::BTreeMap;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dsp::{self, SegmentMeta};
use crate::error::{PipelineError, Result};
use crate::eval::{
    self, accuracy, vote_recording, ImportanceMode, ImportanceReport, SplitPlan,
};
use crate::features::{self, Burst, SpikeFeatures};
use crate::io_store::{self, ClassLabel, DatasetManifest, Recording};
use crate::models::{self, Model, ModelConfig, ModelInput, TrainReport};
use crate::sequences::{
    self, FeatureSequence, SequenceConfig, Variant, BURST_FEATURE_NAMES, SPIKE_FEATURE_NAMES,
};
use crate::spikes::{detect_spikes, SpikeEvent};

/// Everything extracted from one segment, before variant assembly.
#[derive(Debug, Clone)]
pub struct ProcessedSegment {
    pub meta: SegmentMeta,
    pub events: Vec<SpikeEvent>,
    pub feats: Vec<SpikeFeatures>,
    pub bursts: Vec<Burst>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PreprocessCounts {
    pub segments: usize,
    pub spikes: usize,
    pub bursts: usize,
}

/// Filter, split, detect, and featurize one recording.
pub fn preprocess_recording(
    rec: &Recording,
    cfg: &ExperimentConfig,
) -> Result<Vec<ProcessedSegment>> {
    rec.validate()?;
    let filtered = dsp::bandpass_filter(rec, &cfg.filter)?;
    let starts = dsp::split_starts(rec.meta.duration_s, &cfg.split)?;
    let mut out = Vec::with_capacity(starts.len());
    for start in starts {
        let seg = dsp::extract_segment(&filtered, start, cfg.split.window_s);
        let sigmas: Result<Vec<f64>> = seg
            .samples
            .iter()
            .map(|ch| dsp::estimate_noise_sigma(ch))
            .collect();
        let events = detect_spikes(&seg, &cfg.detection, &sigmas?)?;
        let feats = features::spike_features(&events, seg.window_s, seg.sampling_rate_hz);
        let bursts = features::detect_bursts(&events, &cfg.burst)?;
        out.push(ProcessedSegment {
            meta: seg.meta(),
            events,
            feats,
            bursts,
        });
    }
    Ok(out)
}

/// Preprocess every recording in a manifest, in parallel; output order
/// follows the manifest regardless of thread count.
pub fn preprocess_manifest(
    root: &Path,
    manifest: &DatasetManifest,
    cfg: &ExperimentConfig,
) -> Result<(Vec<ProcessedSegment>, PreprocessCounts)> {
    let per_rec: Result<Vec<Vec<ProcessedSegment>>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let rec = io_store::read_recording(&root.join(&e.path))?;
            preprocess_recording(&rec, cfg)
        })
        .collect();
    let mut all = Vec::new();
    let mut counts = PreprocessCounts::default();
    for segs in per_rec? {
        for s in segs {
            counts.segments += 1;
            counts.spikes += s.events.len();
            counts.bursts += s.bursts.len();
            all.push(s);
        }
    }
    Ok((all, counts))
}

/// Assemble one variant's sequences from processed segments.
pub fn build_variant(
    processed: &[ProcessedSegment],
    seq_cfg: &SequenceConfig,
) -> Result<Vec<FeatureSequence>> {
    processed
        .iter()
        .map(|p| {
            if seq_cfg.variant == Variant::BaselineBinned {
                let bins = sequences::build_binned_baseline(&p.events, &p.meta, seq_cfg);
                Ok(sequences::binned_to_sequence(bins, &p.meta))
            } else {
                sequences::build_sequence(&p.meta, &p.events, &p.feats, &p.bursts, seq_cfg)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreEntry {
    parent_id: String,
    well_id: String,
    class_label: ClassLabel,
    spike_valid: usize,
    burst_valid: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreIndex {
    config_hash: String,
    seed: u64,
    sequence: SequenceConfig,
    spike_dim: usize,
    len_spikes: usize,
    burst_dim: usize,
    len_bursts: usize,
    entries: Vec<StoreEntry>,
}

/// Write sequences as `store.json` (index) plus `store.bin` (row-major f32
/// matrices, spike then burst per entry).
pub fn write_store(
    seqs: &[FeatureSequence],
    seq_cfg: &SequenceConfig,
    cfg_hash: &str,
    seed: u64,
    dir: &Path,
) -> Result<()> {
    let Some(first) = seqs.first() else {
        return Err(PipelineError::Data("no sequences to store".into()));
    };
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let spike_dim = first.spike_dim();
    let len_spikes = first.len_spikes();
    let (burst_dim, len_bursts) = first
        .burst_matrix
        .as_ref()
        .map_or((0, 0), |m| (m.len(), m.first().map_or(0, |r| r.len())));

    let mut bin = Vec::new();
    let mut entries = Vec::with_capacity(seqs.len());
    for s in seqs {
        if s.spike_dim() != spike_dim || s.len_spikes() != len_spikes {
            return Err(PipelineError::Data("inhomogeneous sequence shapes".into()));
        }
        for row in &s.spike_matrix {
            for &v in row {
                bin.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(bm) = &s.burst_matrix {
            for row in bm {
                for &v in row {
                    bin.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        entries.push(StoreEntry {
            parent_id: s.parent_id.clone(),
            well_id: s.well_id.clone(),
            class_label: s.label,
            spike_valid: s.spike_valid,
            burst_valid: s.burst_valid,
        });
    }
    let index = StoreIndex {
        config_hash: cfg_hash.to_string(),
        seed,
        sequence: *seq_cfg,
        spike_dim,
        len_spikes,
        burst_dim,
        len_bursts,
        entries,
    };
    let json = serde_json::to_string_pretty(&index).map_err(|e| PipelineError::Format(e.to_string()))?;
    let jp = dir.join("store.json");
    std::fs::write(&jp, json).map_err(|e| PipelineError::io(&jp, e))?;
    let bp = dir.join("store.bin");
    std::fs::write(&bp, bin).map_err(|e| PipelineError::io(&bp, e))?;
    Ok(())
}

/// Read a sequence store back; inverse of [`write_store`].
pub fn read_store(dir: &Path) -> Result<(Vec<FeatureSequence>, SequenceConfig, String, u64)> {
    let jp = dir.join("store.json");
    let json = std::fs::read_to_string(&jp).map_err(|e| PipelineError::io(&jp, e))?;
    let index: StoreIndex =
        serde_json::from_str(&json).map_err(|e| PipelineError::Format(format!("store.json: {e}")))?;
    let bp = dir.join("store.bin");
    let bin = std::fs::read(&bp).map_err(|e| PipelineError::io(&bp, e))?;

    let per_entry = index.spike_dim * index.len_spikes + index.burst_dim * index.len_bursts;
    if bin.len() != 4 * per_entry * index.entries.len() {
        return Err(PipelineError::Format(format!(
            "store.bin length {} != expected {}",
            bin.len(),
            4 * per_entry * index.entries.len()
        )));
    }
    let mut seqs = Vec::with_capacity(index.entries.len());
    let mut off = 0usize;
    let read_f32 = |bin: &[u8], off: &mut usize| {
        let v = f32::from_le_bytes(bin[*off..*off + 4].try_into().unwrap());
        *off += 4;
        v
    };
    for e in &index.entries {
        let mut spike_matrix = vec![vec![0.0f32; index.len_spikes]; index.spike_dim];
        for row in &mut spike_matrix {
            for v in row.iter_mut() {
                *v = read_f32(&bin, &mut off);
            }
        }
        let burst_matrix = if index.burst_dim > 0 {
            let mut bm = vec![vec![0.0f32; index.len_bursts]; index.burst_dim];
            for row in &mut bm {
                for v in row.iter_mut() {
                    *v = read_f32(&bin, &mut off);
                }
            }
            Some(bm)
        } else {
            None
        };
        seqs.push(FeatureSequence {
            spike_matrix,
            spike_valid: e.spike_valid,
            burst_matrix,
            burst_valid: e.burst_valid,
            label: e.class_label,
            well_id: e.well_id.clone(),
            parent_id: e.parent_id.clone(),
        });
    }
    Ok((seqs, index.sequence, index.config_hash, index.seed))
}

/// Split sequences at recording level so all segments of a recording stay on
/// one side; well-wise mode keys on the well row letter.
pub fn split_sequences<'a>(
    seqs: &'a [FeatureSequence],
    plan: &SplitPlan,
) -> Result<(Vec<&'a FeatureSequence>, Vec<&'a FeatureSequence>)> {
    plan.validate()?;
    // Pseudo-manifest of unique recordings, in first-appearance order.
    let mut parents: Vec<(String, String, ClassLabel)> = Vec::new();
    for s in seqs {
        if !parents.iter().any(|(p, _, _)| p == &s.parent_id) {
            parents.push((s.parent_id.clone(), s.well_id.clone(), s.label));
        }
    }
    let manifest = DatasetManifest {
        entries: parents
            .iter()
            .map(|(p, w, l)| io_store::ManifestEntry {
                recording_id: p.clone(),
                path: p.clone(),
                well_id: w.clone(),
                class_label: *l,
            })
            .collect(),
        generator_seed: None,
    };
    let (train_ids, test_ids) = eval::split_dataset(&manifest, plan)?;
    let train: Vec<&FeatureSequence> =
        seqs.iter().filter(|s| train_ids.contains(&s.parent_id)).collect();
    let test: Vec<&FeatureSequence> =
        seqs.iter().filter(|s| test_ids.contains(&s.parent_id)).collect();
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: Model,
    pub report: TrainReport,
    pub segment_acc: f64,
    pub voted_acc: f64,
    pub norm: Option<sequences::NormStats>,
}

fn owned(seqs: &[&FeatureSequence]) -> Vec<FeatureSequence> {
    seqs.iter().map(|s| (*s).clone()).collect()
}

/// Derive the effective model config from data shapes and the global seed.
pub fn effective_model_cfg(
    base: &ModelConfig,
    seed: u64,
    sample: &FeatureSequence,
) -> ModelConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.input_dim = sample.spike_dim();
    cfg.burst_dim = sample.burst_matrix.as_ref().map_or(0, |m| m.len());
    cfg
}

/// Normalize (unless the variant is the binary baseline), train, and score
/// segment-level plus voted recording-level accuracy on the test side.
pub fn train_and_eval(
    base: &ModelConfig,
    seed: u64,
    variant: Variant,
    train_seqs: &[&FeatureSequence],
    test_seqs: &[&FeatureSequence],
) -> Result<RunResult> {
    if train_seqs.is_empty() || test_seqs.is_empty() {
        return Err(PipelineError::Data("empty train or test split".into()));
    }
    let normalize = variant != Variant::BaselineBinned;
    let (train_set, test_set, norm) = if normalize {
        let stats = sequences::fit_norm_stats(&owned(train_seqs))?;
        let tr: Result<Vec<FeatureSequence>> =
            train_seqs.iter().map(|s| sequences::apply_norm(s, &stats)).collect();
        let te: Result<Vec<FeatureSequence>> =
            test_seqs.iter().map(|s| sequences::apply_norm(s, &stats)).collect();
        (tr?, te?, Some(stats))
    } else {
        (owned(train_seqs), owned(test_seqs), None)
    };

    let cfg = effective_model_cfg(base, seed, &train_set[0]);
    let (model, report) = models::train(&cfg, &train_set, &test_set)?;
    let (segment_acc, voted_acc) = score(&model, &test_set)?;
    Ok(RunResult {
        model,
        report,
        segment_acc,
        voted_acc,
        norm,
    })
}

/// Segment accuracy and voted recording accuracy of a model on (already
/// normalized) sequences.
pub fn score(model: &Model, test_set: &[FeatureSequence]) -> Result<(f64, f64)> {
    let probs: Result<Vec<f64>> = test_set
        .iter()
        .map(|s| model.forward(&ModelInput::from_sequence(s)))
        .collect();
    let probs = probs?;
    let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let labels: Vec<u8> = test_set.iter().map(|s| s.label.as_u8()).collect();
    let segment_acc = accuracy(&preds, &labels)?;

    let mut grouped: BTreeMap<&str, (Vec<f64>, u8)> = BTreeMap::new();
    for (s, &p) in test_set.iter().zip(&probs) {
        let e = grouped
            .entry(s.parent_id.as_str())
            .or_insert_with(|| (Vec::new(), s.label.as_u8()));
        e.0.push(p);
    }
    let mut voted_preds = Vec::new();
    let mut voted_labels = Vec::new();
    for (_, (probs, label)) in grouped {
        voted_preds.push(vote_recording(&probs)?);
        voted_labels.push(label);
    }
    let voted_acc = accuracy(&voted_preds, &voted_labels)?;
    Ok((segment_acc, voted_acc))
}

/// Row index of a named handcrafted feature within a variant's matrices.
fn feature_row(variant: Variant, name: &str) -> Result<(bool, usize)> {
    if let Some(idx) = SPIKE_FEATURE_NAMES.iter().position(|&n| n == name) {
        let row = match variant {
            Variant::V2Features => idx,
            Variant::V3Combined => crate::spikes::WAVEFORM_LEN + idx,
            _ => {
                return Err(PipelineError::Config(format!(
                    "variant has no handcrafted feature '{name}'"
                )))
            }
        };
        Ok((false, row))
    } else if let Some(idx) = BURST_FEATURE_NAMES.iter().position(|&n| n == name) {
        Ok((true, idx))
    } else {
        Err(PipelineError::Config(format!("unknown feature '{name}'")))
    }
}

/// Features available for importance analysis under a sequence config.
pub fn importance_features(seq_cfg: &SequenceConfig) -> Result<Vec<String>> {
    if !seq_cfg.variant.has_handcrafted() {
        return Err(PipelineError::Config(
            "feature importance needs a variant with handcrafted features (V2/V3)".into(),
        ));
    }
    let mut names: Vec<String> = SPIKE_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    if seq_cfg.include_bursts {
        names.extend(BURST_FEATURE_NAMES.iter().map(|s| s.to_string()));
    }
    Ok(names)
}

/// Importance per Eq-style accuracy deltas. Retrain-ablation rebuilds the
/// sequences with the feature row removed and retrains with the identical
/// seed; permutation keeps the trained full model and shuffles the feature's
/// values across test segments.
pub fn feature_importance(
    base: &ModelConfig,
    seed: u64,
    seq_cfg: &SequenceConfig,
    train_seqs: &[&FeatureSequence],
    test_seqs: &[&FeatureSequence],
    mode: ImportanceMode,
) -> Result<ImportanceReport> {
    let features = importance_features(seq_cfg)?;
    let variant = seq_cfg.variant;
    let full = train_and_eval(base, seed, variant, train_seqs, test_seqs)?;
    let acc_all = full.segment_acc;

    let mut per_feature = Vec::with_capacity(features.len());
    match mode {
        ImportanceMode::RetrainAblation => {
            for name in &features {
                let tr: Result<Vec<FeatureSequence>> = train_seqs
                    .iter()
                    .map(|s| sequences::drop_feature(s, variant, name))
                    .collect();
                let te: Result<Vec<FeatureSequence>> = test_seqs
                    .iter()
                    .map(|s| sequences::drop_feature(s, variant, name))
                    .collect();
                let tr = tr?;
                let te = te?;
                let run = train_and_eval(
                    base,
                    seed,
                    variant,
                    &tr.iter().collect::<Vec<_>>(),
                    &te.iter().collect::<Vec<_>>(),
                )?;
                per_feature.push((name.clone(), run.segment_acc));
            }
        }
        ImportanceMode::Permutation => {
            let stats = full.norm.as_ref().expect("normalized variant");
            let normed: Result<Vec<FeatureSequence>> =
                test_seqs.iter().map(|s| sequences::apply_norm(s, stats)).collect();
            let normed = normed?;
            for (fi, name) in features.iter().enumerate() {
                let (is_burst, row) = feature_row(variant, name)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((fi as u64 + 1) << 32));
                let mut perm: Vec<usize> = (0..normed.len()).collect();
                perm.shuffle(&mut rng);
                let mut shuffled = normed.clone();
                for (i, &src) in perm.iter().enumerate() {
                    if is_burst {
                        if let (Some(dst_m), Some(src_m)) =
                            (shuffled[i].burst_matrix.as_mut(), normed[src].burst_matrix.as_ref())
                        {
                            dst_m[row] = src_m[row].clone();
                        }
                    } else {
                        shuffled[i].spike_matrix[row] = normed[src].spike_matrix[row].clone();
                    }
                }
                let (seg_acc, _) = score(&full.model, &shuffled)?;
                per_feature.push((name.clone(), seg_acc));
            }
        }
    }
    Ok(ImportanceReport::from_accuracies(mode, acc_all, per_feature))
}

/// One row of the variant comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub arch: String,
    pub segment_acc: f64,
    pub voted_acc: f64,
}

/// Train and evaluate the binned baseline and V1/V2/V3 under one seed and
/// one split. The baseline always uses the CNN; the variants use the
/// configured architecture.
pub fn compare_variants(
    cfg: &ExperimentConfig,
    processed: &[ProcessedSegment],
) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    let methods: [(&str, Variant, models::Arch); 4] = [
        ("baseline_binned", Variant::BaselineBinned, models::Arch::Cnn1d),
        ("V1_waveform", Variant::V1Waveform, cfg.model.arch),
        ("V2_features", Variant::V2Features, cfg.model.arch),
        ("V3_combined", Variant::V3Combined, cfg.model.arch),
    ];
    for (name, variant, arch) in methods {
        let mut seq_cfg = cfg.sequence;
        seq_cfg.variant = variant;
        let seqs = build_variant(processed, &seq_cfg)?;
        let (train, test) = split_sequences(&seqs, &cfg.plan)?;
        let mut base = cfg.model.clone();
        base.arch = arch;
        let run = train_and_eval(&base, cfg.seed, variant, &train, &test)?;
        rows.push(CompareRow {
            method: name.to_string(),
            arch: format!("{arch:?}"),
            segment_acc: run.segment_acc,
            voted_acc: run.voted_acc,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Arch;
    use crate::synthgen::GenConfig;

    /// Small but learnable synthetic setup shared by pipeline tests.
    pub(crate) fn tiny_config(seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.generator = GenConfig {
            n_channels: 4,
            duration_s: 60.0,
            seed,
            ..GenConfig::default()
        };
        cfg.split.window_s = 10.0;
        cfg.split.step_s = 10.0;
        cfg.sequence.len_spikes = 200;
        cfg.model = ModelConfig::new(Arch::Logistic, 103);
        // Tiny split = one minibatch per epoch; a hotter optimizer makes up
        // for the small number of Adam steps.
        cfg.model.lr = 0.05;
        cfg.model.epochs = 60;
        cfg.model.seed = seed;
        cfg
    }

    fn make_processed(cfg: &ExperimentConfig, dir: &Path) -> Vec<ProcessedSegment> {
        let manifest = crate::synthgen::generate_dataset(&cfg.generator, 2, dir).unwrap();
        let (processed, counts) = preprocess_manifest(dir, &manifest, cfg).unwrap();
        assert_eq!(counts.segments, 4 * 6);
        assert!(counts.spikes > 0);
        processed
    }

    #[test]
    fn preprocess_and_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(1);
        let processed = make_processed(&cfg, dir.path());
        let seqs = build_variant(&processed, &cfg.sequence).unwrap();
        assert_eq!(seqs[0].spike_dim(), 103);

        let store_dir = dir.path().join("store");
        write_store(&seqs, &cfg.sequence, &cfg.hash(), cfg.seed, &store_dir).unwrap();
        let (back, seq_cfg, hash, seed) = read_store(&store_dir).unwrap();
        assert_eq!(back.len(), seqs.len());
        assert_eq!(hash, cfg.hash());
        assert_eq!(seed, 1);
        assert_eq!(seq_cfg.len_spikes, 200);
        for (a, b) in seqs.iter().zip(&back) {
            assert_eq!(a.spike_matrix, b.spike_matrix);
            assert_eq!(a.spike_valid, b.spike_valid);
            assert_eq!(a.parent_id, b.parent_id);
        }
    }

    #[test]
    fn end_to_end_learnable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(2);
        let processed = make_processed(&cfg, dir.path());
        let seqs = build_variant(&processed, &cfg.sequence).unwrap();
        let (train, test) = split_sequences(&seqs, &cfg.plan).unwrap();
        assert!(!train.is_empty() && !test.is_empty());
        let run = train_and_eval(&cfg.model, cfg.seed, cfg.sequence.variant, &train, &test).unwrap();
        // Width-separated classes are nearly trivially separable.
        assert!(run.segment_acc >= 0.8, "segment acc {}", run.segment_acc);
    }

    #[test]
    fn importance_identity_and_duration_signal() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(3);
        cfg.sequence.variant = Variant::V2Features;
        let processed = make_processed(&cfg, dir.path());
        let seqs = build_variant(&processed, &cfg.sequence).unwrap();
        let (train, test) = split_sequences(&seqs, &cfg.plan).unwrap();
        let report = feature_importance(
            &cfg.model,
            cfg.seed,
            &cfg.sequence,
            &train,
            &test,
            ImportanceMode::RetrainAblation,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 3);
        for r in &report.rows {
            assert_eq!(r.importance, r.acc_all - r.acc_without);
        }
        assert_eq!(report.rows[0].name, "duration");
    }

    #[test]
    fn permutation_importance_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(4);
        cfg.sequence.variant = Variant::V2Features;
        let processed = make_processed(&cfg, dir.path());
        let seqs = build_variant(&processed, &cfg.sequence).unwrap();
        let (train, test) = split_sequences(&seqs, &cfg.plan).unwrap();
        let report = feature_importance(
            &cfg.model,
            cfg.seed,
            &cfg.sequence,
            &train,
            &test,
            ImportanceMode::Permutation,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[0].name, "duration");
    }

    #[test]
    fn importance_rejects_v1() {
        let mut seq_cfg = SequenceConfig::default();
        seq_cfg.variant = Variant::V1Waveform;
        assert!(importance_features(&seq_cfg).is_err());
    }
}
