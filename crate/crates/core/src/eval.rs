//! Train/test splitting, accuracy, recording-level voting, and the feature
//! importance report.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};
use crate::io_store::{well_row, DatasetManifest, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Wellwise,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub train_rows: Vec<char>,
    pub test_rows: Vec<char>,
    pub random_frac: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            mode: SplitMode::Wellwise,
            train_rows: vec!['A', 'B', 'C', 'D'],
            test_rows: vec!['E', 'F'],
            random_frac: 0.5,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.mode == SplitMode::Wellwise {
            if self.train_rows.iter().any(|r| self.test_rows.contains(r)) {
                return Err(PipelineError::Config("train and test rows overlap".into()));
            }
        } else if !(0.0 < self.random_frac && self.random_frac < 1.0) {
            return Err(PipelineError::Config("random_frac must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// Partition recording ids so all segments of one recording (and, well-wise,
/// one well) land on a single side.
pub fn split_dataset(manifest: &DatasetManifest, plan: &SplitPlan) -> Result<(Vec<String>, Vec<String>)> {
    plan.validate()?;
    match plan.mode {
        SplitMode::Wellwise => {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for e in &manifest.entries {
                let row = well_row(&e.well_id)?;
                if plan.train_rows.contains(&row) {
                    train.push(e.recording_id.clone());
                } else if plan.test_rows.contains(&row) {
                    test.push(e.recording_id.clone());
                } else {
                    return Err(PipelineError::Config(format!(
                        "well row '{row}' not assigned to train or test"
                    )));
                }
            }
            Ok((train, test))
        }
        SplitMode::Random => {
            let mut ids: Vec<String> =
                manifest.entries.iter().map(|e| e.recording_id.clone()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            ids.shuffle(&mut rng);
            let n_train = ((ids.len() as f64) * plan.random_frac).round() as usize;
            let test = ids.split_off(n_train.min(ids.len()));
            Ok((ids, test))
        }
    }
}

/// Proportion of correctly classified samples.
pub fn accuracy(preds: &[u8], labels: &[u8]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(PipelineError::Data(format!(
            "accuracy over {} preds vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / preds.len() as f64)
}

/// Majority vote over segment probabilities at threshold 0.5; an even split
/// falls back to the mean probability.
pub fn vote_recording(segment_probs: &[f64]) -> Result<u8> {
    if segment_probs.is_empty() {
        return Err(PipelineError::Data("vote over zero segments".into()));
    }
    let positive = segment_probs.iter().filter(|&&p| p >= 0.5).count();
    let negative = segment_probs.len() - positive;
    Ok(match positive.cmp(&negative) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => {
            let mean = segment_probs.iter().sum::<f64>() / segment_probs.len() as f64;
            u8::from(mean >= 0.5)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMode {
    RetrainAblation,
    Permutation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub name: String,
    pub acc_all: f64,
    pub acc_without: f64,
    pub importance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub mode: ImportanceMode,
    pub acc_all: f64,
    pub rows: Vec<ImportanceRow>,
}

impl ImportanceReport {
    /// Build from per-feature accuracies; the importance column is the
    /// accuracy delta by construction.
    pub fn from_accuracies(
        mode: ImportanceMode,
        acc_all: f64,
        per_feature: Vec<(String, f64)>,
    ) -> Self {
        let mut rows: Vec<ImportanceRow> = per_feature
            .into_iter()
            .map(|(name, acc_without)| ImportanceRow {
                name,
                acc_all,
                acc_without,
                importance: acc_all - acc_without,
            })
            .collect();
        rows.sort_by(|a, b| b.importance.partial_cmp(&a.importance).unwrap());
        ImportanceReport {
            mode,
            acc_all,
            rows,
        }
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["feature", "acc_all", "acc_without", "importance"]);
        for r in &self.rows {
            t.push(vec![
                r.name.clone().into(),
                r.acc_all.into(),
                r.acc_without.into(),
                r.importance.into(),
            ]);
        }
        t
    }
}
