//! Command-line front end: simulate / preprocess / train / evaluate /
//! importance / compare, each a pure function of (config, inputs, seed).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;
use crate::error::{PipelineError, Result};
use crate::eval::ImportanceMode;
use crate::io_store::{self, Table, TableFormat};
use crate::models::{checkpoint, Arch};
use crate::pipeline;
use crate::sequences::Variant;
use crate::synthgen;

#[derive(Debug, Parser)]
#[command(name = "meapipe", version, about = "MEA spike-train classification pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub cmd: Command,
}

/// Flags shared by every subcommand; each overrides the config file field of
/// the same name.
#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores); results are independent of this.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Sequence variant override.
    #[arg(long, global = true, value_enum)]
    pub variant: Option<VariantArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    V1,
    V2,
    V3,
    Baseline,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Variant {
        match v {
            VariantArg::V1 => Variant::V1Waveform,
            VariantArg::V2 => Variant::V2Features,
            VariantArg::V3 => Variant::V3Combined,
            VariantArg::Baseline => Variant::BaselineBinned,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArchArg {
    Lstm,
    Cnn,
    Logistic,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Arch {
        match a {
            ArchArg::Lstm => Arch::Lstm,
            ArchArg::Cnn => Arch::Cnn1d,
            ArchArg::Logistic => Arch::Logistic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> TableFormat {
        match f {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Json => TableFormat::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    RetrainAblation,
    Permutation,
}

impl From<ModeArg> for ImportanceMode {
    fn from(m: ModeArg) -> ImportanceMode {
        match m {
            ModeArg::RetrainAblation => ImportanceMode::RetrainAblation,
            ModeArg::Permutation => ImportanceMode::Permutation,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-class dataset.
    Simulate {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        wells_per_class: Option<usize>,
        /// Recording duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        channels: Option<usize>,
    },
    /// Filter, segment, detect spikes, and write a feature-sequence store.
    Preprocess {
        /// Dataset directory containing manifest.json.
        #[arg(long)]
        data: PathBuf,
        /// Output sequence-store directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier on the train side of the configured split.
    Train {
        /// Sequence-store directory from `preprocess`.
        #[arg(long)]
        store: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Optional training-report JSON path.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum)]
        arch: Option<ArchArg>,
    },
    /// Score a checkpoint on the test side of the configured split.
    Evaluate {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional table output path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Per-feature importance via ablation retraining or permutation.
    Importance {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Train and evaluate baseline + V1/V2/V3 under one seed and split.
    Compare {
        /// Dataset directory containing manifest.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.generator.seed = seed;
    }
    if let Some(jobs) = common.jobs {
        cfg.jobs = jobs;
    }
    if let Some(v) = common.variant {
        cfg.sequence.variant = v.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads(cfg: &ExperimentConfig) {
    if cfg.jobs > 0 {
        // Ignore the error when a global pool already exists (tests, repeat
        // calls); results do not depend on thread count anyway.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global();
    }
}

fn emit(table: &Table, out: Option<&Path>, format: TableFormat) -> Result<()> {
    match out {
        Some(path) => io_store::export_table(table, path, format),
        None => {
            let body = match format {
                TableFormat::Csv => table.to_csv(),
                TableFormat::Json => table.to_json(),
            };
            print!("{body}");
            Ok(())
        }
    }
}

fn load_split(
    store: &Path,
    cfg: &ExperimentConfig,
) -> Result<(
    Vec<crate::sequences::FeatureSequence>,
    Vec<usize>,
    Vec<usize>,
    crate::sequences::SequenceConfig,
)> {
    let (seqs, seq_cfg, _, _) = pipeline::read_store(store)?;
    let (train, test) = pipeline::split_sequences(&seqs, &cfg.plan)?;
    // Borrow checker: return indices rather than references into `seqs`.
    let idx_of = |subset: &[&crate::sequences::FeatureSequence]| {
        subset
            .iter()
            .map(|s| {
                seqs.iter()
                    .position(|q| std::ptr::eq(q, *s))
                    .expect("subset element from seqs")
            })
            .collect::<Vec<_>>()
    };
    let (ti, vi) = (idx_of(&train), idx_of(&test));
    Ok((seqs, ti, vi, seq_cfg))
}

/// Run a parsed command; errors map to exit codes in [`main_entry`].
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    init_threads(&cfg);
    match &cli.cmd {
        Command::Simulate {
            out,
            wells_per_class,
            duration,
            channels,
        } => {
            let mut gen = cfg.generator.clone();
            if let Some(d) = duration {
                gen.duration_s = *d;
            }
            if let Some(c) = channels {
                gen.n_channels = *c;
            }
            gen.validate()?;
            let wells = wells_per_class.unwrap_or(cfg.wells_per_class);
            let manifest = synthgen::generate_dataset(&gen, wells, out)?;
            println!(
                "wrote {} recordings ({} per class) to {} [seed {}]",
                manifest.entries.len(),
                wells,
                out.display(),
                gen.seed
            );
            for e in &manifest.entries {
                println!("  {}  well {}  class {}", e.recording_id, e.well_id, e.class_label.as_u8());
            }
            Ok(())
        }
        Command::Preprocess { data, out } => {
            let manifest = io_store::read_manifest(data)?;
            let (processed, counts) = pipeline::preprocess_manifest(data, &manifest, &cfg)?;
            let seqs = pipeline::build_variant(&processed, &cfg.sequence)?;
            pipeline::write_store(&seqs, &cfg.sequence, &cfg.hash(), cfg.seed, out)?;
            println!(
                "segments {}  spikes {}  bursts {}  d_spike {}  store {}",
                counts.segments,
                counts.spikes,
                counts.bursts,
                cfg.sequence.variant.spike_dim(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            store,
            out,
            report,
            arch,
        } => {
            let (seqs, ti, vi, seq_cfg) = load_split(store, &cfg)?;
            let train: Vec<_> = ti.iter().map(|&i| &seqs[i]).collect();
            let test: Vec<_> = vi.iter().map(|&i| &seqs[i]).collect();
            let mut base = cfg.model.clone();
            if let Some(a) = arch {
                base.arch = (*a).into();
            }
            let run = pipeline::train_and_eval(&base, cfg.seed, seq_cfg.variant, &train, &test)?;
            checkpoint::save(&run.model, out)?;
            if let Some(rp) = report {
                let json = serde_json::to_string_pretty(&run.report)
                    .map_err(|e| PipelineError::Format(e.to_string()))?;
                std::fs::write(rp, json).map_err(|e| PipelineError::io(rp, e))?;
            }
            let last = run.report.epochs.last();
            println!(
                "trained {:?} for {} epochs  train_loss {:.4}  train_acc {:.4}  val_seg_acc {:.4}  val_voted_acc {:.4}",
                run.model.cfg.arch,
                run.report.epochs.len(),
                last.map_or(f64::NAN, |e| e.train_loss),
                last.map_or(f64::NAN, |e| e.train_acc),
                run.segment_acc,
                run.voted_acc
            );
            println!("checkpoint {}", out.display());
            Ok(())
        }
        Command::Evaluate {
            store,
            checkpoint: ckpt,
            out,
            format,
        } => {
            let (seqs, ti, vi, seq_cfg) = load_split(store, &cfg)?;
            if vi.is_empty() {
                return Err(PipelineError::Data("empty test split".into()));
            }
            let model = checkpoint::load(ckpt)?;
            let expect_dim = seqs[0].spike_dim();
            if model.cfg.input_dim != expect_dim {
                return Err(PipelineError::Data(format!(
                    "checkpoint input_dim {} != store spike dim {}",
                    model.cfg.input_dim, expect_dim
                )));
            }
            let test_set: Vec<_> = if seq_cfg.variant == Variant::BaselineBinned {
                vi.iter().map(|&i| seqs[i].clone()).collect()
            } else {
                let train_owned: Vec<_> = ti.iter().map(|&i| seqs[i].clone()).collect();
                let stats = crate::sequences::fit_norm_stats(&train_owned)?;
                vi.iter()
                    .map(|&i| crate::sequences::apply_norm(&seqs[i], &stats))
                    .collect::<Result<Vec<_>>>()?
            };
            let (seg_acc, voted_acc) = pipeline::score(&model, &test_set)?;
            let mut table = Table::new(&["segment_acc", "voted_acc", "seed", "config_hash"]);
            table.push(vec![
                seg_acc.into(),
                voted_acc.into(),
                (cfg.seed as i64).into(),
                cfg.hash().into(),
            ]);
            emit(&table, out.as_deref(), (*format).into())
        }
        Command::Importance {
            store,
            mode,
            out,
            format,
        } => {
            let (seqs, ti, vi, seq_cfg) = load_split(store, &cfg)?;
            let train: Vec<_> = ti.iter().map(|&i| &seqs[i]).collect();
            let test: Vec<_> = vi.iter().map(|&i| &seqs[i]).collect();
            let mode = mode.map_or(cfg.importance_mode, |m| m.into());
            let report =
                pipeline::feature_importance(&cfg.model, cfg.seed, &seq_cfg, &train, &test, mode)?;
            let mut table = Table::new(&[
                "feature",
                "acc_all",
                "acc_without",
                "importance",
                "seed",
                "config_hash",
            ]);
            table.push(vec![
                "all".into(),
                report.acc_all.into(),
                report.acc_all.into(),
                0.0.into(),
                (cfg.seed as i64).into(),
                cfg.hash().into(),
            ]);
            for r in &report.rows {
                table.push(vec![
                    r.name.clone().into(),
                    r.acc_all.into(),
                    r.acc_without.into(),
                    r.importance.into(),
                    (cfg.seed as i64).into(),
                    cfg.hash().into(),
                ]);
            }
            emit(&table, out.as_deref(), (*format).into())
        }
        Command::Compare { data, out, format } => {
            let manifest = io_store::read_manifest(data)?;
            let (processed, _) = pipeline::preprocess_manifest(data, &manifest, &cfg)?;
            let rows = pipeline::compare_variants(&cfg, &processed)?;
            let mut table = Table::new(&[
                "method",
                "arch",
                "segment_acc",
                "voted_acc",
                "seed",
                "config_hash",
            ]);
            for r in rows {
                table.push(vec![
                    r.method.into(),
                    r.arch.into(),
                    r.segment_acc.into(),
                    r.voted_acc.into(),
                    (cfg.seed as i64).into(),
                    cfg.hash().into(),
                ]);
            }
            emit(&table, out.as_deref(), (*format).into())
        }
    }
}

/// Parse args and run, translating errors into process exit codes.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with success exit.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
