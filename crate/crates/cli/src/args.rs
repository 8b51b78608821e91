//! Command-line surface. Every override flag mirrors a `RunConfig` field.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ehrseq_core::eval::report::{render_comparison_markdown, render_markdown};
use ehrseq_core::sequence::{SerializeMode, TruncationSide};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::pipeline;

#[derive(Debug, Parser)]
#[command(name = "ehrseq", version, about = "EHR sequence risk-model pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (patients, events, vocabulary, codelists, ground truth).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Number of patients.
        #[arg(long = "n")]
        n_patients: Option<usize>,
        /// Emit deterministic signal markers.
        #[arg(long)]
        trivial: bool,
        /// Output directory (default: paths.data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse, deduplicate and clean events; write a drop report.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Phenotype, gate, label and split the cleaned records.
    Cohort {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the tokenizer and one classifier per window.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Score the test split with bootstrap intervals.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory holding the tokenizer and checkpoints (default: output_dir/models/<tag>).
        #[arg(long)]
        model_dir: Option<PathBuf>,
        /// Print the Markdown table to stdout.
        #[arg(long)]
        table: bool,
    },
    /// Pairwise significance tests between report files.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, num_args = 2.., required = true)]
        reports: Vec<PathBuf>,
        /// Output directory (default: paths.output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        table: bool,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<SerializeMode>,
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<u32>>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, value_parser = parse_side)]
    pub truncation_side: Option<TruncationSide>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub codelists: Option<PathBuf>,
    #[arg(long)]
    pub patients: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub event_separator: Option<bool>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lr_candidates: Option<Vec<f64>>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long = "m")]
    pub m_comparisons: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

fn parse_mode(s: &str) -> Result<SerializeMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "text" => Ok(SerializeMode::Text),
        "code" => Ok(SerializeMode::Code),
        _ => Err(format!("expected text or code, got {s:?}")),
    }
}

fn parse_side(s: &str) -> Result<TruncationSide, String> {
    match s.to_ascii_lowercase().as_str() {
        "left" => Ok(TruncationSide::Left),
        "right" => Ok(TruncationSide::Right),
        _ => Err(format!("expected left or right, got {s:?}")),
    }
}

impl Common {
    /// Loads the config file (or defaults) and applies the overrides.
    pub fn resolve(&self, seed: Option<u64>) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(seed => c.seed);
        if self.tag.is_some() {
            c.tag = self.tag.clone();
        }
        set!(self.mode => c.mode);
        set!(self.windows => c.windows);
        set!(self.max_len => c.max_len);
        set!(self.truncation_side => c.truncation_side);
        set!(self.data_dir => c.paths.data_dir);
        set!(self.output_dir => c.paths.output_dir);
        for (src, dst) in [
            (&self.vocab, &mut c.paths.vocab),
            (&self.codelists, &mut c.paths.codelists),
            (&self.patients, &mut c.paths.patients),
            (&self.events, &mut c.paths.events),
        ] {
            if src.is_some() {
                *dst = src.clone();
            }
        }
        set!(self.vocab_size => c.tokenizer.vocab_size);
        set!(self.event_separator => c.tokenizer.event_separator);
        set!(self.d_model => c.encoder.d_model);
        set!(self.n_layers => c.encoder.n_layers);
        set!(self.n_heads => c.encoder.n_heads);
        set!(self.d_ff => c.encoder.d_ff);
        set!(self.dropout => c.encoder.dropout);
        set!(self.lr_candidates => c.train.lr_candidates);
        set!(self.max_steps => c.train.max_steps);
        set!(self.batch_size => c.train.batch_size);
        set!(self.early_stop_patience => c.train.early_stop_patience);
        set!(self.eval_every => c.train.eval_every);
        set!(self.n_boot => c.eval.n_boot);
        set!(self.m_comparisons => c.eval.m_comparisons);
        set!(self.threshold => c.eval.threshold);
        c.validate()?;
        Ok(c)
    }
}

fn say(line: impl AsRef<str>) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", line.as_ref());
}

/// Executes one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            common,
            seed,
            n_patients,
            trivial,
            out,
        } => {
            let mut cfg = common.resolve(Some(seed))?;
            if let Some(n) = n_patients {
                cfg.synth.n_patients = n;
            }
            cfg.synth.trivial_mode |= trivial;
            let dir = pipeline::cmd_synth(&cfg, out.as_deref())?;
            say(format!("synth: {} patients -> {}", cfg.synth.n_patients, dir.display()));
        }
        Command::Preprocess { common, seed } => {
            let cfg = common.resolve(seed)?;
            let r = pipeline::cmd_preprocess(&cfg)?;
            say(format!(
                "preprocess: {} event rows, {} kept, {} dropped, {} orphan, {} malformed",
                r.event_rows,
                r.drops.kept_count,
                r.drops.dropped(),
                r.orphan_events,
                r.malformed_event_rows
            ));
        }
        Command::Cohort { common, seed } => {
            let cfg = common.resolve(seed)?;
            let b = pipeline::cmd_cohort(&cfg)?;
            say(format!(
                "cohort: {} of {} patients accepted; split {}/{}/{}",
                b.summary.patients,
                b.summary.candidates,
                b.split.train.len(),
                b.split.validation.len(),
                b.split.test.len()
            ));
        }
        Command::Train { common, seed } => {
            let cfg = common.resolve(Some(seed))?;
            let s = pipeline::cmd_train(&cfg)?;
            for w in &s.windows {
                say(format!(
                    "train: {} window {}y lr {:e} val micro-F1 {:.4}",
                    s.model_tag, w.window_years, w.chosen_lr, w.best_val_micro_f1
                ));
            }
        }
        Command::Evaluate {
            common,
            seed,
            model_dir,
            table,
        } => {
            let cfg = common.resolve(seed)?;
            let report = pipeline::cmd_evaluate(&cfg, model_dir.as_deref())?;
            if table {
                say(render_markdown(&report));
            } else {
                for w in &report.windows {
                    say(format!(
                        "evaluate: {} window {}y micro-F1 {:.4} micro-AUPRC {:.4} (n={})",
                        report.model_tag, w.window_years, w.metrics.micro_f1, w.metrics.micro_auprc, w.n_test
                    ));
                }
            }
        }
        Command::Compare {
            common,
            seed,
            reports,
            out,
            table,
        } => {
            let cfg = common.resolve(seed)?;
            let out = out.unwrap_or_else(|| cfg.paths.output_dir.clone());
            let rows = pipeline::cmd_compare(&reports, cfg.eval.m_comparisons, &out)?;
            if table {
                say(render_comparison_markdown(&rows));
            } else {
                let sig = rows.iter().filter(|r| r.significant).count();
                say(format!("compare: {} comparisons, {} significant", rows.len(), sig));
            }
        }
    }
    Ok(())
}
