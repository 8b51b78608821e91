//! The run-config file shared by every subcommand.

use std::path::{Path, PathBuf};

use ehrseq_core::eval::DEFAULT_BOOTSTRAP_ITERATIONS;
use ehrseq_core::labels::WINDOWS;
use ehrseq_core::model::{EncoderConfig, TrainConfig};
use ehrseq_core::sequence::{SerializeMode, TruncationSide};
use ehrseq_core::synthgen::GeneratorConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Input locations. Unset file paths fall back to the conventional file name
/// inside `data_dir`, which is where `synth` writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub vocab: Option<PathBuf>,
    pub codelists: Option<PathBuf>,
    pub patients: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: PathBuf::from("data"),
            vocab: None,
            codelists: None,
            patients: None,
            events: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl Paths {
    fn pick(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.data_dir.join(name))
    }

    pub fn vocab(&self) -> PathBuf {
        self.pick(&self.vocab, "vocab.tsv")
    }

    pub fn codelists(&self) -> PathBuf {
        self.pick(&self.codelists, "codelists.tsv")
    }

    pub fn patients(&self) -> PathBuf {
        self.pick(&self.patients, "patients.csv")
    }

    pub fn events(&self) -> PathBuf {
        self.pick(&self.events, "events.csv")
    }

    pub fn clean_dir(&self) -> PathBuf {
        self.output_dir.join("clean")
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.output_dir.join("cohort")
    }

    /// Per-model artifacts live under `models/<tag>/`.
    pub fn model_dir(&self, tag: &str) -> PathBuf {
        self.output_dir.join("models").join(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerParams {
    pub vocab_size: usize,
    /// Insert `[SEP]` between events.
    pub event_separator: bool,
}

impl Default for TokenizerParams {
    fn default() -> Self {
        TokenizerParams {
            vocab_size: 8000,
            event_separator: false,
        }
    }
}

/// Encoder shape; vocabulary size and `max_len` come from the tokenizer and
/// the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderParams {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
}

impl Default for EncoderParams {
    fn default() -> Self {
        let e = EncoderConfig::new(1, 1);
        EncoderParams {
            d_model: e.d_model,
            n_layers: e.n_layers,
            n_heads: e.n_heads,
            d_ff: e.d_ff,
            dropout: e.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    pub n_boot: usize,
    pub m_comparisons: usize,
    pub threshold: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            n_boot: DEFAULT_BOOTSTRAP_ITERATIONS,
            m_comparisons: 18,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model tag used in reports; derived from mode, side and length if unset.
    pub tag: Option<String>,
    pub mode: SerializeMode,
    pub windows: Vec<u32>,
    pub max_len: usize,
    pub truncation_side: TruncationSide,
    pub seed: u64,
    pub paths: Paths,
    pub tokenizer: TokenizerParams,
    pub encoder: EncoderParams,
    pub train: TrainConfig,
    pub eval: EvalParams,
    pub synth: GeneratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tag: None,
            mode: SerializeMode::Text,
            windows: WINDOWS.to_vec(),
            max_len: 512,
            truncation_side: TruncationSide::Right,
            seed: 0,
            paths: Paths::default(),
            tokenizer: TokenizerParams::default(),
            encoder: EncoderParams::default(),
            train: TrainConfig::default(),
            eval: EvalParams::default(),
            synth: GeneratorConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Input(format!("run config: {e}")))
    }

    /// Reads a TOML file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn model_tag(&self) -> String {
        self.tag
            .clone()
            .unwrap_or_else(|| format!("{}-{}-{}", self.mode.as_str(), self.truncation_side.as_str(), self.max_len))
    }

    /// Checks everything that does not touch the file system.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        if self.windows.is_empty() {
            return bad("windows must not be empty".into());
        }
        if let Some(w) = self.windows.iter().find(|w| !WINDOWS.contains(w)) {
            return bad(format!("window {w} is not one of {WINDOWS:?}"));
        }
        let mut sorted = self.windows.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.windows.len() {
            return bad("windows must be distinct".into());
        }
        if self.max_len < 2 {
            return bad(format!("max_len {} is too small", self.max_len));
        }
        if self.eval.m_comparisons == 0 {
            return bad("m_comparisons must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return bad(format!("threshold {} is outside [0, 1]", self.eval.threshold));
        }
        if let Some(tag) = &self.tag {
            if tag.is_empty() || tag.contains(['/', '\\']) {
                return bad(format!("tag {tag:?} must be a non-empty file name"));
            }
        }
        Ok(())
    }

    /// Windows in ascending order.
    pub fn sorted_windows(&self) -> Vec<u32> {
        let mut w = self.windows.clone();
        w.sort_unstable();
        w
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.encoder.d_model,
            n_layers: self.encoder.n_layers,
            n_heads: self.encoder.n_heads,
            d_ff: self.encoder.d_ff,
            max_len: self.max_len,
            dropout: self.encoder.dropout,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            threshold: self.eval.threshold,
            ..self.train.clone()
        }
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data_dir);
        fix(&mut self.output_dir);
        for p in [&mut self.vocab, &mut self.codelists, &mut self.patients, &mut self.events]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }
}
