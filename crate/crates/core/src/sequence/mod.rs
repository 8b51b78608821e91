//! Record serialization, tokenization and fixed-length encoding.

mod tokenizer;

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tokenizer::{train_tokenizer, Tokenizer, WordCache, CLS, PAD, SPECIAL_TOKENS, UNK, WORD_START};

use crate::ingest::ClinicalEvent;
use crate::ontology::{CodeSystem, VocabMap};
use crate::stats::quantile_sorted;

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("no descriptor for {system}/{code} (patient {patient_id}, {date})")]
    MissingDescriptor {
        patient_id: String,
        date: NaiveDate,
        system: CodeSystem,
        code: String,
    },
    #[error("vocabulary size {requested} is below alphabet plus specials ({needed})")]
    VocabTooSmall { requested: usize, needed: usize },
    #[error("tokenizer corpus has no words")]
    EmptyCorpus,
    #[error("bad tokenizer file: {0}")]
    TokenizerFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SerializeMode {
    /// Events rendered as their textual descriptors.
    Text,
    /// Events rendered as raw clinical codes.
    Code,
}

impl SerializeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SerializeMode::Text => "text",
            SerializeMode::Code => "code",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedRecord {
    pub patient_id: String,
    pub mode: SerializeMode,
    pub body: String,
}

/// Word placed between events when the separator variant is enabled.
pub const EVENT_SEPARATOR: &str = "[SEP]";

/// Joins per-event strings in input order with single spaces. Text mode uses
/// the event's own descriptor, falling back to the vocabulary.
pub fn serialize(
    patient_id: &str,
    events: &[ClinicalEvent],
    mode: SerializeMode,
    vocab: &VocabMap,
    event_separator: bool,
) -> Result<SerializedRecord, SequenceError> {
    let mut body = String::new();
    for e in events {
        let piece = match mode {
            SerializeMode::Code => e.code.as_str(),
            SerializeMode::Text => e
                .descriptor
                .as_deref()
                .filter(|d| !d.is_empty())
                .or_else(|| vocab.get(&e.system, &e.code))
                .ok_or_else(|| SequenceError::MissingDescriptor {
                    patient_id: e.patient_id.clone(),
                    date: e.date,
                    system: e.system.clone(),
                    code: e.code.clone(),
                })?,
        };
        if !body.is_empty() {
            body.push(' ');
            if event_separator {
                body.push_str(EVENT_SEPARATOR);
                body.push(' ');
            }
        }
        body.push_str(piece);
    }
    Ok(SerializedRecord {
        patient_id: patient_id.to_string(),
        mode,
        body,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncationSide {
    /// Drop the earliest tokens, keep the most recent.
    Left,
    /// Drop the latest tokens, keep the earliest.
    Right,
}

impl TruncationSide {
    pub fn as_str(self) -> &'static str {
        match self {
            TruncationSide::Left => "left",
            TruncationSide::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    /// Body tokens plus CLS, before truncation.
    pub original_length: usize,
    pub truncation_side: TruncationSide,
}

impl TokenSequence {
    pub fn truncated(&self) -> bool {
        self.original_length > self.ids.len()
    }

    /// Number of unmasked positions.
    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m == 1).count()
    }
}

/// CLS, then at most `max_len - 1` body tokens chosen by `side`, then PAD.
pub fn encode_tokens(body_tokens: &[u32], max_len: usize, side: TruncationSide) -> TokenSequence {
    assert!(max_len >= 2, "max_len must leave room for CLS and one token");
    let keep = body_tokens.len().min(max_len - 1);
    let kept = match side {
        TruncationSide::Right => &body_tokens[..keep],
        TruncationSide::Left => &body_tokens[body_tokens.len() - keep..],
    };
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend_from_slice(kept);
    let n = ids.len();
    ids.resize(max_len, PAD);
    let mut mask = vec![1u8; n];
    mask.resize(max_len, 0);
    TokenSequence {
        ids,
        mask,
        original_length: body_tokens.len() + 1,
        truncation_side: side,
    }
}

pub fn encode(tok: &Tokenizer, record: &SerializedRecord, max_len: usize, side: TruncationSide) -> TokenSequence {
    encode_tokens(&tok.tokenize(&record.body), max_len, side)
}

/// Encodes many records sharing one word cache.
pub fn encode_all<'a, I>(tok: &Tokenizer, records: I, max_len: usize, side: TruncationSide) -> Vec<TokenSequence>
where
    I: IntoIterator<Item = &'a SerializedRecord>,
{
    let mut cache = WordCache::new();
    records
        .into_iter()
        .map(|r| encode_tokens(&tok.tokenize_cached(&r.body, &mut cache), max_len, side))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    pub p90: f64,
    pub max_len: usize,
    pub fraction_truncated: f64,
    pub histogram_bin_width: usize,
    /// Counts per bin; bin `i` covers `[i * width, (i + 1) * width)`.
    pub histogram: Vec<usize>,
}

pub const HISTOGRAM_BIN_WIDTH: usize = 128;

/// Statistics over pre-truncation lengths (CLS included).
pub fn length_stats(lengths: &[usize], max_len: usize) -> LengthStats {
    assert!(!lengths.is_empty(), "length statistics need a non-empty corpus");
    let mut sorted: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let n = lengths.len();
    let bins = lengths.iter().max().copied().unwrap_or(0) / HISTOGRAM_BIN_WIDTH + 1;
    let mut histogram = vec![0usize; bins];
    for &l in lengths {
        histogram[l / HISTOGRAM_BIN_WIDTH] += 1;
    }
    LengthStats {
        count: n,
        median: quantile_sorted(&sorted, 0.5),
        mean: sorted.iter().sum::<f64>() / n as f64,
        p90: quantile_sorted(&sorted, 0.9),
        max_len,
        fraction_truncated: lengths.iter().filter(|&&l| l > max_len).count() as f64 / n as f64,
        histogram_bin_width: HISTOGRAM_BIN_WIDTH,
        histogram,
    }
}

/// Token-count distribution of a corpus under `tok`, as `encode` would see it.
pub fn token_length_stats(corpus: &[SerializedRecord], tok: &Tokenizer, max_len: usize) -> LengthStats {
    let mut cache = WordCache::new();
    let lengths: Vec<usize> = corpus
        .iter()
        .map(|r| tok.tokenize_cached(&r.body, &mut cache).len() + 1)
        .collect();
    length_stats(&lengths, max_len)
}

/// `bin_start,bin_end,count` rows for plotting.
pub fn write_histogram_csv<W: Write>(stats: &LengthStats, mut w: W) -> std::io::Result<()> {
    writeln!(w, "bin_start,bin_end,count")?;
    for (i, c) in stats.histogram.iter().enumerate() {
        let start = i * stats.histogram_bin_width;
        writeln!(w, "{},{},{}", start, start + stats.histogram_bin_width, c)?;
    }
    Ok(())
}
