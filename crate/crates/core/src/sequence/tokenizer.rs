//! Byte-pair style subword tokenizer trained on whitespace-split words.
//!
//! The first piece of every word carries a `▁` word-start marker; pieces
//! inside a word carry none. Decoding concatenates pieces and turns markers
//! back into spaces.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use super::SequenceError;

pub const CLS: u32 = 0;
pub const PAD: u32 = 1;
pub const UNK: u32 = 2;
pub const SPECIAL_TOKENS: [&str; 3] = ["[CLS]", "[PAD]", "[UNK]"];
pub const WORD_START: char = '\u{2581}';

/// Merges are only learned for pairs seen at least this often.
const MIN_PAIR_COUNT: u64 = 2;

pub type WordCache = HashMap<String, Vec<u32>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    merges: Vec<(u32, u32)>,
    /// `(left, right) -> (rank, merged id)`
    merge_rank: HashMap<(u32, u32), (u32, u32)>,
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut chars = word.chars();
    let mut out = Vec::with_capacity(word.len());
    if let Some(first) = chars.next() {
        out.push(format!("{WORD_START}{first}"));
    }
    out.extend(chars.map(String::from));
    out
}

fn apply_merge(symbols: &mut Vec<u32>, pair: (u32, u32), merged: u32) {
    let mut i = 0;
    let mut w = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && (symbols[i], symbols[i + 1]) == pair {
            symbols[w] = merged;
            i += 2;
        } else {
            symbols[w] = symbols[i];
            i += 1;
        }
        w += 1;
    }
    symbols.truncate(w);
}

impl Tokenizer {
    fn with_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Tokenizer {
            tokens,
            ids,
            merges: Vec::new(),
            merge_rank: HashMap::new(),
        }
    }

    fn push_merge(&mut self, pair: (u32, u32)) -> u32 {
        let merged = format!("{}{}", self.tokens[pair.0 as usize], self.tokens[pair.1 as usize]);
        let id = match self.ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = self.tokens.len() as u32;
                self.ids.insert(merged.clone(), id);
                self.tokens.push(merged);
                id
            }
        };
        self.merge_rank.insert(pair, (self.merges.len() as u32, id));
        self.merges.push(pair);
        id
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Subword ids for one word (no whitespace inside).
    pub fn tokenize_word(&self, word: &str) -> Vec<u32> {
        let mut symbols: Vec<u32> = initial_symbols(word)
            .iter()
            .map(|s| self.ids.get(s).copied().unwrap_or(UNK))
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id)))
                .min();
            match best {
                Some((_, pair, id)) => apply_merge(&mut symbols, pair, id),
                None => break,
            }
        }
        symbols
    }

    pub fn tokenize(&self, body: &str) -> Vec<u32> {
        self.tokenize_cached(body, &mut WordCache::new())
    }

    pub fn tokenize_cached(&self, body: &str, cache: &mut WordCache) -> Vec<u32> {
        let mut out = Vec::new();
        for word in body.split_whitespace() {
            match cache.get(word) {
                Some(ids) => out.extend_from_slice(ids),
                None => {
                    let ids = self.tokenize_word(word);
                    out.extend_from_slice(&ids);
                    cache.insert(word.to_string(), ids);
                }
            }
        }
        out
    }

    /// Concatenates non-special tokens and turns word-start markers into spaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id <= UNK {
                continue;
            }
            if let Some(t) = self.token(id) {
                out.push_str(t);
            }
        }
        out.replace(WORD_START, " ").trim_start().to_string()
    }

    /// One token per line (line number = id), a blank line, then one merge
    /// per line as `left right`.
    pub fn save<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        writeln!(w)?;
        for &(a, b) in &self.merges {
            writeln!(w, "{} {}", self.tokens[a as usize], self.tokens[b as usize])?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, SequenceError> {
        let bad = |msg: String| SequenceError::TokenizerFormat(msg);
        let mut tokens = Vec::new();
        let mut merge_lines = Vec::new();
        let mut in_merges = false;
        for line in r.lines() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if !in_merges && line.is_empty() {
                in_merges = true;
            } else if in_merges {
                if !line.is_empty() {
                    merge_lines.push(line);
                }
            } else {
                tokens.push(line);
            }
        }
        if tokens.len() < 3 || tokens[..3] != SPECIAL_TOKENS {
            return Err(bad("first three tokens must be the specials".into()));
        }
        let base_len = tokens.len();
        let mut tok = Tokenizer::with_tokens(tokens);
        if tok.ids.len() != base_len {
            return Err(bad("duplicate token".into()));
        }
        for line in merge_lines {
            let (a, b) = line.split_once(' ').ok_or_else(|| bad(format!("bad merge line {line:?}")))?;
            let (Some(a), Some(b)) = (tok.id(a), tok.id(b)) else {
                return Err(bad(format!("merge references unknown token: {line:?}")));
            };
            let before = tok.tokens.len();
            tok.push_merge((a, b));
            if tok.tokens.len() != before {
                return Err(bad(format!("merge result of {line:?} missing from vocabulary")));
            }
        }
        Ok(tok)
    }

    /// Hex SHA-256 of the saved form.
    pub fn vocab_hash(&self) -> String {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("in-memory write");
        let digest = Sha256::digest(&buf);
        hex::encode(digest)
    }
}

/// Learns merges greedily: at each step the most frequent adjacent pair
/// (ties broken by the lexicographically smallest token strings) becomes a
/// new token, until the vocabulary reaches `target_vocab_size` or no pair
/// occurs twice. Specials take ids 0..3; the single-character alphabet
/// follows in sorted order.
pub fn train_tokenizer<'a, I>(corpus: I, target_vocab_size: usize) -> Result<Tokenizer, SequenceError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for body in corpus {
        for word in body.split_whitespace() {
            match word_counts.get_mut(word) {
                Some(c) => *c += 1,
                None => {
                    word_counts.insert(word.to_string(), 1);
                }
            }
        }
    }
    if word_counts.is_empty() {
        return Err(SequenceError::EmptyCorpus);
    }
    let alphabet: BTreeSet<String> = word_counts.keys().flat_map(|w| initial_symbols(w)).collect();
    let needed = SPECIAL_TOKENS.len() + alphabet.len();
    if target_vocab_size < needed {
        return Err(SequenceError::VocabTooSmall {
            requested: target_vocab_size,
            needed,
        });
    }
    let tokens: Vec<String> = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(alphabet)
        .collect();
    let mut tok = Tokenizer::with_tokens(tokens);
    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .iter()
        .map(|(w, &c)| (initial_symbols(w).iter().map(|s| tok.ids[s]).collect(), c))
        .collect();

    while tok.tokens.len() < target_vocab_size {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += count;
            }
        }
        let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&tok.tokens[pa.0 as usize], &tok.tokens[pa.1 as usize]);
                let kb = (&tok.tokens[pb.0 as usize], &tok.tokens[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some((pair, count)) = best else { break };
        if count < MIN_PAIR_COUNT {
            break;
        }
        let merged = tok.push_merge(pair);
        for (symbols, _) in &mut words {
            if symbols.len() > 1 {
                apply_merge(symbols, pair, merged);
            }
        }
        words.retain(|(s, _)| s.len() > 1);
    }
    Ok(tok)
}
