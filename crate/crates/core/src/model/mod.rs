//! A small pre-norm transformer encoder with a CLS-pooled three-logit head.
//!
//! Parameters live in one flat `f64` buffer described by a [`Layout`]; the
//! forward and backward passes are written out by hand. Only unmasked
//! positions are ever read, so outputs are exactly invariant to whatever sits
//! under the padding mask.

mod checkpoint;
mod encoder;
mod loss;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{compute_label_weights, sigmoid, softplus, weighted_bce_loss, MAX_LABEL_WEIGHT, MIN_LABEL_WEIGHT};
pub use train::{
    gradient_check, loss_and_gradient, lr_search, select_lr, train, train_with_lr, write_history_csv, EvalRecord, LabeledSequence,
    LrSearch, Splits, TrainConfig, TrainHistory,
};

use crate::labels::{Complication, N_LABELS};
use crate::sequence::TokenSequence;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label weight {weight} for class {class} is not positive")]
    NonPositiveWeight { class: usize, weight: f64 },
    #[error("no positive {0} examples in the training split")]
    NoPositives(Complication),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged at step {step} (non-finite loss)")]
    Divergence { step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Hidden width of the feed-forward sublayer.
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Defaults: d_model 64, 2 layers, 4 heads, d_ff 4·d_model, dropout 0.1.
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.vocab_size < crate::sequence::SPECIAL_TOKENS.len() {
            return bad(format!("vocab_size {} is below the special-token count", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return bad("d_model, n_heads, n_layers and d_ff must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.max_len < 2 {
            return bad(format!("max_len {} < 2", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

/// Offsets of every named tensor in the flat parameter buffer.
/// Matrices are row-major `[in × out]`, except the head which is `[3 × d_model]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub(crate) tok: usize,
    pub(crate) pos: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) lnf_g: usize,
    pub(crate) lnf_b: usize,
    pub(crate) head_w: usize,
    pub(crate) head_b: usize,
    pub(crate) total: usize,
    pub(crate) blocks: Vec<ParamBlock>,
}

impl Layout {
    fn new(c: &EncoderConfig) -> Layout {
        let (d, f) = (c.d_model, c.d_ff);
        let mut blocks: Vec<ParamBlock> = Vec::new();
        let mut alloc = |name: String, len: usize, init: Init| {
            let offset = blocks.last().map_or(0, |b| b.offset + b.len);
            blocks.push(ParamBlock { name, offset, len, init });
            offset
        };
        let w_in = Init::Normal((d as f64).powf(-0.5));
        let w_ff = Init::Normal((f as f64).powf(-0.5));
        let tok = alloc("tok_emb".into(), c.vocab_size * d, Init::Normal(1.0));
        let pos = alloc("pos_emb".into(), c.max_len * d, Init::Normal(1.0));
        let layers = (0..c.n_layers)
            .map(|l| {
                let mut a = |n: &str, len, init| alloc(format!("layer{l}.{n}"), len, init);
                LayerOffsets {
                    ln1_g: a("ln1.gamma", d, Init::Ones),
                    ln1_b: a("ln1.beta", d, Init::Zeros),
                    wq: a("attn.wq", d * d, w_in),
                    bq: a("attn.bq", d, Init::Zeros),
                    wk: a("attn.wk", d * d, w_in),
                    bk: a("attn.bk", d, Init::Zeros),
                    wv: a("attn.wv", d * d, w_in),
                    bv: a("attn.bv", d, Init::Zeros),
                    wo: a("attn.wo", d * d, w_in),
                    bo: a("attn.bo", d, Init::Zeros),
                    ln2_g: a("ln2.gamma", d, Init::Ones),
                    ln2_b: a("ln2.beta", d, Init::Zeros),
                    w1: a("ffn.w1", d * f, w_in),
                    b1: a("ffn.b1", f, Init::Zeros),
                    w2: a("ffn.w2", f * d, w_ff),
                    b2: a("ffn.b2", d, Init::Zeros),
                }
            })
            .collect();
        let lnf_g = alloc("ln_final.gamma".into(), d, Init::Ones);
        let lnf_b = alloc("ln_final.beta".into(), d, Init::Zeros);
        let head_w = alloc("head.weight".into(), N_LABELS * d, w_in);
        let head_b = alloc("head.bias".into(), N_LABELS, Init::Zeros);
        let total = blocks.last().map_or(0, |b| b.offset + b.len);
        Layout {
            tok,
            pos,
            layers,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            total,
            blocks,
        }
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    /// Looks a block up by name, e.g. `"head.bias"`.
    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    config: EncoderConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl ClassifierModel {
    /// Seeded random initialization.
    pub fn new(config: EncoderConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for b in &layout.blocks {
            let slot = &mut params[b.offset..b.offset + b.len];
            match b.init {
                Init::Zeros => {}
                Init::Ones => slot.fill(1.0),
                Init::Normal(sd) => {
                    let dist = Normal::new(0.0, sd).expect("finite standard deviation");
                    slot.iter_mut().for_each(|p| *p = dist.sample(&mut rng));
                }
            }
        }
        Ok(ClassifierModel { config, layout, params })
    }

    pub(crate) fn from_parts(config: EncoderConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(ModelError::ShapeMismatch(format!(
                "{} parameters supplied, layout needs {}",
                params.len(),
                layout.total
            )));
        }
        Ok(ClassifierModel { config, layout, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Checks ids, mask shape and prefix structure against the config.
    pub fn check_sequence(&self, s: &TokenSequence) -> Result<(), ModelError> {
        let n = self.config.max_len;
        if s.ids.len() != n || s.mask.len() != n {
            return Err(ModelError::ShapeMismatch(format!(
                "sequence of length {}/{} (ids/mask) for max_len {n}",
                s.ids.len(),
                s.mask.len()
            )));
        }
        let valid = s.valid_len();
        if valid == 0 || s.mask[valid..].iter().any(|&m| m != 0) {
            return Err(ModelError::ShapeMismatch("mask is not a non-empty valid prefix".into()));
        }
        if let Some(&id) = s.ids[..valid].iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::ShapeMismatch(format!(
                "token id {id} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Inference-mode logits, one row per sequence.
    pub fn forward(&self, batch: &[TokenSequence]) -> Result<Vec<[f64; N_LABELS]>, ModelError> {
        batch.iter().try_for_each(|s| self.check_sequence(s))?;
        Ok(batch.iter().map(|s| self.logits_unchecked(s)).collect())
    }

    /// Independent per-label sigmoid of [`forward`](Self::forward).
    pub fn predict_proba(&self, batch: &[TokenSequence]) -> Result<Vec<[f64; N_LABELS]>, ModelError> {
        Ok(self.forward(batch)?.into_iter().map(|z| z.map(sigmoid)).collect())
    }

    pub(crate) fn logits_unchecked(&self, s: &TokenSequence) -> [f64; N_LABELS] {
        encoder::forward(self, &s.ids[..s.valid_len()], None).logits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{encode_tokens, TruncationSide, PAD};
    use rand::Rng;

    pub(crate) fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 20,
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 48,
            max_len: 16,
            dropout: 0.0,
            seed: 7,
        }
    }

    fn seq(tokens: &[u32], max_len: usize) -> TokenSequence {
        encode_tokens(tokens, max_len, TruncationSide::Left)
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.n_heads = 5;
        assert!(matches!(ClassifierModel::new(c), Err(ModelError::InvalidConfig(_))));
        let mut c = tiny_config();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let c = EncoderConfig::new(100, 512);
        assert_eq!((c.d_model, c.n_layers, c.n_heads), (64, 2, 4));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn layout_is_contiguous() {
        let m = ClassifierModel::new(tiny_config()).unwrap();
        let mut next = 0;
        for b in m.layout().blocks() {
            assert_eq!(b.offset, next);
            next += b.len;
        }
        assert_eq!(next, m.n_params());
        assert_eq!(m.layout().blocks().last().unwrap().len, 3);
    }

    #[test]
    fn batch_of_two_gives_two_by_three() {
        let m = ClassifierModel::new(tiny_config()).unwrap();
        let logits = m.forward(&[seq(&[3, 4, 5], 16), seq(&[6, 7], 16)]).unwrap();
        assert_eq!(logits.len(), 2);
        assert!(logits.iter().flatten().all(|z| z.is_finite()));
    }

    #[test]
    fn cls_only_sequence_is_finite_and_reproducible() {
        let m = ClassifierModel::new(tiny_config()).unwrap();
        let s = seq(&[], 16);
        let a = m.forward(std::slice::from_ref(&s)).unwrap();
        let b = m.forward(std::slice::from_ref(&s)).unwrap();
        assert!(a[0].iter().all(|z| z.is_finite()));
        assert_eq!(a, b);
    }

    #[test]
    fn padding_content_is_ignored_bitwise() {
        let m = ClassifierModel::new(tiny_config()).unwrap();
        let s = seq(&[3, 9, 4, 11], 16);
        let mut t = s.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in s.valid_len()..16 {
            t.ids[p] = rng.random_range(0..20);
        }
        let a = m.logits_unchecked(&s);
        let b = m.logits_unchecked(&t);
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        assert_eq!(s.ids[10], PAD);
    }

    #[test]
    fn shape_errors() {
        let m = ClassifierModel::new(tiny_config()).unwrap();
        assert!(matches!(m.forward(&[seq(&[3], 8)]), Err(ModelError::ShapeMismatch(_))));
        assert!(matches!(m.forward(&[seq(&[25], 16)]), Err(ModelError::ShapeMismatch(_))));
        let mut holes = seq(&[3, 4], 16);
        holes.mask[5] = 1;
        assert!(matches!(m.forward(&[holes]), Err(ModelError::ShapeMismatch(_))));
    }

    #[test]
    fn zero_logits_give_half() {
        let mut m = ClassifierModel::new(tiny_config()).unwrap();
        let (hw, total) = (m.layout.head_w, m.n_params());
        m.params_mut()[hw..total].fill(0.0);
        let p = m.predict_proba(&[seq(&[3, 4], 16)]).unwrap();
        assert_eq!(p[0], [0.5; 3]);
    }

    #[test]
    fn probabilities_are_independent_per_label() {
        let m = ClassifierModel::new(tiny_config()).unwrap();
        let batch: Vec<_> = (0..6).map(|i| seq(&[3 + i, 4, 5 + i], 16)).collect();
        let p = m.predict_proba(&batch).unwrap();
        assert!(p.iter().flatten().all(|&v| v > 0.0 && v < 1.0));
        assert!(p.iter().any(|row| (row.iter().sum::<f64>() - 1.0).abs() > 1e-6));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = ClassifierModel::new(tiny_config()).unwrap();
        let b = ClassifierModel::new(tiny_config()).unwrap();
        assert_eq!(a, b);
        let mut c = tiny_config();
        c.seed = 8;
        assert_ne!(a.params(), ClassifierModel::new(c).unwrap().params());
    }
}
