use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{self, Dropout};
use super::loss::{compute_label_weights, element_grad, element_loss};
use super::{ClassifierModel, EncoderConfig, ModelError};
use crate::eval::{binarize_and_count, micro_auprc, PredictionSet};
use crate::labels::{LabelVector, N_LABELS};
use crate::sequence::TokenSequence;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_candidates: Vec<f64>,
    pub max_steps: usize,
    pub batch_size: usize,
    /// Evaluations without improvement before stopping.
    pub early_stop_patience: usize,
    pub eval_every: usize,
    /// Positive-class weights; computed from the training labels when absent.
    pub label_weights: Option<[f64; N_LABELS]>,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_candidates: vec![1e-3, 2e-5, 3e-5, 4e-5, 5e-5],
            max_steps: 48_000,
            batch_size: 16,
            early_stop_patience: 5,
            eval_every: 200,
            label_weights: None,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidTrainConfig(m.to_string()));
        if self.lr_candidates.is_empty() {
            return bad("lr_candidates is empty");
        }
        if self.lr_candidates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return bad("learning rates must be positive");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be at least 1");
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.max_steps == 0 {
            return bad("batch_size, eval_every and max_steps must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub seq: TokenSequence,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<LabeledSequence>,
    pub validation: Vec<LabeledSequence>,
    pub test: Vec<LabeledSequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean training loss since the previous evaluation.
    pub train_loss: f64,
    pub val_micro_f1: f64,
    pub val_micro_auprc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
    pub chosen_lr: f64,
    pub stopped_at_step: usize,
    pub best_step: usize,
    pub best_val_micro_f1: f64,
    pub label_weights: [f64; N_LABELS],
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// Mean weighted BCE over the batch and its gradient.
pub(crate) fn loss_and_grad(
    model: &ClassifierModel,
    batch: &[&LabeledSequence],
    weights: &[f64; N_LABELS],
    mut rng: Option<&mut ChaCha8Rng>,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; model.n_params()];
    let norm = 1.0 / (batch.len() * N_LABELS) as f64;
    let p = model.config.dropout;
    let mut loss = 0.0;
    for ex in batch {
        let drop = match rng.as_deref_mut() {
            Some(rng) if p > 0.0 => Some(Dropout { rng, p }),
            _ => None,
        };
        let trace = encoder::forward(model, &ex.seq.ids[..ex.seq.valid_len()], drop);
        let mut dlogits = [0.0; N_LABELS];
        for c in 0..N_LABELS {
            loss += element_loss(trace.logits[c], ex.labels[c], weights[c]);
            dlogits[c] = element_grad(trace.logits[c], ex.labels[c], weights[c]) * norm;
        }
        encoder::backward(model, &trace, &dlogits, &mut grad);
    }
    (loss * norm, grad)
}

/// Mean weighted loss of `batch` and its analytic gradient, dropout off.
/// Gradient entries follow [`ClassifierModel::layout`].
pub fn loss_and_gradient(model: &ClassifierModel, batch: &[LabeledSequence], weights: [f64; N_LABELS]) -> (f64, Vec<f64>) {
    let refs: Vec<&LabeledSequence> = batch.iter().collect();
    loss_and_grad(model, &refs, &weights, None)
}

fn batch_loss(model: &ClassifierModel, batch: &[&LabeledSequence], weights: &[f64; N_LABELS]) -> f64 {
    let sum: f64 = batch
        .iter()
        .map(|ex| {
            let z = model.logits_unchecked(&ex.seq);
            (0..N_LABELS).map(|c| element_loss(z[c], ex.labels[c], weights[c])).sum::<f64>()
        })
        .sum();
    sum / (batch.len() * N_LABELS) as f64
}

/// Validation micro-F1 and micro-AUPRC (0 when there are no positives).
fn validate_split(model: &ClassifierModel, data: &[LabeledSequence], threshold: f64) -> (f64, f64) {
    let probs = data.iter().map(|ex| model.logits_unchecked(&ex.seq).map(super::sigmoid)).collect();
    let labels = data.iter().map(|ex| ex.labels).collect();
    let pred = PredictionSet::new(probs, labels, 0, "validation").expect("validation split is non-empty");
    let f1 = binarize_and_count(&pred, threshold).pooled.f1().unwrap_or(0.0);
    (f1, micro_auprc(&pred).unwrap_or(0.0))
}

/// Trains with the first learning-rate candidate.
pub fn train(model: ClassifierModel, splits: &Splits, tc: &TrainConfig) -> Result<(ClassifierModel, TrainHistory), ModelError> {
    tc.validate()?;
    let lr = tc.lr_candidates[0];
    train_with_lr(model, splits, tc, lr)
}

/// Mini-batch Adam with periodic validation and early stopping on micro-F1.
/// Returns the parameters from the best evaluation. `lr` may be zero.
pub fn train_with_lr(
    mut model: ClassifierModel,
    splits: &Splits,
    tc: &TrainConfig,
    lr: f64,
) -> Result<(ClassifierModel, TrainHistory), ModelError> {
    tc.validate()?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(ModelError::InvalidTrainConfig(format!("learning rate {lr}")));
    }
    if splits.train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if splits.validation.is_empty() {
        return Err(ModelError::EmptySplit("validation"));
    }
    for ex in splits.train.iter().chain(&splits.validation) {
        model.check_sequence(&ex.seq)?;
    }
    let weights = match tc.label_weights {
        Some(w) => {
            if let Some(class) = w.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(ModelError::NonPositiveWeight { class, weight: w[class] });
            }
            w
        }
        None => compute_label_weights(&splits.train.iter().map(|e| e.labels).collect::<Vec<_>>())?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut adam = Adam::new(model.n_params());

    let mut records = Vec::new();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_params = model.params.clone();
    let mut best_step = 0;
    let mut since_best = 0;
    let mut running = (0.0, 0usize);
    let mut step = 0;
    while step < tc.max_steps {
        step += 1;
        let mut batch = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&splits.train[order[cursor]]);
            cursor += 1;
        }
        let (loss, grad) = loss_and_grad(&model, &batch, &weights, Some(&mut rng));
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(ModelError::Divergence { step });
        }
        adam.step(&mut model.params, &grad, lr);
        running.0 += loss;
        running.1 += 1;

        if step % tc.eval_every == 0 || step == tc.max_steps {
            if !model.is_finite() {
                return Err(ModelError::Divergence { step });
            }
            let (f1, auprc) = validate_split(&model, &splits.validation, tc.threshold);
            records.push(EvalRecord {
                step,
                train_loss: running.0 / running.1 as f64,
                val_micro_f1: f1,
                val_micro_auprc: auprc,
            });
            running = (0.0, 0);
            if f1 > best_f1 {
                best_f1 = f1;
                best_params.copy_from_slice(&model.params);
                best_step = step;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= tc.early_stop_patience {
                    break;
                }
            }
        }
    }
    model.params = best_params;
    let history = TrainHistory {
        records,
        chosen_lr: lr,
        stopped_at_step: step,
        best_step,
        best_val_micro_f1: best_f1,
        label_weights: weights,
    };
    Ok((model, history))
}

/// Highest score wins; ties go to the smaller learning rate.
pub fn select_lr(results: &[(f64, f64)]) -> Option<f64> {
    results
        .iter()
        .copied()
        .reduce(|best, cand| {
            if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
                cand
            } else {
                best
            }
        })
        .map(|(lr, _)| lr)
}

#[derive(Debug, Clone)]
pub struct LrSearch {
    pub best_lr: f64,
    /// One history per candidate, in candidate order.
    pub histories: Vec<TrainHistory>,
    /// The model trained with `best_lr`.
    pub model: ClassifierModel,
}

/// Trains a fresh model from `base` per candidate learning rate and keeps the
/// one with the best validation micro-F1.
pub fn lr_search(splits: &Splits, base: &EncoderConfig, tc: &TrainConfig) -> Result<LrSearch, ModelError> {
    tc.validate()?;
    let mut histories = Vec::new();
    let mut models = Vec::new();
    for &lr in &tc.lr_candidates {
        let (m, h) = train_with_lr(ClassifierModel::new(base.clone())?, splits, tc, lr)?;
        histories.push(h);
        models.push(m);
    }
    let scores: Vec<(f64, f64)> = histories.iter().map(|h| (h.chosen_lr, h.best_val_micro_f1)).collect();
    let best_lr = select_lr(&scores).expect("at least one candidate");
    let idx = scores.iter().position(|s| s.0 == best_lr).expect("selected candidate exists");
    Ok(LrSearch {
        best_lr,
        histories,
        model: models.swap_remove(idx),
    })
}

/// Largest relative gap between analytic and central-difference gradients
/// over every parameter, with dropout off.
#[allow(clippy::needless_range_loop)]
pub fn gradient_check(model: &ClassifierModel, batch: &[LabeledSequence], weights: [f64; N_LABELS]) -> f64 {
    let refs: Vec<&LabeledSequence> = batch.iter().collect();
    let (_, analytic) = loss_and_grad(model, &refs, &weights, None);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..probe.n_params() {
        let orig = probe.params[i];
        probe.params[i] = orig + FD_STEP;
        let up = batch_loss(&probe, &refs, &weights);
        probe.params[i] = orig - FD_STEP;
        let down = batch_loss(&probe, &refs, &weights);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let gap = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max(gap);
    }
    worst
}

/// `step,train_loss,val_micro_f1,val_micro_auprc`
pub fn write_history_csv<W: Write>(history: &TrainHistory, w: W) -> Result<(), ModelError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "train_loss", "val_micro_f1", "val_micro_auprc"])
        .map_err(csv_err)?;
    for r in &history.records {
        out.write_record([
            r.step.to_string(),
            r.train_loss.to_string(),
            r.val_micro_f1.to_string(),
            r.val_micro_auprc.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> ModelError {
    ModelError::Io(std::io::Error::other(e))
}
