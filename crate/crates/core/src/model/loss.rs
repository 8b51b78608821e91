use super::ModelError;
use crate::labels::{Complication, LabelVector, N_LABELS};

pub const MIN_LABEL_WEIGHT: f64 = 1.0;
pub const MAX_LABEL_WEIGHT: f64 = 100.0;

/// Logistic function, evaluated without overflow on either tail.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_weights(w: &[f64; N_LABELS]) -> Result<(), ModelError> {
    match w.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(class) => Err(ModelError::NonPositiveWeight { class, weight: w[class] }),
        None => Ok(()),
    }
}

/// Mean over all B×3 elements of `w·y·softplus(−z) + (1−y)·softplus(z)`,
/// i.e. positive-weighted binary cross-entropy on logits.
pub fn weighted_bce_loss(
    logits: &[[f64; N_LABELS]],
    labels: &[LabelVector],
    weights: [f64; N_LABELS],
) -> Result<f64, ModelError> {
    check_weights(&weights)?;
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} logit rows vs {} label rows",
            logits.len(),
            labels.len()
        )));
    }
    let sum: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, y)| (0..N_LABELS).map(|c| element_loss(z[c], y[c], weights[c])).sum::<f64>())
        .sum();
    Ok(sum / (logits.len() * N_LABELS) as f64)
}

pub(crate) fn element_loss(z: f64, y: u8, w: f64) -> f64 {
    if y == 1 {
        w * softplus(-z)
    } else {
        softplus(z)
    }
}

/// d(loss)/d(z) for one element, before the 1/(3B) normalisation.
pub(crate) fn element_grad(z: f64, y: u8, w: f64) -> f64 {
    if y == 1 {
        w * (sigmoid(z) - 1.0)
    } else {
        sigmoid(z)
    }
}

/// `negatives / positives` per class, clamped to [1, 100].
pub fn compute_label_weights(labels: &[LabelVector]) -> Result<[f64; N_LABELS], ModelError> {
    let mut w = [0.0; N_LABELS];
    for c in Complication::ALL {
        let pos = labels.iter().filter(|y| y[c.index()] == 1).count();
        if pos == 0 {
            return Err(ModelError::NoPositives(c));
        }
        let neg = labels.len() - pos;
        w[c.index()] = (neg as f64 / pos as f64).clamp(MIN_LABEL_WEIGHT, MAX_LABEL_WEIGHT);
    }
    Ok(w)
}
