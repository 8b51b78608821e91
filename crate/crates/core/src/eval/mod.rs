//! Classification metrics, bootstrap intervals and pairwise significance tests.

mod bootstrap;
pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{
    bootstrap_ci, compare_models, BootstrapCI, ComparisonResult, DEFAULT_BOOTSTRAP_ITERATIONS, FAMILY_ALPHA, Z_975,
};

use crate::labels::{Complication, LabelVector, N_LABELS};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction set is empty")]
    Empty,
    #[error("{probabilities} probability rows but {labels} label rows")]
    ShapeMismatch { probabilities: usize, labels: usize },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("no positive labels: AUPRC undefined")]
    NoPositives,
    #[error("bootstrap needs at least {min} iterations, got {got}")]
    TooFewIterations { min: usize, got: usize },
    #[error("every resample lacked positives for {0}")]
    DegenerateMetric(String),
    #[error("both intervals have zero width and equal points; z is defined as 0")]
    ZeroVariance,
    #[error("number of comparisons must be at least 1")]
    NoComparisons,
    #[error("{0}")]
    Mismatch(String),
}

/// Model outputs on one test split for one prediction window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub probabilities: Vec<[f64; N_LABELS]>,
    pub labels: Vec<LabelVector>,
    pub window_years: u32,
    pub model_tag: String,
}

impl PredictionSet {
    pub fn new(
        probabilities: Vec<[f64; N_LABELS]>,
        labels: Vec<LabelVector>,
        window_years: u32,
        model_tag: impl Into<String>,
    ) -> Result<Self, EvalError> {
        if probabilities.len() != labels.len() {
            return Err(EvalError::ShapeMismatch {
                probabilities: probabilities.len(),
                labels: labels.len(),
            });
        }
        if probabilities.is_empty() {
            return Err(EvalError::Empty);
        }
        if let Some(&p) = probabilities.iter().flatten().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(EvalError::InvalidProbability(p));
        }
        Ok(PredictionSet {
            probabilities,
            labels,
            window_years,
            model_tag: model_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// `2TP / (2TP + FP + FN)`, or `None` when the denominator is zero.
    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: [Counts; N_LABELS],
    pub pooled: Counts,
}

/// Decision rule: positive iff probability ≥ threshold.
pub fn binarize_and_count(pred: &PredictionSet, threshold: f64) -> ConfusionCounts {
    count_rows(&pred.probabilities, &pred.labels, threshold)
}

fn count_rows(probs: &[[f64; N_LABELS]], labels: &[LabelVector], threshold: f64) -> ConfusionCounts {
    let mut out = ConfusionCounts::default();
    for (p, y) in probs.iter().zip(labels) {
        for c in 0..N_LABELS {
            let predicted = p[c] >= threshold;
            let actual = y[c] == 1;
            out.per_class[c].add(predicted, actual);
            out.pooled.add(predicted, actual);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub f1: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub micro_f1: f64,
    pub micro_recall: f64,
    pub micro_auprc: f64,
    pub per_class: BTreeMap<Complication, ClassMetrics>,
    pub threshold: f64,
    /// Names of metrics whose denominator was empty (reported as 0).
    pub undefined: Vec<String>,
}

pub fn metric_report(pred: &PredictionSet, threshold: f64) -> MetricReport {
    let counts = binarize_and_count(pred, threshold);
    let mut undefined = Vec::new();
    let mut value = |name: String, v: Option<f64>| {
        v.unwrap_or_else(|| {
            undefined.push(name);
            0.0
        })
    };
    let micro_f1 = value("micro_f1".into(), counts.pooled.f1());
    let micro_recall = value("micro_recall".into(), counts.pooled.recall());
    let micro_auprc = value("micro_auprc".into(), micro_auprc(pred).ok());
    let per_class = Complication::ALL
        .iter()
        .map(|&c| {
            let k = &counts.per_class[c.index()];
            let m = ClassMetrics {
                f1: value(format!("{c}_f1"), k.f1()),
                recall: value(format!("{c}_recall"), k.recall()),
            };
            (c, m)
        })
        .collect();
    MetricReport {
        micro_f1,
        micro_recall,
        micro_auprc,
        per_class,
        threshold,
        undefined,
    }
}

/// Average precision over all pooled (probability, label) pairs.
pub fn micro_auprc(pred: &PredictionSet) -> Result<f64, EvalError> {
    let mut pairs: Vec<(f64, bool)> = pred
        .probabilities
        .iter()
        .zip(&pred.labels)
        .flat_map(|(p, y)| (0..N_LABELS).map(move |c| (p[c], y[c] == 1)))
        .collect();
    average_precision(&mut pairs)
}

/// AP = Σ (R_k − R_{k−1}) · P_k with one PR point per distinct score.
/// Reorders `pairs`.
pub fn average_precision(pairs: &mut [(f64, bool)]) -> Result<f64, EvalError> {
    let total_pos = pairs.iter().filter(|p| p.1).count();
    if total_pos == 0 {
        return Err(EvalError::NoPositives);
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < pairs.len() {
        let score = pairs[i].0;
        let mut group_tp = 0;
        while i < pairs.len() && pairs[i].0 == score {
            group_tp += pairs[i].1 as usize;
            seen += 1;
            i += 1;
        }
        if group_tp > 0 {
            tp += group_tp;
            ap += group_tp as f64 * (tp as f64 / seen as f64);
        }
    }
    Ok(ap / total_pos as f64)
}

/// A scalar metric that can be bootstrapped and compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Metric {
    MicroF1,
    MicroRecall,
    MicroAuprc,
    ClassF1(Complication),
    ClassRecall(Complication),
}

impl Metric {
    /// Every metric in report order.
    pub fn all() -> Vec<Metric> {
        let mut v = vec![Metric::MicroF1, Metric::MicroRecall, Metric::MicroAuprc];
        for c in Complication::ALL {
            v.push(Metric::ClassF1(c));
            v.push(Metric::ClassRecall(c));
        }
        v
    }

    pub fn name(&self) -> String {
        match self {
            Metric::MicroF1 => "micro_f1".into(),
            Metric::MicroRecall => "micro_recall".into(),
            Metric::MicroAuprc => "micro_auprc".into(),
            Metric::ClassF1(c) => format!("{c}_f1"),
            Metric::ClassRecall(c) => format!("{c}_recall"),
        }
    }

    /// Value from pooled counts; `None` for ranking metrics or empty denominators.
    pub(crate) fn value_from_counts(&self, k: &ConfusionCounts) -> Option<f64> {
        match self {
            Metric::MicroF1 => k.pooled.f1(),
            Metric::MicroRecall => k.pooled.recall(),
            Metric::ClassF1(c) => k.per_class[c.index()].f1(),
            Metric::ClassRecall(c) => k.per_class[c.index()].recall(),
            Metric::MicroAuprc => None,
        }
    }

    /// Metric on a full prediction set; empty denominators yield 0.
    pub fn evaluate(&self, pred: &PredictionSet, threshold: f64) -> f64 {
        match self {
            Metric::MicroAuprc => micro_auprc(pred).unwrap_or(0.0),
            m => m.value_from_counts(&binarize_and_count(pred, threshold)).unwrap_or(0.0),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Metric::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        m.name()
    }
}

impl TryFrom<String> for Metric {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(probs: Vec<[f64; 3]>, labels: Vec<LabelVector>) -> PredictionSet {
        PredictionSet::new(probs, labels, 5, "t").unwrap()
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, pos_rate: f64) -> PredictionSet {
        let probs = (0..n)
            .map(|_| {
                // coarse grid to exercise ties
                [0; 3].map(|_| (rng.random_range(0..=20) as f64) / 20.0)
            })
            .collect();
        let labels = (0..n).map(|_| [0; 3].map(|_| rng.random_bool(pos_rate) as u8)).collect();
        set(probs, labels)
    }

    // Straight-line reference: flattens everything and recounts.
    fn naive_report(pred: &PredictionSet, t: f64) -> (f64, f64, Vec<(f64, f64)>) {
        let mut flat = Vec::new();
        for (p, y) in pred.probabilities.iter().zip(&pred.labels) {
            for c in 0..3 {
                flat.push((c, p[c] >= t, y[c] == 1));
            }
        }
        let f1 = |rows: &[&(usize, bool, bool)]| {
            let tp = rows.iter().filter(|r| r.1 && r.2).count() as f64;
            let fp = rows.iter().filter(|r| r.1 && !r.2).count() as f64;
            let fnn = rows.iter().filter(|r| !r.1 && r.2).count() as f64;
            let f = if tp + fp + fnn == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) };
            let r = if tp + fnn == 0.0 { 0.0 } else { tp / (tp + fnn) };
            (f, r)
        };
        let all: Vec<_> = flat.iter().collect();
        let (mf, mr) = f1(&all);
        let per = (0..3)
            .map(|c| f1(&flat.iter().filter(|r| r.0 == c).collect::<Vec<_>>()))
            .collect();
        (mf, mr, per)
    }

    // O(n²): for every distinct threshold, recompute precision/recall from scratch.
    fn brute_force_ap(pairs: &[(f64, bool)]) -> f64 {
        let pos = pairs.iter().filter(|p| p.1).count() as f64;
        let mut thresholds: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for t in thresholds {
            let selected: Vec<_> = pairs.iter().filter(|p| p.0 >= t).collect();
            let tp = selected.iter().filter(|p| p.1).count() as f64;
            let recall = tp / pos;
            let precision = tp / selected.len() as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    #[test]
    fn hand_counted_example() {
        let pred = set(vec![[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]], vec![[1, 0, 0], [0, 1, 0]]);
        let k = binarize_and_count(&pred, 0.5);
        assert_eq!((k.pooled.tp, k.pooled.fp, k.pooled.fn_, k.pooled.tn), (2, 1, 0, 3));
        assert_eq!(k.pooled.total(), 6);
        assert!((k.pooled.precision().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(k.pooled.recall(), Some(1.0));
        let r = metric_report(&pred, 0.5);
        assert!((r.micro_f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictor() {
        let labels = vec![[1, 0, 1], [0, 1, 0], [1, 1, 0]];
        let probs = labels.iter().map(|l| l.map(f64::from)).collect();
        let pred = set(probs, labels);
        let k = binarize_and_count(&pred, 0.5);
        assert_eq!((k.pooled.fp, k.pooled.fn_), (0, 0));
        let r = metric_report(&pred, 0.5);
        assert_eq!(r.micro_f1, 1.0);
        assert_eq!(r.micro_recall, 1.0);
        assert_eq!(r.micro_auprc, 1.0);
        for m in r.per_class.values() {
            assert_eq!((m.f1, m.recall), (1.0, 1.0));
        }
        assert!(r.undefined.is_empty());
    }

    #[test]
    fn threshold_is_inclusive() {
        let pred = set(vec![[0.5, 0.4999, 0.0]], vec![[1, 1, 0]]);
        let k = binarize_and_count(&pred, 0.5);
        assert_eq!(k.per_class[0].tp, 1);
        assert_eq!(k.per_class[1].fn_, 1);
    }

    #[test]
    fn empty_denominators_flagged() {
        let pred = set(vec![[0.1, 0.1, 0.1]], vec![[0, 0, 0]]);
        let r = metric_report(&pred, 0.5);
        assert_eq!(r.micro_f1, 0.0);
        assert_eq!(r.micro_auprc, 0.0);
        assert!(r.undefined.contains(&"micro_f1".to_string()));
        assert!(r.undefined.contains(&"micro_auprc".to_string()));
        assert!(r.undefined.contains(&"retinopathy_recall".to_string()));
    }

    #[test]
    fn auprc_edge_cases() {
        let all_pos = set(vec![[0.2, 0.9, 0.1], [0.3, 0.0, 0.7]], vec![[1, 1, 1], [1, 1, 1]]);
        assert_eq!(micro_auprc(&all_pos).unwrap(), 1.0);
        let none = set(vec![[0.2, 0.9, 0.1]], vec![[0, 0, 0]]);
        assert_eq!(micro_auprc(&none), Err(EvalError::NoPositives));
        // all tied: one PR point at the base rate
        let tied = set(vec![[0.5; 3], [0.5; 3]], vec![[1, 0, 0], [0, 0, 0]]);
        assert!((micro_auprc(&tied).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn auprc_matches_brute_force_on_200_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut pairs: Vec<(f64, bool)> = (0..200)
                .map(|_| ((rng.random_range(0..50) as f64) / 50.0, rng.random_bool(0.3)))
                .collect();
            pairs[0].1 = true;
            let expected = brute_force_ap(&pairs);
            let got = average_precision(&mut pairs.clone()).unwrap();
            assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        }
    }

    #[test]
    fn reports_match_naive_reference_on_1000_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let n = rng.random_range(1..=50);
            let pred = random_set(&mut rng, n, 0.3);
            let r = metric_report(&pred, 0.5);
            let (mf, mr, per) = naive_report(&pred, 0.5);
            assert!((r.micro_f1 - mf).abs() < 1e-9);
            assert!((r.micro_recall - mr).abs() < 1e-9);
            for (c, (f, rec)) in Complication::ALL.iter().zip(per) {
                assert!((r.per_class[c].f1 - f).abs() < 1e-9);
                assert!((r.per_class[c].recall - rec).abs() < 1e-9);
            }
            let pairs: Vec<(f64, bool)> = pred
                .probabilities
                .iter()
                .zip(&pred.labels)
                .flat_map(|(p, y)| (0..3).map(move |c| (p[c], y[c] == 1)))
                .collect();
            if pairs.iter().any(|p| p.1) {
                assert!((r.micro_auprc - brute_force_ap(&pairs)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn micro_f1_is_harmonic_mean_of_pooled_precision_and_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let pred = random_set(&mut rng, 30, 0.4);
            let k = binarize_and_count(&pred, 0.5).pooled;
            if let (Some(p), Some(r)) = (k.precision(), k.recall()) {
                if p + r > 0.0 {
                    let hm = 2.0 * p * r / (p + r);
                    assert!((k.f1().unwrap() - hm).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_checks() {
        assert_eq!(
            PredictionSet::new(vec![[0.5; 3]], vec![], 1, "x"),
            Err(EvalError::ShapeMismatch { probabilities: 1, labels: 0 })
        );
        assert_eq!(PredictionSet::new(vec![], vec![], 1, "x"), Err(EvalError::Empty));
        assert!(matches!(
            PredictionSet::new(vec![[1.5, 0.0, 0.0]], vec![[0; 3]], 1, "x"),
            Err(EvalError::InvalidProbability(_))
        ));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::all() {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Metric>(&json).unwrap(), m);
        }
        assert_eq!("neuropathy_recall".parse::<Metric>(), Ok(Metric::ClassRecall(Complication::Neuropathy)));
    }

    proptest! {
        #[test]
        fn auprc_invariant_under_monotone_transform(
            rows in prop::collection::vec((prop::array::uniform3(0u8..30), prop::array::uniform3(0u8..2)), 1..40)
        ) {
            prop_assume!(rows.iter().any(|(_, y)| y.contains(&1)));
            let probs: Vec<[f64; 3]> = rows.iter().map(|(p, _)| p.map(|v| v as f64 / 30.0)).collect();
            let labels: Vec<LabelVector> = rows.iter().map(|(_, y)| *y).collect();
            let a = micro_auprc(&set(probs.clone(), labels.clone())).unwrap();
            let squashed = probs.iter().map(|p| p.map(|v| v.powi(3) * 0.5 + 0.1)).collect();
            let b = micro_auprc(&set(squashed, labels)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn counts_conserve_decisions(
            rows in prop::collection::vec((prop::array::uniform3(0.0f64..=1.0), prop::array::uniform3(0u8..2)), 1..40),
            t in 0.01f64..0.99,
        ) {
            let n = rows.len();
            let pred = set(rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect());
            let k = binarize_and_count(&pred, t);
            prop_assert_eq!(k.pooled.total(), 3 * n);
            for c in 0..3 {
                prop_assert_eq!(k.per_class[c].total(), n);
            }
        }
    }
}
