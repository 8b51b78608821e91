use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{average_precision, count_rows, EvalError, Metric, PredictionSet};
use crate::labels::N_LABELS;
use crate::stats::quantile_sorted;

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 1000;
const MIN_ITERATIONS: usize = 100;
/// Redraw budget per iteration before giving up on a degenerate metric.
const MAX_REDRAWS: usize = 1000;

/// 97.5% quantile of the standard normal.
pub const Z_975: f64 = 1.959964;
/// Family-wise significance level before Bonferroni correction.
pub const FAMILY_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_iterations: usize,
    pub seed: u64,
    /// Resamples discarded because the metric was undefined on them.
    #[serde(default)]
    pub redraws: usize,
}

impl BootstrapCI {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Standard error implied by a 95% interval.
    pub fn standard_error(&self) -> f64 {
        self.width() / (2.0 * Z_975)
    }
}

/// Percentile interval from `n` row resamples. Iteration `i` draws from its
/// own stream `(seed, i)`, so the result does not depend on evaluation order.
pub fn bootstrap_ci(
    pred: &PredictionSet,
    metric: Metric,
    n: usize,
    seed: u64,
    threshold: f64,
) -> Result<BootstrapCI, EvalError> {
    if n < MIN_ITERATIONS {
        return Err(EvalError::TooFewIterations { min: MIN_ITERATIONS, got: n });
    }
    let point = metric.evaluate(pred, threshold);
    let mut values = Vec::with_capacity(n);
    let mut redraws = 0;
    for i in 0..n {
        let (v, r) = replicate(pred, metric, seed, i as u64, threshold)?;
        values.push(v);
        redraws += r;
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapCI {
        point,
        lo: quantile_sorted(&values, 0.025),
        hi: quantile_sorted(&values, 0.975),
        n_iterations: n,
        seed,
        redraws,
    })
}

/// Metric value on bootstrap iteration `i`, plus how many redraws it took.
pub(crate) fn replicate(
    pred: &PredictionSet,
    metric: Metric,
    seed: u64,
    i: u64,
    threshold: f64,
) -> Result<(f64, usize), EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    let n = pred.len();
    let mut idx = vec![0usize; n];
    let mut pairs: Vec<(f64, bool)> = Vec::with_capacity(n * N_LABELS);
    let mut probs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for redraw in 0..=MAX_REDRAWS {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        match metric {
            Metric::MicroAuprc => {
                pairs.clear();
                for &r in &idx {
                    let (p, y) = (&pred.probabilities[r], &pred.labels[r]);
                    pairs.extend((0..N_LABELS).map(|c| (p[c], y[c] == 1)));
                }
                match average_precision(&mut pairs) {
                    Ok(v) => return Ok((v, redraw)),
                    Err(_) => continue,
                }
            }
            m => {
                probs.clear();
                labels.clear();
                probs.extend(idx.iter().map(|&r| pred.probabilities[r]));
                labels.extend(idx.iter().map(|&r| pred.labels[r]));
                let v = m.value_from_counts(&count_rows(&probs, &labels, threshold)).unwrap_or(0.0);
                return Ok((v, redraw));
            }
        }
    }
    Err(EvalError::DegenerateMetric(metric.name()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub z: f64,
    pub p_two_sided: f64,
    pub alpha_adjusted: f64,
    pub significant: bool,
    pub m_comparisons: usize,
}

/// Two-sided z-test on the difference of points, with standard errors read
/// off the interval widths and a Bonferroni-adjusted level.
pub fn compare_models(a: &BootstrapCI, b: &BootstrapCI, m_comparisons: usize) -> Result<ComparisonResult, EvalError> {
    if m_comparisons == 0 {
        return Err(EvalError::NoComparisons);
    }
    let alpha_adjusted = FAMILY_ALPHA / m_comparisons as f64;
    let se = (a.standard_error().powi(2) + b.standard_error().powi(2)).sqrt();
    let diff = a.point - b.point;
    if se == 0.0 && diff == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let z = diff / se;
    let p_two_sided = libm::erfc(z.abs() / std::f64::consts::SQRT_2);
    Ok(ComparisonResult {
        z,
        p_two_sided,
        alpha_adjusted,
        significant: p_two_sided < alpha_adjusted,
        m_comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::LabelVector;

    fn ci(point: f64, lo: f64, hi: f64) -> BootstrapCI {
        BootstrapCI { point, lo, hi, n_iterations: 1000, seed: 0, redraws: 0 }
    }

    fn sample_set() -> PredictionSet {
        let mut probs = Vec::new();
        let mut labels: Vec<LabelVector> = Vec::new();
        for i in 0..60 {
            let f = i as f64 / 60.0;
            probs.push([f, 1.0 - f, (f * 7.0) % 1.0]);
            labels.push([(i % 3 == 0) as u8, (i % 5 == 0) as u8, (i % 4 == 1) as u8]);
        }
        PredictionSet::new(probs, labels, 5, "s").unwrap()
    }

    #[test]
    fn identical_rows_give_zero_width() {
        let pred = PredictionSet::new(vec![[0.7, 0.2, 0.6]; 25], vec![[1, 0, 0]; 25], 1, "x").unwrap();
        for m in Metric::all() {
            let c = bootstrap_ci(&pred, m, 200, 3, 0.5).unwrap();
            assert_eq!(c.lo, c.point, "{m}");
            assert_eq!(c.hi, c.point, "{m}");
        }
    }

    #[test]
    fn same_seed_same_interval() {
        let pred = sample_set();
        let a = bootstrap_ci(&pred, Metric::MicroF1, 300, 17, 0.5).unwrap();
        let b = bootstrap_ci(&pred, Metric::MicroF1, 300, 17, 0.5).unwrap();
        assert_eq!(a, b);
        assert!(a.lo <= a.hi);
        let c = bootstrap_ci(&pred, Metric::MicroF1, 300, 18, 0.5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn iteration_order_is_irrelevant() {
        let pred = sample_set();
        let forward: Vec<f64> = (0..150)
            .map(|i| replicate(&pred, Metric::MicroAuprc, 9, i, 0.5).unwrap().0)
            .collect();
        let mut backward: Vec<f64> = (0..150)
            .rev()
            .map(|i| replicate(&pred, Metric::MicroAuprc, 9, i, 0.5).unwrap().0)
            .collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn too_few_iterations_rejected() {
        assert_eq!(
            bootstrap_ci(&sample_set(), Metric::MicroF1, 99, 0, 0.5),
            Err(EvalError::TooFewIterations { min: 100, got: 99 })
        );
        assert_eq!(DEFAULT_BOOTSTRAP_ITERATIONS, 1000);
    }

    #[test]
    fn degenerate_auprc_resamples_are_redrawn() {
        // a single positive among 20 rows: many resamples miss it
        let mut labels = vec![[0u8; 3]; 20];
        labels[0] = [1, 0, 0];
        let probs = (0..20).map(|i| [i as f64 / 20.0; 3]).collect();
        let pred = PredictionSet::new(probs, labels, 1, "r").unwrap();
        let c = bootstrap_ci(&pred, Metric::MicroAuprc, 200, 1, 0.5).unwrap();
        assert!(c.redraws > 0);
        let none = PredictionSet::new(vec![[0.3; 3]; 5], vec![[0; 3]; 5], 1, "n").unwrap();
        assert_eq!(
            bootstrap_ci(&none, Metric::MicroAuprc, 100, 1, 0.5),
            Err(EvalError::DegenerateMetric("micro_auprc".into()))
        );
    }

    #[test]
    fn five_year_auprc_comparison() {
        let r = compare_models(&ci(0.51, 0.50, 0.52), &ci(0.43, 0.41, 0.44), 18).unwrap();
        assert!((r.z - 8.70).abs() < 0.05, "z = {}", r.z);
        assert!(r.significant);
        assert!((r.alpha_adjusted - 0.05 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn one_year_f1_comparison_not_significant() {
        let r = compare_models(&ci(0.45, 0.44, 0.46), &ci(0.43, 0.42, 0.44), 18).unwrap();
        assert!((r.z - 2.77).abs() < 0.01, "z = {}", r.z);
        assert!((r.p_two_sided - 0.0056).abs() < 0.0002, "p = {}", r.p_two_sided);
        assert!(!r.significant);
    }

    #[test]
    fn identical_inputs_give_zero_z() {
        let a = ci(0.4, 0.38, 0.42);
        let r = compare_models(&a, &a, 3).unwrap();
        assert_eq!(r.z, 0.0);
        assert_eq!(r.p_two_sided, 1.0);
        assert!(!r.significant);
        let flat = ci(0.4, 0.4, 0.4);
        assert_eq!(compare_models(&flat, &flat, 3), Err(EvalError::ZeroVariance));
        assert_eq!(compare_models(&a, &a, 0), Err(EvalError::NoComparisons));
    }

    #[test]
    fn comparison_is_antisymmetric() {
        let a = ci(0.47, 0.44, 0.50);
        let b = ci(0.41, 0.39, 0.44);
        let ab = compare_models(&a, &b, 6).unwrap();
        let ba = compare_models(&b, &a, 6).unwrap();
        assert_eq!(ab.z, -ba.z);
        assert_eq!(ab.p_two_sided, ba.p_two_sided);
        assert_eq!(ab.significant, ba.significant);
    }

    #[test]
    fn normal_tail_reference_values() {
        // p for |z| = 1.959964 is 0.05 and for 2.575829 is 0.01
        let z = |d: f64| compare_models(&ci(d, d, d), &ci(0.0, -Z_975, Z_975), 1).unwrap();
        assert!((z(Z_975).p_two_sided - 0.05).abs() < 1e-6);
        assert!((z(2.575829).p_two_sided - 0.01).abs() < 1e-6);
    }
}
