//! Serializable report and comparison documents, plus Markdown rendering.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, compare_models, metric_report, BootstrapCI, EvalError, Metric, MetricReport, PredictionSet};
use crate::labels::Complication;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window_years: u32,
    pub n_test: usize,
    pub metrics: MetricReport,
    /// Interval per metric name; a metric is absent if it could not be resampled.
    pub intervals: BTreeMap<String, BootstrapCI>,
}

impl WindowReport {
    pub fn interval(&self, metric: Metric) -> Option<&BootstrapCI> {
        self.intervals.get(&metric.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model_tag: String,
    pub threshold: f64,
    pub windows: Vec<WindowReport>,
}

impl ModelReport {
    pub fn window(&self, w: u32) -> Option<&WindowReport> {
        self.windows.iter().find(|r| r.window_years == w)
    }
}

/// Point metrics plus a bootstrap interval for every metric.
pub fn window_report(
    pred: &PredictionSet,
    threshold: f64,
    n_iterations: usize,
    seed: u64,
) -> Result<WindowReport, EvalError> {
    let mut metrics = metric_report(pred, threshold);
    let mut intervals = BTreeMap::new();
    for m in Metric::all() {
        match bootstrap_ci(pred, m, n_iterations, seed, threshold) {
            Ok(ci) => {
                intervals.insert(m.name(), ci);
            }
            Err(EvalError::DegenerateMetric(name)) => metrics.undefined.push(format!("{name}_ci")),
            Err(e) => return Err(e),
        }
    }
    Ok(WindowReport {
        window_years: pred.window_years,
        n_test: pred.len(),
        metrics,
        intervals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub window_years: u32,
    pub metric: String,
    pub model_a: String,
    pub model_b: String,
    pub point_a: f64,
    pub point_b: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub alpha_adjusted: f64,
    pub significant: bool,
    pub m_comparisons: usize,
    /// Both intervals had zero width with equal points; z is taken as 0.
    #[serde(default)]
    pub zero_variance: bool,
}

/// Pairwise tests of `a` against `b` for each shared window and metric.
pub fn compare_reports(
    a: &ModelReport,
    b: &ModelReport,
    metrics: &[Metric],
    m_comparisons: usize,
) -> Result<Vec<ComparisonRow>, EvalError> {
    let windows_a: Vec<u32> = a.windows.iter().map(|w| w.window_years).collect();
    let windows_b: Vec<u32> = b.windows.iter().map(|w| w.window_years).collect();
    if windows_a != windows_b {
        return Err(EvalError::Mismatch(format!(
            "{} has windows {windows_a:?} but {} has {windows_b:?}",
            a.model_tag, b.model_tag
        )));
    }
    let mut rows = Vec::new();
    for (wa, wb) in a.windows.iter().zip(&b.windows) {
        for &metric in metrics {
            let missing = |tag: &str| EvalError::Mismatch(format!("{tag} lacks a {metric} interval"));
            let ca = wa.interval(metric).ok_or_else(|| missing(&a.model_tag))?;
            let cb = wb.interval(metric).ok_or_else(|| missing(&b.model_tag))?;
            let (result, zero_variance) = match compare_models(ca, cb, m_comparisons) {
                Ok(r) => (r, false),
                Err(EvalError::ZeroVariance) => (
                    super::ComparisonResult {
                        z: 0.0,
                        p_two_sided: 1.0,
                        alpha_adjusted: super::FAMILY_ALPHA / m_comparisons as f64,
                        significant: false,
                        m_comparisons,
                    },
                    true,
                ),
                Err(e) => return Err(e),
            };
            rows.push(ComparisonRow {
                window_years: wa.window_years,
                metric: metric.name(),
                model_a: a.model_tag.clone(),
                model_b: b.model_tag.clone(),
                point_a: ca.point,
                point_b: cb.point,
                z: result.z,
                p_two_sided: result.p_two_sided,
                alpha_adjusted: result.alpha_adjusted,
                significant: result.significant,
                m_comparisons,
                zero_variance,
            });
        }
    }
    Ok(rows)
}

fn cell(w: &WindowReport, metric: Metric, point: f64) -> String {
    match w.interval(metric) {
        Some(ci) => format!("{point:.3} ({:.3}-{:.3})", ci.lo, ci.hi),
        None => format!("{point:.3}"),
    }
}

/// One row per window: per-class F1/recall, then micro F1/recall/AUPRC.
pub fn render_markdown(report: &ModelReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "### {} (threshold {})\n", report.model_tag, report.threshold);
    let mut header = vec!["Window".to_string()];
    for c in Complication::ALL {
        header.push(format!("{} F1", capitalize(c.name())));
        header.push(format!("{} Recall", capitalize(c.name())));
    }
    header.extend(["Micro F1", "Micro Recall", "Micro AUPRC"].map(String::from));
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for w in &report.windows {
        let mut cells = vec![format!("{}y", w.window_years)];
        for c in Complication::ALL {
            let m = &w.metrics.per_class[&c];
            cells.push(cell(w, Metric::ClassF1(c), m.f1));
            cells.push(cell(w, Metric::ClassRecall(c), m.recall));
        }
        cells.push(cell(w, Metric::MicroF1, w.metrics.micro_f1));
        cells.push(cell(w, Metric::MicroRecall, w.metrics.micro_recall));
        cells.push(cell(w, Metric::MicroAuprc, w.metrics.micro_auprc));
        let _ = writeln!(out, "| {} |", cells.join(" | "));
    }
    out
}

/// Significant rows are bolded.
pub fn render_comparison_markdown(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("| Window | Metric | A | B | A point | B point | z | p | alpha | Significant |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        let verdict = if r.significant { "**yes**" } else { "no" };
        let _ = writeln!(
            out,
            "| {}y | {} | {} | {} | {:.3} | {:.3} | {:.2} | {:.4} | {:.5} | {} |",
            r.window_years, r.metric, r.model_a, r.model_b, r.point_a, r.point_b, r.z, r.p_two_sided, r.alpha_adjusted, verdict
        );
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(tag: &str, shift: f64) -> PredictionSet {
        let probs = (0..40)
            .map(|i| {
                let f = (i as f64 / 40.0 + shift).min(1.0);
                [f, 1.0 - f, (f * 3.0) % 1.0]
            })
            .collect();
        let labels = (0..40).map(|i| [(i > 20) as u8, (i < 10) as u8, (i % 3 == 0) as u8]).collect();
        PredictionSet::new(probs, labels, 5, tag).unwrap()
    }

    fn model(tag: &str, shift: f64) -> ModelReport {
        ModelReport {
            model_tag: tag.into(),
            threshold: 0.5,
            windows: vec![window_report(&pred(tag, shift), 0.5, 200, 1).unwrap()],
        }
    }

    #[test]
    fn report_has_every_interval() {
        let r = model("a", 0.0);
        assert_eq!(r.windows[0].intervals.len(), Metric::all().len());
        assert_eq!(r.windows[0].n_test, 40);
        let json = serde_json::to_string(&r).unwrap();
        let back: ModelReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn markdown_layout() {
        let md = render_markdown(&model("text-left-512", 0.0));
        let lines: Vec<&str> = md.lines().filter(|l| l.starts_with('|')).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("Nephropathy F1") && lines[0].ends_with("Micro AUPRC |"));
        assert_eq!(lines[2].matches('|').count(), lines[0].matches('|').count());
        assert!(lines[2].starts_with("| 5y |"));
    }

    #[test]
    fn comparison_rows_and_self_comparison() {
        let a = model("a", 0.0);
        let b = model("b", 0.1);
        let rows = compare_reports(&a, &b, &[Metric::MicroF1, Metric::MicroAuprc], 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.alpha_adjusted == 0.025));
        let same = compare_reports(&a, &a, &[Metric::MicroF1], 1).unwrap();
        assert_eq!(same[0].z, 0.0);
        assert!(!same[0].significant);
        let md = render_comparison_markdown(&rows);
        assert_eq!(md.lines().count(), 4);
    }

    #[test]
    fn mismatched_windows_rejected() {
        let a = model("a", 0.0);
        let mut b = model("b", 0.0);
        b.windows[0].window_years = 10;
        assert!(matches!(compare_reports(&a, &b, &[Metric::MicroF1], 1), Err(EvalError::Mismatch(_))));
    }
}
