use serde::{Deserialize, Serialize};

use super::{generate, GeneratorConfig, SynthError, SyntheticCohort};
use crate::cohort::{build_example, PhenotypeCodelists};
use crate::ingest::{clean_events, default_date_ceiling, default_date_floor, RawEvent};
use crate::sequence::{serialize, token_length_stats, SerializeMode, SerializedRecord, Tokenizer};

pub const MAX_CALIBRATION_STEPS: usize = 30;
/// Relative distance from the target median that counts as converged.
pub const MEDIAN_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub config: GeneratorConfig,
    pub achieved_median: f64,
    pub achieved_trunc_frac: f64,
    pub target_median: f64,
    /// Reported alongside the achieved value; only the median is fitted.
    pub target_trunc_frac: f64,
    pub max_len: usize,
    /// Rate adjustments made (0 when the input config already fits).
    pub steps: usize,
}

/// Text-mode serializations of the observation windows of every patient the
/// cohort gates accept, after ingest cleaning.
pub fn observation_corpus(cohort: &SyntheticCohort, mode: SerializeMode) -> Result<Vec<SerializedRecord>, SynthError> {
    let lists = PhenotypeCodelists::new(&cohort.codelists).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let (floor, ceiling) = (default_date_floor(), default_date_ceiling());
    let mut out = Vec::new();
    for (patient, events) in cohort.patients.iter().zip(cohort.events_by_patient()) {
        let raw: Vec<RawEvent> = events.iter().cloned().map(RawEvent::from).collect();
        let (clean, _) = clean_events(patient, raw, floor, ceiling)?;
        if let (_, Ok(ex)) = build_example(patient, &clean, &lists, &[]) {
            out.push(serialize(&ex.patient_id, &ex.input_events, mode, &cohort.vocab, false)?);
        }
    }
    Ok(out)
}

fn measure(config: &GeneratorConfig, tok: &Tokenizer, max_len: usize) -> Result<(f64, f64), SynthError> {
    let corpus = observation_corpus(&generate(config)?, SerializeMode::Text)?;
    if corpus.is_empty() {
        return Ok((0.0, 0.0));
    }
    let s = token_length_stats(&corpus, tok, max_len);
    Ok((s.median, s.fraction_truncated))
}

/// Adjusts `mean_events_per_year` by log-space bisection until the median
/// token length of regenerated observation windows is within 5% of
/// `target_median`.
pub fn calibrate_lengths(
    config: &GeneratorConfig,
    tok: &Tokenizer,
    target_median: f64,
    target_trunc_frac: f64,
    max_len: usize,
) -> Result<Calibration, SynthError> {
    config.validate()?;
    if target_median.is_nan() || target_median <= 0.0 {
        return Err(SynthError::InvalidConfig("target median must be positive".into()));
    }
    let within = |m: f64| (m - target_median).abs() <= MEDIAN_TOLERANCE * target_median;
    let mut cfg = config.clone();
    let mut steps = 0;
    let done = |cfg: GeneratorConfig, (m, f): (f64, f64), steps| Calibration {
        config: cfg,
        achieved_median: m,
        achieved_trunc_frac: f,
        target_median,
        target_trunc_frac,
        max_len,
        steps,
    };

    let r0 = cfg.mean_events_per_year;
    let first = measure(&cfg, tok, max_len)?;
    if within(first.0) {
        return Ok(done(cfg, first, 0));
    }
    // bracket the target by doubling or halving
    let (mut lo, mut hi) = (r0.max(1e-3), r0.max(1e-3));
    let mut last = first;
    let growing = first.0 < target_median;
    loop {
        if steps >= MAX_CALIBRATION_STEPS {
            return Err(SynthError::CalibrationFailed { steps, median: last.0, target: target_median });
        }
        if growing {
            lo = hi;
            hi *= 2.0;
        } else {
            hi = lo;
            lo /= 2.0;
        }
        cfg.mean_events_per_year = if growing { hi } else { lo };
        steps += 1;
        last = measure(&cfg, tok, max_len)?;
        if within(last.0) {
            return Ok(done(cfg, last, steps));
        }
        if (last.0 > target_median) == growing {
            break;
        }
    }
    while steps < MAX_CALIBRATION_STEPS {
        let mid = (lo * hi).sqrt();
        cfg.mean_events_per_year = mid;
        steps += 1;
        last = measure(&cfg, tok, max_len)?;
        if within(last.0) {
            return Ok(done(cfg, last, steps));
        }
        if last.0 < target_median {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(SynthError::CalibrationFailed { steps, median: last.0, target: target_median })
}
