//! Phenotype detection, inclusion gates, observation windows, labels and
//! the stratified train/validation/test split.

use std::collections::{BTreeMap, HashMap};

use chrono::{Months, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ClinicalEvent, Patient, Sex};
use crate::labels::{Complication, LabelVector, N_LABELS};
use crate::ontology::{CodeSystem, Codelist};
use crate::stats::{mean_sd, median};

#[derive(Debug, Error, PartialEq)]
pub enum CohortError {
    #[error("no codelist for required phenotype {0:?}")]
    MissingCodelist(&'static str),
    #[error("a complication exists but no event precedes it")]
    EmptyWindow,
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("need at least 10 examples to split, got {0}")]
    TooFewExamples(usize),
}

/// Adds whole calendar years, clamping to the month end (Feb 29 + 1y = Feb 28).
pub fn add_years(date: NaiveDate, years: u32) -> NaiveDate {
    date.checked_add_months(Months::new(12 * years))
        .unwrap_or(NaiveDate::MAX)
}

/// Fractional years between two dates.
pub fn years_between(from: NaiveDate, to: NaiveDate) -> f64 {
    (to - from).num_days() as f64 / 365.25
}

pub const T2DM: &str = "t2dm";

/// First occurrence date of each phenotype.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhenotypeDates {
    pub t2dm: Option<NaiveDate>,
    pub retinopathy: Option<NaiveDate>,
    pub nephropathy: Option<NaiveDate>,
    pub neuropathy: Option<NaiveDate>,
}

impl PhenotypeDates {
    pub fn complication(&self, c: Complication) -> Option<NaiveDate> {
        match c {
            Complication::Nephropathy => self.nephropathy,
            Complication::Retinopathy => self.retinopathy,
            Complication::Neuropathy => self.neuropathy,
        }
    }

    pub fn set_complication(&mut self, c: Complication, date: Option<NaiveDate>) {
        match c {
            Complication::Nephropathy => self.nephropathy = date,
            Complication::Retinopathy => self.retinopathy = date,
            Complication::Neuropathy => self.neuropathy = date,
        }
    }

    pub fn first_complication(&self) -> Option<(Complication, NaiveDate)> {
        Complication::ALL
            .into_iter()
            .filter_map(|c| self.complication(c).map(|d| (c, d)))
            .min_by_key(|&(c, d)| (d, c))
    }

    pub fn complication_count(&self) -> usize {
        Complication::ALL
            .into_iter()
            .filter(|&c| self.complication(c).is_some())
            .count()
    }
}

const T2DM_BIT: u8 = 1 << 3;

fn complication_bit(c: Complication) -> u8 {
    1 << c.index()
}

/// The four required codelists, indexed by `(system, code)` for detection.
#[derive(Debug, Clone)]
pub struct PhenotypeCodelists {
    membership: HashMap<CodeSystem, HashMap<String, u8>>,
}

impl PhenotypeCodelists {
    /// Needs codelists named `t2dm`, `retinopathy`, `nephropathy` and `neuropathy`;
    /// any others are ignored.
    pub fn new(lists: &[Codelist]) -> Result<Self, CohortError> {
        let mut membership: HashMap<CodeSystem, HashMap<String, u8>> = HashMap::new();
        let required: [(&'static str, u8); 4] = [
            (T2DM, T2DM_BIT),
            ("nephropathy", complication_bit(Complication::Nephropathy)),
            ("retinopathy", complication_bit(Complication::Retinopathy)),
            ("neuropathy", complication_bit(Complication::Neuropathy)),
        ];
        for (name, bit) in required {
            let list = lists
                .iter()
                .find(|l| l.phenotype == name)
                .ok_or(CohortError::MissingCodelist(name))?;
            for (system, code) in &list.members {
                *membership
                    .entry(system.clone())
                    .or_default()
                    .entry(code.clone())
                    .or_default() |= bit;
            }
        }
        Ok(Self { membership })
    }

    fn bits(&self, system: &CodeSystem, code: &str) -> u8 {
        self.membership
            .get(system)
            .and_then(|m| m.get(code))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_phenotype_code(&self, system: &CodeSystem, code: &str) -> bool {
        self.bits(system, code) != 0
    }
}

/// Earliest matching event date per phenotype. Does not rely on input order.
pub fn detect_phenotypes(events: &[ClinicalEvent], codelists: &PhenotypeCodelists) -> PhenotypeDates {
    let mut out = PhenotypeDates::default();
    let keep_min = |slot: &mut Option<NaiveDate>, d: NaiveDate| {
        if slot.is_none_or(|cur| d < cur) {
            *slot = Some(d);
        }
    };
    for e in events {
        let bits = codelists.bits(&e.system, &e.code);
        if bits == 0 {
            continue;
        }
        if bits & T2DM_BIT != 0 {
            keep_min(&mut out.t2dm, e.date);
        }
        for c in Complication::ALL {
            if bits & complication_bit(c) != 0 {
                let mut cur = out.complication(c);
                keep_min(&mut cur, e.date);
                out.set_complication(c, cur);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExclusionReason {
    NoT2dm,
    Under18,
    ComplicationBeforeT2dm,
    TooFewEvents,
    EmptyWindow,
}

impl ExclusionReason {
    pub const ALL: [ExclusionReason; 5] = [
        ExclusionReason::NoT2dm,
        ExclusionReason::ComplicationBeforeT2dm,
        ExclusionReason::Under18,
        ExclusionReason::EmptyWindow,
        ExclusionReason::TooFewEvents,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationWindow {
    pub input_events: Vec<ClinicalEvent>,
    pub index_date: NaiveDate,
    pub had_any_complication: bool,
}

fn index_date(events: &[ClinicalEvent], phen: &PhenotypeDates) -> Option<(NaiveDate, bool)> {
    match phen.first_complication() {
        Some((_, d)) => Some((d, true)),
        None => events.iter().map(|e| e.date).max().map(|d| (d, false)),
    }
}

/// Input window: everything strictly before the first complication, or the
/// whole record when there is none. `events` must be sorted.
pub fn build_observation_window(
    events: &[ClinicalEvent],
    phen: &PhenotypeDates,
) -> Result<ObservationWindow, CohortError> {
    let (index_date, had_any) = index_date(events, phen).ok_or(CohortError::EmptyWindow)?;
    let input_events: Vec<ClinicalEvent> = if had_any {
        events.iter().take_while(|e| e.date < index_date).cloned().collect()
    } else {
        events.to_vec()
    };
    if input_events.is_empty() {
        return Err(CohortError::EmptyWindow);
    }
    Ok(ObservationWindow {
        input_events,
        index_date,
        had_any_complication: had_any,
    })
}

fn distinct_codes(events: &[ClinicalEvent]) -> usize {
    let mut seen: Vec<(&CodeSystem, &str)> = events.iter().map(|e| (&e.system, e.code.as_str())).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

pub const MIN_DISTINCT_EVENTS: usize = 3;
pub const MIN_AGE_YEARS: u32 = 18;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inclusion {
    Accepted(ObservationWindow),
    Rejected(ExclusionReason),
}

/// Applies the entry gates in fixed precedence:
/// no T2DM, complication before T2DM, under 18 at index, empty window,
/// fewer than three distinct codes in the window.
pub fn apply_inclusion(patient: &Patient, phen: &PhenotypeDates, events: &[ClinicalEvent]) -> Inclusion {
    let Some(t2dm) = phen.t2dm else {
        return Inclusion::Rejected(ExclusionReason::NoT2dm);
    };
    if Complication::ALL
        .into_iter()
        .any(|c| phen.complication(c).is_some_and(|d| d < t2dm))
    {
        return Inclusion::Rejected(ExclusionReason::ComplicationBeforeT2dm);
    }
    let Some((index, _)) = index_date(events, phen) else {
        return Inclusion::Rejected(ExclusionReason::EmptyWindow);
    };
    if add_years(patient.birth_date, MIN_AGE_YEARS) > index {
        return Inclusion::Rejected(ExclusionReason::Under18);
    }
    let window = match build_observation_window(events, phen) {
        Ok(w) => w,
        Err(_) => return Inclusion::Rejected(ExclusionReason::EmptyWindow),
    };
    if distinct_codes(&window.input_events) < MIN_DISTINCT_EVENTS {
        return Inclusion::Rejected(ExclusionReason::TooFewEvents);
    }
    Inclusion::Accepted(window)
}

/// Label bit for complication `c` at horizon `W` is set iff its first date
/// falls in `[index, index + W years]`.
pub fn assign_labels(phen: &PhenotypeDates, index_date: NaiveDate, windows: &[u32]) -> BTreeMap<u32, LabelVector> {
    let any = phen.first_complication().is_some();
    windows
        .iter()
        .map(|&w| {
            let end = add_years(index_date, w);
            let mut v = [0u8; N_LABELS];
            if any {
                for c in Complication::ALL {
                    if let Some(d) = phen.complication(c) {
                        v[c.index()] = u8::from(d >= index_date && d <= end);
                    }
                }
            }
            (w, v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortExample {
    pub patient_id: String,
    pub input_events: Vec<ClinicalEvent>,
    pub index_date: NaiveDate,
    pub labels: BTreeMap<u32, LabelVector>,
    pub had_any_complication: bool,
}

impl CohortExample {
    pub fn label(&self, window: u32) -> LabelVector {
        self.labels.get(&window).copied().unwrap_or_default()
    }
}

/// Runs detection, gating, windowing and labelling for one patient whose
/// events are already cleaned and sorted.
pub fn build_example(
    patient: &Patient,
    events: &[ClinicalEvent],
    codelists: &PhenotypeCodelists,
    windows: &[u32],
) -> (PhenotypeDates, Result<CohortExample, ExclusionReason>) {
    let phen = detect_phenotypes(events, codelists);
    let result = match apply_inclusion(patient, &phen, events) {
        Inclusion::Rejected(r) => Err(r),
        Inclusion::Accepted(w) => Ok(CohortExample {
            patient_id: patient.id.clone(),
            labels: assign_labels(&phen, w.index_date, windows),
            index_date: w.index_date,
            had_any_complication: w.had_any_complication,
            input_events: w.input_events,
        }),
    };
    (phen, result)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

const EPS: f64 = 1e-9;

fn largest_remainder(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| n as f64 * r);
    let mut out = exact.map(|x| (x + EPS).floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - out[a] as f64;
        let fb = exact[b] - out[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut rest = n - out.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        out[k] += 1;
        rest -= 1;
    }
    out
}

/// Splits examples by their exact label combination at `stratify_window`.
///
/// Each stratum gets `floor(size * ratio)` per split; leftover examples go by
/// largest fractional part, bounded by the global per-split targets so that
/// overall sizes stay within one of the requested ratios. Strata with fewer
/// than three examples go entirely to train.
pub fn stratified_split(
    examples: &[CohortExample],
    ratios: [f64; 3],
    stratify_window: u32,
    seed: u64,
) -> Result<SplitAssignment, CohortError> {
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > EPS {
        return Err(CohortError::InvalidRatios(ratios));
    }
    if examples.len() < 10 {
        return Err(CohortError::TooFewExamples(examples.len()));
    }
    let mut strata: BTreeMap<LabelVector, Vec<usize>> = BTreeMap::new();
    for (i, e) in examples.iter().enumerate() {
        strata.entry(e.label(stratify_window)).or_default().push(i);
    }
    let targets = largest_remainder(examples.len(), &ratios);
    let (small, big): (Vec<_>, Vec<_>) = strata.into_values().partition(|g| g.len() < 3);
    let small_total: usize = small.iter().map(Vec::len).sum();

    let mut alloc: Vec<[usize; 3]> = Vec::with_capacity(big.len());
    let mut fracs: Vec<[f64; 3]> = Vec::with_capacity(big.len());
    let mut leftover: Vec<usize> = Vec::with_capacity(big.len());
    for g in &big {
        let exact = ratios.map(|r| g.len() as f64 * r);
        let floors = exact.map(|x| (x + EPS).floor() as usize);
        fracs.push([0, 1, 2].map(|k| exact[k] - floors[k] as f64));
        leftover.push(g.len() - floors.iter().sum::<usize>());
        alloc.push(floors);
    }
    let mut deficit = [0i64; 3];
    for k in 0..3 {
        let floor_sum: usize = alloc.iter().map(|a| a[k]).sum();
        deficit[k] = targets[k] as i64 - floor_sum as i64 - if k == 0 { small_total as i64 } else { 0 };
    }
    let mut candidates: Vec<(usize, usize)> = (0..big.len()).flat_map(|g| (0..3).map(move |k| (g, k))).collect();
    candidates.sort_by(|&(ga, ka), &(gb, kb)| fracs[gb][kb].total_cmp(&fracs[ga][ka]).then((ga, ka).cmp(&(gb, kb))));
    for &(g, k) in &candidates {
        if leftover[g] > 0 && deficit[k] > 0 && fracs[g][k] > EPS {
            alloc[g][k] += 1;
            leftover[g] -= 1;
            deficit[k] -= 1;
        }
    }
    for g in 0..big.len() {
        while leftover[g] > 0 {
            let k = (0..3)
                .max_by(|&a, &b| {
                    (deficit[a] > 0)
                        .cmp(&(deficit[b] > 0))
                        .then(fracs[g][a].total_cmp(&fracs[g][b]))
                        .then(b.cmp(&a))
                })
                .expect("three splits");
            alloc[g][k] += 1;
            leftover[g] -= 1;
            deficit[k] -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<String>; 3] = Default::default();
    for g in &small {
        parts[0].extend(g.iter().map(|&i| examples[i].patient_id.clone()));
    }
    for (g, counts) in big.iter().zip(&alloc) {
        let mut members = g.clone();
        members.shuffle(&mut rng);
        let mut it = members.into_iter();
        for (k, &count) in counts.iter().enumerate() {
            parts[k].extend(it.by_ref().take(count).map(|i| examples[i].patient_id.clone()));
        }
    }
    for p in &mut parts {
        p.sort();
    }
    let [train, validation, test] = parts;
    Ok(SplitAssignment {
        train,
        validation,
        test,
        seed,
    })
}

/// Cohort characteristics for the accepted patients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub candidates: usize,
    pub patients: usize,
    pub exclusions: BTreeMap<ExclusionReason, usize>,
    /// Index `k` counts patients with exactly `k` recorded complications.
    pub complication_count_histogram: [usize; 4],
    pub per_complication: BTreeMap<Complication, usize>,
    pub first_complication: BTreeMap<Complication, usize>,
    pub sex: BTreeMap<String, usize>,
    pub age_at_first_complication_mean: f64,
    pub age_at_first_complication_sd: f64,
    /// Years from index date to the end of follow-up, for censoring audits.
    pub follow_up_years_median: f64,
    /// Positive label counts per window, in label order.
    pub positives_per_window: BTreeMap<u32, [usize; N_LABELS]>,
}

#[derive(Debug, Default)]
pub struct SummaryBuilder {
    summary: CohortSummary,
    ages: Vec<f64>,
    follow_up: Vec<f64>,
    positives: BTreeMap<u32, [usize; N_LABELS]>,
}

impl SummaryBuilder {
    pub fn reject(&mut self, reason: ExclusionReason) {
        self.summary.candidates += 1;
        *self.summary.exclusions.entry(reason).or_default() += 1;
    }

    /// `last_date` is the end of follow-up (last event or deregistration).
    pub fn accept(&mut self, patient: &Patient, phen: &PhenotypeDates, example: &CohortExample, last_date: NaiveDate) {
        let s = &mut self.summary;
        s.candidates += 1;
        s.patients += 1;
        s.complication_count_histogram[phen.complication_count()] += 1;
        for c in Complication::ALL {
            if phen.complication(c).is_some() {
                *s.per_complication.entry(c).or_default() += 1;
            }
        }
        if let Some((c, d)) = phen.first_complication() {
            *s.first_complication.entry(c).or_default() += 1;
            self.ages.push(years_between(patient.birth_date, d));
        }
        let sex = match patient.sex {
            Sex::Male => "male",
            Sex::Female => "female",
            Sex::Unknown => "unknown",
        };
        *s.sex.entry(sex.to_string()).or_default() += 1;
        self.follow_up.push(years_between(example.index_date, last_date).max(0.0));
        for (&w, v) in &example.labels {
            let slot = self.positives.entry(w).or_default();
            for k in 0..N_LABELS {
                slot[k] += v[k] as usize;
            }
        }
    }

    pub fn finish(mut self) -> CohortSummary {
        let (mean, sd) = mean_sd(&self.ages);
        self.summary.age_at_first_complication_mean = mean;
        self.summary.age_at_first_complication_sd = sd;
        self.summary.follow_up_years_median = if self.follow_up.is_empty() {
            0.0
        } else {
            median(&self.follow_up)
        };
        self.summary.positives_per_window = self.positives;
        self.summary
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_date, SourceRegistry};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    fn ev(date: NaiveDate, code: &str) -> ClinicalEvent {
        ClinicalEvent {
            patient_id: "p".into(),
            date,
            system: CodeSystem::Icd10,
            code: code.into(),
            descriptor: Some(code.to_lowercase()),
            source_registry: SourceRegistry::Hospital,
        }
    }

    fn codelists() -> PhenotypeCodelists {
        let mk = |name: &str, codes: &[&str]| Codelist {
            phenotype: name.into(),
            members: codes.iter().map(|c| (CodeSystem::Icd10, c.to_string())).collect(),
        };
        PhenotypeCodelists::new(&[
            mk("t2dm", &["E11", "E11.9"]),
            mk("retinopathy", &["H36.0", "H36.1"]),
            mk("nephropathy", &["N08.3"]),
            mk("neuropathy", &["G63.2", "SHARED"]),
        ])
        .unwrap()
    }

    fn patient(birth: &str) -> Patient {
        Patient {
            id: "p".into(),
            birth_date: d(birth),
            sex: Sex::Male,
            registration_date: d(birth),
            deregistration_date: None,
        }
    }

    #[test]
    fn missing_codelist() {
        let only = [Codelist {
            phenotype: "t2dm".into(),
            members: BTreeSet::from([(CodeSystem::Icd10, "E11".to_string())]),
        }];
        assert_eq!(
            PhenotypeCodelists::new(&only).unwrap_err(),
            CohortError::MissingCodelist("nephropathy")
        );
    }

    #[test]
    fn first_retinopathy_date() {
        let events = vec![ev(d("2010-01-01"), "H36.0"), ev(d("2012-05-01"), "H36.1")];
        let phen = detect_phenotypes(&events, &codelists());
        assert_eq!(phen.retinopathy, Some(d("2010-01-01")));
        assert_eq!(phen.t2dm, None);
        let none = detect_phenotypes(&[ev(d("2010-01-01"), "Z00")], &codelists());
        assert_eq!(none, PhenotypeDates::default());
    }

    #[test]
    fn detection_matches_linear_scan() {
        let lists = codelists();
        let codes = ["E11", "E11.9", "H36.0", "H36.1", "N08.3", "G63.2", "Z00", "Z01", "Z02"];
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut events: Vec<_> = (0..200)
            .map(|_| {
                ev(
                    d("2000-01-01") + chrono::Days::new(rng.random_range(0..7000)),
                    codes[rng.random_range(0..codes.len())],
                )
            })
            .collect();
        events.sort_by_key(|e| e.date);
        let phen = detect_phenotypes(&events, &lists);
        let scan = |members: &[&str]| {
            let mut best: Option<NaiveDate> = None;
            for e in &events {
                if members.contains(&e.code.as_str()) && best.is_none_or(|b| e.date < b) {
                    best = Some(e.date);
                }
            }
            best
        };
        assert_eq!(phen.t2dm, scan(&["E11", "E11.9"]));
        assert_eq!(phen.retinopathy, scan(&["H36.0", "H36.1"]));
        assert_eq!(phen.nephropathy, scan(&["N08.3"]));
        assert_eq!(phen.neuropathy, scan(&["G63.2"]));
    }

    fn phen(t2dm: Option<&str>, ret: Option<&str>, neph: Option<&str>, neur: Option<&str>) -> PhenotypeDates {
        PhenotypeDates {
            t2dm: t2dm.map(d),
            retinopathy: ret.map(d),
            nephropathy: neph.map(d),
            neuropathy: neur.map(d),
        }
    }

    fn spread(codes: &[&str], start: &str) -> Vec<ClinicalEvent> {
        codes
            .iter()
            .enumerate()
            .map(|(i, c)| ev(d(start) + chrono::Days::new(30 * i as u64), c))
            .collect()
    }

    #[test]
    fn complication_before_t2dm_rejected() {
        let p = phen(Some("2010-01-01"), Some("2009-01-01"), None, None);
        let events = spread(&["A", "B", "C", "D"], "2005-01-01");
        assert_eq!(
            apply_inclusion(&patient("1960-01-01"), &p, &events),
            Inclusion::Rejected(ExclusionReason::ComplicationBeforeT2dm)
        );
    }

    #[test]
    fn two_distinct_codes_too_few() {
        let p = phen(Some("2010-01-01"), None, None, None);
        let events = spread(&["E11", "A", "A", "E11"], "2010-01-01");
        assert_eq!(
            apply_inclusion(&patient("1960-01-01"), &p, &events),
            Inclusion::Rejected(ExclusionReason::TooFewEvents)
        );
    }

    #[test]
    fn all_gates_pass() {
        let p = phen(Some("2010-01-01"), None, None, None);
        let events = spread(&["E11", "A", "B", "C", "D"], "2010-01-01");
        // Age 45 at the last event.
        match apply_inclusion(&patient("1965-01-01"), &p, &events) {
            Inclusion::Accepted(w) => assert_eq!(w.input_events.len(), 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gate_precedence() {
        let events = spread(&["A", "B", "C"], "2010-01-01");
        assert_eq!(
            apply_inclusion(&patient("2000-01-01"), &PhenotypeDates::default(), &events),
            Inclusion::Rejected(ExclusionReason::NoT2dm)
        );
        let p = phen(Some("2010-01-01"), None, None, None);
        assert_eq!(
            apply_inclusion(&patient("2000-01-01"), &p, &events),
            Inclusion::Rejected(ExclusionReason::Under18)
        );
        let p = phen(Some("2010-01-01"), Some("2010-01-01"), None, None);
        assert_eq!(
            apply_inclusion(&patient("1950-01-01"), &p, &events),
            Inclusion::Rejected(ExclusionReason::EmptyWindow)
        );
    }

    #[test]
    fn window_stops_before_first_complication() {
        let events = spread(&["A", "B", "H36.0"], "2010-01-01");
        let p = phen(Some("2010-01-01"), Some("2010-03-02"), None, None);
        let w = build_observation_window(&events, &p).unwrap();
        assert_eq!(w.input_events, events[..2].to_vec());
        assert_eq!(w.index_date, events[2].date);
        assert!(w.had_any_complication);
    }

    #[test]
    fn window_without_complication_is_whole_record() {
        let events = spread(&["A", "B", "C"], "2010-01-01");
        let w = build_observation_window(&events, &PhenotypeDates::default()).unwrap();
        assert_eq!(w.input_events, events);
        assert_eq!(w.index_date, events[2].date);
        assert!(!w.had_any_complication);
    }

    #[test]
    fn complication_on_first_event_date_is_empty() {
        let events = spread(&["H36.0", "B", "C"], "2010-01-01");
        let p = phen(None, Some("2010-01-01"), None, None);
        assert_eq!(build_observation_window(&events, &p), Err(CohortError::EmptyWindow));
    }

    #[test]
    fn labels_example() {
        let p = phen(Some("2005-01-01"), Some("2010-06-01"), Some("2013-01-01"), None);
        let labels = assign_labels(&p, d("2010-06-01"), &[1, 5, 10]);
        assert_eq!(labels[&1], [0, 1, 0]);
        assert_eq!(labels[&5], [1, 1, 0]);
        assert_eq!(labels[&10], [1, 1, 0]);
        let none = assign_labels(&PhenotypeDates::default(), d("2010-06-01"), &[1, 5, 10]);
        assert!(none.values().all(|v| *v == [0, 0, 0]));
    }

    #[test]
    fn leap_day_clamps() {
        assert_eq!(add_years(d("2012-02-29"), 1), d("2013-02-28"));
        assert_eq!(add_years(d("2012-02-29"), 4), d("2016-02-29"));
    }

    /// Independent date arithmetic: bump the year and clamp Feb 29.
    fn oracle_end(index: NaiveDate, w: u32) -> NaiveDate {
        use chrono::Datelike;
        let y = index.year() + w as i32;
        NaiveDate::from_ymd_opt(y, index.month(), index.day())
            .unwrap_or_else(|| NaiveDate::from_ymd_opt(y, 2, 28).unwrap())
    }

    #[test]
    fn labels_match_date_oracle_and_nest() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let base = d("2000-01-01");
        for _ in 0..1000 {
            let mut p = PhenotypeDates {
                t2dm: Some(base),
                ..Default::default()
            };
            for c in Complication::ALL {
                if rng.random_bool(0.6) {
                    p.set_complication(c, Some(base + chrono::Days::new(rng.random_range(0..8000))));
                }
            }
            let index = p.first_complication().map_or(base + chrono::Days::new(5000), |x| x.1);
            let labels = assign_labels(&p, index, &[1, 5, 10]);
            for w in [1, 5, 10] {
                for c in Complication::ALL {
                    let expected = p.complication(c).is_some_and(|dc| dc >= index && dc <= oracle_end(index, w));
                    assert_eq!(labels[&w][c.index()] == 1, expected);
                }
            }
            for ((a, b), c) in labels[&1].iter().zip(&labels[&5]).zip(&labels[&10]) {
                assert!(a <= b && b <= c);
            }
        }
    }

    fn example(id: usize, label: LabelVector) -> CohortExample {
        CohortExample {
            patient_id: format!("p{id:05}"),
            input_events: vec![],
            index_date: d("2010-01-01"),
            labels: BTreeMap::from([(5, label)]),
            had_any_complication: label != [0, 0, 0],
        }
    }

    fn count_by_label(split: &[String], examples: &[CohortExample]) -> BTreeMap<LabelVector, usize> {
        let by_id: HashMap<_, _> = examples.iter().map(|e| (e.patient_id.clone(), e.label(5))).collect();
        let mut out = BTreeMap::new();
        for id in split {
            *out.entry(by_id[id]).or_default() += 1;
        }
        out
    }

    #[test]
    fn two_strata_forty_five_five() {
        let examples: Vec<_> = (0..100)
            .map(|i| example(i, if i < 50 { [0, 1, 0] } else { [0, 0, 0] }))
            .collect();
        let s = stratified_split(&examples, DEFAULT_RATIOS, 5, 1).unwrap();
        for (part, want) in [(&s.train, 40), (&s.validation, 5), (&s.test, 5)] {
            let counts = count_by_label(part, &examples);
            assert_eq!(counts[&[0, 1, 0]], want);
            assert_eq!(counts[&[0, 0, 0]], want);
        }
    }

    #[test]
    fn one_stratum_eighty_ten_ten() {
        let examples: Vec<_> = (0..100).map(|i| example(i, [1, 0, 0])).collect();
        let s = stratified_split(&examples, DEFAULT_RATIOS, 5, 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (80, 10, 10));
    }

    #[test]
    fn bad_ratios_and_tiny_input() {
        let examples: Vec<_> = (0..20).map(|i| example(i, [0, 0, 0])).collect();
        assert!(matches!(
            stratified_split(&examples, [0.8, 0.1, 0.2], 5, 1),
            Err(CohortError::InvalidRatios(_))
        ));
        assert_eq!(
            stratified_split(&examples[..9], DEFAULT_RATIOS, 5, 1),
            Err(CohortError::TooFewExamples(9))
        );
    }

    #[test]
    fn positive_rates_preserved_on_large_cohort() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let examples: Vec<_> = (0..10_000)
            .map(|i| {
                let label = [rng.random_bool(0.15), rng.random_bool(0.25), rng.random_bool(0.06)].map(u8::from);
                example(i, label)
            })
            .collect();
        let s = stratified_split(&examples, DEFAULT_RATIOS, 5, 8).unwrap();
        let by_id: HashMap<_, _> = examples.iter().map(|e| (e.patient_id.clone(), e.label(5))).collect();
        let rate = |ids: &[String], k: usize| ids.iter().map(|i| by_id[i][k] as f64).sum::<f64>() / ids.len() as f64;
        let all: Vec<String> = by_id.keys().cloned().collect();
        for k in 0..3 {
            let global = rate(&all, k);
            for part in [&s.train, &s.validation, &s.test] {
                assert!((rate(part, k) - global).abs() <= 0.02, "class {k}");
            }
        }
    }

    proptest! {
        #[test]
        fn split_partitions(
            labels in proptest::collection::vec((0u8..2, 0u8..2, 0u8..2), 10..300),
            seed in any::<u64>(),
        ) {
            let examples: Vec<_> = labels.iter().enumerate().map(|(i, &(a, b, c))| example(i, [a, b, c])).collect();
            let s = stratified_split(&examples, DEFAULT_RATIOS, 5, seed).unwrap();
            let mut all: Vec<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
            prop_assert_eq!(all.len(), examples.len());
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), examples.len());

            let mut strata: BTreeMap<LabelVector, usize> = BTreeMap::new();
            for e in &examples {
                *strata.entry(e.label(5)).or_default() += 1;
            }
            let small: usize = strata.values().filter(|&&n| n < 3).sum();
            let n = examples.len() as f64;
            let slack = 1.0 + small as f64;
            prop_assert!((s.train.len() as f64 - 0.8 * n).abs() <= slack);
            prop_assert!((s.validation.len() as f64 - 0.1 * n).abs() <= slack);
            prop_assert!((s.test.len() as f64 - 0.1 * n).abs() <= slack);
            if small == 0 {
                prop_assert!((s.train.len() as f64 - 0.8 * n).abs() <= 1.0);
            }
        }
    }
}
