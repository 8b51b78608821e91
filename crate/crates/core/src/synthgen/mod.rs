//! Synthetic patients, events and phenotype ground truth with tunable
//! predictive signal.
//!
//! Every patient draws from its own ChaCha stream `(seed, index + 1)`; the
//! terminology is drawn from `vocab_spec.seed`. Output is therefore
//! independent of generation order and reproducible from the config alone.

mod calibrate;
mod vocab;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson, Zipf};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use calibrate::{calibrate_lengths, observation_corpus, Calibration, MAX_CALIBRATION_STEPS};
pub use vocab::{complication_codes, family_word, phenotype_codelists, t2dm_codes, CodeEntry};

use crate::cohort::PhenotypeDates;
use crate::ingest::{
    default_date_ceiling, write_events_csv, write_patients_csv, ClinicalEvent, IngestError, Patient, RawEvent, Sex,
};
use crate::labels::Complication;
use crate::ontology::{write_codelists, CodeSystem, Codelist, VocabEntry, VocabMap};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("calibration did not converge after {steps} steps (last median {median:.1}, target {target:.1})")]
    CalibrationFailed { steps: usize, median: f64, target: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Sequence(#[from] crate::sequence::SequenceError),
}

/// Where signal codes fall inside the observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Placement {
    /// First 10% of the window.
    Early,
    /// Last 10% of the window.
    Late,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DescriptorStyle {
    /// Signal descriptors share a word with their complication's descriptors.
    SharedWords,
    DisjointWords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub complication: Complication,
    /// SNOMED CT code emitted as the signal.
    pub code: String,
    /// Rate multiplier for patients who develop `complication`.
    pub lift: f64,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabSpec {
    pub snomed_ct: usize,
    pub icd10: usize,
    pub bnf: usize,
    pub opcs4: usize,
    /// Distinct pseudo-words available to descriptors.
    pub word_pool: usize,
    /// Exponent of the code-frequency Zipf law.
    pub zipf_exponent: f64,
    /// Seeds the terminology only, so cohorts drawn with different patient
    /// seeds share one set of codes and descriptors.
    pub seed: u64,
}

impl Default for VocabSpec {
    fn default() -> Self {
        VocabSpec {
            snomed_ct: 2500,
            icd10: 800,
            bnf: 1200,
            opcs4: 400,
            word_pool: 2000,
            zipf_exponent: 1.1,
            seed: 0,
        }
    }
}

impl VocabSpec {
    pub fn systems(&self) -> Vec<(CodeSystem, usize)> {
        vec![
            (CodeSystem::SnomedCt, self.snomed_ct),
            (CodeSystem::Icd10, self.icd10),
            (CodeSystem::Bnf, self.bnf),
            (CodeSystem::Opcs4, self.opcs4),
        ]
    }

    pub fn total(&self) -> usize {
        self.snomed_ct + self.icd10 + self.bnf + self.opcs4
    }
}

/// Patients with 0, 1, 2 and 3 complications: 88,964 / 33,161 / 9,282 / 2,377 of 133,784.
pub const TABLE1_COMPLICATION_COUNTS: [f64; 4] = [88_964.0, 33_161.0, 9_282.0, 2_377.0];
pub const TABLE1_PATIENTS: f64 = 133_784.0;
pub const TABLE1_MALE: f64 = 72_012.0;
/// Share of first complications: retinopathy, nephropathy, neuropathy (sums to 1.0001).
pub const FIRST_COMPLICATION_SHARES: [f64; 3] = [0.6019, 0.3015, 0.0967];
/// Order of [`GeneratorConfig::first_complication_mix`].
pub const MIX_ORDER: [Complication; 3] = [Complication::Retinopathy, Complication::Nephropathy, Complication::Neuropathy];

const PROB_TOL: f64 = 1e-9;
const FIRST_INDEX_YEAR: i32 = 2005;
const LAST_COMPLICATION_INDEX_YEAR: i32 = 2016;
const EARLIEST_ALLOWED_YEAR: i32 = 1985;
const MAX_FOLLOW_UP_YEARS: f64 = 12.0;
const TRIVIAL_DELAY_DAYS: i64 = 300;
const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    /// P(0), P(1), P(2), P(3 complications).
    pub complication_count_probs: [f64; 4],
    /// Retinopathy, nephropathy, neuropathy.
    pub first_complication_mix: [f64; 3],
    pub mean_events_per_year: f64,
    /// Log-scale spread of the per-patient activity multiplier (mean 1).
    pub activity_sigma: f64,
    /// Observation length before the index date, uniform on `[min, max]` years.
    pub observation_years: [f64; 2],
    pub vocab_spec: VocabSpec,
    pub signal_spec: Vec<SignalSpec>,
    /// Expected emissions per signal code for a patient without the linked complication.
    pub signal_base_rate: f64,
    pub descriptor_style: DescriptorStyle,
    /// One deterministic marker per developed complication instead of rate-lifted signal.
    pub trivial_mode: bool,
    /// Probability that a background event is written twice.
    pub duplicate_rate: f64,
    pub male_fraction: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_range: [f64; 2],
    pub seed: u64,
}

fn default_signals() -> Vec<SignalSpec> {
    let codes: [(Complication, [&str; 3]); 3] = [
        (Complication::Retinopathy, ["419284006", "271737000", "39021009"]),
        (Complication::Nephropathy, ["390922001", "24700007", "445130007"]),
        (Complication::Neuropathy, ["162107008", "86032002", "301906008"]),
    ];
    codes
        .into_iter()
        .flat_map(|(c, list)| {
            list.into_iter().map(move |code| SignalSpec {
                complication: c,
                code: code.to_string(),
                lift: 4.0,
                placement: Placement::Late,
            })
        })
        .collect()
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let mix_total: f64 = FIRST_COMPLICATION_SHARES.iter().sum();
        GeneratorConfig {
            n_patients: 1000,
            complication_count_probs: TABLE1_COMPLICATION_COUNTS.map(|c| c / TABLE1_PATIENTS),
            first_complication_mix: FIRST_COMPLICATION_SHARES.map(|s| s / mix_total),
            mean_events_per_year: 85.0,
            activity_sigma: 1.4,
            observation_years: [5.0, 20.0],
            vocab_spec: VocabSpec::default(),
            signal_spec: default_signals(),
            signal_base_rate: 0.5,
            descriptor_style: DescriptorStyle::SharedWords,
            trivial_mode: false,
            duplicate_rate: 0.0,
            male_fraction: TABLE1_MALE / TABLE1_PATIENTS,
            age_mean: 63.06,
            age_sd: 14.73,
            age_range: [25.0, 100.0],
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_patients == 0 {
            return bad("n_patients must be at least 1".into());
        }
        for (name, probs) in [
            ("complication_count_probs", &self.complication_count_probs[..]),
            ("first_complication_mix", &self.first_complication_mix[..]),
        ] {
            if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
                return bad(format!("{name} must be probabilities summing to 1"));
            }
        }
        if !(self.mean_events_per_year >= 0.0 && self.mean_events_per_year.is_finite()) {
            return bad("mean_events_per_year must be non-negative".into());
        }
        if !(self.activity_sigma >= 0.0 && self.activity_sigma.is_finite()) {
            return bad("activity_sigma must be non-negative".into());
        }
        let [lo, hi] = self.observation_years;
        let max_years = (FIRST_INDEX_YEAR - EARLIEST_ALLOWED_YEAR) as f64;
        if !(lo >= 0.5 && lo <= hi && hi <= max_years) {
            return bad(format!("observation_years must satisfy 0.5 <= min <= max <= {max_years}"));
        }
        if self.vocab_spec.total() == 0 || self.vocab_spec.word_pool < 10 || self.vocab_spec.zipf_exponent <= 0.0 {
            return bad("vocab_spec needs codes, at least 10 words and a positive exponent".into());
        }
        let mut codes = std::collections::HashSet::new();
        for s in &self.signal_spec {
            if !(s.lift > 0.0 && s.lift.is_finite()) || s.code.trim().is_empty() || !codes.insert(s.code.as_str()) {
                return bad(format!("bad signal entry {s:?}"));
            }
            let reserved = t2dm_codes()
                .into_iter()
                .chain(Complication::ALL.into_iter().flat_map(complication_codes))
                .any(|e| e.system == CodeSystem::SnomedCt && e.code == s.code);
            if reserved {
                return bad(format!("signal code {} is a phenotype code", s.code));
            }
        }
        if !(self.signal_base_rate >= 0.0 && self.signal_base_rate.is_finite()) {
            return bad("signal_base_rate must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) || !(0.0..=1.0).contains(&self.male_fraction) {
            return bad("duplicate_rate and male_fraction must lie in [0, 1]".into());
        }
        let [amin, amax] = self.age_range;
        if !(18.0 < amin && amin < amax && self.age_sd > 0.0 && (amin..=amax).contains(&self.age_mean)) {
            return bad("age range must exceed 18 and contain the mean".into());
        }
        Ok(())
    }

    /// SHA-256 of the JSON form, identifying the generator settings.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// What the generator decided for one patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub patient_id: String,
    #[serde(flatten)]
    pub phenotypes: PhenotypeDates,
    pub complication_count: usize,
    pub first_complication: Option<Complication>,
    pub index_date: NaiveDate,
    pub registration_date: NaiveDate,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub config_hash: String,
    pub seed: u64,
    pub patients: Vec<Patient>,
    /// Grouped by patient in patient order, chronological within a patient.
    pub events: Vec<ClinicalEvent>,
    pub truth: Vec<GroundTruth>,
    pub vocab: VocabMap,
    pub codelists: Vec<Codelist>,
}

impl SyntheticCohort {
    /// Writes `patients.csv`, `events.csv`, `vocab.tsv`, `codelists.tsv`
    /// and `truth.ndjson`, creating `dir` if needed.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir)?;
        let create = |name: &str| -> std::io::Result<BufWriter<File>> { Ok(BufWriter::new(File::create(dir.join(name))?)) };
        write_patients_csv(create("patients.csv")?, &self.patients)?;
        let raw: Vec<RawEvent> = self.events.iter().cloned().map(RawEvent::from).collect();
        write_events_csv(create("events.csv")?, &raw)?;
        let mut v = create("vocab.tsv")?;
        self.vocab.write_tsv(&mut v)?;
        v.flush()?;
        let mut c = create("codelists.tsv")?;
        write_codelists(&self.codelists, &mut c)?;
        c.flush()?;
        let mut t = create("truth.ndjson")?;
        for row in &self.truth {
            serde_json::to_writer(&mut t, row).map_err(std::io::Error::other)?;
            t.write_all(b"\n")?;
        }
        t.flush()?;
        Ok(())
    }

    /// Events of patient `i`, relying on patient-grouped order.
    pub fn events_by_patient(&self) -> Vec<&[ClinicalEvent]> {
        let mut out = Vec::with_capacity(self.patients.len());
        let mut start = 0;
        for p in &self.patients {
            let end = start + self.events[start..].iter().take_while(|e| e.patient_id == p.id).count();
            out.push(&self.events[start..end]);
            start = end;
        }
        out
    }
}

fn day_number(d: NaiveDate) -> i64 {
    use chrono::Datelike;
    d.num_days_from_ce() as i64
}

fn from_day_number(n: i64) -> NaiveDate {
    NaiveDate::from_num_days_from_ce_opt(n as i32).expect("date in range")
}

fn ymd(y: i32, m: u32, d: u32) -> i64 {
    day_number(NaiveDate::from_ymd_opt(y, m, d).expect("valid date"))
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("finite positive rate").sample(rng) as usize
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("positive sd");
    loop {
        let x = dist.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

/// Inclusive day range `[lo, hi]`.
fn day_in(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> i64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

struct Emitter<'a> {
    id: &'a str,
    events: Vec<ClinicalEvent>,
}

impl Emitter<'_> {
    fn push(&mut self, day: i64, entry: &CodeEntry) {
        self.events.push(ClinicalEvent {
            patient_id: self.id.to_string(),
            date: from_day_number(day),
            system: entry.system.clone(),
            code: entry.code.clone(),
            descriptor: Some(entry.descriptor.clone()),
            source_registry: entry.registry(),
        });
    }
}

struct Shared<'a> {
    config: &'a GeneratorConfig,
    term: &'a vocab::Terminology,
    zipf: Zipf<f64>,
    activity: LogNormal<f64>,
    id_width: usize,
}

fn generate_patient(sh: &Shared<'_>, index: usize) -> (Patient, Vec<ClinicalEvent>, GroundTruth) {
    let cfg = sh.config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let id = format!("P{:0width$}", index + 1, width = sh.id_width);

    let sex = if rng.random_bool(cfg.male_fraction) { Sex::Male } else { Sex::Female };
    let k = categorical(&mut rng, &cfg.complication_count_probs);
    let mut developed: Vec<Complication> = Vec::new();
    if k > 0 {
        let first = MIX_ORDER[categorical(&mut rng, &cfg.first_complication_mix)];
        developed.push(first);
        let mut rest: Vec<Complication> = Complication::ALL.into_iter().filter(|&c| c != first).collect();
        while developed.len() < k {
            let pick = rng.random_range(0..rest.len());
            developed.push(rest.remove(pick));
        }
    }
    let age = truncated_normal(&mut rng, cfg.age_mean, cfg.age_sd, cfg.age_range[0], cfg.age_range[1]);
    let obs_years = rng.random_range(cfg.observation_years[0]..=cfg.observation_years[1]);
    let obs_days = (obs_years * DAYS_PER_YEAR).round() as i64;
    let ceiling = day_number(default_date_ceiling());
    let last_index = if k > 0 { ymd(LAST_COMPLICATION_INDEX_YEAR, 12, 31) } else { ceiling };
    let index = day_in(&mut rng, ymd(FIRST_INDEX_YEAR, 1, 1), last_index);
    let registration = index - obs_days;
    let birth = index - (age * DAYS_PER_YEAR).round() as i64;
    let t2dm = day_in(&mut rng, registration, index - 30);

    // complication dates
    let mut phen = PhenotypeDates {
        t2dm: Some(from_day_number(t2dm)),
        ..PhenotypeDates::default()
    };
    let follow_up_end = if k > 0 {
        (index + (MAX_FOLLOW_UP_YEARS * DAYS_PER_YEAR) as i64).min(ceiling)
    } else {
        index
    };
    let mut complication_days: Vec<(Complication, i64)> = Vec::new();
    for (i, &c) in developed.iter().enumerate() {
        let day = if i == 0 {
            index
        } else if cfg.trivial_mode {
            index + day_in(&mut rng, 1, TRIVIAL_DELAY_DAYS.min(follow_up_end - index).max(1))
        } else {
            let span = (follow_up_end - index - 1).max(0) as f64;
            let u: f64 = rng.random();
            index + 1 + (u * u * span).floor() as i64
        };
        phen.set_complication(c, Some(from_day_number(day)));
        complication_days.push((c, day));
    }
    let deregistration = if k > 0 {
        (follow_up_end < ceiling).then_some(follow_up_end)
    } else if rng.random_bool(0.5) && index + 365 <= ceiling {
        Some(index + day_in(&mut rng, 1, 365))
    } else {
        None
    };

    let mut em = Emitter { id: &id, events: Vec::new() };
    // input window: [registration, index) with complications, [registration, index] without
    let window_end = if k > 0 { index - 1 } else { index };

    let t2dm_code = sh.term.t2dm.choose(&mut rng).expect("t2dm codes");
    em.push(t2dm, t2dm_code);
    for _ in 0..poisson(&mut rng, 2.0) {
        let code = sh.term.t2dm.choose(&mut rng).expect("t2dm codes");
        em.push(day_in(&mut rng, t2dm, window_end), code);
    }

    let activity = sh.activity.sample(&mut rng);
    let n_background = poisson(&mut rng, cfg.mean_events_per_year * activity * obs_years);
    let n_codes = sh.term.background.len();
    for _ in 0..n_background {
        let rank = (sh.zipf.sample(&mut rng) as usize).clamp(1, n_codes) - 1;
        let entry = &sh.term.background[rank];
        let day = day_in(&mut rng, registration, window_end);
        em.push(day, entry);
        if cfg.duplicate_rate > 0.0 && rng.random_bool(cfg.duplicate_rate) {
            em.push(day, entry);
        }
    }
    if k == 0 {
        // the last recorded event defines the index date
        let rank = (sh.zipf.sample(&mut rng) as usize).clamp(1, n_codes) - 1;
        em.push(index, &sh.term.background[rank]);
    }

    let window_len = (window_end - registration) as f64;
    let place = |rng: &mut ChaCha8Rng, p: Placement| -> i64 {
        let (a, b) = match p {
            Placement::Early => (0.0, 0.1),
            Placement::Late => (0.9, 1.0),
            Placement::Uniform => (0.0, 1.0),
        };
        let lo = registration + (a * window_len).ceil() as i64;
        let hi = registration + (b * window_len).floor() as i64;
        day_in(rng, lo, hi.min(window_end))
    };
    let mut marked = Vec::new();
    for (spec, entry) in cfg.signal_spec.iter().zip(&sh.term.signals) {
        let develops = developed.contains(&spec.complication);
        let count = if cfg.trivial_mode {
            let first_for_class = !marked.contains(&spec.complication);
            marked.push(spec.complication);
            usize::from(develops && first_for_class)
        } else {
            let lift = if develops { spec.lift } else { 1.0 };
            poisson(&mut rng, cfg.signal_base_rate * lift)
        };
        for _ in 0..count {
            let day = place(&mut rng, spec.placement);
            em.push(day, entry);
        }
    }

    for &(c, day) in &complication_days {
        let codes = &sh.term.complications[c.index()];
        em.push(day, codes.choose(&mut rng).expect("complication codes"));
        for _ in 0..poisson(&mut rng, 1.0) {
            em.push(day_in(&mut rng, day, follow_up_end), codes.choose(&mut rng).expect("complication codes"));
        }
    }

    let mut events = em.events;
    events.sort_by_key(|e| e.date);
    let patient = Patient {
        id: id.clone(),
        birth_date: from_day_number(birth),
        sex,
        registration_date: from_day_number(registration),
        deregistration_date: deregistration.map(from_day_number),
    };
    let truth = GroundTruth {
        patient_id: id,
        phenotypes: phen,
        complication_count: k,
        first_complication: developed.first().copied(),
        index_date: from_day_number(index),
        registration_date: from_day_number(registration),
    };
    (patient, events, truth)
}

/// Draws a full synthetic cohort.
pub fn generate(config: &GeneratorConfig) -> Result<SyntheticCohort, SynthError> {
    config.validate()?;
    let mut term_rng = ChaCha8Rng::seed_from_u64(config.vocab_spec.seed);
    let term = vocab::build_terminology(config, &mut term_rng);
    let shared = Shared {
        config,
        term: &term,
        zipf: Zipf::new(term.background.len() as f64, config.vocab_spec.zipf_exponent)
            .map_err(|e| SynthError::InvalidConfig(format!("zipf: {e}")))?,
        activity: LogNormal::new(-0.5 * config.activity_sigma.powi(2), config.activity_sigma)
            .map_err(|e| SynthError::InvalidConfig(format!("activity: {e}")))?,
        id_width: config.n_patients.to_string().len().max(6),
    };
    let mut patients = Vec::with_capacity(config.n_patients);
    let mut events = Vec::new();
    let mut truth = Vec::with_capacity(config.n_patients);
    for i in 0..config.n_patients {
        let (p, ev, t) = generate_patient(&shared, i);
        patients.push(p);
        events.extend(ev);
        truth.push(t);
    }

    let mut vocab = VocabMap::default();
    let all = term
        .background
        .iter()
        .chain(&term.signals)
        .chain(&term.t2dm)
        .chain(term.complications.iter().flatten());
    for e in all {
        vocab
            .insert(VocabEntry {
                system: e.system.clone(),
                code: e.code.clone(),
                descriptor: e.descriptor.clone(),
            })
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    }
    Ok(SyntheticCohort {
        config_hash: config.hash(),
        seed: config.seed,
        patients,
        events,
        truth,
        vocab,
        codelists: phenotype_codelists(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{detect_phenotypes, PhenotypeCodelists};

    fn small(n: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_patients: n,
            mean_events_per_year: 3.0,
            activity_sigma: 0.5,
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn defaults_follow_table_one() {
        let c = GeneratorConfig::default();
        let expected = [0.665, 0.248, 0.069, 0.018];
        for (p, e) in c.complication_count_probs.iter().zip(expected) {
            assert!((p - e).abs() < 0.0005, "{p} vs {e}");
        }
        assert!((c.first_complication_mix.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((c.first_complication_mix[0] - 0.6019).abs() < 1e-4);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small(10, 0);
        c.first_complication_mix = FIRST_COMPLICATION_SHARES;
        assert!(matches!(generate(&c), Err(SynthError::InvalidConfig(_))));
        let mut c = small(10, 0);
        c.n_patients = 0;
        assert!(c.validate().is_err());
        let mut c = small(10, 0);
        c.signal_spec[0].code = "4855003".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_patient_within_registration_bounds() {
        let c = generate(&small(1, 3)).unwrap();
        assert_eq!(c.patients.len(), 1);
        let p = &c.patients[0];
        assert!(p.is_valid());
        assert!(!c.events.is_empty());
        for e in &c.events {
            assert!(e.date >= p.registration_date && e.date >= p.birth_date);
            assert!(p.deregistration_date.is_none_or(|d| e.date <= d));
            assert!(e.date <= default_date_ceiling());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&small(50, 9)).unwrap();
        let b = generate(&small(50, 9)).unwrap();
        assert_eq!(a.patients, b.patients);
        assert_eq!(a.events, b.events);
        assert_eq!(a.truth, b.truth);
        let c = generate(&small(50, 10)).unwrap();
        assert_ne!(a.events, c.events);
        assert_eq!(a.vocab, c.vocab);
    }

    #[test]
    fn patient_streams_do_not_depend_on_cohort_size() {
        let a = generate(&small(20, 4)).unwrap();
        let b = generate(&small(40, 4)).unwrap();
        let ids = |c: &SyntheticCohort| c.truth.iter().take(20).map(|t| t.phenotypes).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn detection_reproduces_ground_truth() {
        let c = generate(&small(500, 1)).unwrap();
        let lists = PhenotypeCodelists::new(&c.codelists).unwrap();
        for (truth, events) in c.truth.iter().zip(c.events_by_patient()) {
            assert_eq!(detect_phenotypes(events, &lists), truth.phenotypes);
            assert_eq!(truth.phenotypes.complication_count(), truth.complication_count);
            assert_eq!(truth.phenotypes.first_complication().map(|x| x.0), truth.first_complication);
        }
    }

    #[test]
    fn late_signal_sits_at_end_of_window() {
        let c = generate(&small(1000, 2)).unwrap();
        let codes: Vec<String> = GeneratorConfig::default().signal_spec.into_iter().map(|s| s.code).collect();
        let mut positions = Vec::new();
        for (t, events) in c.truth.iter().zip(c.events_by_patient()) {
            let start = day_number(t.registration_date) as f64;
            let end = day_number(t.index_date) as f64;
            for e in events.iter().filter(|e| codes.contains(&e.code)) {
                positions.push((day_number(e.date) as f64 - start) / (end - start));
            }
        }
        assert!(positions.len() > 500);
        let mean = positions.iter().sum::<f64>() / positions.len() as f64;
        assert!(mean > 0.8, "{mean}");
    }

    #[test]
    fn trivial_mode_marks_each_developed_complication_once() {
        let mut cfg = small(300, 5);
        cfg.trivial_mode = true;
        let c = generate(&cfg).unwrap();
        let markers: Vec<(Complication, String)> = Complication::ALL
            .iter()
            .map(|&comp| (comp, cfg.signal_spec.iter().find(|s| s.complication == comp).unwrap().code.clone()))
            .collect();
        for (t, events) in c.truth.iter().zip(c.events_by_patient()) {
            for (comp, code) in &markers {
                let n = events.iter().filter(|e| &e.code == code).count();
                let develops = t.phenotypes.complication(*comp).is_some();
                assert_eq!(n, usize::from(develops));
                if develops {
                    let d = t.phenotypes.complication(*comp).unwrap();
                    assert!(d <= crate::cohort::add_years(t.index_date, 1));
                }
            }
        }
    }

    #[test]
    fn duplicates_injected_at_requested_rate() {
        let mut cfg = small(200, 6);
        cfg.duplicate_rate = 0.2;
        let c = generate(&cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        let dups = c.events.iter().filter(|e| !seen.insert((*e).clone())).count();
        assert!(dups > 0);
        // truth is unaffected by duplication
        let base = generate(&small(200, 6)).unwrap();
        assert_eq!(base.truth.len(), c.truth.len());
    }

    #[test]
    fn files_round_trip_through_ingest() {
        let dir = std::env::temp_dir().join(format!("ehrseq-synth-{}", std::process::id()));
        let c = generate(&small(30, 8)).unwrap();
        c.write_to_dir(&dir).unwrap();
        let parsed = crate::ingest::parse_events(
            File::open(dir.join("events.csv")).unwrap(),
            crate::ingest::EventFormat::Csv,
        )
        .unwrap();
        assert_eq!(parsed.malformed, 0);
        assert_eq!(parsed.events.len(), c.events.len());
        let pats = crate::ingest::parse_patients(File::open(dir.join("patients.csv")).unwrap()).unwrap();
        assert_eq!(pats.patients, c.patients);
        let vocab = crate::ontology::load_vocab(std::io::BufReader::new(File::open(dir.join("vocab.tsv")).unwrap())).unwrap();
        assert_eq!(vocab.map.len(), c.vocab.len());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
