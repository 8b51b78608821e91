//! Patient and event file parsing plus record cleaning.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::{normalize_descriptor, CodeSystem, VocabMap};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable stream: {0}")]
    UnreadableStream(String),
    #[error("schema mismatch: required column {0:?} is absent")]
    SchemaMismatch(String),
    #[error("event for patient {found:?} passed to cleaning of patient {expected:?}")]
    PatientMismatch { expected: String, found: String },
}

impl From<std::io::Error> for IngestError {
    fn from(e: std::io::Error) -> Self {
        IngestError::UnreadableStream(e.to_string())
    }
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        IngestError::UnreadableStream(e.to_string())
    }
}

pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).ok()
}

pub fn default_date_floor() -> NaiveDate {
    NaiveDate::from_ymd_opt(1985, 1, 1).unwrap()
}

pub fn default_date_ceiling() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 12, 31).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

impl FromStr for Sex {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MALE" | "M" => Ok(Sex::Male),
            "FEMALE" | "F" => Ok(Sex::Female),
            "UNKNOWN" | "U" | "" => Ok(Sex::Unknown),
            _ => Err(()),
        }
    }
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "MALE",
            Sex::Female => "FEMALE",
            Sex::Unknown => "UNKNOWN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceRegistry {
    PrimaryCare,
    Hospital,
    Other,
}

impl FromStr for SourceRegistry {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PRIMARY_CARE" => Ok(SourceRegistry::PrimaryCare),
            "HOSPITAL" => Ok(SourceRegistry::Hospital),
            "OTHER" | "" => Ok(SourceRegistry::Other),
            _ => Err(()),
        }
    }
}

impl SourceRegistry {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceRegistry::PrimaryCare => "PRIMARY_CARE",
            SourceRegistry::Hospital => "HOSPITAL",
            SourceRegistry::Other => "OTHER",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    pub birth_date: NaiveDate,
    pub sex: Sex,
    pub registration_date: NaiveDate,
    pub deregistration_date: Option<NaiveDate>,
}

impl Patient {
    pub fn is_valid(&self) -> bool {
        !self.id.is_empty()
            && self.registration_date >= self.birth_date
            && self
                .deregistration_date
                .is_none_or(|d| d >= self.registration_date)
    }
}

/// An event as read from disk: the date and descriptor may be missing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawEvent {
    pub patient_id: String,
    pub date: Option<NaiveDate>,
    pub system: CodeSystem,
    pub code: String,
    pub descriptor: Option<String>,
    pub source_registry: SourceRegistry,
}

/// A cleaned event: dated, coded and described.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClinicalEvent {
    pub patient_id: String,
    pub date: NaiveDate,
    pub system: CodeSystem,
    pub code: String,
    pub descriptor: Option<String>,
    pub source_registry: SourceRegistry,
}

impl From<ClinicalEvent> for RawEvent {
    fn from(e: ClinicalEvent) -> Self {
        RawEvent {
            patient_id: e.patient_id,
            date: Some(e.date),
            system: e.system,
            code: e.code,
            descriptor: e.descriptor,
            source_registry: e.source_registry,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    Ndjson,
}

impl EventFormat {
    /// `.ndjson`/`.jsonl` select NDJSON; everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ndjson") | Some("jsonl") => EventFormat::Ndjson,
            _ => EventFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedEvents {
    pub events: Vec<RawEvent>,
    pub malformed: usize,
}

const EVENT_COLUMNS: [&str; 6] = [
    "patient_id",
    "date",
    "system",
    "code",
    "descriptor",
    "source_registry",
];

const PATIENT_COLUMNS: [&str; 5] = [
    "patient_id",
    "birth_date",
    "sex",
    "registration_date",
    "deregistration_date",
];

fn column_indices(headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>, IngestError> {
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| IngestError::SchemaMismatch(name.to_string()))
        })
        .collect()
}

fn event_from_fields(f: [&str; 6]) -> Option<RawEvent> {
    let [patient_id, date, system, code, descriptor, registry] = f;
    let patient_id = patient_id.trim();
    if patient_id.is_empty() {
        return None;
    }
    let date = match date.trim() {
        "" => None,
        d => Some(parse_date(d)?),
    };
    let descriptor = normalize_descriptor(descriptor);
    Some(RawEvent {
        patient_id: patient_id.to_string(),
        date,
        system: system.parse().ok()?,
        code: code.trim().to_string(),
        descriptor: (!descriptor.is_empty()).then_some(descriptor),
        source_registry: registry.parse().ok()?,
    })
}

#[derive(Deserialize)]
struct EventJson {
    patient_id: Option<String>,
    date: Option<String>,
    system: Option<String>,
    code: Option<String>,
    descriptor: Option<String>,
    source_registry: Option<String>,
}

/// Parses an events stream. Unparseable records are counted, not fatal.
pub fn parse_events<R: Read>(reader: R, format: EventFormat) -> Result<ParsedEvents, IngestError> {
    let mut events = Vec::new();
    let mut malformed = 0;
    match format {
        EventFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
            let idx = column_indices(rdr.headers()?, &EVENT_COLUMNS)?;
            for record in rdr.records() {
                let record = record?;
                let field = |i: usize| record.get(idx[i]);
                let fields = (0..6).map(field).collect::<Option<Vec<_>>>();
                match fields.and_then(|f| event_from_fields([f[0], f[1], f[2], f[3], f[4], f[5]])) {
                    Some(e) => events.push(e),
                    None => malformed += 1,
                }
            }
        }
        EventFormat::Ndjson => {
            for line in std::io::BufReader::new(reader).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<EventJson>(&line).ok().and_then(|j| {
                    event_from_fields([
                        j.patient_id.as_deref()?,
                        j.date.as_deref().unwrap_or(""),
                        j.system.as_deref()?,
                        j.code.as_deref()?,
                        j.descriptor.as_deref().unwrap_or(""),
                        j.source_registry.as_deref().unwrap_or(""),
                    ])
                });
                match parsed {
                    Some(e) => events.push(e),
                    None => malformed += 1,
                }
            }
        }
    }
    Ok(ParsedEvents { events, malformed })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPatients {
    pub patients: Vec<Patient>,
    pub malformed: usize,
}

/// Parses a patients CSV. Rows with bad dates or inconsistent registration
/// periods are counted as malformed.
pub fn parse_patients<R: Read>(reader: R) -> Result<ParsedPatients, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let idx = column_indices(rdr.headers()?, &PATIENT_COLUMNS)?;
    let mut patients = Vec::new();
    let mut malformed = 0;
    for record in rdr.records() {
        let record = record?;
        let get = |i: usize| record.get(idx[i]).unwrap_or("").trim();
        let patient = (|| {
            let dereg = match get(4) {
                "" => None,
                d => Some(parse_date(d)?),
            };
            let p = Patient {
                id: get(0).to_string(),
                birth_date: parse_date(get(1))?,
                sex: get(2).parse().ok()?,
                registration_date: parse_date(get(3))?,
                deregistration_date: dereg,
            };
            p.is_valid().then_some(p)
        })();
        match patient {
            Some(p) => patients.push(p),
            None => malformed += 1,
        }
    }
    Ok(ParsedPatients { patients, malformed })
}

/// Fills missing descriptors from the vocabulary. Returns how many were filled.
pub fn resolve_descriptors(events: &mut [RawEvent], vocab: &VocabMap) -> usize {
    let mut filled = 0;
    for e in events.iter_mut().filter(|e| e.descriptor.is_none()) {
        if let Some(d) = vocab.get(&e.system, &e.code) {
            e.descriptor = Some(d.to_string());
            filled += 1;
        }
    }
    filled
}

/// Groups events by patient id, keeping input order within each patient.
pub fn group_by_patient<E, F>(events: Vec<E>, key: F) -> BTreeMap<String, Vec<E>>
where
    F: Fn(&E) -> &str,
{
    let mut out: BTreeMap<String, Vec<E>> = BTreeMap::new();
    for e in events {
        match out.get_mut(key(&e)) {
            Some(v) => v.push(e),
            None => {
                out.insert(key(&e).to_string(), vec![e]);
            }
        }
    }
    out
}

/// Why a row was removed, in the order the checks run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DropReason {
    Duplicate,
    BeforeBirth,
    AfterDeregistration,
    MissingDate,
    MissingCodeOrDescriptor,
    OutOfDateRange,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub duplicate: usize,
    pub before_birth: usize,
    pub after_deregistration: usize,
    pub missing_date: usize,
    pub missing_code_or_descriptor: usize,
    pub out_of_date_range: usize,
}

impl DropReport {
    pub fn count(&self, reason: DropReason) -> usize {
        match reason {
            DropReason::Duplicate => self.duplicate,
            DropReason::BeforeBirth => self.before_birth,
            DropReason::AfterDeregistration => self.after_deregistration,
            DropReason::MissingDate => self.missing_date,
            DropReason::MissingCodeOrDescriptor => self.missing_code_or_descriptor,
            DropReason::OutOfDateRange => self.out_of_date_range,
        }
    }

    fn bump(&mut self, reason: DropReason) {
        let slot = match reason {
            DropReason::Duplicate => &mut self.duplicate,
            DropReason::BeforeBirth => &mut self.before_birth,
            DropReason::AfterDeregistration => &mut self.after_deregistration,
            DropReason::MissingDate => &mut self.missing_date,
            DropReason::MissingCodeOrDescriptor => &mut self.missing_code_or_descriptor,
            DropReason::OutOfDateRange => &mut self.out_of_date_range,
        };
        *slot += 1;
    }

    pub fn dropped(&self) -> usize {
        self.duplicate
            + self.before_birth
            + self.after_deregistration
            + self.missing_date
            + self.missing_code_or_descriptor
            + self.out_of_date_range
    }

    pub fn merge(&mut self, other: &DropReport) {
        self.input_count += other.input_count;
        self.kept_count += other.kept_count;
        self.duplicate += other.duplicate;
        self.before_birth += other.before_birth;
        self.after_deregistration += other.after_deregistration;
        self.missing_date += other.missing_date;
        self.missing_code_or_descriptor += other.missing_code_or_descriptor;
        self.out_of_date_range += other.out_of_date_range;
    }
}

fn drop_reason(
    patient: &Patient,
    e: &RawEvent,
    floor: NaiveDate,
    ceiling: NaiveDate,
) -> Option<DropReason> {
    if let Some(date) = e.date {
        if date < patient.birth_date {
            return Some(DropReason::BeforeBirth);
        }
        if patient.deregistration_date.is_some_and(|d| date > d) {
            return Some(DropReason::AfterDeregistration);
        }
    } else {
        return Some(DropReason::MissingDate);
    }
    if e.code.is_empty() || e.descriptor.as_deref().is_none_or(str::is_empty) {
        return Some(DropReason::MissingCodeOrDescriptor);
    }
    let date = e.date.expect("checked above");
    if date < floor || date > ceiling {
        return Some(DropReason::OutOfDateRange);
    }
    None
}

/// Removes duplicate, impossible, incomplete and out-of-range rows for one
/// patient. Each dropped row is counted once, under the first failing check.
/// Output keeps the input order; see [`sort_chronologically`].
pub fn clean_events(
    patient: &Patient,
    events: Vec<RawEvent>,
    date_floor: NaiveDate,
    date_ceiling: NaiveDate,
) -> Result<(Vec<ClinicalEvent>, DropReport), IngestError> {
    if let Some(e) = events.iter().find(|e| e.patient_id != patient.id) {
        return Err(IngestError::PatientMismatch {
            expected: patient.id.clone(),
            found: e.patient_id.clone(),
        });
    }
    let mut report = DropReport {
        input_count: events.len(),
        ..Default::default()
    };
    let mut seen = HashSet::with_capacity(events.len());
    let mut kept = Vec::with_capacity(events.len());
    for e in events {
        if !seen.insert(e.clone()) {
            report.bump(DropReason::Duplicate);
            continue;
        }
        if let Some(reason) = drop_reason(patient, &e, date_floor, date_ceiling) {
            report.bump(reason);
            continue;
        }
        kept.push(ClinicalEvent {
            patient_id: e.patient_id,
            date: e.date.expect("dated"),
            system: e.system,
            code: e.code,
            descriptor: e.descriptor,
            source_registry: e.source_registry,
        });
    }
    report.kept_count = kept.len();
    Ok((kept, report))
}

/// Stable ascending sort by date.
pub fn sort_chronologically(mut events: Vec<ClinicalEvent>) -> Vec<ClinicalEvent> {
    events.sort_by_key(|e| e.date);
    events
}

pub fn write_events_csv<'a, W, I>(w: W, events: I) -> Result<(), IngestError>
where
    W: Write,
    I: IntoIterator<Item = &'a RawEvent>,
{
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(EVENT_COLUMNS)?;
    for e in events {
        let date = e.date.map(|d| d.format(DATE_FORMAT).to_string()).unwrap_or_default();
        wtr.write_record([
            e.patient_id.as_str(),
            date.as_str(),
            &e.system.to_string(),
            e.code.as_str(),
            e.descriptor.as_deref().unwrap_or(""),
            e.source_registry.as_str(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_patients_csv<'a, W, I>(w: W, patients: I) -> Result<(), IngestError>
where
    W: Write,
    I: IntoIterator<Item = &'a Patient>,
{
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(PATIENT_COLUMNS)?;
    for p in patients {
        let dereg = p
            .deregistration_date
            .map(|d| d.format(DATE_FORMAT).to_string())
            .unwrap_or_default();
        wtr.write_record([
            p.id.as_str(),
            &p.birth_date.format(DATE_FORMAT).to_string(),
            p.sex.as_str(),
            &p.registration_date.format(DATE_FORMAT).to_string(),
            dereg.as_str(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
