//! Pipeline stages. Each stage has an in-memory form, used directly by tests
//! and experiments, and a `cmd_*` wrapper that moves files between the run
//! directories.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ehrseq_core::cohort::{build_example, stratified_split, CohortSummary, PhenotypeCodelists, SummaryBuilder, DEFAULT_RATIOS};
use ehrseq_core::eval::report::{compare_reports, render_comparison_markdown, render_markdown, window_report, ComparisonRow, ModelReport};
use ehrseq_core::eval::{Metric, PredictionSet};
use ehrseq_core::ingest::{
    clean_events, default_date_ceiling, default_date_floor, group_by_patient, parse_events, parse_patients,
    resolve_descriptors, sort_chronologically, write_events_csv, write_patients_csv, DropReport, EventFormat, ParsedEvents,
    ParsedPatients, RawEvent,
};
use ehrseq_core::model::{
    load_checkpoint, lr_search, save_checkpoint, write_history_csv, ClassifierModel, LabeledSequence, Splits, TrainHistory,
};
use ehrseq_core::ontology::{load_codelist, load_vocab, Codelist, VocabMap};
use ehrseq_core::sequence::{encode_all, serialize, token_length_stats, train_tokenizer, LengthStats, SerializedRecord, Tokenizer};
use ehrseq_core::synthgen::{generate, SyntheticCohort};
use ehrseq_core::{ClinicalEvent, CohortExample, Patient, SplitAssignment};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{EvalParams, RunConfig};
use crate::error::CliError;

/// Smallest accepted cohort that can be split and trained on.
pub const MIN_COHORT_SIZE: usize = 10;

pub const TOKENIZER_FILE: &str = "tokenizer.txt";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const REPORT_FILE: &str = "report.json";

pub fn checkpoint_name(window: u32) -> String {
    format!("w{window}.ckpt")
}

// ---------------------------------------------------------------------------
// file helpers

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_ndjson<'a, T: Serialize + 'a>(path: &Path, rows: impl IntoIterator<Item = &'a T>) -> Result<(), CliError> {
    let mut w = create(path)?;
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_ndjson<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_vocab_file(path: &Path) -> Result<VocabMap, CliError> {
    Ok(load_vocab(open(path)?).map_err(CliError::input)?.map)
}

pub fn load_codelist_file(path: &Path) -> Result<Vec<Codelist>, CliError> {
    load_codelist(open(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_patients_file(path: &Path) -> Result<ParsedPatients, CliError> {
    parse_patients(open(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_events_file(path: &Path) -> Result<ParsedEvents, CliError> {
    parse_events(open(path)?, EventFormat::from_path(path)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProvenance {
    pub config_hash: String,
    pub seed: u64,
    pub n_patients: usize,
    pub n_events: usize,
    pub config: ehrseq_core::synthgen::GeneratorConfig,
}

pub fn synthesize(cfg: &RunConfig) -> Result<SyntheticCohort, CliError> {
    let mut g = cfg.synth.clone();
    g.seed = cfg.seed;
    generate(&g).map_err(CliError::input)
}

/// Generates a cohort into `out` (default `paths.data_dir`).
pub fn cmd_synth(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.data_dir.clone());
    let cohort = synthesize(cfg)?;
    cohort.write_to_dir(&dir).map_err(CliError::input)?;
    let mut config = cfg.synth.clone();
    config.seed = cfg.seed;
    write_json(
        &dir.join("provenance.json"),
        &SynthProvenance {
            config_hash: cohort.config_hash.clone(),
            seed: cohort.seed,
            n_patients: cohort.patients.len(),
            n_events: cohort.events.len(),
            config,
        },
    )?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// preprocess

/// Row accounting for one preprocessing run. Event rows satisfy
/// `event_rows = orphan_events + drops.input_count` and
/// `drops.input_count = drops.kept_count + drops.dropped()`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub patient_rows: usize,
    pub malformed_patient_rows: usize,
    pub duplicate_patient_ids: usize,
    pub event_rows: usize,
    pub malformed_event_rows: usize,
    /// Events whose patient is absent from the patients file.
    pub orphan_events: usize,
    pub descriptors_resolved: usize,
    pub drops: DropReport,
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub patients: Vec<Patient>,
    /// Cleaned, chronologically sorted events per patient id.
    pub events: BTreeMap<String, Vec<ClinicalEvent>>,
    pub report: PreprocessReport,
}

impl Preprocessed {
    pub fn events_of(&self, id: &str) -> &[ClinicalEvent] {
        self.events.get(id).map(Vec::as_slice).unwrap_or_default()
    }
}

pub fn preprocess(vocab: &VocabMap, patients: ParsedPatients, events: ParsedEvents) -> Result<Preprocessed, CliError> {
    let mut report = PreprocessReport {
        patient_rows: patients.patients.len() + patients.malformed,
        malformed_patient_rows: patients.malformed,
        event_rows: events.events.len(),
        malformed_event_rows: events.malformed,
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut kept_patients = Vec::with_capacity(patients.patients.len());
    for p in patients.patients {
        if seen.insert(p.id.clone()) {
            kept_patients.push(p);
        } else {
            report.duplicate_patient_ids += 1;
        }
    }
    let mut raw = events.events;
    report.descriptors_resolved = resolve_descriptors(&mut raw, vocab);
    let mut grouped = group_by_patient(raw, |e: &RawEvent| e.patient_id.as_str());
    let (floor, ceiling) = (default_date_floor(), default_date_ceiling());
    let mut cleaned = BTreeMap::new();
    for p in &kept_patients {
        let evs = grouped.remove(&p.id).unwrap_or_default();
        let (kept, drops) = clean_events(p, evs, floor, ceiling).map_err(CliError::input)?;
        report.drops.merge(&drops);
        cleaned.insert(p.id.clone(), sort_chronologically(kept));
    }
    report.orphan_events = grouped.values().map(Vec::len).sum();
    Ok(Preprocessed {
        patients: kept_patients,
        events: cleaned,
        report,
    })
}

/// Reads the source files, cleans them and writes `clean/{patients.csv,
/// events.csv, drop_report.json}`.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<PreprocessReport, CliError> {
    let vocab = load_vocab_file(&cfg.paths.vocab())?;
    let patients = load_patients_file(&cfg.paths.patients())?;
    let events = load_events_file(&cfg.paths.events())?;
    let pre = preprocess(&vocab, patients, events)?;
    let dir = cfg.paths.clean_dir();
    write_patients_csv(create(&dir.join("patients.csv"))?, &pre.patients).map_err(CliError::input)?;
    let raw: Vec<RawEvent> = pre
        .patients
        .iter()
        .flat_map(|p| pre.events_of(&p.id).iter().cloned().map(RawEvent::from))
        .collect();
    write_events_csv(create(&dir.join("events.csv"))?, &raw).map_err(CliError::input)?;
    write_json(&dir.join("drop_report.json"), &pre.report)?;
    Ok(pre.report)
}

/// Loads a cleaned store written by [`cmd_preprocess`].
pub fn load_clean_store(dir: &Path) -> Result<Preprocessed, CliError> {
    let patients = load_patients_file(&dir.join("patients.csv"))?;
    let parsed = load_events_file(&dir.join("events.csv"))?;
    if parsed.malformed > 0 || patients.malformed > 0 {
        return Err(CliError::Input(format!("{}: cleaned store has malformed rows", dir.display())));
    }
    let mut events: BTreeMap<String, Vec<ClinicalEvent>> = BTreeMap::new();
    for e in parsed.events {
        let date = e
            .date
            .ok_or_else(|| CliError::Input(format!("undated event for {} in cleaned store", e.patient_id)))?;
        events.entry(e.patient_id.clone()).or_default().push(ClinicalEvent {
            patient_id: e.patient_id,
            date,
            system: e.system,
            code: e.code,
            descriptor: e.descriptor,
            source_registry: e.source_registry,
        });
    }
    let report = read_json(&dir.join("drop_report.json"))?;
    Ok(Preprocessed {
        patients: patients.patients,
        events,
        report,
    })
}

// ---------------------------------------------------------------------------
// cohort

#[derive(Debug, Clone)]
pub struct CohortBuild {
    pub examples: Vec<CohortExample>,
    pub summary: CohortSummary,
    pub split: SplitAssignment,
}

fn follow_up_end(p: &Patient, events: &[ClinicalEvent]) -> NaiveDate {
    p.deregistration_date
        .or_else(|| events.last().map(|e| e.date))
        .unwrap_or(p.registration_date)
}

/// Phenotyping, inclusion, labelling and a split stratified on the longest
/// requested window.
pub fn build_cohort(pre: &Preprocessed, codelists: &[Codelist], windows: &[u32], seed: u64) -> Result<CohortBuild, CliError> {
    let lists = PhenotypeCodelists::new(codelists).map_err(CliError::input)?;
    let mut summary = SummaryBuilder::default();
    let mut examples = Vec::new();
    for p in &pre.patients {
        let events = pre.events_of(&p.id);
        let (phen, result) = build_example(p, events, &lists, windows);
        match result {
            Ok(ex) => {
                summary.accept(p, &phen, &ex, follow_up_end(p, events));
                examples.push(ex);
            }
            Err(reason) => summary.reject(reason),
        }
    }
    if examples.len() < MIN_COHORT_SIZE {
        return Err(CliError::CohortTooSmall {
            accepted: examples.len(),
            min: MIN_COHORT_SIZE,
        });
    }
    let stratify = windows.iter().copied().max().ok_or_else(|| CliError::Input("no windows".into()))?;
    let split = stratified_split(&examples, DEFAULT_RATIOS, stratify, seed).map_err(CliError::input)?;
    Ok(CohortBuild {
        examples,
        summary: summary.finish(),
        split,
    })
}

/// Writes `cohort/{cohort.ndjson, summary.json, split.json}` and one id list
/// per split.
pub fn cmd_cohort(cfg: &RunConfig) -> Result<CohortBuild, CliError> {
    let pre = load_clean_store(&cfg.paths.clean_dir())?;
    let codelists = load_codelist_file(&cfg.paths.codelists())?;
    let build = build_cohort(&pre, &codelists, &cfg.sorted_windows(), cfg.seed)?;
    let dir = cfg.paths.cohort_dir();
    write_ndjson(&dir.join("cohort.ndjson"), &build.examples)?;
    write_json(&dir.join("summary.json"), &build.summary)?;
    write_json(&dir.join("split.json"), &build.split)?;
    for (name, ids) in [
        ("train", &build.split.train),
        ("validation", &build.split.validation),
        ("test", &build.split.test),
    ] {
        let mut text = ids.join("\n");
        text.push('\n');
        write_text(&dir.join(format!("{name}.txt")), &text)?;
    }
    Ok(build)
}

pub fn load_cohort(dir: &Path) -> Result<(Vec<CohortExample>, SplitAssignment), CliError> {
    Ok((read_ndjson(&dir.join("cohort.ndjson"))?, read_json(&dir.join("split.json"))?))
}

/// Examples of each split, in split-list order.
pub fn partition<'a>(examples: &'a [CohortExample], split: &SplitAssignment) -> Result<[Vec<&'a CohortExample>; 3], CliError> {
    let by_id: HashMap<&str, &CohortExample> = examples.iter().map(|e| (e.patient_id.as_str(), e)).collect();
    let pick = |ids: &[String]| -> Result<Vec<&'a CohortExample>, CliError> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| CliError::Input(format!("split lists unknown patient {id:?}")))
            })
            .collect()
    };
    Ok([pick(&split.train)?, pick(&split.validation)?, pick(&split.test)?])
}

// ---------------------------------------------------------------------------
// train

pub fn serialize_examples(cfg: &RunConfig, examples: &[&CohortExample], vocab: &VocabMap) -> Result<Vec<SerializedRecord>, CliError> {
    examples
        .iter()
        .map(|e| {
            serialize(&e.patient_id, &e.input_events, cfg.mode, vocab, cfg.tokenizer.event_separator).map_err(CliError::input)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowTrainSummary {
    pub window_years: u32,
    pub chosen_lr: f64,
    pub label_weights: [f64; 3],
    pub best_val_micro_f1: f64,
    pub best_step: usize,
    pub stopped_at_step: usize,
    /// SHA-256 of the checkpoint file; empty until written.
    pub checkpoint_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model_tag: String,
    pub mode: ehrseq_core::sequence::SerializeMode,
    pub truncation_side: ehrseq_core::sequence::TruncationSide,
    pub max_len: usize,
    pub vocab_size: usize,
    pub vocab_hash: String,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Token lengths over the training split.
    pub train_lengths: LengthStats,
    pub windows: Vec<WindowTrainSummary>,
}

pub struct TrainedWindow {
    pub window_years: u32,
    pub model: ClassifierModel,
    /// One history per learning-rate candidate.
    pub histories: Vec<TrainHistory>,
}

pub struct Trained {
    pub tokenizer: Tokenizer,
    pub windows: Vec<TrainedWindow>,
    pub summary: TrainSummary,
}

fn labeled(seqs: &[ehrseq_core::sequence::TokenSequence], examples: &[&CohortExample], window: u32) -> Vec<LabeledSequence> {
    seqs.iter()
        .zip(examples)
        .map(|(s, e)| LabeledSequence {
            seq: s.clone(),
            labels: e.label(window),
        })
        .collect()
}

/// Tokenizer training on the train split only, then one learning-rate search
/// per requested window.
pub fn train_models(cfg: &RunConfig, examples: &[CohortExample], split: &SplitAssignment, vocab: &VocabMap) -> Result<Trained, CliError> {
    let parts = partition(examples, split)?;
    let records: Vec<Vec<SerializedRecord>> = parts
        .iter()
        .map(|p| serialize_examples(cfg, p, vocab))
        .collect::<Result<_, _>>()?;
    let tokenizer = train_tokenizer(records[0].iter().map(|r| r.body.as_str()), cfg.tokenizer.vocab_size)
        .map_err(|e| CliError::Training(format!("tokenizer: {e}")))?;
    let seqs: Vec<_> = records
        .iter()
        .map(|r| encode_all(&tokenizer, r, cfg.max_len, cfg.truncation_side))
        .collect();
    let enc = cfg.encoder_config(tokenizer.vocab_size());
    let tc = cfg.train_config();
    let mut windows = Vec::new();
    let mut summaries = Vec::new();
    for w in cfg.sorted_windows() {
        let splits = Splits {
            train: labeled(&seqs[0], &parts[0], w),
            validation: labeled(&seqs[1], &parts[1], w),
            test: labeled(&seqs[2], &parts[2], w),
        };
        let search = lr_search(&splits, &enc, &tc)?;
        let best = search
            .histories
            .iter()
            .find(|h| h.chosen_lr == search.best_lr)
            .expect("winning history");
        summaries.push(WindowTrainSummary {
            window_years: w,
            chosen_lr: search.best_lr,
            label_weights: best.label_weights,
            best_val_micro_f1: best.best_val_micro_f1,
            best_step: best.best_step,
            stopped_at_step: best.stopped_at_step,
            checkpoint_sha256: String::new(),
        });
        windows.push(TrainedWindow {
            window_years: w,
            model: search.model,
            histories: search.histories,
        });
    }
    let summary = TrainSummary {
        model_tag: cfg.model_tag(),
        mode: cfg.mode,
        truncation_side: cfg.truncation_side,
        max_len: cfg.max_len,
        vocab_size: tokenizer.vocab_size(),
        vocab_hash: tokenizer.vocab_hash(),
        n_train: parts[0].len(),
        n_validation: parts[1].len(),
        n_test: parts[2].len(),
        train_lengths: token_length_stats(&records[0], &tokenizer, cfg.max_len),
        windows: summaries,
    };
    Ok(Trained {
        tokenizer,
        windows,
        summary,
    })
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Trains and writes, under `models/<tag>/`, the tokenizer, one checkpoint
/// and history per window, and `train_summary.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    let (examples, split) = load_cohort(&cfg.paths.cohort_dir())?;
    let vocab = load_vocab_file(&cfg.paths.vocab())?;
    let mut trained = train_models(cfg, &examples, &split, &vocab)?;
    let dir = cfg.paths.model_dir(&cfg.model_tag());
    std::fs::create_dir_all(&dir)?;
    let mut tw = create(&dir.join(TOKENIZER_FILE))?;
    trained.tokenizer.save(&mut tw)?;
    tw.flush()?;
    for (tw, s) in trained.windows.iter().zip(trained.summary.windows.iter_mut()) {
        let path = dir.join(checkpoint_name(tw.window_years));
        save_checkpoint(&tw.model, &path)?;
        s.checkpoint_sha256 = sha256_file(&path)?;
        for h in &tw.histories {
            let name = format!("history_w{}_lr{:e}.csv", tw.window_years, h.chosen_lr);
            write_history_csv(h, create(&dir.join(name))?)?;
        }
    }
    write_json(&dir.join(TRAIN_SUMMARY_FILE), &trained.summary)?;
    Ok(trained.summary)
}

// ---------------------------------------------------------------------------
// evaluate

/// Model probabilities on already-encoded test examples.
pub fn predict(
    model: &ClassifierModel,
    seqs: &[ehrseq_core::sequence::TokenSequence],
    examples: &[&CohortExample],
    window: u32,
    tag: &str,
) -> Result<PredictionSet, CliError> {
    let probs = model.predict_proba(seqs)?;
    let labels = examples.iter().map(|e| e.label(window)).collect();
    Ok(PredictionSet::new(probs, labels, window, tag)?)
}

/// Point metrics and bootstrap intervals for every prediction set, ordered by
/// window.
pub fn evaluate_predictions(tag: &str, preds: &[PredictionSet], eval: &EvalParams, seed: u64) -> Result<ModelReport, CliError> {
    let mut windows = preds
        .iter()
        .map(|p| window_report(p, eval.threshold, eval.n_boot, seed))
        .collect::<Result<Vec<_>, _>>()?;
    windows.sort_by_key(|w| w.window_years);
    Ok(ModelReport {
        model_tag: tag.to_string(),
        threshold: eval.threshold,
        windows,
    })
}

pub fn check_checkpoint(cfg: &RunConfig, model: &ClassifierModel, tok: &Tokenizer, window: u32) -> Result<(), CliError> {
    let mc = model.config();
    if mc.max_len != cfg.max_len {
        return Err(CliError::ArtifactMismatch(format!(
            "checkpoint for window {window} has max_len {} but the run config says {}",
            mc.max_len, cfg.max_len
        )));
    }
    if mc.vocab_size != tok.vocab_size() {
        return Err(CliError::ArtifactMismatch(format!(
            "checkpoint for window {window} has vocab_size {} but the tokenizer has {}",
            mc.vocab_size,
            tok.vocab_size()
        )));
    }
    Ok(())
}

/// Scores the test split with each window's checkpoint and writes
/// `report.json` and `report.md` next to them.
pub fn cmd_evaluate(cfg: &RunConfig, model_dir: Option<&Path>) -> Result<ModelReport, CliError> {
    let tag = cfg.model_tag();
    let dir = model_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.model_dir(&tag));
    let tok = Tokenizer::load(open(&dir.join(TOKENIZER_FILE))?).map_err(CliError::input)?;
    let (examples, split) = load_cohort(&cfg.paths.cohort_dir())?;
    let vocab = load_vocab_file(&cfg.paths.vocab())?;
    let [_, _, test] = partition(&examples, &split)?;
    let records = serialize_examples(cfg, &test, &vocab)?;
    let seqs = encode_all(&tok, &records, cfg.max_len, cfg.truncation_side);
    let mut preds = Vec::new();
    for w in cfg.sorted_windows() {
        let path = dir.join(checkpoint_name(w));
        if !path.exists() {
            return Err(CliError::Input(format!("missing checkpoint {}", path.display())));
        }
        let model = load_checkpoint(&path)?;
        check_checkpoint(cfg, &model, &tok, w)?;
        preds.push(predict(&model, &seqs, &test, w, &tag)?);
    }
    let report = evaluate_predictions(&tag, &preds, &cfg.eval, cfg.seed)?;
    write_json(&dir.join(REPORT_FILE), &report)?;
    write_text(&dir.join("report.md"), &render_markdown(&report))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// compare

/// Every unordered pair of reports, every shared window and every metric.
pub fn compare_all(reports: &[ModelReport], m_comparisons: usize) -> Result<Vec<ComparisonRow>, CliError> {
    if reports.len() < 2 {
        return Err(CliError::Comparison(format!("need at least two reports, got {}", reports.len())));
    }
    let metrics = Metric::all();
    let mut rows = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            rows.extend(compare_reports(&reports[i], &reports[j], &metrics, m_comparisons)?);
        }
    }
    Ok(rows)
}

/// Writes `comparison.json` and `comparison.md` into `out`.
pub fn cmd_compare(report_paths: &[PathBuf], m_comparisons: usize, out: &Path) -> Result<Vec<ComparisonRow>, CliError> {
    let reports = report_paths
        .iter()
        .map(|p| read_json::<ModelReport>(p))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = compare_all(&reports, m_comparisons)?;
    write_json(&out.join("comparison.json"), &rows)?;
    write_text(&out.join("comparison.md"), &render_comparison_markdown(&rows))?;
    Ok(rows)
}
