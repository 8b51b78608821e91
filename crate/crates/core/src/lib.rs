//! Building blocks for code-agnostic EHR risk models: vocabulary and codelist
//! parsing, record cleaning, cohort construction, text/code serialization with
//! truncation-aware tokenization, a small encoder classifier, and bootstrap
//! evaluation.

pub mod cohort;
pub mod eval;
pub mod ingest;
pub mod labels;
pub mod model;
pub mod ontology;
pub mod sequence;
pub mod synthgen;
pub mod stats;

pub use cohort::{CohortExample, PhenotypeDates, SplitAssignment};
pub use eval::report::{ComparisonRow, ModelReport, WindowReport};
pub use eval::{BootstrapCI, ComparisonResult, Metric, MetricReport, PredictionSet};
pub use ingest::{ClinicalEvent, Patient};
pub use labels::{Complication, LabelVector};
pub use model::{ClassifierModel, EncoderConfig, TrainConfig, TrainHistory};
pub use ontology::{CodeSystem, VocabMap};
pub use sequence::{SerializeMode, TokenSequence, Tokenizer, TruncationSide};
pub use synthgen::{GeneratorConfig, SyntheticCohort};
