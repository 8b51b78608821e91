//! Shared fixtures for the benchmarks.

use ehrseq_core::eval::PredictionSet;
use ehrseq_core::sequence::{train_tokenizer, SerializeMode, SerializedRecord, Tokenizer};
use ehrseq_core::synthgen::{generate, observation_corpus, GeneratorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores loosely correlated with labels; roughly 15% positives per class.
pub fn prediction_set(n: usize, seed: u64) -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y: [u8; 3] = std::array::from_fn(|_| rng.random_bool(0.15) as u8);
        probs.push(std::array::from_fn(|k| (0.3 * y[k] as f64 + 0.7 * rng.random::<f64>()).min(1.0)));
        labels.push(y);
    }
    PredictionSet::new(probs, labels, 5, "bench").expect("valid")
}

/// Text-mode observation windows of a small synthetic cohort.
pub fn corpus(n_patients: usize, seed: u64) -> Vec<SerializedRecord> {
    let cfg = GeneratorConfig {
        n_patients,
        seed,
        ..GeneratorConfig::default()
    };
    let cohort = generate(&cfg).expect("valid config");
    observation_corpus(&cohort, SerializeMode::Text).expect("serializable")
}

pub fn tokenizer(corpus: &[SerializedRecord], vocab_size: usize) -> Tokenizer {
    train_tokenizer(corpus.iter().map(|r| r.body.as_str()), vocab_size).expect("non-empty corpus")
}

