//! Synthetic terminology: pseudo-word descriptors, background codes per
//! system, and the fixed phenotype codes.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{DescriptorStyle, GeneratorConfig};
use crate::ingest::SourceRegistry;
use crate::labels::Complication;
use crate::ontology::{CodeSystem, Codelist};

const ONSETS: &[&str] = &["b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ia", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "x"];

/// Word shared by every descriptor linked to a complication under
/// [`DescriptorStyle::SharedWords`].
pub fn family_word(c: Complication) -> &'static str {
    match c {
        Complication::Nephropathy => "kidney",
        Complication::Retinopathy => "eye",
        Complication::Neuropathy => "foot",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeEntry {
    pub system: CodeSystem,
    pub code: String,
    pub descriptor: String,
}

impl CodeEntry {
    fn new(system: CodeSystem, code: &str, descriptor: &str) -> Self {
        CodeEntry {
            system,
            code: code.to_string(),
            descriptor: descriptor.to_string(),
        }
    }

    pub fn registry(&self) -> SourceRegistry {
        match self.system {
            CodeSystem::Icd10 | CodeSystem::Opcs4 => SourceRegistry::Hospital,
            CodeSystem::SnomedCt | CodeSystem::Bnf => SourceRegistry::PrimaryCare,
            CodeSystem::Other(_) => SourceRegistry::Other,
        }
    }
}

pub fn t2dm_codes() -> Vec<CodeEntry> {
    vec![
        CodeEntry::new(CodeSystem::Icd10, "E11.9", "type 2 diabetes mellitus without complications"),
        CodeEntry::new(CodeSystem::SnomedCt, "44054006", "type 2 diabetes mellitus"),
    ]
}

pub fn complication_codes(c: Complication) -> Vec<CodeEntry> {
    match c {
        Complication::Nephropathy => vec![
            CodeEntry::new(CodeSystem::Icd10, "N08.3", "glomerular disorders in diabetes mellitus"),
            CodeEntry::new(CodeSystem::SnomedCt, "127013003", "diabetic kidney disease"),
        ],
        Complication::Retinopathy => vec![
            CodeEntry::new(CodeSystem::Icd10, "H36.0", "diabetic retinopathy"),
            CodeEntry::new(CodeSystem::SnomedCt, "4855003", "diabetic eye disease"),
        ],
        Complication::Neuropathy => vec![
            CodeEntry::new(CodeSystem::Icd10, "G63.2", "diabetic polyneuropathy"),
            CodeEntry::new(CodeSystem::SnomedCt, "230572002", "diabetic foot neuropathy"),
        ],
    }
}

/// Codelists for `t2dm` and the three complications.
pub fn phenotype_codelists() -> Vec<Codelist> {
    let mut lists = vec![Codelist {
        phenotype: crate::cohort::T2DM.to_string(),
        members: t2dm_codes().into_iter().map(|e| (e.system, e.code)).collect(),
    }];
    for c in Complication::ALL {
        lists.push(Codelist {
            phenotype: c.name().to_string(),
            members: complication_codes(c).into_iter().map(|e| (e.system, e.code)).collect(),
        });
    }
    lists.sort_by(|a, b| a.phenotype.cmp(&b.phenotype));
    lists
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("non-empty"));
        w.push_str(VOWELS.choose(rng).expect("non-empty"));
    }
    w.push_str(CODAS.choose(rng).expect("non-empty"));
    w
}

/// Distinct pseudo-words, never colliding with the family words.
pub(crate) fn word_pool(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    let reserved: HashSet<&str> = Complication::ALL.iter().map(|&c| family_word(c)).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let w = pseudo_word(rng);
        if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn descriptor(rng: &mut ChaCha8Rng, pool: &[String], words: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(words);
    (0..n).map(|_| pool.choose(rng).expect("non-empty pool").as_str()).collect::<Vec<_>>().join(" ")
}

fn random_code(rng: &mut ChaCha8Rng, system: &CodeSystem) -> String {
    let letter = |rng: &mut ChaCha8Rng| (b'A' + rng.random_range(0..26u8)) as char;
    match system {
        CodeSystem::SnomedCt => rng.random_range(100_000u64..1_000_000_000).to_string(),
        CodeSystem::Icd10 => format!("{}{:02}.{}", letter(rng), rng.random_range(0..100), rng.random_range(0..10)),
        CodeSystem::Opcs4 => format!("{}{:02}.{}", letter(rng), rng.random_range(0..100), rng.random_range(1..10)),
        CodeSystem::Bnf => format!(
            "{:07}{}{}",
            rng.random_range(0..10_000_000u32),
            letter(rng),
            rng.random_range(0..10)
        ),
        CodeSystem::Other(_) => format!("X{:06}", rng.random_range(0..1_000_000)),
    }
}

/// The generated terminology, excluding per-patient state.
#[derive(Debug, Clone)]
pub(crate) struct Terminology {
    /// Background codes in Zipf rank order.
    pub background: Vec<CodeEntry>,
    /// Signal code entries, parallel to `config.signal_spec`.
    pub signals: Vec<CodeEntry>,
    pub t2dm: Vec<CodeEntry>,
    pub complications: [Vec<CodeEntry>; 3],
}

pub(crate) fn build_terminology(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Terminology {
    let pool = word_pool(rng, config.vocab_spec.word_pool);
    let t2dm = t2dm_codes();
    let complications = Complication::ALL.map(complication_codes);
    let mut taken: HashSet<(CodeSystem, String)> = t2dm
        .iter()
        .chain(complications.iter().flatten())
        .map(|e| (e.system.clone(), e.code.clone()))
        .collect();

    let signals: Vec<CodeEntry> = config
        .signal_spec
        .iter()
        .map(|s| {
            taken.insert((CodeSystem::SnomedCt, s.code.clone()));
            let text = match config.descriptor_style {
                DescriptorStyle::SharedWords => {
                    format!("{} {}", family_word(s.complication), descriptor(rng, &pool, 1..=2))
                }
                DescriptorStyle::DisjointWords => descriptor(rng, &pool, 2..=3),
            };
            CodeEntry::new(CodeSystem::SnomedCt, &s.code, &text)
        })
        .collect();

    let mut background = Vec::new();
    for (system, count) in config.vocab_spec.systems() {
        let mut made = 0;
        while made < count {
            let code = random_code(rng, &system);
            if taken.insert((system.clone(), code.clone())) {
                let text = descriptor(rng, &pool, 3..=6);
                background.push(CodeEntry::new(system.clone(), &code, &text));
                made += 1;
            }
        }
    }
    // interleave systems across frequency ranks
    use rand::seq::SliceRandom;
    background.shuffle(rng);
    Terminology {
        background,
        signals,
        t2dm,
        complications,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn pool_is_distinct_and_avoids_family_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pool = word_pool(&mut rng, 2000);
        let set: HashSet<_> = pool.iter().collect();
        assert_eq!(set.len(), 2000);
        assert!(!pool.iter().any(|w| w == "eye" || w == "kidney" || w == "foot"));
    }

    #[test]
    fn codelists_cover_all_phenotypes() {
        let names: Vec<_> = phenotype_codelists().into_iter().map(|l| l.phenotype).collect();
        assert_eq!(names, ["nephropathy", "neuropathy", "retinopathy", "t2dm"]);
    }
}
