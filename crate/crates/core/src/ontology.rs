//! Clinical vocabularies and phenotype codelists.
//!
//! Both inputs are tab-separated: descriptors routinely contain commas, so
//! CSV would need quoting that real vocabulary dumps rarely get right.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {system}/{code} has conflicting descriptors {first:?} and {second:?}")]
    DuplicateConflict {
        line: usize,
        system: CodeSystem,
        code: String,
        first: String,
        second: String,
    },
    #[error("line {line}: empty descriptor")]
    EmptyDescriptor { line: usize },
    #[error("line {line}: unknown code system {value:?}")]
    UnknownSystem { line: usize, value: String },
    #[error("no valid codelist lines")]
    EmptyFile,
}

/// A clinical coding scheme.
///
/// Text form is the upper-case variant name; `OTHER:<name>` for anything else.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CodeSystem {
    SnomedCt,
    Icd10,
    Bnf,
    Opcs4,
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown code system {0:?}")]
pub struct ParseCodeSystemError(pub String);

impl FromStr for CodeSystem {
    type Err = ParseCodeSystemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s.to_ascii_uppercase().as_str() {
            "SNOMED_CT" | "SNOMEDCT" | "SNOMED" => Ok(Self::SnomedCt),
            "ICD10" | "ICD-10" => Ok(Self::Icd10),
            "BNF" => Ok(Self::Bnf),
            "OPCS4" | "OPCS-4" => Ok(Self::Opcs4),
            _ => match s.split_once(':') {
                Some((prefix, name))
                    if prefix.eq_ignore_ascii_case("OTHER")
                        && !name.is_empty()
                        && !name.contains(char::is_whitespace) =>
                {
                    Ok(Self::Other(name.to_string()))
                }
                _ => Err(ParseCodeSystemError(s.to_string())),
            },
        }
    }
}

impl fmt::Display for CodeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SnomedCt => f.write_str("SNOMED_CT"),
            Self::Icd10 => f.write_str("ICD10"),
            Self::Bnf => f.write_str("BNF"),
            Self::Opcs4 => f.write_str("OPCS4"),
            Self::Other(name) => write!(f, "OTHER:{name}"),
        }
    }
}

impl Serialize for CodeSystem {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CodeSystem {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Lowercases and collapses every whitespace run (tabs and line breaks
/// included) to a single space.
pub fn normalize_descriptor(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub system: CodeSystem,
    pub code: String,
    pub descriptor: String,
}

/// `(system, code) -> descriptor` lookup. Immutable once loaded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VocabMap {
    by_system: HashMap<CodeSystem, HashMap<String, String>>,
}

impl VocabMap {
    pub fn len(&self) -> usize {
        self.by_system.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, system: &CodeSystem, code: &str) -> Option<&str> {
        self.by_system
            .get(system)
            .and_then(|codes| codes.get(code))
            .map(String::as_str)
    }

    /// Entries sorted by `(system, code)`.
    pub fn entries(&self) -> Vec<VocabEntry> {
        let mut out: Vec<_> = self
            .by_system
            .iter()
            .flat_map(|(system, codes)| {
                codes.iter().map(move |(code, descriptor)| VocabEntry {
                    system: system.clone(),
                    code: code.clone(),
                    descriptor: descriptor.clone(),
                })
            })
            .collect();
        out.sort_by(|a, b| (&a.system, &a.code).cmp(&(&b.system, &b.code)));
        out
    }

    /// Inserts one entry, enforcing the uniqueness rule of [`load_vocab`].
    pub fn insert(&mut self, entry: VocabEntry) -> Result<(), OntologyError> {
        self.insert_at(entry, 0)
    }

    fn insert_at(&mut self, entry: VocabEntry, line: usize) -> Result<(), OntologyError> {
        let codes = self.by_system.entry(entry.system.clone()).or_default();
        match codes.get(&entry.code) {
            Some(existing) if *existing == entry.descriptor => Ok(()),
            Some(existing) => Err(OntologyError::DuplicateConflict {
                line,
                system: entry.system,
                code: entry.code,
                first: existing.clone(),
                second: entry.descriptor,
            }),
            None => {
                codes.insert(entry.code, entry.descriptor);
                Ok(())
            }
        }
    }

    /// Writes the map back out in the TSV layout `load_vocab` reads.
    pub fn write_tsv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "system\tcode\tdescriptor")?;
        for e in self.entries() {
            writeln!(w, "{}\t{}\t{}", e.system, e.code, e.descriptor)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabLoad {
    pub map: VocabMap,
    /// Lines that were not three fields, named an unknown system or had an empty code.
    pub skipped: usize,
}

/// Reads `system<TAB>code<TAB>descriptor` lines. A first line whose first
/// field is literally `system` is treated as a header.
pub fn load_vocab<R: BufRead>(reader: R) -> Result<VocabLoad, OntologyError> {
    let mut map = VocabMap::default();
    let mut skipped = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if idx == 0 && fields[0].trim() == "system" {
            continue;
        }
        if fields.len() != 3 {
            skipped += 1;
            continue;
        }
        let Ok(system) = fields[0].parse::<CodeSystem>() else {
            skipped += 1;
            continue;
        };
        let code = fields[1].trim();
        if code.is_empty() {
            skipped += 1;
            continue;
        }
        let descriptor = normalize_descriptor(fields[2]);
        if descriptor.is_empty() {
            return Err(OntologyError::EmptyDescriptor { line: line_no });
        }
        map.insert_at(
            VocabEntry {
                system,
                code: code.to_string(),
                descriptor,
            },
            line_no,
        )?;
    }
    Ok(VocabLoad { map, skipped })
}

/// Looks up a descriptor. Absence is a value, never an error.
pub fn descriptor_for<'a>(map: &'a VocabMap, system: &CodeSystem, code: &str) -> Option<&'a str> {
    map.get(system, code)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codelist {
    pub phenotype: String,
    pub members: BTreeSet<(CodeSystem, String)>,
}

impl Codelist {
    pub fn contains(&self, system: &CodeSystem, code: &str) -> bool {
        self.members.contains(&(system.clone(), code.to_string()))
    }
}

/// Reads `phenotype<TAB>system<TAB>code` lines into one codelist per
/// phenotype, sorted by phenotype name. Phenotype names are lowercased.
pub fn load_codelist<R: BufRead>(reader: R) -> Result<Vec<Codelist>, OntologyError> {
    let mut by_name: BTreeMap<String, BTreeSet<(CodeSystem, String)>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if idx == 0 && fields[0].trim() == "phenotype" {
            continue;
        }
        if fields.len() != 3 || fields[0].trim().is_empty() || fields[2].trim().is_empty() {
            continue;
        }
        let system = fields[1]
            .parse::<CodeSystem>()
            .map_err(|e| OntologyError::UnknownSystem {
                line: idx + 1,
                value: e.0,
            })?;
        by_name
            .entry(fields[0].trim().to_lowercase())
            .or_default()
            .insert((system, fields[2].trim().to_string()));
    }
    if by_name.is_empty() {
        return Err(OntologyError::EmptyFile);
    }
    Ok(by_name
        .into_iter()
        .map(|(phenotype, members)| Codelist { phenotype, members })
        .collect())
}

/// Writes codelists in the layout `load_codelist` reads.
pub fn write_codelists<W: std::io::Write>(lists: &[Codelist], mut w: W) -> std::io::Result<()> {
    writeln!(w, "phenotype\tsystem\tcode")?;
    for list in lists {
        for (system, code) in &list.members {
            writeln!(w, "{}\t{}\t{}", list.phenotype, system, code)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const E11: &str = "ICD10\tE11.9\ttype 2 diabetes mellitus without complications";

    #[test]
    fn single_icd10_entry() {
        let load = load_vocab(E11.as_bytes()).unwrap();
        assert_eq!(load.map.len(), 1);
        assert_eq!(load.skipped, 0);
        assert_eq!(
            descriptor_for(&load.map, &CodeSystem::Icd10, "E11.9"),
            Some("type 2 diabetes mellitus without complications")
        );
        assert_eq!(descriptor_for(&load.map, &CodeSystem::Icd10, "E11.8"), None);
    }

    #[test]
    fn empty_stream() {
        let load = load_vocab("".as_bytes()).unwrap();
        assert!(load.map.is_empty());
        assert_eq!(load.skipped, 0);
    }

    #[test]
    fn conflicting_duplicate_is_rejected() {
        let text = "SNOMED_CT\t44054006\tdiabetes type 2\nSNOMED_CT\t44054006\tdiabetes mellitus type 2\n";
        assert!(matches!(
            load_vocab(text.as_bytes()),
            Err(OntologyError::DuplicateConflict { line: 2, .. })
        ));
    }

    #[test]
    fn identical_duplicate_and_header_tolerated() {
        let text = format!("system\tcode\tdescriptor\n{E11}\n{E11}\n");
        let load = load_vocab(text.as_bytes()).unwrap();
        assert_eq!(load.map.len(), 1);
    }

    #[test]
    fn descriptor_normalization() {
        let text = "BNF\t0601022B0\t  Metformin   500mg\u{b}TABLETS \n";
        let load = load_vocab(text.as_bytes()).unwrap();
        assert_eq!(
            load.map.get(&CodeSystem::Bnf, "0601022B0"),
            Some("metformin 500mg tablets")
        );
    }

    #[test]
    fn blank_descriptor_errors_and_malformed_lines_skip() {
        assert!(matches!(
            load_vocab("ICD10\tE11\t   \n".as_bytes()),
            Err(OntologyError::EmptyDescriptor { line: 1 })
        ));
        let text = "ICD10\tE11\nBOGUS\tX\ty\nICD10\t\tz\nOTHER:local\tL1\tlocal thing\n";
        let load = load_vocab(text.as_bytes()).unwrap();
        assert_eq!(load.skipped, 3);
        assert_eq!(
            load.map.get(&CodeSystem::Other("local".into()), "L1"),
            Some("local thing")
        );
    }

    #[test]
    fn code_system_text_form() {
        for s in ["SNOMED_CT", "ICD10", "BNF", "OPCS4", "OTHER:read2"] {
            assert_eq!(s.parse::<CodeSystem>().unwrap().to_string(), s);
        }
        assert!("OTHER:".parse::<CodeSystem>().is_err());
        assert!("READ".parse::<CodeSystem>().is_err());
    }

    #[test]
    fn codelist_two_members() {
        let text = "retinopathy\tICD10\tH36.0\nretinopathy\tSNOMED_CT\t4855003\n";
        let lists = load_codelist(text.as_bytes()).unwrap();
        assert_eq!(lists.len(), 1);
        assert_eq!(lists[0].phenotype, "retinopathy");
        assert_eq!(lists[0].members.len(), 2);
        assert!(lists[0].contains(&CodeSystem::Icd10, "H36.0"));
    }

    #[test]
    fn codelist_repeat_member_collapses() {
        let text = "retinopathy\tICD10\tH36.0\nretinopathy\tICD10\tH36.0\n";
        let lists = load_codelist(text.as_bytes()).unwrap();
        assert_eq!(lists[0].members.len(), 1);
    }

    #[test]
    fn codelist_errors() {
        assert!(matches!(
            load_codelist("t2dm\tREADV2\tC10\n".as_bytes()),
            Err(OntologyError::UnknownSystem { line: 1, .. })
        ));
        assert!(matches!(
            load_codelist("phenotype\tsystem\tcode\n".as_bytes()),
            Err(OntologyError::EmptyFile)
        ));
    }

    #[test]
    fn shuffled_codelists_counted() {
        let phenos = ["t2dm", "retinopathy", "nephropathy", "neuropathy"];
        let mut lines = Vec::new();
        for p in phenos {
            for i in 0..10 {
                lines.push(format!("{p}\tSNOMED_CT\t{p}{i}"));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        lines.shuffle(&mut rng);
        // Counting oracle: distinct (phenotype, code) pairs per phenotype in the input.
        let mut expected: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for l in &lines {
            let f: Vec<_> = l.split('\t').collect();
            expected.entry(f[0].into()).or_default().insert(f[2].into());
        }
        let lists = load_codelist(lines.join("\n").as_bytes()).unwrap();
        assert_eq!(lists.len(), 4);
        for list in lists {
            assert_eq!(list.members.len(), expected[&list.phenotype].len());
            assert_eq!(list.members.len(), 10);
        }
    }

    fn random_vocab(seed: u64, n: usize) -> Vec<(CodeSystem, String, String)> {
        let systems = [
            CodeSystem::SnomedCt,
            CodeSystem::Icd10,
            CodeSystem::Bnf,
            CodeSystem::Opcs4,
            CodeSystem::Other("local".into()),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        while out.len() < n {
            let system = systems[rng.random_range(0..systems.len())].clone();
            let code = format!("C{}", rng.random_range(0..1_000_000u32));
            if !seen.insert((system.clone(), code.clone())) {
                continue;
            }
            let words = rng.random_range(1..5);
            let descriptor = (0..words)
                .map(|_| format!("w{}", rng.random_range(0..500u32)))
                .collect::<Vec<_>>()
                .join(" ");
            out.push((system, code, descriptor));
        }
        out
    }

    fn to_tsv(rows: &[(CodeSystem, String, String)]) -> String {
        rows.iter()
            .map(|(s, c, d)| format!("{s}\t{c}\t{d}\n"))
            .collect()
    }

    #[test]
    fn round_trip_thousand_entries() {
        let rows = random_vocab(11, 1000);
        let load = load_vocab(to_tsv(&rows).as_bytes()).unwrap();
        assert_eq!(load.map.len(), 1000);
        for (s, c, d) in &rows {
            assert_eq!(descriptor_for(&load.map, s, c), Some(d.as_str()));
        }
        let mut out = Vec::new();
        load.map.write_tsv(&mut out).unwrap();
        assert_eq!(load_vocab(out.as_slice()).unwrap().map, load.map);
    }

    proptest! {
        #[test]
        fn loading_twice_is_idempotent(seed in any::<u64>(), n in 0usize..60) {
            let tsv = to_tsv(&random_vocab(seed, n));
            let once = load_vocab(tsv.as_bytes()).unwrap().map;
            let twice = load_vocab(format!("{tsv}{tsv}").as_bytes()).unwrap().map;
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn codelists_ignore_line_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut lines: Vec<String> = (0..40)
                .map(|i| format!("p{}\tICD10\tX{}", i % 4, rng.random_range(0..15u32)))
                .collect();
            let a = load_codelist(lines.join("\n").as_bytes()).unwrap();
            lines.shuffle(&mut rng);
            let b = load_codelist(lines.join("\n").as_bytes()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
