//! Concept knowledge base: cross-vocabulary IDs, name normalization,
//! concept-text generation, and UMLS-to-target ID mapping.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid concept id {0:?}: expected VOCAB:CODE")]
    BadId(String),
    #[error("unknown vocabulary {0:?}")]
    UnknownVocab(String),
    #[error("duplicate concept id {0}")]
    DuplicateId(ConceptId),
    #[error("concept {0} has no names")]
    NoNames(ConceptId),
    #[error("concept {0} has no cross references")]
    UnmappedConcept(ConceptId),
    #[error("concept {0} is not a UMLS id")]
    NotUmls(ConceptId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Source vocabulary of a concept identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vocab {
    Umls,
    Mesh,
    Omim,
    Synthetic,
}

impl Vocab {
    pub fn as_str(&self) -> &'static str {
        match self {
            Vocab::Umls => "UMLS",
            Vocab::Mesh => "MESH",
            Vocab::Omim => "OMIM",
            Vocab::Synthetic => "SYNTHETIC",
        }
    }
}

impl FromStr for Vocab {
    type Err = KbError;

    fn from_str(s: &str) -> Result<Self, KbError> {
        match s {
            "UMLS" => Ok(Vocab::Umls),
            "MESH" => Ok(Vocab::Mesh),
            "OMIM" => Ok(Vocab::Omim),
            "SYNTHETIC" => Ok(Vocab::Synthetic),
            other => Err(KbError::UnknownVocab(other.to_string())),
        }
    }
}

/// A concept identifier, unique per (vocabulary, code) within a KB.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConceptId {
    pub vocabulary: Vocab,
    pub code: String,
}

impl ConceptId {
    pub fn new(vocabulary: Vocab, code: impl Into<String>) -> Self {
        ConceptId {
            vocabulary,
            code: code.into(),
        }
    }

    /// Parses the `VOCAB:CODE` form used by all file formats.
    pub fn parse(s: &str) -> Result<Self, KbError> {
        let (vocab, code) = s.split_once(':').ok_or_else(|| KbError::BadId(s.to_string()))?;
        if code.is_empty() {
            return Err(KbError::BadId(s.to_string()));
        }
        Ok(ConceptId {
            vocabulary: vocab.parse()?,
            code: code.to_string(),
        })
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.vocabulary.as_str(), self.code)
    }
}

impl Serialize for ConceptId {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ConceptId {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        ConceptId::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Orders two ids by code first, used wherever a tie is broken
/// "by concept code ascending".
pub fn code_order(a: &ConceptId, b: &ConceptId) -> std::cmp::Ordering {
    a.code.cmp(&b.code).then_with(|| a.vocabulary.cmp(&b.vocabulary))
}

/// A knowledge-base entry: ranked names, description, semantic type, and
/// cross-vocabulary references.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Concept {
    pub id: ConceptId,
    /// Rank 0 is the top canonical name, used as the retrieval query.
    pub names: Vec<String>,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub semantic_type: String,
    #[serde(default)]
    pub cross_refs: Vec<ConceptId>,
}

impl Concept {
    pub fn canonical_name(&self) -> &str {
        &self.names[0]
    }
}

/// The text sequence a concept is embedded from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptText {
    pub concept_id: ConceptId,
    pub text: String,
}

impl ConceptText {
    /// Token stream fed to the encoder. The "; " and " | " joins are layout,
    /// not content, so the separators are dropped here.
    pub fn tokens(&self) -> Vec<String> {
        self.text
            .split(|c: char| c.is_whitespace() || c == ';' || c == '|')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    }
}

/// Lower-cases, replaces hyphens and commas with spaces, collapses whitespace
/// runs to one space, and trims.
pub fn normalize_name(raw: &str) -> String {
    let replaced: String = raw
        .chars()
        .map(|c| if c == '-' || c == ',' { ' ' } else { c })
        .collect();
    let mut out = String::with_capacity(replaced.len());
    for word in replaced.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// Keeps the first-occurring original string for each distinct normalized
/// form, preserving input order.
pub fn dedup_names(names: &[String]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for name in names {
        if seen.insert(normalize_name(name)) {
            out.push(name.clone());
        }
    }
    out
}

/// Packs a concept's unique normalized names and its description into the
/// single text sequence the concept encoder consumes.
///
/// Layout is fixed so the text is byte-reproducible: normalized names joined
/// by `"; "`, then `" | "` and the description when one exists.
pub fn build_concept_text(concept: &Concept) -> ConceptText {
    let names: Vec<String> = dedup_names(&concept.names)
        .iter()
        .map(|n| normalize_name(n))
        .collect();
    let mut text = names.join("; ");
    if !concept.description.is_empty() {
        text.push_str(" | ");
        text.push_str(&concept.description);
    }
    ConceptText {
        concept_id: concept.id.clone(),
        text,
    }
}

/// Immutable concept collection. Lookups by id; iteration in load order.
#[derive(Debug, Clone, Default)]
pub struct Kb {
    concepts: Vec<Concept>,
    by_id: HashMap<ConceptId, usize>,
}

impl Kb {
    pub fn new(concepts: Vec<Concept>) -> Result<Self, KbError> {
        let mut by_id = HashMap::with_capacity(concepts.len());
        for (i, c) in concepts.iter().enumerate() {
            if c.names.is_empty() {
                return Err(KbError::NoNames(c.id.clone()));
            }
            if by_id.insert(c.id.clone(), i).is_some() {
                return Err(KbError::DuplicateId(c.id.clone()));
            }
        }
        Ok(Kb { concepts, by_id })
    }

    /// Loads the JSON-lines KB format: one object per line with keys
    /// `id`, `names`, `description`, `semantic_type`, `cross_refs`.
    pub fn load<R: BufRead>(reader: R) -> Result<Self, KbError> {
        let mut concepts = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let concept: Concept = serde_json::from_str(&line).map_err(|e| KbError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            concepts.push(concept);
        }
        Kb::new(concepts)
    }

    pub fn load_path(path: &Path) -> Result<Self, KbError> {
        let file = std::fs::File::open(path)?;
        Kb::load(std::io::BufReader::new(file))
    }

    pub fn save<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for c in &self.concepts {
            serde_json::to_writer(&mut w, c)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn get(&self, id: &ConceptId) -> Option<&Concept> {
        self.by_id.get(id).map(|&i| &self.concepts[i])
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.iter()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    /// Concept texts for every entry, in load order.
    pub fn concept_texts(&self) -> Vec<ConceptText> {
        self.concepts.iter().map(build_concept_text).collect()
    }
}

/// Maps a UMLS id onto the target-vocabulary id used by the annotated data.
///
/// With one cross reference the choice is forced. With several, the first
/// cross reference whose canonical name occurs (normalized, as a substring)
/// in the document wins; if none occurs, the lexicographically smallest code
/// is taken so the mapping stays deterministic.
pub fn map_umls_to_target(
    cui: &ConceptId,
    document_text: &str,
    kb: &Kb,
) -> Result<ConceptId, KbError> {
    if cui.vocabulary != Vocab::Umls {
        return Err(KbError::NotUmls(cui.clone()));
    }
    let concept = kb.get(cui).ok_or_else(|| KbError::UnmappedConcept(cui.clone()))?;
    let refs = &concept.cross_refs;
    match refs.len() {
        0 => Err(KbError::UnmappedConcept(cui.clone())),
        1 => Ok(refs[0].clone()),
        _ => {
            let doc_norm = normalize_name(document_text);
            for target in refs {
                if let Some(target_concept) = kb.get(target) {
                    let name = normalize_name(target_concept.canonical_name());
                    if !name.is_empty() && doc_norm.contains(&name) {
                        return Ok(target.clone());
                    }
                }
            }
            let smallest = refs
                .iter()
                .min_by(|a, b| code_order(a, b))
                .expect("refs non-empty");
            Ok(smallest.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mesh(code: &str) -> ConceptId {
        ConceptId::new(Vocab::Mesh, code)
    }

    fn concept(id: ConceptId, names: &[&str], description: &str) -> Concept {
        Concept {
            id,
            names: names.iter().map(|s| s.to_string()).collect(),
            description: description.to_string(),
            semantic_type: String::new(),
            cross_refs: vec![],
        }
    }

    #[test]
    fn normalize_hyphen_case_whitespace() {
        assert_eq!(normalize_name("T-Cell"), "t cell");
        assert_eq!(normalize_name("Chromosomal Disorder"), "chromosomal disorder");
        assert_eq!(normalize_name("chromosomal   disorder"), "chromosomal disorder");
        assert_eq!(normalize_name(""), "");
        assert_eq!(normalize_name("Coli, Polyposis"), "coli polyposis");
        assert_eq!(normalize_name("  a\t b\nc  "), "a b c");
    }

    #[test]
    fn dedup_keeps_first_original() {
        let names = vec!["T-Cell".to_string(), "T Cell".to_string()];
        assert_eq!(dedup_names(&names), vec!["T-Cell".to_string()]);
    }

    #[test]
    fn dedup_does_not_merge_inversions() {
        let names = vec!["Polyposis Coli".to_string(), "Coli, Polyposis".to_string()];
        let out = dedup_names(&names);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], "Polyposis Coli");
        assert_eq!(out[1], "Coli, Polyposis");
    }

    #[test]
    fn dedup_empty() {
        assert_eq!(dedup_names(&[]), Vec::<String>::new());
    }

    #[test]
    fn concept_text_single_name_with_description() {
        let c = concept(mesh("D007674"), &["Kidney Disease"], "renal disorder");
        assert_eq!(build_concept_text(&c).text, "kidney disease | renal disorder");
    }

    #[test]
    fn concept_text_merges_variants_drops_empty_description() {
        let c = concept(mesh("D1"), &["T-Cell", "T Cell"], "");
        assert_eq!(build_concept_text(&c).text, "t cell");
    }

    #[test]
    fn concept_text_join_layout() {
        let c = concept(mesh("D2"), &["A", "B"], "d");
        assert_eq!(build_concept_text(&c).text, "a; b | d");
    }

    #[test]
    fn concept_text_tokens_skip_separators() {
        let text = ConceptText {
            concept_id: mesh("D2"),
            text: "a; b | d".to_string(),
        };
        assert_eq!(text.tokens(), vec!["a", "b", "d"]);
    }

    fn mapping_kb() -> Kb {
        let mut c1 = concept(ConceptId::new(Vocab::Umls, "C1"), &["one"], "");
        c1.cross_refs = vec![mesh("M1")];
        let mut c2 = concept(ConceptId::new(Vocab::Umls, "C2"), &["two"], "");
        c2.cross_refs = vec![mesh("M2"), mesh("M3")];
        let mut c3 = concept(ConceptId::new(Vocab::Umls, "C3"), &["three"], "");
        c3.cross_refs = vec![mesh("M9"), mesh("M4")];
        let c4 = concept(ConceptId::new(Vocab::Umls, "C4"), &["four"], "");
        Kb::new(vec![
            c1,
            c2,
            c3,
            c4,
            concept(mesh("M1"), &["alpha"], ""),
            concept(mesh("M2"), &["foo"], ""),
            concept(mesh("M3"), &["bar"], ""),
            concept(mesh("M4"), &["gamma"], ""),
            concept(mesh("M9"), &["delta"], ""),
        ])
        .unwrap()
    }

    #[test]
    fn map_single_ref_is_forced() {
        let kb = mapping_kb();
        let got = map_umls_to_target(&ConceptId::new(Vocab::Umls, "C1"), "anything", &kb).unwrap();
        assert_eq!(got, mesh("M1"));
    }

    #[test]
    fn map_picks_name_present_in_document() {
        let kb = mapping_kb();
        let got =
            map_umls_to_target(&ConceptId::new(Vocab::Umls, "C2"), "doc mentions bar here", &kb)
                .unwrap();
        assert_eq!(got, mesh("M3"));
    }

    #[test]
    fn map_falls_back_to_smallest_code() {
        let kb = mapping_kb();
        let got =
            map_umls_to_target(&ConceptId::new(Vocab::Umls, "C3"), "no names here", &kb).unwrap();
        assert_eq!(got, mesh("M4"));
    }

    #[test]
    fn map_no_refs_is_unmapped() {
        let kb = mapping_kb();
        let err = map_umls_to_target(&ConceptId::new(Vocab::Umls, "C4"), "", &kb).unwrap_err();
        assert!(matches!(err, KbError::UnmappedConcept(_)));
    }

    #[test]
    fn kb_jsonl_round_trip() {
        let line = r#"{"id":"MESH:D007674","names":["Kidney Diseases","Disease, Kidney"],"description":"renal","semantic_type":"Disease","cross_refs":["UMLS:C0022658"]}"#;
        let kb = Kb::load(line.as_bytes()).unwrap();
        assert_eq!(kb.len(), 1);
        let c = kb.get(&mesh("D007674")).unwrap();
        assert_eq!(c.names.len(), 2);
        assert_eq!(c.cross_refs[0], ConceptId::new(Vocab::Umls, "C0022658"));
        let mut buf = Vec::new();
        kb.save(&mut buf).unwrap();
        let kb2 = Kb::load(buf.as_slice()).unwrap();
        assert_eq!(kb2.len(), 1);
        assert_eq!(kb2.get(&mesh("D007674")).unwrap().names, c.names);
    }

    #[test]
    fn kb_rejects_duplicates() {
        let a = concept(mesh("D1"), &["x"], "");
        let b = concept(mesh("D1"), &["y"], "");
        assert!(matches!(Kb::new(vec![a, b]), Err(KbError::DuplicateId(_))));
    }

    #[test]
    fn bad_id_strings_rejected() {
        assert!(ConceptId::parse("D007674").is_err());
        assert!(ConceptId::parse("MESH:").is_err());
        assert!(ConceptId::parse("NOPE:D1").is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in ".{0,64}") {
            let once = normalize_name(&s);
            prop_assert_eq!(normalize_name(&once), once);
        }

        #[test]
        fn dedup_preserves_normalized_set(names in proptest::collection::vec("[A-Za-z ,-]{0,12}", 0..8)) {
            let out = dedup_names(&names);
            let in_set: std::collections::HashSet<_> =
                names.iter().map(|n| normalize_name(n)).collect();
            let out_set: std::collections::HashSet<_> =
                out.iter().map(|n| normalize_name(n)).collect();
            prop_assert_eq!(in_set, out_set.clone());
            prop_assert_eq!(out_set.len(), out.len());
        }

        #[test]
        fn concept_text_invariant_under_duplicate_reordering(swap in any::<bool>()) {
            let mut names = vec!["T-Cell".to_string(), "T Cell".to_string(), "B Cell".to_string()];
            if swap {
                names.swap(0, 1);
            }
            let c = Concept {
                id: ConceptId::new(Vocab::Mesh, "D1"),
                names,
                description: "desc".to_string(),
                semantic_type: String::new(),
                cross_refs: vec![],
            };
            prop_assert_eq!(build_concept_text(&c).text, "t cell; b cell | desc");
        }
    }
}
