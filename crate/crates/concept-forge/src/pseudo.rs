//! Rule-annotator output handling: parse pipe-delimited candidate lines,
//! keep the top-ranked concept per span, and clean the result with the
//! false-abbreviation and overlap filters.
//!
//! Candidate lines carry a concept's preferred name, not the document
//! surface form, so mentions are filled in from the document tokens by
//! [`resolve_mentions`] before the filters run.

use std::collections::HashMap;
use std::io::BufRead;

use thiserror::Error;

use crate::corpus::{Annotation, AnnotationSource, Document, Span};
use crate::kb::{code_order, normalize_name, ConceptId, Kb, Vocab};

#[derive(Debug, Error)]
pub enum PseudoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: negative score {score}")]
    NegativeScore { line: usize, score: f64 },
    #[error("candidate set references unknown document {0:?}")]
    UnknownDocument(String),
    #[error("doc {doc_id}: token span {start}..{end} out of bounds (doc has {len} tokens)")]
    SpanOutOfBounds { doc_id: String, start: usize, end: usize, len: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One ranked concept candidate for a span.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub concept: ConceptId,
    pub score: f64,
    pub sem_types: String,
}

/// All candidates the rule annotator proposed for one (document, span) pair,
/// ranked by score descending with ties broken by concept code.
#[derive(Debug, Clone)]
pub struct RawCandidateSet {
    pub doc_id: String,
    pub span: Span,
    pub mention: String,
    pub candidates: Vec<Candidate>,
}

fn rank_candidates(candidates: &mut [Candidate]) {
    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| code_order(&a.concept, &b.concept))
    });
}

/// Parses MMI-style lines `docId|MMI|score|preferredName|CUI|semTypes|startToken|endToken`.
/// Rows sharing a (document, span) key merge into one ranked candidate set;
/// sets appear in order of their first row. Mentions are left empty here —
/// see [`resolve_mentions`].
pub fn parse_mmi<R: BufRead>(reader: R) -> Result<Vec<RawCandidateSet>, PseudoError> {
    let mut sets: Vec<RawCandidateSet> = Vec::new();
    let mut index: HashMap<(String, Span), usize> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let err = |msg: String| PseudoError::Parse { line: lineno, msg };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 8 {
            return Err(err(format!("expected 8 pipe-delimited fields, got {}", fields.len())));
        }
        if fields[1] != "MMI" {
            return Err(err(format!("expected literal MMI in field 2, got {:?}", fields[1])));
        }
        let score: f64 = fields[2]
            .parse()
            .map_err(|_| err(format!("bad score {:?}", fields[2])))?;
        if score < 0.0 {
            return Err(PseudoError::NegativeScore { line: lineno, score });
        }
        let concept = if fields[4].contains(':') {
            ConceptId::parse(fields[4]).map_err(|e| err(e.to_string()))?
        } else {
            ConceptId::new(Vocab::Umls, fields[4])
        };
        let start: usize = fields[6]
            .parse()
            .map_err(|_| err(format!("bad start token {:?}", fields[6])))?;
        let end: usize = fields[7]
            .parse()
            .map_err(|_| err(format!("bad end token {:?}", fields[7])))?;
        if start >= end {
            return Err(err(format!("empty token span {start}..{end}")));
        }

        let candidate = Candidate {
            concept,
            score,
            sem_types: fields[5].to_string(),
        };
        let key = (fields[0].to_string(), Span::new(start, end));
        match index.get(&key) {
            Some(&at) => sets[at].candidates.push(candidate),
            None => {
                index.insert(key, sets.len());
                sets.push(RawCandidateSet {
                    doc_id: fields[0].to_string(),
                    span: Span::new(start, end),
                    mention: String::new(),
                    candidates: vec![candidate],
                });
            }
        }
    }

    for set in &mut sets {
        rank_candidates(&mut set.candidates);
    }
    Ok(sets)
}

/// Fills each set's mention with the joined document tokens of its span.
pub fn resolve_mentions(
    sets: &mut [RawCandidateSet],
    docs: &[Document],
) -> Result<(), PseudoError> {
    let by_id: HashMap<&str, &Document> =
        docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    for set in sets.iter_mut() {
        let doc = by_id
            .get(set.doc_id.as_str())
            .ok_or_else(|| PseudoError::UnknownDocument(set.doc_id.clone()))?;
        if set.span.end > doc.tokens.len() {
            return Err(PseudoError::SpanOutOfBounds {
                doc_id: set.doc_id.clone(),
                start: set.span.start,
                end: set.span.end,
                len: doc.tokens.len(),
            });
        }
        set.mention = doc.joined_tokens(set.span);
    }
    Ok(())
}

/// Keeps only the highest-ranked candidate as a pseudo annotation.
pub fn select_top_candidate(raw: &RawCandidateSet) -> Annotation {
    let top = &raw.candidates[0];
    Annotation {
        doc_id: raw.doc_id.clone(),
        span: raw.span,
        mention: raw.mention.clone(),
        concept: top.concept.clone(),
        score: top.score,
        source: AnnotationSource::Pseudo,
        entity_type: top.sem_types.clone(),
    }
}

fn all_uppercase(s: &str) -> bool {
    let mut saw_alpha = false;
    for c in s.chars() {
        if c.is_alphabetic() {
            saw_alpha = true;
            if !c.is_uppercase() {
                return false;
            }
        }
    }
    saw_alpha
}

/// True when a dictionary name looks like an abbreviation: all-uppercase and
/// at most five characters ("WAS", "CKD", ...).
fn is_abbreviation_name(name: &str) -> bool {
    all_uppercase(name) && name.chars().count() <= 5
}

/// Drops annotations that matched the document only through an abbreviation
/// dictionary name while the document mention itself is not uppercase — the
/// "was" ≠ Wiskott-Aldrich-Syndrome class of errors. The matched name is the
/// first dictionary name whose normalized form equals the normalized mention;
/// annotations with no such name (fuzzy annotator matches) pass through.
pub fn filter_false_abbreviations(
    doc: &Document,
    anns: &[Annotation],
    kb: &Kb,
) -> Vec<Annotation> {
    anns.iter()
        .filter(|ann| {
            debug_assert_eq!(ann.doc_id, doc.doc_id);
            let concept = match kb.get(&ann.concept) {
                Some(c) => c,
                None => return true,
            };
            let mention_norm = normalize_name(&ann.mention);
            let matched = concept
                .names
                .iter()
                .find(|name| normalize_name(name) == mention_norm);
            match matched {
                Some(name) if is_abbreviation_name(name) && !all_uppercase(&ann.mention) => {
                    log::debug!(
                        "doc {}: dropping false abbreviation {:?} ({})",
                        doc.doc_id,
                        ann.mention,
                        ann.concept
                    );
                    false
                }
                _ => true,
            }
        })
        .cloned()
        .collect()
}

/// Resolves overlapping spans in favor of the most specific annotation:
/// longest span first, then higher score, then smaller start index, then
/// concept code. The result is overlap-free and sorted by start index.
pub fn filter_overlaps(anns: &[Annotation]) -> Vec<Annotation> {
    let mut order: Vec<&Annotation> = anns.iter().collect();
    order.sort_by(|a, b| {
        b.span
            .len()
            .cmp(&a.span.len())
            .then_with(|| b.score.total_cmp(&a.score))
            .then_with(|| a.span.start.cmp(&b.span.start))
            .then_with(|| code_order(&a.concept, &b.concept))
    });

    let mut kept: Vec<Annotation> = Vec::new();
    for ann in order {
        if kept.iter().all(|k| !k.span.overlaps(&ann.span)) {
            kept.push(ann.clone());
        }
    }
    kept.sort_by_key(|a| a.span.start);
    kept
}
