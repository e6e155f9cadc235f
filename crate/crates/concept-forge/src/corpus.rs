//! Annotated-corpus handling: PubTator parsing, 512-token segmentation,
//! per-concept training counts, and mention canonicality.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{normalize_name, ConceptId, Kb};

/// Documents with fewer manually annotated training documents than this are
/// treated as undertrained / rare throughout the pipeline.
pub const UNDERTRAINED_THRESHOLD: usize = 10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("doc {doc_id}: char span {start}..{end} does not cover any token")]
    Offset { doc_id: String, start: usize, end: usize },
    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Half-open token range within a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationSource {
    Manual,
    Pseudo,
}

impl AnnotationSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnnotationSource::Manual => "manual",
            AnnotationSource::Pseudo => "pseudo",
        }
    }
}

/// One concept label on a token span of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub doc_id: String,
    pub span: Span,
    pub mention: String,
    pub concept: ConceptId,
    pub score: f64,
    pub source: AnnotationSource,
    /// Entity-type column carried through from the source file (PubTator
    /// type or MMI semantic-type field); not interpreted by the pipeline.
    #[serde(default)]
    pub entity_type: String,
}

#[derive(Deserialize)]
struct DocumentRaw {
    doc_id: String,
    title: String,
    body: String,
}

/// A document plus its whitespace token stream over `title + " " + body`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "DocumentRaw")]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    #[serde(skip_serializing)]
    pub tokens: Vec<String>,
    #[serde(skip_serializing)]
    token_spans: Vec<(usize, usize)>,
}

impl From<DocumentRaw> for Document {
    fn from(raw: DocumentRaw) -> Self {
        Document::new(raw.doc_id, raw.title, raw.body)
    }
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        title: impl Into<String>,
        body: impl Into<String>,
    ) -> Self {
        let title = title.into();
        let body = body.into();
        let text = join_text(&title, &body);
        let token_spans = token_char_spans(&text);
        let tokens = token_spans
            .iter()
            .map(|&(s, e)| text.chars().skip(s).take(e - s).collect())
            .collect();
        Document {
            doc_id: doc_id.into(),
            title,
            body,
            tokens,
            token_spans,
        }
    }

    /// The flat text the token stream and all char offsets refer to.
    pub fn text(&self) -> String {
        join_text(&self.title, &self.body)
    }

    /// Char range (start inclusive, end exclusive) of each token in `text()`.
    pub fn token_char_spans(&self) -> &[(usize, usize)] {
        &self.token_spans
    }

    pub fn joined_tokens(&self, span: Span) -> String {
        self.tokens[span.start..span.end].join(" ")
    }
}

fn join_text(title: &str, body: &str) -> String {
    format!("{} {}", title, body)
}

/// Char offsets of every maximal non-whitespace run.
fn token_char_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    let mut idx = 0;
    for c in text.chars() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, idx));
            }
        } else if start.is_none() {
            start = Some(idx);
        }
        idx += 1;
    }
    if let Some(s) = start {
        spans.push((s, idx));
    }
    spans
}

/// Maps a char span onto the minimal covering token range. Returns the span
/// and whether the range had to grow past a mid-token boundary.
pub fn char_span_to_token_span(
    doc: &Document,
    start: usize,
    end: usize,
) -> Result<(Span, bool), CorpusError> {
    let offset_err = || CorpusError::Offset {
        doc_id: doc.doc_id.clone(),
        start,
        end,
    };
    if start >= end {
        return Err(offset_err());
    }
    let mut first = None;
    let mut last = None;
    for (i, &(ts, te)) in doc.token_spans.iter().enumerate() {
        if ts < end && start < te {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    match (first, last) {
        (Some(f), Some(l)) => {
            let span = Span::new(f, l + 1);
            let expanded =
                doc.token_spans[f].0 != start || doc.token_spans[l].1 != end;
            Ok((span, expanded))
        }
        _ => Err(offset_err()),
    }
}

struct OpenDoc {
    doc_id: String,
    title: String,
    body: Option<String>,
    // (start_char, end_char, mention, entity_type, concept ids)
    raw_anns: Vec<(usize, usize, String, String, Vec<ConceptId>)>,
}

fn finalize_doc(
    open: OpenDoc,
    docs: &mut Vec<Document>,
    anns: &mut Vec<Annotation>,
) -> Result<(), CorpusError> {
    let doc = Document::new(open.doc_id, open.title, open.body.unwrap_or_default());
    for (start, end, mention, entity_type, concepts) in open.raw_anns {
        let (span, expanded) = char_span_to_token_span(&doc, start, end)?;
        let joined = doc.joined_tokens(span);
        if expanded {
            log::warn!(
                "doc {}: char span {}..{} expanded to token boundaries ({:?})",
                doc.doc_id,
                start,
                end,
                joined
            );
        } else if joined != mention {
            log::warn!(
                "doc {}: mention column {:?} differs from text at {}..{} ({:?})",
                doc.doc_id,
                mention,
                start,
                end,
                joined
            );
        }
        for concept in concepts {
            anns.push(Annotation {
                doc_id: doc.doc_id.clone(),
                span,
                mention: joined.clone(),
                concept,
                score: 1.0,
                source: AnnotationSource::Manual,
                entity_type: entity_type.clone(),
            });
        }
    }
    docs.push(doc);
    Ok(())
}

/// Parses the PubTator text format: `ID|t|title`, `ID|a|abstract`, zero or
/// more tab-separated annotation lines, one blank line per document.
/// Composite concept ids joined by `|` become one annotation each.
pub fn parse_pubtator<R: BufRead>(reader: R) -> Result<(Vec<Document>, Vec<Annotation>), CorpusError> {
    let mut docs = Vec::new();
    let mut anns = Vec::new();
    let mut open: Option<OpenDoc> = None;

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let err = |msg: String| CorpusError::Parse { line: lineno, msg };

        if line.trim().is_empty() {
            if let Some(doc) = open.take() {
                finalize_doc(doc, &mut docs, &mut anns)?;
            }
            continue;
        }

        if line.contains('\t') {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(err(format!(
                    "annotation line has {} fields, expected 6",
                    fields.len()
                )));
            }
            let doc = open
                .as_mut()
                .ok_or_else(|| err("annotation line before any title line".into()))?;
            if fields[0] != doc.doc_id {
                return Err(err(format!(
                    "annotation doc id {:?} does not match open document {:?}",
                    fields[0], doc.doc_id
                )));
            }
            let start: usize = fields[1]
                .parse()
                .map_err(|_| err(format!("bad start offset {:?}", fields[1])))?;
            let end: usize = fields[2]
                .parse()
                .map_err(|_| err(format!("bad end offset {:?}", fields[2])))?;
            let mut concepts = Vec::new();
            for part in fields[5].split('|') {
                concepts.push(
                    ConceptId::parse(part).map_err(|e| err(e.to_string()))?,
                );
            }
            doc.raw_anns.push((
                start,
                end,
                fields[3].to_string(),
                fields[4].to_string(),
                concepts,
            ));
            continue;
        }

        let mut parts = line.splitn(3, '|');
        let (id, kind, payload) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(kind), Some(payload)) => (id, kind, payload),
            _ => return Err(err(format!("unrecognized line {:?}", line))),
        };
        match kind {
            "t" => {
                if open.is_some() {
                    return Err(err("title line before previous document was closed".into()));
                }
                open = Some(OpenDoc {
                    doc_id: id.to_string(),
                    title: payload.to_string(),
                    body: None,
                    raw_anns: Vec::new(),
                });
            }
            "a" => {
                let doc = open
                    .as_mut()
                    .ok_or_else(|| err("abstract line before title line".into()))?;
                if doc.doc_id != id {
                    return Err(err(format!(
                        "abstract doc id {:?} does not match open document {:?}",
                        id, doc.doc_id
                    )));
                }
                if doc.body.is_some() {
                    return Err(err("duplicate abstract line".into()));
                }
                if !doc.raw_anns.is_empty() {
                    return Err(err("abstract line after annotation lines".into()));
                }
                doc.body = Some(payload.to_string());
            }
            other => return Err(err(format!("unknown line kind {:?}", other))),
        }
    }

    if let Some(doc) = open.take() {
        finalize_doc(doc, &mut docs, &mut anns)?;
    }
    Ok((docs, anns))
}

/// Serializes documents and annotations back into PubTator lines. On
/// well-formed input (token-aligned spans, non-empty abstracts, no composite
/// ids) this inverts `parse_pubtator` byte for byte.
pub fn write_pubtator<W: std::io::Write>(
    docs: &[Document],
    anns: &[Annotation],
    mut w: W,
) -> std::io::Result<()> {
    let mut by_doc: HashMap<&str, Vec<&Annotation>> = HashMap::new();
    for ann in anns {
        by_doc.entry(ann.doc_id.as_str()).or_default().push(ann);
    }
    for doc in docs {
        writeln!(w, "{}|t|{}", doc.doc_id, doc.title)?;
        if !doc.body.is_empty() {
            writeln!(w, "{}|a|{}", doc.doc_id, doc.body)?;
        }
        for ann in by_doc.get(doc.doc_id.as_str()).into_iter().flatten() {
            let start = doc.token_spans[ann.span.start].0;
            let end = doc.token_spans[ann.span.end - 1].1;
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                doc.doc_id, start, end, ann.mention, ann.entity_type, ann.concept
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// One contiguous ≤`max_tokens` slice of a document's token stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub doc_id: String,
    pub index: usize,
    pub tokens: Vec<String>,
}

/// Greedy left-to-right chunking; every segment but the last holds exactly
/// `max_tokens` tokens, and concatenating them reproduces `doc.tokens`.
pub fn segment_document(doc: &Document, max_tokens: usize) -> Vec<Segment> {
    assert!(max_tokens >= 1, "max_tokens must be at least 1");
    doc.tokens
        .chunks(max_tokens)
        .enumerate()
        .map(|(index, chunk)| Segment {
            doc_id: doc.doc_id.clone(),
            index,
            tokens: chunk.to_vec(),
        })
        .collect()
}

/// Buckets annotations by the segment containing their start token, aligned
/// with `segment_document(doc, max_tokens)`. Spans longer than a segment are
/// dropped with a warning, so no kept annotation straddles segments it was
/// not assigned to.
pub fn annotations_by_segment(
    doc: &Document,
    anns: &[Annotation],
    max_tokens: usize,
) -> Vec<Vec<Annotation>> {
    let n_segments = doc.tokens.len().div_ceil(max_tokens);
    let mut buckets = vec![Vec::new(); n_segments];
    for ann in anns {
        debug_assert_eq!(ann.doc_id, doc.doc_id);
        if ann.span.len() > max_tokens {
            log::warn!(
                "doc {}: dropping annotation {:?} spanning {} tokens (> {})",
                doc.doc_id,
                ann.mention,
                ann.span.len(),
                max_tokens
            );
            continue;
        }
        let seg = ann.span.start / max_tokens;
        if seg < buckets.len() {
            buckets[seg].push(ann.clone());
        }
    }
    buckets
}

/// Number of DISTINCT documents in which each concept is annotated.
pub fn concept_occurrence_counts(anns: &[Annotation]) -> BTreeMap<ConceptId, usize> {
    let mut docs_per_concept: BTreeMap<ConceptId, BTreeSet<&str>> = BTreeMap::new();
    for ann in anns {
        docs_per_concept
            .entry(ann.concept.clone())
            .or_default()
            .insert(ann.doc_id.as_str());
    }
    docs_per_concept
        .into_iter()
        .map(|(c, docs)| (c, docs.len()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MentionClass {
    Canonical,
    NonCanonical,
}

/// A mention is canonical when its normalized form equals the normalized
/// form of any dictionary name of its concept.
pub fn classify_mention(ann: &Annotation, kb: &Kb) -> Result<MentionClass, CorpusError> {
    let concept = kb
        .get(&ann.concept)
        .ok_or_else(|| CorpusError::UnknownConcept(ann.concept.clone()))?;
    let mention = normalize_name(&ann.mention);
    let canonical = concept
        .names
        .iter()
        .any(|name| normalize_name(name) == mention);
    Ok(if canonical {
        MentionClass::Canonical
    } else {
        MentionClass::NonCanonical
    })
}

/// Dataset statistics linking an evaluation set to the training corpus it
/// will be scored against.
#[derive(Debug, Clone)]
pub struct CorpusStats {
    /// Distinct-training-document count per concept.
    pub training_doc_counts: BTreeMap<ConceptId, usize>,
    /// Fraction of evaluation-set concepts never seen in training.
    pub fraction_untrained: f64,
    /// Fraction of evaluation-set concepts with < 10 training documents.
    pub fraction_undertrained: f64,
    /// Fraction of evaluation mentions in non-canonical form. Mentions whose
    /// concept is missing from the KB cannot be classified and are skipped.
    pub fraction_non_canonical: f64,
}

impl CorpusStats {
    pub fn compute(training_anns: &[Annotation], eval_anns: &[Annotation], kb: &Kb) -> Self {
        let training_doc_counts = concept_occurrence_counts(training_anns);
        let eval_concepts: BTreeSet<&ConceptId> =
            eval_anns.iter().map(|a| &a.concept).collect();

        let (mut untrained, mut undertrained) = (0usize, 0usize);
        for c in &eval_concepts {
            let count = training_doc_counts.get(*c).copied().unwrap_or(0);
            if count == 0 {
                untrained += 1;
            }
            if count < UNDERTRAINED_THRESHOLD {
                undertrained += 1;
            }
        }
        let denom = eval_concepts.len();
        let frac = |n: usize| if denom == 0 { 0.0 } else { n as f64 / denom as f64 };

        let mut classified = 0usize;
        let mut non_canonical = 0usize;
        for ann in eval_anns {
            if let Ok(class) = classify_mention(ann, kb) {
                classified += 1;
                if class == MentionClass::NonCanonical {
                    non_canonical += 1;
                }
            }
        }
        let fraction_non_canonical = if classified == 0 {
            0.0
        } else {
            non_canonical as f64 / classified as f64
        };

        CorpusStats {
            training_doc_counts,
            fraction_untrained: frac(untrained),
            fraction_undertrained: frac(undertrained),
            fraction_non_canonical,
        }
    }

    pub fn training_count(&self, concept: &ConceptId) -> usize {
        self.training_doc_counts.get(concept).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{Concept, Vocab};
    use proptest::prelude::*;

    const MINIMAL: &str = "1|t|Kidney disease study\n1|a|We study CKD.\n1\t0\t14\tKidney disease\tDisease\tMESH:D007674\n\n";

    fn mesh(code: &str) -> ConceptId {
        ConceptId::new(Vocab::Mesh, code)
    }

    #[test]
    fn parse_minimal_record() {
        let (docs, anns) = parse_pubtator(MINIMAL.as_bytes()).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(anns.len(), 1);
        assert_eq!(docs[0].tokens, vec!["Kidney", "disease", "study", "We", "study", "CKD."]);
        let ann = &anns[0];
        assert_eq!(ann.concept, mesh("D007674"));
        assert_eq!(ann.span, Span::new(0, 2));
        assert_eq!(ann.mention, "Kidney disease");
        assert_eq!(ann.source, AnnotationSource::Manual);
        assert_eq!(ann.score, 1.0);
    }

    #[test]
    fn parse_title_only_document() {
        let (docs, anns) = parse_pubtator("7|t|Just a title\n\n".as_bytes()).unwrap();
        assert_eq!(docs.len(), 1);
        assert!(anns.is_empty());
        assert_eq!(docs[0].tokens, vec!["Just", "a", "title"]);
    }

    #[test]
    fn parse_rejects_five_field_annotation() {
        let text = "1|t|T\n1|a|A\n1\t0\t1\tT\tDisease\n\n";
        let err = parse_pubtator(text.as_bytes()).unwrap_err();
        match err {
            CorpusError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn parse_splits_composite_ids() {
        let text = "1|t|Kidney disease study\n1|a|x\n1\t0\t14\tKidney disease\tDisease\tMESH:D1|OMIM:22\n\n";
        let (_, anns) = parse_pubtator(text.as_bytes()).unwrap();
        assert_eq!(anns.len(), 2);
        assert_eq!(anns[0].concept, mesh("D1"));
        assert_eq!(anns[1].concept, ConceptId::new(Vocab::Omim, "22"));
        assert_eq!(anns[0].span, anns[1].span);
    }

    #[test]
    fn mid_token_span_expands() {
        let doc = Document::new("1", "Kidney disease study", "");
        let (span, expanded) = char_span_to_token_span(&doc, 0, 3).unwrap();
        assert_eq!(span, Span::new(0, 1));
        assert!(expanded);
        let (span, expanded) = char_span_to_token_span(&doc, 0, 14).unwrap();
        assert_eq!(span, Span::new(0, 2));
        assert!(!expanded);
    }

    #[test]
    fn bad_offsets_error() {
        let doc = Document::new("1", "one two", "");
        assert!(char_span_to_token_span(&doc, 3, 3).is_err()); // empty
        assert!(char_span_to_token_span(&doc, 3, 4).is_err()); // whitespace only
        assert!(char_span_to_token_span(&doc, 50, 60).is_err()); // out of bounds
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let fixture = concat!(
            "10|t|Kidney disease and anemia\n",
            "10|a|Patients with kidney disease were studied.\n",
            "10\t0\t14\tKidney disease\tDisease\tMESH:D007674\n",
            "10\t40\t54\tkidney disease\tDisease\tMESH:D007674\n",
            "\n",
            "11|t|WAS gene report\n",
            "11|a|An unrelated abstract.\n",
            "11\t0\t3\tWAS\tDisease\tUMLS:C0043194\n",
            "\n",
        );
        let (docs, anns) = parse_pubtator(fixture.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_pubtator(&docs, &anns, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), fixture);
    }

    #[test]
    fn segment_sizes() {
        let tokens: Vec<String> = (0..1000).map(|i| i.to_string()).collect();
        let doc = Document::new("1", tokens.join(" "), "");
        let segs = segment_document(&doc, 512);
        assert_eq!(segs.iter().map(|s| s.tokens.len()).collect::<Vec<_>>(), vec![512, 488]);

        let doc512 = Document::new("2", tokens[..512].join(" "), "");
        assert_eq!(segment_document(&doc512, 512).len(), 1);

        let empty = Document::new("3", "", "");
        assert!(segment_document(&empty, 512).is_empty());
    }

    #[test]
    fn annotations_attach_by_start_token() {
        let tokens: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let doc = Document::new("1", tokens.join(" "), "");
        let ann = |start: usize, end: usize| Annotation {
            doc_id: "1".into(),
            span: Span::new(start, end),
            mention: doc.joined_tokens(Span::new(start, end)),
            concept: mesh("D1"),
            score: 1.0,
            source: AnnotationSource::Manual,
            entity_type: String::new(),
        };
        // Segment size 4 → segments [0..4), [4..8), [8..10).
        let buckets = annotations_by_segment(&doc, &[ann(0, 2), ann(3, 5), ann(8, 9), ann(1, 7)], 4);
        assert_eq!(buckets.len(), 3);
        assert_eq!(buckets[0].len(), 2); // 0..2 and 3..5 start in segment 0; 1..7 dropped (len 6 > 4)
        assert_eq!(buckets[1].len(), 0);
        assert_eq!(buckets[2].len(), 1);
    }

    #[test]
    fn occurrence_counts_distinct_documents() {
        let ann = |doc: &str, code: &str| Annotation {
            doc_id: doc.into(),
            span: Span::new(0, 1),
            mention: "x".into(),
            concept: mesh(code),
            score: 1.0,
            source: AnnotationSource::Manual,
            entity_type: String::new(),
        };
        let anns = vec![
            ann("a", "D1"),
            ann("a", "D1"),
            ann("a", "D1"),
            ann("b", "D1"),
            ann("c", "D1"),
            ann("a", "D2"),
            ann("a", "D2"),
        ];
        let counts = concept_occurrence_counts(&anns);
        assert_eq!(counts[&mesh("D1")], 3);
        assert_eq!(counts[&mesh("D2")], 1);
        assert_eq!(counts.get(&mesh("D9")), None);
    }

    fn kb_with(names: &[&str]) -> Kb {
        Kb::new(vec![Concept {
            id: mesh("D1"),
            names: names.iter().map(|s| s.to_string()).collect(),
            description: String::new(),
            semantic_type: "Disease".into(),
            cross_refs: vec![],
        }])
        .unwrap()
    }

    fn mention_ann(mention: &str) -> Annotation {
        Annotation {
            doc_id: "1".into(),
            span: Span::new(0, 1),
            mention: mention.into(),
            concept: mesh("D1"),
            score: 1.0,
            source: AnnotationSource::Manual,
            entity_type: String::new(),
        }
    }

    #[test]
    fn classify_against_dictionary_names() {
        let kb = kb_with(&["Hereditary Diseases", "Genetic Disorders"]);
        assert_eq!(
            classify_mention(&mention_ann("inherited disorder"), &kb).unwrap(),
            MentionClass::NonCanonical
        );
        assert_eq!(
            classify_mention(&mention_ann("Hereditary Diseases"), &kb).unwrap(),
            MentionClass::Canonical
        );
        let kb = kb_with(&["T-Cell"]);
        assert_eq!(
            classify_mention(&mention_ann("T Cell"), &kb).unwrap(),
            MentionClass::Canonical
        );
    }

    #[test]
    fn classify_unknown_concept_errors() {
        let kb = Kb::new(vec![]).unwrap();
        assert!(matches!(
            classify_mention(&mention_ann("x"), &kb),
            Err(CorpusError::UnknownConcept(_))
        ));
    }

    #[test]
    fn stats_fractions() {
        let kb = kb_with(&["Alpha Syndrome"]);
        let train: Vec<Annotation> = (0..3)
            .map(|i| {
                let mut a = mention_ann("Alpha Syndrome");
                a.doc_id = format!("t{i}");
                a
            })
            .collect();
        let mut eval_known = mention_ann("alpha-syndrome");
        eval_known.doc_id = "e1".into();
        let mut eval_unknown = mention_ann("beta thing");
        eval_unknown.doc_id = "e1".into();
        eval_unknown.concept = mesh("D9");
        let stats = CorpusStats::compute(&train, &[eval_known, eval_unknown], &kb);
        assert_eq!(stats.training_count(&mesh("D1")), 3);
        assert_eq!(stats.fraction_untrained, 0.5); // D9 unseen, D1 seen
        assert_eq!(stats.fraction_undertrained, 1.0); // both below 10
        // D9 is not in the KB, so only the D1 mention is classified; it is
        // canonical after normalization.
        assert_eq!(stats.fraction_non_canonical, 0.0);
    }

    proptest! {
        #[test]
        fn segmentation_round_trip(
            n_tokens in 0usize..600,
            max_tokens in 1usize..70,
        ) {
            let tokens: Vec<String> = (0..n_tokens).map(|i| format!("w{i}")).collect();
            let doc = Document::new("1", tokens.join(" "), "");
            let segs = segment_document(&doc, max_tokens);
            let rejoined: Vec<String> =
                segs.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
            prop_assert_eq!(rejoined, doc.tokens.clone());
            for (i, s) in segs.iter().enumerate() {
                prop_assert_eq!(s.index, i);
                prop_assert!(s.tokens.len() <= max_tokens);
                if i + 1 < segs.len() {
                    prop_assert_eq!(s.tokens.len(), max_tokens);
                }
            }
        }

        #[test]
        fn classification_survives_formatting_noise(upper in any::<bool>(), hyphen in any::<bool>()) {
            let kb = kb_with(&["Kidney Disease"]);
            let mut mention = "kidney disease".to_string();
            if hyphen {
                mention = mention.replace(' ', "-");
            }
            if upper {
                mention = mention.to_uppercase();
            }
            prop_assert_eq!(
                classify_mention(&mention_ann(&mention), &kb).unwrap(),
                MentionClass::Canonical
            );
        }

        #[test]
        fn untrained_and_trained_fractions_sum_to_one(
            trained in 0usize..6,
            untrained in 0usize..6,
        ) {
            prop_assume!(trained + untrained > 0);
            let mut train_anns = Vec::new();
            let mut eval_anns = Vec::new();
            for i in 0..trained {
                let mut a = mention_ann("x");
                a.concept = mesh(&format!("T{i}"));
                a.doc_id = format!("train{i}");
                train_anns.push(a.clone());
                a.doc_id = "eval".into();
                eval_anns.push(a);
            }
            for i in 0..untrained {
                let mut a = mention_ann("x");
                a.concept = mesh(&format!("U{i}"));
                a.doc_id = "eval".into();
                eval_anns.push(a);
            }
            let kb = Kb::new(vec![]).unwrap();
            let stats = CorpusStats::compute(&train_anns, &eval_anns, &kb);
            let trained_frac = 1.0 - stats.fraction_untrained;
            let expected = trained as f64 / (trained + untrained) as f64;
            prop_assert!((trained_frac - expected).abs() < 1e-12);
        }
    }
}
