//! Document-level retrieval metrics and the grid-sweep harness.
//!
//! A prediction set is the ranked top-k concept list for one document.
//! Reports cover the full gold standard plus three diagnostic splits:
//! concepts that were rare in training, gold concepts mentioned only by
//! non-canonical surface forms, and per-semantic-type breakdowns. All splits
//! micro-average by default; splits whose denominator is empty are reported
//! as absent rather than as zero.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ann::{search, IvfIndex, SearchParams};
use crate::corpus::{
    classify_mention, concept_occurrence_counts, segment_document, Annotation, MentionClass,
    UNDERTRAINED_THRESHOLD,
};
use crate::encoder::{embed_text, EmbeddingVector, EncoderParams};
use crate::kb::{ConceptId, Kb};
use crate::vecmath::mean_vector;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no predictions for documents: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ranked concepts predicted for one document (best first, no duplicates).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub doc_id: String,
    pub concepts: Vec<ConceptId>,
}

/// Whole-document embedding: the mean of its segment embeddings,
/// renormalized to unit length. Empty documents fall back to the encoder's
/// empty-text embedding.
pub fn document_embedding(
    params: &EncoderParams,
    doc: &crate::corpus::Document,
    max_tokens: usize,
) -> EmbeddingVector {
    let segments = segment_document(doc, max_tokens);
    if segments.is_empty() {
        return embed_text(params, &[] as &[&str]);
    }
    let embs: Vec<EmbeddingVector> = segments
        .iter()
        .map(|s| embed_text(params, &s.tokens))
        .collect();
    let refs: Vec<&[f64]> = embs.iter().map(|e| e.values.as_slice()).collect();
    let mut mean = mean_vector(&refs).expect("non-empty");
    let norm = crate::vecmath::l2_norm(&mean);
    if norm > 0.0 {
        for v in &mut mean {
            *v /= norm;
        }
    } else {
        // Degenerate cancellation: fall back to the uniform direction,
        // matching the encoder's own zero-vector protection.
        let d = params.dim();
        mean = vec![1.0 / (d as f64).sqrt(); d];
    }
    EmbeddingVector { values: mean }
}

/// Embeds a document and retrieves the `k` nearest concepts from the index.
pub fn predict_top_k(
    params: &EncoderParams,
    index: &IvfIndex,
    doc: &crate::corpus::Document,
    max_tokens: usize,
    search_params: SearchParams,
) -> PredictionSet {
    let embedding = document_embedding(params, doc, max_tokens);
    let hits = search(index, &embedding, search_params);
    PredictionSet {
        doc_id: doc.doc_id.clone(),
        concepts: hits.into_iter().map(|(id, _)| id).collect(),
    }
}

/// Precision, recall and F1 of the top-k prediction list against a gold set.
/// Precision divides by `k` even when fewer than `k` predictions exist.
pub fn prf_at_k(
    predictions: &[ConceptId],
    gold: &BTreeSet<ConceptId>,
    k: usize,
) -> (f64, f64, f64) {
    assert!(k >= 1, "k must be at least 1");
    assert!(!gold.is_empty(), "gold set must be non-empty");
    let top: BTreeSet<&ConceptId> = predictions.iter().take(k).collect();
    let inter = top.iter().filter(|c| gold.contains(**c)).count();
    let p = inter as f64 / k as f64;
    let r = inter as f64 / gold.len() as f64;
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Averaging {
    Micro,
    Macro,
}

/// One document's evaluation inputs: ranked predictions plus the gold
/// concepts in scope for each split.
struct DocEval {
    predictions: Vec<ConceptId>,
    gold: BTreeSet<ConceptId>,
}

/// Evaluation report. `None` marks a split with no qualifying gold concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rare_f1: Option<f64>,
    pub noncanonical_recall_at_5: Option<f64>,
    pub noncanonical_recall_at_10: Option<f64>,
    pub per_type_f1: BTreeMap<String, f64>,
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Micro P/R/F1 over a restricted concept universe: predictions and gold are
/// both intersected with `universe` before counting. Returns `None` when no
/// gold concept falls inside the universe.
fn restricted_micro(
    docs: &[DocEval],
    k: usize,
    universe: &BTreeSet<ConceptId>,
) -> Option<(f64, f64, f64)> {
    let mut inter = 0usize;
    let mut pred_total = 0usize;
    let mut gold_total = 0usize;
    for d in docs {
        let top: Vec<&ConceptId> = d
            .predictions
            .iter()
            .take(k)
            .filter(|c| universe.contains(*c))
            .collect();
        pred_total += top.len();
        let gold_in: BTreeSet<&ConceptId> =
            d.gold.iter().filter(|c| universe.contains(*c)).collect();
        gold_total += gold_in.len();
        inter += top.iter().filter(|c| gold_in.contains(**c)).count();
    }
    if gold_total == 0 {
        return None;
    }
    let p = if pred_total > 0 { inter as f64 / pred_total as f64 } else { 0.0 };
    let r = inter as f64 / gold_total as f64;
    Some((p, r, f1_of(p, r)))
}

/// Recall@k restricted to per-document gold subsets (used for the
/// non-canonical split, where membership depends on the document).
fn restricted_recall(
    docs: &[DocEval],
    k: usize,
    gold_subsets: &[BTreeSet<ConceptId>],
) -> Option<f64> {
    let mut inter = 0usize;
    let mut total = 0usize;
    for (d, subset) in docs.iter().zip(gold_subsets) {
        total += subset.len();
        inter += d
            .predictions
            .iter()
            .take(k)
            .filter(|c| subset.contains(*c))
            .count();
    }
    if total == 0 {
        None
    } else {
        Some(inter as f64 / total as f64)
    }
}

/// Computes the full report for one evaluation split.
///
/// `gold_annotations` define both the gold concept sets and the mention
/// surfaces used for non-canonical classification; `training_annotations`
/// (manual only) define per-concept training counts for the rare split.
/// Documents without gold annotations are skipped. Every gold document must
/// have a prediction set.
pub fn split_report(
    predictions: &[PredictionSet],
    gold_annotations: &[Annotation],
    training_annotations: &[Annotation],
    kb: &Kb,
    k: usize,
    averaging: Averaging,
) -> Result<MetricsReport, EvalError> {
    let mut gold_by_doc: BTreeMap<&str, Vec<&Annotation>> = BTreeMap::new();
    for ann in gold_annotations {
        gold_by_doc.entry(ann.doc_id.as_str()).or_default().push(ann);
    }
    let pred_by_doc: BTreeMap<&str, &PredictionSet> = predictions
        .iter()
        .map(|p| (p.doc_id.as_str(), p))
        .collect();
    let missing: Vec<String> = gold_by_doc
        .keys()
        .filter(|d| !pred_by_doc.contains_key(**d))
        .map(|d| d.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingPredictions(missing));
    }

    let training_counts = concept_occurrence_counts(training_annotations);
    let rare_universe: BTreeSet<ConceptId> = gold_by_doc
        .values()
        .flatten()
        .map(|a| a.concept.clone())
        .filter(|c| {
            training_counts.get(c).copied().unwrap_or(0) < UNDERTRAINED_THRESHOLD
        })
        .collect();

    let mut docs = Vec::new();
    let mut noncanonical_subsets = Vec::new();
    for (doc_id, anns) in &gold_by_doc {
        let gold: BTreeSet<ConceptId> = anns.iter().map(|a| a.concept.clone()).collect();
        // A gold concept is non-canonical for this document when every one of
        // its mentions here fails to match a dictionary name.
        let mut nc = BTreeSet::new();
        for c in &gold {
            let all_nc = anns
                .iter()
                .filter(|a| &a.concept == c)
                .all(|a| matches!(classify_mention(a, kb), Ok(MentionClass::NonCanonical)));
            if all_nc {
                nc.insert(c.clone());
            }
        }
        noncanonical_subsets.push(nc);
        docs.push(DocEval {
            predictions: pred_by_doc[doc_id].concepts.clone(),
            gold,
        });
    }

    let (precision, recall, f1) = match averaging {
        Averaging::Micro => {
            let mut inter = 0usize;
            let mut gold_total = 0usize;
            for d in &docs {
                let top: BTreeSet<&ConceptId> = d.predictions.iter().take(k).collect();
                inter += top.iter().filter(|c| d.gold.contains(**c)).count();
                gold_total += d.gold.len();
            }
            let p = if docs.is_empty() {
                0.0
            } else {
                inter as f64 / (k * docs.len()) as f64
            };
            let r = if gold_total > 0 { inter as f64 / gold_total as f64 } else { 0.0 };
            (p, r, f1_of(p, r))
        }
        Averaging::Macro => {
            let mut ps = 0.0;
            let mut rs = 0.0;
            let mut fs = 0.0;
            for d in &docs {
                let (p, r, f) = prf_at_k(&d.predictions, &d.gold, k);
                ps += p;
                rs += r;
                fs += f;
            }
            let n = docs.len().max(1) as f64;
            (ps / n, rs / n, fs / n)
        }
    };

    let rare_f1 = restricted_micro(&docs, k, &rare_universe).map(|(_, _, f)| f);

    let nc5 = restricted_recall(&docs, 5, &noncanonical_subsets);
    let nc10 = restricted_recall(&docs, 10.min(k), &noncanonical_subsets);

    let mut per_type_f1 = BTreeMap::new();
    let mut types: BTreeSet<String> = BTreeSet::new();
    for anns in gold_by_doc.values() {
        for a in anns.iter() {
            if let Some(c) = kb.get(&a.concept) {
                if !c.semantic_type.is_empty() {
                    types.insert(c.semantic_type.clone());
                }
            }
        }
    }
    for ty in types {
        let universe: BTreeSet<ConceptId> = kb
            .iter()
            .filter(|c| c.semantic_type == ty)
            .map(|c| c.id.clone())
            .collect();
        if let Some((_, _, f)) = restricted_micro(&docs, k, &universe) {
            per_type_f1.insert(ty, f);
        }
    }

    Ok(MetricsReport {
        precision,
        recall,
        f1,
        rare_f1,
        noncanonical_recall_at_5: nc5,
        noncanonical_recall_at_10: nc10,
        per_type_f1,
    })
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_metric).unwrap_or_else(|| "NA".to_string())
}

impl MetricsReport {
    /// `(split, metric, value)` rows in fixed order; absent splits print NA.
    pub fn csv_rows(&self) -> Vec<(String, String, String)> {
        let mut rows = vec![
            ("all".into(), "precision".into(), fmt_metric(self.precision)),
            ("all".into(), "recall".into(), fmt_metric(self.recall)),
            ("all".into(), "f1".into(), fmt_metric(self.f1)),
            ("rare".into(), "f1".into(), fmt_opt(self.rare_f1)),
            (
                "noncanonical".into(),
                "recall@5".into(),
                fmt_opt(self.noncanonical_recall_at_5),
            ),
            (
                "noncanonical".into(),
                "recall@10".into(),
                fmt_opt(self.noncanonical_recall_at_10),
            ),
        ];
        for (ty, f) in &self.per_type_f1 {
            rows.push((format!("type:{ty}"), "f1".into(), fmt_metric(*f)));
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "split,metric,value")?;
        for (split, metric, value) in self.csv_rows() {
            writeln!(w, "{split},{metric},{value}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum GridValue {
    Threshold(usize),
    PseudoWeight(f64),
    Filters(FilterSet),
}

impl GridValue {
    pub fn label(&self) -> String {
        match self {
            GridValue::Threshold(k) => format!("k={k}"),
            GridValue::PseudoWeight(w) => format!("wa={w}"),
            GridValue::Filters(f) => format!("filters={f}"),
        }
    }
}

/// Which pseudo-annotation filters are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSet {
    pub abbrev: bool,
    pub overlap: bool,
    pub diversity: bool,
}

impl FilterSet {
    pub fn all() -> Self {
        FilterSet { abbrev: true, overlap: true, diversity: true }
    }

    pub fn none() -> Self {
        FilterSet { abbrev: false, overlap: false, diversity: false }
    }

    /// The cumulative ablation ladder: no filters, then each added in
    /// pipeline order.
    pub fn ablation_ladder() -> [FilterSet; 4] {
        [
            FilterSet::none(),
            FilterSet { abbrev: true, overlap: false, diversity: false },
            FilterSet { abbrev: true, overlap: true, diversity: false },
            FilterSet::all(),
        ]
    }

    /// Parses a comma-separated subset such as `abbrev,overlap,diversity`.
    /// An empty string means no filters.
    pub fn parse(s: &str) -> Result<Self, String> {
        let mut set = FilterSet::none();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "abbrev" => set.abbrev = true,
                "overlap" => set.overlap = true,
                "diversity" => set.diversity = true,
                other => return Err(format!("unknown filter: {other}")),
            }
        }
        Ok(set)
    }
}

impl std::fmt::Display for FilterSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut parts = Vec::new();
        if self.abbrev {
            parts.push("abbrev");
        }
        if self.overlap {
            parts.push("overlap");
        }
        if self.diversity {
            parts.push("diversity");
        }
        if parts.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", parts.join("+"))
        }
    }
}

/// Runs the pipeline closure once per grid point and collects reports.
/// Identical inputs and seeds yield identical tables.
pub fn run_sweep<E, F>(grid: &[GridValue], mut run: F) -> Result<Vec<(String, MetricsReport)>, E>
where
    F: FnMut(&GridValue) -> Result<MetricsReport, E>,
{
    let mut out = Vec::with_capacity(grid.len());
    for point in grid {
        out.push((point.label(), run(point)?));
    }
    Ok(out)
}

/// Writes the sweep table as `grid_value,split,metric,value`.
pub fn write_sweep_csv<W: Write>(
    rows: &[(String, MetricsReport)],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "grid_value,split,metric,value")?;
    for (label, report) in rows {
        for (split, metric, value) in report.csv_rows() {
            writeln!(w, "{label},{split},{metric},{value}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;
    use crate::kb::{Concept, Vocab};
    use proptest::prelude::*;

    fn cid(code: &str) -> ConceptId {
        ConceptId::new(Vocab::Synthetic, code)
    }

    fn gold(codes: &[&str]) -> BTreeSet<ConceptId> {
        codes.iter().map(|c| cid(c)).collect()
    }

    fn preds(codes: &[&str]) -> Vec<ConceptId> {
        codes.iter().map(|c| cid(c)).collect()
    }

    #[test]
    fn prf_examples() {
        // 4 gold concepts, all inside the top 10.
        let p = preds(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"]);
        let (pr, rc, f1) = prf_at_k(&p, &gold(&["a", "b", "c", "d"]), 10);
        assert!((pr - 0.4).abs() < 1e-12);
        assert!((rc - 1.0).abs() < 1e-12);
        assert!((f1 - 2.0 * 0.4 / 1.4).abs() < 1e-12);

        // No overlap → all zero, F1 well-defined.
        let (pr, rc, f1) = prf_at_k(&p, &gold(&["z1", "z2"]), 10);
        assert_eq!((pr, rc, f1), (0.0, 0.0, 0.0));

        // 20 gold, 10 predicted correctly.
        let codes: Vec<String> = (0..20).map(|i| format!("g{i:02}")).collect();
        let gold_all: BTreeSet<ConceptId> = codes.iter().map(|c| cid(c)).collect();
        let p: Vec<ConceptId> = codes.iter().take(10).map(|c| cid(c)).collect();
        let (pr, rc, f1) = prf_at_k(&p, &gold_all, 10);
        assert!((pr - 1.0).abs() < 1e-12);
        assert!((rc - 0.5).abs() < 1e-12);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);

        // Precision divides by k even with fewer predictions.
        let (pr, _, _) = prf_at_k(&preds(&["a"]), &gold(&["a"]), 10);
        assert!((pr - 0.1).abs() < 1e-12);
    }

    fn mk_kb(entries: &[(&str, &str, &str)]) -> Kb {
        // (code, name, semantic_type)
        let concepts = entries
            .iter()
            .map(|(code, name, ty)| Concept {
                id: cid(code),
                names: vec![name.to_string()],
                description: String::new(),
                semantic_type: ty.to_string(),
                cross_refs: vec![],
            })
            .collect();
        Kb::new(concepts).unwrap()
    }

    fn gold_ann(doc: &str, code: &str, mention: &str) -> Annotation {
        Annotation {
            doc_id: doc.into(),
            span: Span::new(0, 1),
            mention: mention.into(),
            concept: cid(code),
            score: 1.0,
            source: crate::corpus::AnnotationSource::Manual,
            entity_type: String::new(),
        }
    }

    fn train_ann(doc: &str, code: &str) -> Annotation {
        gold_ann(doc, code, "x")
    }

    #[test]
    fn report_matches_hand_computation() {
        let kb = mk_kb(&[
            ("A", "alpha", "Disease"),
            ("B", "beta", "Disease"),
            ("C", "gamma", "Chemical"),
        ]);
        // A is well-trained (10 docs), B and C are rare.
        let mut train: Vec<Annotation> =
            (0..10).map(|i| train_ann(&format!("t{i}"), "A")).collect();
        train.push(train_ann("t0", "B"));

        let gold_anns = vec![
            gold_ann("d1", "A", "alpha"),
            gold_ann("d1", "B", "odd name"),
            gold_ann("d2", "C", "gamma"),
        ];
        let predictions = vec![
            PredictionSet { doc_id: "d1".into(), concepts: preds(&["A", "C"]) },
            PredictionSet { doc_id: "d2".into(), concepts: preds(&["C", "B"]) },
        ];
        let report = split_report(&predictions, &gold_anns, &train, &kb, 10, Averaging::Micro)
            .unwrap();

        // Micro all: inter = |{A}| + |{C}| = 2, gold = 3, preds = 10*2.
        assert!((report.precision - 2.0 / 20.0).abs() < 1e-12);
        assert!((report.recall - 2.0 / 3.0).abs() < 1e-12);

        // Rare universe = {B, C}: predicted-in-universe = {C} + {C,B} = 3,
        // gold-in-universe = 2, inter = 1 (C on d2).
        let p = 1.0 / 3.0;
        let r = 1.0 / 2.0;
        assert!((report.rare_f1.unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-12);

        // Non-canonical: only B on d1 ("odd name"); B not in d1's top-5.
        assert_eq!(report.noncanonical_recall_at_5, Some(0.0));
        assert_eq!(report.noncanonical_recall_at_10, Some(0.0));

        // Per type: Disease universe {A,B}: inter=1 (A), preds {A}+{B}=2, gold {A,B}=2.
        assert!((report.per_type_f1["Disease"] - 0.5).abs() < 1e-12);
        // Chemical universe {C}: inter=1, preds {C}+{C}=2, gold {C}=1.
        let p = 0.5;
        let r = 1.0;
        assert!((report.per_type_f1["Chemical"] - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }

    #[test]
    fn noncanonical_requires_every_mention_noncanonical() {
        let kb = mk_kb(&[("A", "alpha", "Disease")]);
        let train: Vec<Annotation> = vec![];
        // Two mentions of A in d1: one canonical, one not → A is canonical.
        let gold_anns = vec![
            gold_ann("d1", "A", "alpha"),
            gold_ann("d1", "A", "something else"),
        ];
        let predictions = vec![PredictionSet { doc_id: "d1".into(), concepts: preds(&["A"]) }];
        let report =
            split_report(&predictions, &gold_anns, &train, &kb, 10, Averaging::Micro).unwrap();
        assert_eq!(report.noncanonical_recall_at_5, None);
        assert_eq!(report.noncanonical_recall_at_10, None);
    }

    #[test]
    fn empty_splits_are_absent_not_zero() {
        let kb = mk_kb(&[("A", "alpha", "")]);
        // A trained in 12 docs → not rare; mention canonical → no NC split.
        let train: Vec<Annotation> =
            (0..12).map(|i| train_ann(&format!("t{i}"), "A")).collect();
        let gold_anns = vec![gold_ann("d1", "A", "alpha")];
        let predictions = vec![PredictionSet { doc_id: "d1".into(), concepts: preds(&["A"]) }];
        let report =
            split_report(&predictions, &gold_anns, &train, &kb, 10, Averaging::Micro).unwrap();
        assert_eq!(report.rare_f1, None);
        assert_eq!(report.noncanonical_recall_at_5, None);
        assert!(report.per_type_f1.is_empty());

        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.contains("rare,f1,NA"));
        assert!(text.contains("noncanonical,recall@5,NA"));
    }

    #[test]
    fn missing_predictions_is_an_error() {
        let kb = mk_kb(&[("A", "alpha", "")]);
        let gold_anns = vec![gold_ann("d1", "A", "alpha"), gold_ann("d2", "A", "alpha")];
        let predictions = vec![PredictionSet { doc_id: "d1".into(), concepts: preds(&["A"]) }];
        let err = split_report(&predictions, &gold_anns, &[], &kb, 10, Averaging::Micro)
            .unwrap_err();
        match err {
            EvalError::MissingPredictions(ids) => assert_eq!(ids, vec!["d2".to_string()]),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn macro_averaging_averages_per_document() {
        let kb = mk_kb(&[("A", "alpha", ""), ("B", "beta", "")]);
        let gold_anns = vec![gold_ann("d1", "A", "alpha"), gold_ann("d2", "B", "beta")];
        let predictions = vec![
            PredictionSet { doc_id: "d1".into(), concepts: preds(&["A"]) },
            PredictionSet { doc_id: "d2".into(), concepts: preds(&["A"]) },
        ];
        let report =
            split_report(&predictions, &gold_anns, &[], &kb, 1, Averaging::Macro).unwrap();
        // d1 is perfect (1,1,1); d2 is zero; macro mean = 0.5.
        assert!((report.precision - 0.5).abs() < 1e-12);
        assert!((report.recall - 0.5).abs() < 1e-12);
        assert!((report.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn filter_set_parsing_and_ladder() {
        assert_eq!(FilterSet::parse("").unwrap(), FilterSet::none());
        assert_eq!(
            FilterSet::parse("abbrev,overlap,diversity").unwrap(),
            FilterSet::all()
        );
        assert_eq!(
            FilterSet::parse("overlap").unwrap(),
            FilterSet { abbrev: false, overlap: true, diversity: false }
        );
        assert!(FilterSet::parse("bogus").is_err());

        let ladder = FilterSet::ablation_ladder();
        assert_eq!(ladder.len(), 4);
        assert_eq!(ladder[0].to_string(), "none");
        assert_eq!(ladder[3].to_string(), "abbrev+overlap+diversity");
    }

    #[test]
    fn sweep_table_has_one_block_per_grid_point() {
        let kb = mk_kb(&[("A", "alpha", "")]);
        let gold_anns = vec![gold_ann("d1", "A", "alpha")];
        let predictions = vec![PredictionSet { doc_id: "d1".into(), concepts: preds(&["A"]) }];
        let grid = vec![
            GridValue::Threshold(0),
            GridValue::Threshold(5),
            GridValue::PseudoWeight(0.4),
        ];
        let rows = run_sweep::<EvalError, _>(&grid, |_| {
            split_report(&predictions, &gold_anns, &[], &kb, 10, Averaging::Micro)
        })
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].0, "k=0");
        assert_eq!(rows[2].0, "wa=0.4");

        let mut csv = Vec::new();
        write_sweep_csv(&rows, &mut csv).unwrap();
        let text = String::from_utf8(csv.clone()).unwrap();
        assert!(text.starts_with("grid_value,split,metric,value\n"));
        assert_eq!(text.lines().filter(|l| l.starts_with("k=0,")).count(), 6);

        let mut csv2 = Vec::new();
        write_sweep_csv(&rows, &mut csv2).unwrap();
        assert_eq!(csv, csv2);
    }

    #[test]
    fn report_json_round_trips() {
        let report = MetricsReport {
            precision: 0.25,
            recall: 0.5,
            f1: 1.0 / 3.0,
            rare_f1: None,
            noncanonical_recall_at_5: Some(0.2),
            noncanonical_recall_at_10: Some(0.4),
            per_type_f1: [("Disease".to_string(), 0.7)].into(),
        };
        let json = report.to_json();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(json.contains("\"rare_f1\": null"));
    }

    proptest! {
        #[test]
        fn recall_is_monotone_in_k(
            pred_idx in proptest::collection::vec(0usize..30, 1..15),
            gold_idx in proptest::collection::btree_set(0usize..30, 1..10),
        ) {
            let mut seen = BTreeSet::new();
            let predictions: Vec<ConceptId> = pred_idx
                .into_iter()
                .filter(|i| seen.insert(*i))
                .map(|i| cid(&format!("c{i}")))
                .collect();
            prop_assume!(!predictions.is_empty());
            let gold: BTreeSet<ConceptId> =
                gold_idx.into_iter().map(|i| cid(&format!("c{i}"))).collect();
            let (_, r5, _) = prf_at_k(&predictions, &gold, 5);
            let (_, r10, _) = prf_at_k(&predictions, &gold, 10);
            prop_assert!(r5 <= r10 + 1e-12);
        }

        #[test]
        fn f1_is_harmonic_mean(
            n_pred in 1usize..12,
            n_gold in 1usize..12,
            overlap in 0usize..12,
        ) {
            let overlap = overlap.min(n_pred).min(n_gold);
            let predictions: Vec<ConceptId> = (0..n_pred)
                .map(|i| if i < overlap { cid(&format!("g{i}")) } else { cid(&format!("p{i}")) })
                .collect();
            let gold: BTreeSet<ConceptId> =
                (0..n_gold).map(|i| cid(&format!("g{i}"))).collect();
            let k = 10;
            let (p, r, f1) = prf_at_k(&predictions, &gold, k);
            let expect_p = overlap as f64 / k as f64;
            let expect_r = overlap as f64 / n_gold as f64;
            prop_assert!((p - expect_p).abs() < 1e-12);
            prop_assert!((r - expect_r).abs() < 1e-12);
            if p + r > 0.0 {
                prop_assert!((f1 - 2.0 * p * r / (p + r)).abs() < 1e-12);
            } else {
                prop_assert_eq!(f1, 0.0);
            }
        }
    }
}
