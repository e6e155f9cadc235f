//! Threshold-driven training-data augmentation.
//!
//! For every concept with fewer than `k` manual training documents, candidate
//! library documents are retrieved by the concept's canonical name, leakage
//! against the target dataset is removed, and pseudo-annotated segments are
//! drawn until the concept reaches `k` examples (or its pool runs dry),
//! preferring source papers that have been used least so far.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use thiserror::Error;

use crate::corpus::{
    annotations_by_segment, segment_document, Annotation, AnnotationSource, Document,
};
use crate::kb::{normalize_name, Concept, ConceptId};
use crate::seeds::digest;
use crate::train::TrainingExample;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("candidate pool for {0} has no unused segments")]
    PoolExhausted(ConceptId),
}

#[derive(Debug, Clone)]
pub struct AugmentationConfig {
    /// Target number of training documents per concept.
    pub k: usize,
    /// Retrieval depth per concept.
    pub top_n_candidates: usize,
    /// Pseudo-example weight, carried through to training.
    pub w_a: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            k: 10,
            top_n_candidates: 50,
            w_a: 0.4,
            seed: 0,
        }
    }
}

/// A pseudo-annotated segment available for augmentation, tagged with the
/// library paper it came from.
#[derive(Debug, Clone)]
pub struct PoolSegment {
    pub paper_id: String,
    pub segment: crate::corpus::Segment,
    pub annotations: Vec<Annotation>,
}

/// All augmentable segments for one concept, in retrieval-rank order.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub concept: ConceptId,
    pub segments: Vec<PoolSegment>,
}

impl CandidatePool {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }
}

/// Query-term count of the concept's canonical name in a document; zero
/// unless every term occurs. A deterministic stand-in for a search engine.
pub fn retrieval_score(concept: &Concept, doc: &Document) -> usize {
    let query = normalize_name(concept.canonical_name());
    let terms: Vec<&str> = query.split_whitespace().collect();
    if terms.is_empty() {
        return 0;
    }
    let doc_norm = normalize_name(&doc.text());
    let mut counts: BTreeMap<&str, usize> = terms.iter().map(|t| (*t, 0)).collect();
    for token in doc_norm.split_whitespace() {
        if let Some(c) = counts.get_mut(token) {
            *c += 1;
        }
    }
    if counts.values().any(|&c| c == 0) {
        return 0;
    }
    counts.values().sum()
}

/// Ranks the whole library by retrieval score (descending, ties by doc id)
/// and returns at most `top_n` documents.
pub fn retrieve_candidates<'a>(
    concept: &Concept,
    library: &'a [Document],
    top_n: usize,
) -> Vec<&'a Document> {
    let mut scored: Vec<(usize, &Document)> = library
        .iter()
        .map(|d| (retrieval_score(concept, d), d))
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.doc_id.cmp(&b.1.doc_id)));
    scored.into_iter().take(top_n).map(|(_, d)| d).collect()
}

/// Removes candidates whose doc id appears anywhere in the target dataset
/// (train, validation, or test), preserving order.
pub fn exclude_leakage<'a>(
    candidates: Vec<&'a Document>,
    target_doc_ids: &HashSet<String>,
) -> Vec<&'a Document> {
    candidates
        .into_iter()
        .filter(|d| !target_doc_ids.contains(&d.doc_id))
        .collect()
}

/// Segments candidate documents and keeps those segments whose pseudo
/// annotations include the concept.
pub fn build_pool(
    concept: &ConceptId,
    candidates: &[&Document],
    annotations: &[Annotation],
    max_tokens: usize,
) -> CandidatePool {
    let mut by_doc: BTreeMap<&str, Vec<Annotation>> = BTreeMap::new();
    for ann in annotations {
        by_doc
            .entry(ann.doc_id.as_str())
            .or_default()
            .push(ann.clone());
    }
    let mut segments = Vec::new();
    for doc in candidates {
        let doc_anns = match by_doc.get(doc.doc_id.as_str()) {
            Some(a) => a,
            None => continue,
        };
        let segs = segment_document(doc, max_tokens);
        let buckets = annotations_by_segment(doc, doc_anns, max_tokens);
        for (seg, anns) in segs.into_iter().zip(buckets) {
            if anns.iter().any(|a| &a.concept == concept) {
                segments.push(PoolSegment {
                    paper_id: doc.doc_id.clone(),
                    segment: seg,
                    annotations: anns,
                });
            }
        }
    }
    CandidatePool {
        concept: concept.clone(),
        segments,
    }
}

/// Consumes one segment from the pool: from the paper with the lowest usage
/// count among papers still offering segments, smallest paper id on ties,
/// earliest remaining segment within the paper. Increments that paper's
/// usage.
pub fn select_diverse_segment(
    pool: &mut CandidatePool,
    usage: &mut BTreeMap<String, usize>,
) -> Result<PoolSegment, AugmentError> {
    let chosen_paper = pool
        .segments
        .iter()
        .map(|s| (usage.get(&s.paper_id).copied().unwrap_or(0), &s.paper_id))
        .min()
        .map(|(_, paper)| paper.clone())
        .ok_or_else(|| AugmentError::PoolExhausted(pool.concept.clone()))?;
    let at = pool
        .segments
        .iter()
        .position(|s| s.paper_id == chosen_paper)
        .expect("chosen paper present");
    let segment = pool.segments.remove(at);
    *usage.entry(chosen_paper).or_insert(0) += 1;
    Ok(segment)
}

/// Like [`select_diverse_segment`] but ignoring usage counts: takes the pool
/// head. Used by the diversity-filter ablation.
pub fn select_next_segment(pool: &mut CandidatePool) -> Result<PoolSegment, AugmentError> {
    if pool.segments.is_empty() {
        return Err(AugmentError::PoolExhausted(pool.concept.clone()));
    }
    Ok(pool.segments.remove(0))
}

fn pool_segment_to_example(ps: PoolSegment) -> Option<TrainingExample> {
    let positives: BTreeSet<ConceptId> =
        ps.annotations.iter().map(|a| a.concept.clone()).collect();
    TrainingExample::new(ps.segment, positives, AnnotationSource::Pseudo)
}

/// Fills every below-threshold concept with pseudo examples and returns the
/// shuffled union of manual and pseudo examples.
///
/// Concepts are processed in id order; a concept with `m < k` manual
/// documents receives `k − m` pool segments (fewer if the pool exhausts,
/// logged); concepts at or above `k` receive none. `use_diversity` selects
/// between least-used-paper consumption and plain pool order.
pub fn augment_to_threshold(
    manual: &[TrainingExample],
    manual_counts: &BTreeMap<ConceptId, usize>,
    pools: &mut BTreeMap<ConceptId, CandidatePool>,
    cfg: &AugmentationConfig,
    use_diversity: bool,
) -> Vec<TrainingExample> {
    let mut usage: BTreeMap<String, usize> = BTreeMap::new();
    let mut pseudo = Vec::new();
    for (concept, pool) in pools.iter_mut() {
        let have = manual_counts.get(concept).copied().unwrap_or(0);
        if have >= cfg.k {
            continue;
        }
        let need = cfg.k - have;
        let mut added = 0;
        while added < need {
            let picked = if use_diversity {
                select_diverse_segment(pool, &mut usage)
            } else {
                select_next_segment(pool)
            };
            match picked {
                Ok(ps) => {
                    if let Some(ex) = pool_segment_to_example(ps) {
                        pseudo.push(ex);
                        added += 1;
                    }
                }
                Err(AugmentError::PoolExhausted(_)) => {
                    log::warn!(
                        "concept {concept}: pool exhausted at {added} of {need} needed examples"
                    );
                    break;
                }
            }
        }
    }

    let mut combined: Vec<TrainingExample> = manual.to_vec();
    combined.extend(pseudo);
    shuffle_examples(combined, cfg.seed)
}

/// Seeded pseudo-random permutation by keyed sort. Each example's position
/// depends only on its own identity and the seed, so removing some examples
/// never reorders the rest — zero-weight ablations stay comparable.
fn shuffle_examples(examples: Vec<TrainingExample>, seed: u64) -> Vec<TrainingExample> {
    let mut keyed: Vec<([u8; 32], TrainingExample)> = examples
        .into_iter()
        .map(|ex| {
            let positives = ex
                .positives
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(",");
            let key = digest(
                seed,
                &[
                    b"augment-shuffle",
                    ex.segment.doc_id.as_bytes(),
                    &(ex.segment.index as u64).to_le_bytes(),
                    ex.source.as_str().as_bytes(),
                    positives.as_bytes(),
                ],
            );
            (key, ex)
        })
        .collect();
    keyed.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            let ka = (&a.1.segment.doc_id, a.1.segment.index, a.1.source);
            let kb = (&b.1.segment.doc_id, b.1.segment.index, b.1.source);
            ka.cmp(&kb)
        })
    });
    keyed.into_iter().map(|(_, ex)| ex).collect()
}

/// Builds manual training examples from an annotated corpus: one example per
/// segment that carries at least one annotation.
pub fn examples_from_corpus(
    docs: &[Document],
    anns: &[Annotation],
    max_tokens: usize,
) -> Vec<TrainingExample> {
    let mut by_doc: BTreeMap<&str, Vec<Annotation>> = BTreeMap::new();
    for ann in anns {
        by_doc
            .entry(ann.doc_id.as_str())
            .or_default()
            .push(ann.clone());
    }
    let mut out = Vec::new();
    for doc in docs {
        let doc_anns = match by_doc.get(doc.doc_id.as_str()) {
            Some(a) => a,
            None => continue,
        };
        let segs = segment_document(doc, max_tokens);
        let buckets = annotations_by_segment(doc, doc_anns, max_tokens);
        for (seg, anns) in segs.into_iter().zip(buckets) {
            let positives: BTreeSet<ConceptId> =
                anns.iter().map(|a| a.concept.clone()).collect();
            if let Some(ex) = TrainingExample::new(seg, positives, AnnotationSource::Manual) {
                out.push(ex);
            }
        }
    }
    out
}
