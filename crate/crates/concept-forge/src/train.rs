//! Confidence-weighted contrastive training.
//!
//! Each example pulls a segment embedding toward its positive concepts and
//! away from 25 sampled negatives (20 hard, 5 random) under an InfoNCE
//! objective; pseudo-annotated examples enter the batch objective scaled by
//! `w_a`. Concept embeddings are frozen — only the shared encoder moves.
//!
//! Gradients are computed analytically (the encoder is small enough to
//! backprop by hand) and can be validated against
//! [`finite_difference_gradient`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotationSource, Segment};
use crate::encoder::{EmbeddingVector, EncoderParams};
use crate::kb::ConceptId;
use crate::seeds::stream_rng;
use crate::vecmath::{dot, Matrix};

pub const N_HARD_NEGATIVES: usize = 20;
pub const N_RANDOM_NEGATIVES: usize = 5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("no embedding for positive concept {0}")]
    MissingConcept(ConceptId),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One weighted contrastive unit: a segment and its positive concepts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub segment: Segment,
    pub positives: BTreeSet<ConceptId>,
    pub source: AnnotationSource,
}

impl TrainingExample {
    /// `None` when there are no positives — a segment without concept labels
    /// cannot be a contrastive example.
    pub fn new(
        segment: Segment,
        positives: BTreeSet<ConceptId>,
        source: AnnotationSource,
    ) -> Option<Self> {
        if positives.is_empty() {
            return None;
        }
        Some(TrainingExample {
            segment,
            positives,
            source,
        })
    }

    pub fn weight_class(&self) -> &'static str {
        match self.source {
            AnnotationSource::Manual => "manual",
            AnnotationSource::Pseudo => "augmented",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ExampleRow {
    doc_id: String,
    segment_index: usize,
    tokens: Vec<String>,
    positives: Vec<ConceptId>,
    source: AnnotationSource,
    weight_class: String,
}

impl From<&TrainingExample> for ExampleRow {
    fn from(ex: &TrainingExample) -> Self {
        ExampleRow {
            doc_id: ex.segment.doc_id.clone(),
            segment_index: ex.segment.index,
            tokens: ex.segment.tokens.clone(),
            positives: ex.positives.iter().cloned().collect(),
            source: ex.source,
            weight_class: ex.weight_class().to_string(),
        }
    }
}

/// Writes one JSON object per example: `doc_id`, `segment_index`, `tokens`,
/// `positives`, `source`, `weight_class`.
pub fn write_examples_jsonl<W: Write>(
    examples: &[TrainingExample],
    mut w: W,
) -> std::io::Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut w, &ExampleRow::from(ex))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_examples_jsonl<R: BufRead>(reader: R) -> Result<Vec<TrainingExample>, TrainError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ExampleRow = serde_json::from_str(&line).map_err(|e| TrainError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        let segment = Segment {
            doc_id: row.doc_id,
            index: row.segment_index,
            tokens: row.tokens,
        };
        let ex = TrainingExample::new(segment, row.positives.into_iter().collect(), row.source)
            .ok_or_else(|| TrainError::Parse {
                line: i + 1,
                msg: "example has no positives".into(),
            })?;
        out.push(ex);
    }
    Ok(out)
}

/// Negatives for one example: top-similarity concepts plus uniform draws.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSet {
    pub hard: Vec<ConceptId>,
    pub random: Vec<ConceptId>,
}

impl NegativeSet {
    pub fn len(&self) -> usize {
        self.hard.len() + self.random.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty() && self.random.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConceptId> {
        self.hard.iter().chain(self.random.iter())
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Weight of pseudo-annotated examples in the batch objective.
    pub w_a: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            w_a: 0.4,
            learning_rate: 1e-4,
            batch_size: 16,
            temperature: 1.0,
            epochs: 1,
            seed: 0,
        }
    }
}

/// Picks `n_hard` highest-cosine non-positive concepts, then `n_random`
/// uniform draws (without replacement) from what remains. When fewer than
/// `n_hard + n_random` non-positive concepts exist, everything available is
/// returned and the random bucket shrinks first.
pub fn sample_negatives<R: Rng>(
    doc_embedding: &EmbeddingVector,
    positives: &BTreeSet<ConceptId>,
    concept_embeddings: &BTreeMap<ConceptId, EmbeddingVector>,
    n_hard: usize,
    n_random: usize,
    rng: &mut R,
) -> NegativeSet {
    let mut scored: Vec<(&ConceptId, f64)> = concept_embeddings
        .iter()
        .filter(|(id, _)| !positives.contains(*id))
        .map(|(id, emb)| (id, dot(&doc_embedding.values, &emb.values)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| crate::kb::code_order(a.0, b.0))
    });

    let n_hard = n_hard.min(scored.len());
    let hard: Vec<ConceptId> = scored[..n_hard].iter().map(|(id, _)| (*id).clone()).collect();

    let mut pool: Vec<&ConceptId> = scored[n_hard..].iter().map(|(id, _)| *id).collect();
    pool.sort(); // uniform draws come from an input-order-independent base
    let n_random = n_random.min(pool.len());
    for i in 0..n_random {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    let random = pool[..n_random].iter().map(|id| (*id).clone()).collect();

    NegativeSet { hard, random }
}

/// InfoNCE over raw similarities at temperature τ:
/// −(1/P) Σ_p log(e^{s_p/τ} / (e^{s_p/τ} + Σ_n e^{s_n/τ})).
pub fn infonce_from_sims(pos_sims: &[f64], neg_sims: &[f64], temperature: f64) -> f64 {
    assert!(!pos_sims.is_empty(), "at least one positive required");
    let e_neg: f64 = neg_sims.iter().map(|s| (s / temperature).exp()).sum();
    let p = pos_sims.len() as f64;
    let mut loss = 0.0;
    for &s in pos_sims {
        let e_pos = (s / temperature).exp();
        loss -= (e_pos / (e_pos + e_neg)).ln();
    }
    loss / p
}

/// InfoNCE over embedding pairs, similarities by cosine.
pub fn infonce_loss(
    doc: &EmbeddingVector,
    positives: &[EmbeddingVector],
    negatives: &[EmbeddingVector],
    temperature: f64,
) -> f64 {
    let sim = |c: &EmbeddingVector| {
        crate::encoder::cosine_sim(doc, c).expect("embeddings must be non-zero")
    };
    let pos_sims: Vec<f64> = positives.iter().map(sim).collect();
    let neg_sims: Vec<f64> = negatives.iter().map(sim).collect();
    infonce_from_sims(&pos_sims, &neg_sims, temperature)
}

/// Batch objective: w_a · Σ losses of pseudo examples + Σ losses of manual
/// examples.
pub fn batch_loss(sources: &[AnnotationSource], losses: &[f64], w_a: f64) -> f64 {
    assert_eq!(sources.len(), losses.len());
    sources
        .iter()
        .zip(losses)
        .map(|(source, loss)| match source {
            AnnotationSource::Manual => *loss,
            AnnotationSource::Pseudo => w_a * loss,
        })
        .sum()
}

/// One example prepared for the objective: token rows plus frozen positive
/// and negative concept vectors, and its weight in the batch sum.
#[derive(Debug, Clone)]
pub struct ContrastiveItem {
    pub token_indices: Vec<usize>,
    pub positives: Vec<EmbeddingVector>,
    pub negatives: Vec<EmbeddingVector>,
    pub weight: f64,
}

/// Gradient of the batch objective w.r.t. the encoder parameters. Token-row
/// gradients are sparse: a batch touches few vocabulary rows.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub token_rows: BTreeMap<usize, Vec<f64>>,
    pub projection: Matrix,
}

impl Gradient {
    fn zeros(dim: usize) -> Self {
        Gradient {
            token_rows: BTreeMap::new(),
            projection: Matrix::zeros(dim, dim),
        }
    }
}

/// Weighted batch objective value at the given parameters. Zero-weight items
/// are skipped outright so they cannot perturb the floating-point result.
pub fn batch_objective(params: &EncoderParams, items: &[ContrastiveItem], temperature: f64) -> f64 {
    let mut total = 0.0;
    for item in items {
        if item.weight == 0.0 {
            continue;
        }
        let fwd = params.forward_indices(item.token_indices.clone());
        let v = &fwd.embedding.values;
        let pos: Vec<f64> = item.positives.iter().map(|c| dot(v, &c.values)).collect();
        let neg: Vec<f64> = item.negatives.iter().map(|c| dot(v, &c.values)).collect();
        total += item.weight * infonce_from_sims(&pos, &neg, temperature);
    }
    total
}

/// Objective value and its exact gradient.
///
/// Derivation sketch, per example with unit doc embedding v = y/‖y‖,
/// y = Proj·m, m = mean of token rows, s_c = v·c for frozen concept c:
///   ∂L/∂s_p = −(1/(Pτ))(1 − E_p/Z_p),  Z_p = E_p + Σ_n E_n
///   ∂L/∂s_n = (E_n/(Pτ)) Σ_p 1/Z_p
///   g_v = Σ_c (∂L/∂s_c)·c
///   g_y = (g_v − v(v·g_v)) / ‖y‖          (normalization backprop)
///   g_Proj[d][e] = g_y[d]·m[e],  g_m = Projᵀ·g_y
///   g_row[i] = (count of i / T)·g_m
pub fn batch_gradient(
    params: &EncoderParams,
    items: &[ContrastiveItem],
    temperature: f64,
) -> (f64, Gradient) {
    let dim = params.dim();
    let mut grad = Gradient::zeros(dim);
    let mut total = 0.0;

    for item in items {
        if item.weight == 0.0 {
            continue;
        }
        let fwd = params.forward_indices(item.token_indices.clone());
        let v = &fwd.embedding.values;

        let pos_sims: Vec<f64> = item.positives.iter().map(|c| dot(v, &c.values)).collect();
        let neg_sims: Vec<f64> = item.negatives.iter().map(|c| dot(v, &c.values)).collect();
        total += item.weight * infonce_from_sims(&pos_sims, &neg_sims, temperature);

        let p = pos_sims.len() as f64;
        let tau = temperature;
        let e_neg_total: f64 = neg_sims.iter().map(|s| (s / tau).exp()).sum();
        let z: Vec<f64> = pos_sims
            .iter()
            .map(|s| (s / tau).exp() + e_neg_total)
            .collect();
        let sum_inv_z: f64 = z.iter().map(|z| 1.0 / z).sum();

        // g_v = Σ_c ∂L/∂s_c · c, scaled by the example weight.
        let mut g_v = vec![0.0; dim];
        for ((s, c), z_p) in pos_sims.iter().zip(&item.positives).zip(&z) {
            let d_s = -(1.0 / (p * tau)) * (1.0 - (s / tau).exp() / z_p);
            for (g, &cv) in g_v.iter_mut().zip(&c.values) {
                *g += item.weight * d_s * cv;
            }
        }
        for (s, c) in neg_sims.iter().zip(&item.negatives) {
            let d_s = ((s / tau).exp() / (p * tau)) * sum_inv_z;
            for (g, &cv) in g_v.iter_mut().zip(&c.values) {
                *g += item.weight * d_s * cv;
            }
        }

        if fwd.norm == 0.0 {
            // Degenerate projection output: the fallback embedding is a
            // constant, so nothing flows back. Vanishes for any real run.
            log::warn!("zero-norm projection output; skipping example gradient");
            continue;
        }
        let v_dot_gv = dot(v, &g_v);
        let g_y: Vec<f64> = g_v
            .iter()
            .zip(v)
            .map(|(g, vi)| (g - vi * v_dot_gv) / fwd.norm)
            .collect();

        for d in 0..dim {
            let row = grad.projection.row_mut(d);
            let gy_d = g_y[d];
            for (e, r) in row.iter_mut().enumerate() {
                *r += gy_d * fwd.mean[e];
            }
        }

        if !item.token_indices.is_empty() {
            let g_m = params.projection.matvec_transpose(&g_y);
            let scale = 1.0 / item.token_indices.len() as f64;
            for &idx in &item.token_indices {
                let row = grad
                    .token_rows
                    .entry(idx)
                    .or_insert_with(|| vec![0.0; dim]);
                for (r, &g) in row.iter_mut().zip(&g_m) {
                    *r += scale * g;
                }
            }
        }
    }
    (total, grad)
}

/// Central-difference gradient of `batch_objective`, for validating the
/// analytic version. O(#params) objective evaluations — test-sized use only.
pub fn finite_difference_gradient(
    params: &EncoderParams,
    items: &[ContrastiveItem],
    temperature: f64,
    eps: f64,
) -> Gradient {
    let dim = params.dim();
    let mut grad = Gradient::zeros(dim);
    let mut probe = params.clone();

    for r in 0..params.token_embeddings.rows {
        for c in 0..dim {
            let orig = probe.token_embeddings.get(r, c);
            probe.token_embeddings.set(r, c, orig + eps);
            let up = batch_objective(&probe, items, temperature);
            probe.token_embeddings.set(r, c, orig - eps);
            let down = batch_objective(&probe, items, temperature);
            probe.token_embeddings.set(r, c, orig);
            let g = (up - down) / (2.0 * eps);
            if g != 0.0 {
                grad.token_rows.entry(r).or_insert_with(|| vec![0.0; dim])[c] = g;
            }
        }
    }
    for r in 0..dim {
        for c in 0..dim {
            let orig = probe.projection.get(r, c);
            probe.projection.set(r, c, orig + eps);
            let up = batch_objective(&probe, items, temperature);
            probe.projection.set(r, c, orig - eps);
            let down = batch_objective(&probe, items, temperature);
            probe.projection.set(r, c, orig);
            grad.projection.set(r, c, (up - down) / (2.0 * eps));
        }
    }
    grad
}

fn apply_gradient(params: &mut EncoderParams, grad: &Gradient, lr: f64) {
    for (&row, g) in &grad.token_rows {
        for (p, &gv) in params.token_embeddings.row_mut(row).iter_mut().zip(g) {
            *p -= lr * gv;
        }
    }
    for (p, &gv) in params
        .projection
        .data_mut()
        .iter_mut()
        .zip(grad.projection.data())
    {
        *p -= lr * gv;
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub lr: f64,
    pub num_manual: usize,
    pub num_pseudo: usize,
}

pub fn write_log_csv<W: Write>(rows: &[LogRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,batch,loss,lr,num_manual,num_pseudo")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.9},{:.9},{},{}",
            r.epoch, r.batch, r.loss, r.lr, r.num_manual, r.num_pseudo
        )?;
    }
    Ok(())
}

/// Mini-batch gradient descent over the weighted objective.
///
/// Batches are consecutive `batch_size` chunks of the corpus in its given
/// (pre-shuffled) order; the learning rate decays linearly to zero across
/// epochs; negatives are re-sampled for every example each epoch, mined
/// against the frozen concept table with the parameters current at its
/// batch start. All sampling randomness derives from per-example streams of
/// `cfg.seed`, so results do not depend on batch composition.
pub fn train_with_params(
    mut params: EncoderParams,
    corpus: &[TrainingExample],
    concept_embeddings: &BTreeMap<ConceptId, EmbeddingVector>,
    cfg: &TrainConfig,
) -> Result<(EncoderParams, Vec<LogRow>), TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    for ex in corpus {
        for c in &ex.positives {
            if !concept_embeddings.contains_key(c) {
                return Err(TrainError::MissingConcept(c.clone()));
            }
        }
    }

    let indices: Vec<Vec<usize>> = corpus
        .iter()
        .map(|ex| params.token_indices(&ex.segment.tokens))
        .collect();
    let mut log = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * (1.0 - epoch as f64 / cfg.epochs as f64);
        let batches: Vec<&[TrainingExample]> = corpus.chunks(cfg.batch_size).collect();
        let mut cursor = 0;
        for (batch_idx, batch) in batches.into_iter().enumerate() {
            let mut items = Vec::with_capacity(batch.len());
            let mut num_manual = 0;
            let mut num_pseudo = 0;
            for (offset, ex) in batch.iter().enumerate() {
                let weight = match ex.source {
                    AnnotationSource::Manual => {
                        num_manual += 1;
                        1.0
                    }
                    AnnotationSource::Pseudo => {
                        num_pseudo += 1;
                        cfg.w_a
                    }
                };
                if weight == 0.0 {
                    continue;
                }
                let token_indices = indices[cursor + offset].clone();
                let fwd = params.forward_indices(token_indices.clone());
                let label = format!(
                    "negatives/{}/{}/{}/{}",
                    epoch,
                    ex.source.as_str(),
                    ex.segment.doc_id,
                    ex.segment.index
                );
                let mut rng = stream_rng(cfg.seed, &label);
                let negatives = sample_negatives(
                    &fwd.embedding,
                    &ex.positives,
                    concept_embeddings,
                    N_HARD_NEGATIVES,
                    N_RANDOM_NEGATIVES,
                    &mut rng,
                );
                items.push(ContrastiveItem {
                    token_indices,
                    positives: ex
                        .positives
                        .iter()
                        .map(|c| concept_embeddings[c].clone())
                        .collect(),
                    negatives: negatives
                        .iter()
                        .map(|c| concept_embeddings[c].clone())
                        .collect(),
                    weight,
                });
            }
            cursor += batch.len();

            let (loss, grad) = batch_gradient(&params, &items, cfg.temperature);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            apply_gradient(&mut params, &grad, lr);
            log.push(LogRow {
                epoch,
                batch: batch_idx,
                loss,
                lr,
                num_manual,
                num_pseudo,
            });
        }
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{save_concept_table, EncoderParams, Vocabulary};
    use crate::kb::Vocab;
    use proptest::prelude::*;
    use rand::Rng;

    fn cid(code: &str) -> ConceptId {
        ConceptId::new(Vocab::Synthetic, code)
    }

    fn unit(values: Vec<f64>) -> EmbeddingVector {
        let n = crate::vecmath::l2_norm(&values);
        EmbeddingVector {
            values: values.iter().map(|v| v / n).collect(),
        }
    }

    #[test]
    fn loss_is_zero_without_negatives() {
        let doc = unit(vec![1.0, 0.0]);
        let pos = vec![unit(vec![0.3, 0.7])];
        assert_eq!(infonce_loss(&doc, &pos, &[], 1.0), 0.0);
    }

    #[test]
    fn uniform_sims_give_log_26() {
        // One positive and 25 negatives, all at the same similarity.
        let loss = infonce_from_sims(&[0.4], &[0.4; 25], 1.0);
        assert!((loss - 26f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn opposed_pair_loss() {
        let doc = unit(vec![1.0, 0.0]);
        let pos = vec![unit(vec![1.0, 0.0])];
        let neg = vec![unit(vec![-1.0, 0.0])];
        let loss = infonce_loss(&doc, &pos, &neg, 1.0);
        assert!((loss - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_loss_weighting() {
        let sources = [AnnotationSource::Manual, AnnotationSource::Pseudo];
        let losses = [2.0, 3.0];
        assert!((batch_loss(&sources, &losses, 0.4) - 3.2).abs() < 1e-12);
        assert_eq!(batch_loss(&sources, &losses, 0.0), 2.0);
        assert_eq!(batch_loss(&sources, &losses, 1.0), 5.0);
    }

    fn toy_embeddings(n: usize) -> BTreeMap<ConceptId, EmbeddingVector> {
        // Points around the unit circle: distinct, deterministic sims.
        (0..n)
            .map(|i| {
                let theta = i as f64 / n as f64 * std::f64::consts::PI;
                (
                    cid(&format!("X{i:03}")),
                    EmbeddingVector {
                        values: vec![theta.cos(), theta.sin()],
                    },
                )
            })
            .collect()
    }

    #[test]
    fn negatives_full_buckets_and_exclusion() {
        let table = toy_embeddings(40);
        let positives: BTreeSet<ConceptId> = [cid("X000"), cid("X001")].into();
        let doc = unit(vec![1.0, 0.1]);
        let mut rng = stream_rng(1, "neg-test");
        let set = sample_negatives(&doc, &positives, &table, 20, 5, &mut rng);
        assert_eq!(set.hard.len(), 20);
        assert_eq!(set.random.len(), 5);
        assert_eq!(set.len(), 25);
        for p in &positives {
            assert!(set.iter().all(|n| n != p));
        }
        let unique: BTreeSet<&ConceptId> = set.iter().collect();
        assert_eq!(unique.len(), 25);
        // Hard bucket = highest similarity: X002 is closest to the doc
        // direction once the two positives are excluded.
        assert_eq!(set.hard[0], cid("X002"));
    }

    #[test]
    fn negatives_shrink_random_bucket_first() {
        let doc = unit(vec![1.0, 0.0]);
        let positives: BTreeSet<ConceptId> = [cid("X000"), cid("X001")].into();
        // 10 concepts, 2 positives → 8 negatives, all in the hard bucket.
        let set = sample_negatives(
            &doc,
            &positives,
            &toy_embeddings(10),
            20,
            5,
            &mut stream_rng(1, "neg-test"),
        );
        assert_eq!(set.hard.len(), 8);
        assert_eq!(set.random.len(), 0);
        // 24 concepts, 1 positive → 23 available: 20 hard + 3 random.
        let one: BTreeSet<ConceptId> = [cid("X000")].into();
        let set = sample_negatives(
            &doc,
            &one,
            &toy_embeddings(24),
            20,
            5,
            &mut stream_rng(1, "neg-test"),
        );
        assert_eq!(set.hard.len(), 20);
        assert_eq!(set.random.len(), 3);
    }

    #[test]
    fn negatives_are_deterministic_per_stream() {
        let table = toy_embeddings(40);
        let positives: BTreeSet<ConceptId> = [cid("X000")].into();
        let doc = unit(vec![0.3, 0.9]);
        let a = sample_negatives(&doc, &positives, &table, 20, 5, &mut stream_rng(9, "s"));
        let b = sample_negatives(&doc, &positives, &table, 20, 5, &mut stream_rng(9, "s"));
        assert_eq!(a, b);
        let c = sample_negatives(&doc, &positives, &table, 20, 5, &mut stream_rng(10, "s"));
        assert_ne!(a.random, c.random);
    }

    fn small_params(seed: u64, dim: usize) -> EncoderParams {
        let vocab = Vocabulary::build(["aa", "bb", "cc", "dd", "ee", "ff"]);
        EncoderParams::init(vocab, dim, &mut stream_rng(seed, "test-params"))
    }

    fn random_items(seed: u64, dim: usize, n: usize) -> Vec<ContrastiveItem> {
        let mut rng = stream_rng(seed, "test-items");
        (0..n)
            .map(|_| {
                let n_tokens = rng.gen_range(0..6);
                let n_pos = rng.gen_range(1..4);
                let n_neg = rng.gen_range(0..7);
                let rand_unit = |rng: &mut rand_chacha::ChaCha8Rng| {
                    unit((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                };
                ContrastiveItem {
                    token_indices: (0..n_tokens).map(|_| rng.gen_range(0..7)).collect(),
                    positives: (0..n_pos).map(|_| rand_unit(&mut rng)).collect(),
                    negatives: (0..n_neg).map(|_| rand_unit(&mut rng)).collect(),
                    weight: if rng.gen_bool(0.5) { 1.0 } else { 0.4 },
                }
            })
            .collect()
    }

    fn max_rel_err(analytic: &Gradient, numeric: &Gradient, rows: usize, dim: usize) -> f64 {
        let zero = vec![0.0; dim];
        let mut worst = 0.0f64;
        let mut check = |a: f64, n: f64| {
            let denom = a.abs().max(n.abs()).max(1e-6);
            worst = worst.max((a - n).abs() / denom);
        };
        for r in 0..rows {
            let a = analytic.token_rows.get(&r).unwrap_or(&zero);
            let n = numeric.token_rows.get(&r).unwrap_or(&zero);
            for c in 0..dim {
                check(a[c], n[c]);
            }
        }
        for r in 0..dim {
            for c in 0..dim {
                check(analytic.projection.get(r, c), numeric.projection.get(r, c));
            }
        }
        worst
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..3u64 {
            let dim = 3 + seed as usize;
            let params = small_params(seed, dim);
            let items = random_items(seed, dim, 3);
            let (_, analytic) = batch_gradient(&params, &items, 1.0);
            let numeric = finite_difference_gradient(&params, &items, 1.0, 1e-4);
            let err = max_rel_err(&analytic, &numeric, params.token_embeddings.rows, dim);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    fn toy_corpus(n: usize, pseudo_every: usize) -> Vec<TrainingExample> {
        (0..n)
            .map(|i| {
                let source = if pseudo_every > 0 && i % pseudo_every == 0 {
                    AnnotationSource::Pseudo
                } else {
                    AnnotationSource::Manual
                };
                TrainingExample::new(
                    Segment {
                        doc_id: format!("d{i}"),
                        index: 0,
                        tokens: vec!["aa".into(), "bb".into(), format!("t{i}")],
                    },
                    [cid(&format!("X{:03}", i % 7))].into(),
                    source,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let params = small_params(4, 2);
        let table = toy_embeddings(8);
        let corpus = toy_corpus(5, 0);
        let cfg = TrainConfig {
            epochs: 0,
            seed: 4,
            ..TrainConfig::default()
        };
        let (out, log) = train_with_params(params.clone(), &corpus, &table, &cfg).unwrap();
        assert_eq!(out, params);
        assert!(log.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let params = small_params(5, 2);
        let table = toy_embeddings(9);
        let corpus = toy_corpus(10, 3);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 0.05,
            seed: 5,
            ..TrainConfig::default()
        };
        let (a, log_a) = train_with_params(params.clone(), &corpus, &table, &cfg).unwrap();
        let (b, log_b) = train_with_params(params, &corpus, &table, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert_eq!(log_a.len(), 3 * 3); // 10 examples / batch 4 → 3 batches
        assert!(log_a.iter().all(|r| r.loss.is_finite()));
    }

    #[test]
    fn concept_table_is_untouched_by_training() {
        let params = small_params(6, 2);
        let table = toy_embeddings(9);
        let mut before = Vec::new();
        save_concept_table(&table, &mut before).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 2,
            learning_rate: 0.1,
            seed: 6,
            ..TrainConfig::default()
        };
        train_with_params(params, &toy_corpus(8, 2), &table, &cfg).unwrap();
        let mut after = Vec::new();
        save_concept_table(&table, &mut after).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn zero_weight_run_matches_manual_only_run() {
        let params = small_params(7, 2);
        let table = toy_embeddings(9);
        let mixed = toy_corpus(12, 3); // every 3rd example pseudo
        let manual_only: Vec<TrainingExample> = mixed
            .iter()
            .filter(|ex| ex.source == AnnotationSource::Manual)
            .cloned()
            .collect();
        // Batch size 1 keeps per-batch parameter states aligned between the
        // two runs: zero-weight batches change nothing.
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 1,
            learning_rate: 0.05,
            w_a: 0.0,
            seed: 7,
            ..TrainConfig::default()
        };
        let (a, _) = train_with_params(params.clone(), &mixed, &table, &cfg).unwrap();
        let (b, _) = train_with_params(params, &manual_only, &table, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_concept_is_reported() {
        let params = small_params(8, 2);
        let table = toy_embeddings(3);
        let corpus = toy_corpus(8, 0); // references X000..X006
        let cfg = TrainConfig::default();
        assert!(matches!(
            train_with_params(params, &corpus, &table, &cfg),
            Err(TrainError::MissingConcept(_))
        ));
    }

    #[test]
    fn examples_jsonl_round_trip() {
        let corpus = toy_corpus(4, 2);
        let mut buf = Vec::new();
        write_examples_jsonl(&corpus, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"weight_class\":\"augmented\""));
        assert!(text.contains("\"weight_class\":\"manual\""));
        let back = read_examples_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, corpus);
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative(
            pos in proptest::collection::vec(-1.0f64..1.0, 1..4),
            neg in proptest::collection::vec(-1.0f64..1.0, 0..26),
        ) {
            let loss = infonce_from_sims(&pos, &neg, 1.0);
            prop_assert!(loss >= 0.0);
            prop_assert!(loss.is_finite());
            if neg.is_empty() {
                prop_assert_eq!(loss, 0.0);
            }
        }

        #[test]
        fn loss_monotone_in_similarities(
            pos in -0.9f64..0.9,
            neg in -0.9f64..0.9,
            bump in 0.01f64..0.1,
        ) {
            let base = infonce_from_sims(&[pos], &[neg], 1.0);
            let harder_neg = infonce_from_sims(&[pos], &[neg + bump], 1.0);
            let better_pos = infonce_from_sims(&[pos + bump], &[neg], 1.0);
            prop_assert!(harder_neg > base);
            prop_assert!(better_pos < base);
        }

        #[test]
        fn batch_loss_affine_in_wa(
            losses in proptest::collection::vec(0.0f64..5.0, 1..6),
            flags in proptest::collection::vec(any::<bool>(), 1..6),
            wa in 0.0f64..1.0,
        ) {
            let n = losses.len().min(flags.len());
            let sources: Vec<AnnotationSource> = flags[..n]
                .iter()
                .map(|&m| if m { AnnotationSource::Manual } else { AnnotationSource::Pseudo })
                .collect();
            let at_zero = batch_loss(&sources, &losses[..n], 0.0);
            let pseudo_sum: f64 = sources
                .iter()
                .zip(&losses[..n])
                .filter(|(s, _)| **s == AnnotationSource::Pseudo)
                .map(|(_, l)| *l)
                .sum();
            let expected = at_zero + wa * pseudo_sum;
            let actual = batch_loss(&sources, &losses[..n], wa);
            prop_assert!((actual - expected).abs() < 1e-9);
        }
    }
}
