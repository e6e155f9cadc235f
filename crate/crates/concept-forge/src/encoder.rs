//! Desk-scale text encoder.
//!
//! Documents and concepts share one parameter set: a token embedding table,
//! mean pooling, a square projection, and L2 normalization. The architecture
//! is deliberately small enough that the training gradients can be derived
//! and checked by hand, while keeping the embed-everything-into-one-space
//! interface that a transformer backend could slot into later.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::Rng;
use thiserror::Error;

use crate::binio;
use crate::kb::{ConceptId, Kb};
use crate::vecmath::{dot, l2_norm, Matrix};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("cosine similarity undefined for zero vector")]
    ZeroVector,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token → row index. Index 0 is always the out-of-vocabulary token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK_TOKEN: &str = "<unk>";

/// Case fold and trim punctuation off token edges so "CKD." and "ckd" share
/// a row. Inner punctuation is kept: tokenization must stay 1:1.
pub fn fold_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

impl Vocabulary {
    /// Builds the sorted vocabulary of all folded tokens in the input,
    /// with the OOV token at index 0.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(token_stream: I) -> Self {
        let folded: BTreeSet<String> = token_stream
            .into_iter()
            .map(fold_token)
            .filter(|t| !t.is_empty() && t != UNK_TOKEN)
            .collect();
        let mut tokens = Vec::with_capacity(folded.len() + 1);
        tokens.push(UNK_TOKEN.to_string());
        tokens.extend(folded);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        assert_eq!(tokens.first().map(String::as_str), Some(UNK_TOKEN));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn lookup(&self, raw: &str) -> usize {
        self.index.get(&fold_token(raw)).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// A point in the shared document/concept space; unit length after encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// u·v / (‖u‖‖v‖), clamped into [−1, 1] against rounding spill.
pub fn cosine_sim(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EncoderError> {
    let nu = l2_norm(&u.values);
    let nv = l2_norm(&v.values);
    if nu == 0.0 || nv == 0.0 {
        return Err(EncoderError::ZeroVector);
    }
    Ok((dot(&u.values, &v.values) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Trainable parameters: token table (|V| × D), projection (D × D), and the
/// vocabulary that maps tokens onto table rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub vocab: Vocabulary,
    pub token_embeddings: Matrix,
    pub projection: Matrix,
}

impl EncoderParams {
    /// Uniform init in [−0.1, 0.1].
    pub fn init<R: Rng>(vocab: Vocabulary, dim: usize, rng: &mut R) -> Self {
        let mut token_embeddings = Matrix::zeros(vocab.len(), dim);
        for v in token_embeddings.data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        let mut projection = Matrix::zeros(dim, dim);
        for v in projection.data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        EncoderParams {
            vocab,
            token_embeddings,
            projection,
        }
    }

    pub fn dim(&self) -> usize {
        self.projection.rows
    }

    pub fn token_indices<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.lookup(t.as_ref())).collect()
    }

    /// Forward pass with the intermediates the gradient computation needs.
    pub fn forward<S: AsRef<str>>(&self, tokens: &[S]) -> Forward {
        let indices = self.token_indices(tokens);
        self.forward_indices(indices)
    }

    pub fn forward_indices(&self, indices: Vec<usize>) -> Forward {
        let d = self.dim();
        let mean = if indices.is_empty() {
            // Zero-protection: an empty text still embeds somewhere fixed.
            vec![1.0 / (d as f64).sqrt(); d]
        } else {
            let mut m = vec![0.0; d];
            for &i in &indices {
                for (acc, &v) in m.iter_mut().zip(self.token_embeddings.row(i)) {
                    *acc += v;
                }
            }
            let n = indices.len() as f64;
            for acc in &mut m {
                *acc /= n;
            }
            m
        };
        let projected = self.projection.matvec(&mean);
        let norm = l2_norm(&projected);
        let values = if norm == 0.0 {
            // Degenerate projection; fall back to the fixed unit vector.
            vec![1.0 / (d as f64).sqrt(); d]
        } else {
            projected.iter().map(|v| v / norm).collect()
        };
        Forward {
            indices,
            mean,
            projected,
            norm,
            embedding: EmbeddingVector { values },
        }
    }
}

/// Intermediates of one encode: token rows → mean → projection → unit vector.
#[derive(Debug, Clone)]
pub struct Forward {
    pub indices: Vec<usize>,
    pub mean: Vec<f64>,
    pub projected: Vec<f64>,
    pub norm: f64,
    pub embedding: EmbeddingVector,
}

pub fn embed_text<S: AsRef<str>>(params: &EncoderParams, tokens: &[S]) -> EmbeddingVector {
    params.forward(tokens).embedding
}

/// Embeds every concept text. The returned map is the frozen concept table:
/// training reads it but never writes it.
pub fn precompute_concept_embeddings(
    params: &EncoderParams,
    kb: &Kb,
) -> BTreeMap<ConceptId, EmbeddingVector> {
    kb.concept_texts()
        .into_iter()
        .map(|ct| {
            let tokens = ct.tokens();
            (ct.concept_id, embed_text(params, &tokens))
        })
        .collect()
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"CFG1";
const CONCEPT_TABLE_MAGIC: &[u8; 4] = b"CVEC";

/// Checkpoint layout: magic, D, |V|, vocabulary strings in index order, then
/// the token table and projection as row-major little-endian f64.
pub fn save_checkpoint<W: Write>(params: &EncoderParams, mut w: W) -> std::io::Result<()> {
    binio::write_magic(&mut w, CHECKPOINT_MAGIC)?;
    binio::write_u32(&mut w, params.dim() as u32)?;
    binio::write_u32(&mut w, params.vocab.len() as u32)?;
    for token in params.vocab.tokens() {
        binio::write_string(&mut w, token)?;
    }
    binio::write_f64_slice(&mut w, params.token_embeddings.data())?;
    binio::write_f64_slice(&mut w, params.projection.data())?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> std::io::Result<EncoderParams> {
    binio::expect_magic(&mut r, CHECKPOINT_MAGIC)?;
    let dim = binio::read_u32(&mut r)? as usize;
    let vocab_len = binio::read_u32(&mut r)? as usize;
    let mut tokens = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        tokens.push(binio::read_string(&mut r)?);
    }
    let table = binio::read_f64_vec(&mut r, vocab_len * dim)?;
    let proj = binio::read_f64_vec(&mut r, dim * dim)?;
    Ok(EncoderParams {
        vocab: Vocabulary::from_tokens(tokens),
        token_embeddings: Matrix::from_data(vocab_len, dim, table),
        projection: Matrix::from_data(dim, dim, proj),
    })
}

/// Persists a frozen concept-embedding table (concept ids in sorted order),
/// so the index and evaluation stages see exactly the vectors training used.
pub fn save_concept_table<W: Write>(
    table: &BTreeMap<ConceptId, EmbeddingVector>,
    mut w: W,
) -> std::io::Result<()> {
    binio::write_magic(&mut w, CONCEPT_TABLE_MAGIC)?;
    let dim = table.values().next().map_or(0, EmbeddingVector::dim);
    binio::write_u32(&mut w, dim as u32)?;
    binio::write_u32(&mut w, table.len() as u32)?;
    for (id, vec) in table {
        binio::write_string(&mut w, &id.to_string())?;
        binio::write_f64_slice(&mut w, &vec.values)?;
    }
    Ok(())
}

pub fn load_concept_table<R: Read>(
    mut r: R,
) -> std::io::Result<BTreeMap<ConceptId, EmbeddingVector>> {
    binio::expect_magic(&mut r, CONCEPT_TABLE_MAGIC)?;
    let dim = binio::read_u32(&mut r)? as usize;
    let n = binio::read_u32(&mut r)? as usize;
    let mut table = BTreeMap::new();
    for _ in 0..n {
        let id = binio::read_string(&mut r)?;
        let id = ConceptId::parse(&id)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let values = binio::read_f64_vec(&mut r, dim)?;
        table.insert(id, EmbeddingVector { values });
    }
    Ok(table)
}
