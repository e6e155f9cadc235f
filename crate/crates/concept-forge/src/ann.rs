//! Inverted-file index with residual quantization over the frozen concept
//! embeddings.
//!
//! Build: √N coarse centroids via Lloyd's k-means, every vector assigned to
//! its nearest centroid, and the residual v − centroid stored either verbatim
//! (identity quantizer) or as per-subspace codeword indices (product
//! quantizer). Search probes the ρ nearest centroids and ranks candidates by
//! asymmetric distance ‖query − (centroid + decoded residual)‖₂. On
//! L2-normalized vectors this ranking coincides with cosine ranking, since
//! ‖x−y‖² = 2 − 2·cos(x, y).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::binio;
use crate::encoder::EmbeddingVector;
use crate::kb::{code_order, ConceptId};
use crate::seeds::stream_rng;
use crate::vecmath::{l2_dist_sq, Matrix};

#[derive(Debug, Error)]
pub enum AnnError {
    #[error("cannot index zero vectors")]
    EmptyIndex,
    #[error("non-finite input vector for {0}")]
    DegenerateInput(ConceptId),
    #[error("vector for {id} has dimension {got}, index expects {want}")]
    DimensionMismatch { id: ConceptId, got: usize, want: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fine-quantizer selection at build time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantizer {
    /// Residuals stored losslessly; the index is then exact.
    Identity,
    /// Product quantization: `m` sub-vectors, `ks` codewords each.
    Product { m: usize, ks: usize },
}

impl Quantizer {
    pub fn product_default() -> Self {
        Quantizer::Product { m: 4, ks: 16 }
    }
}

/// Trained product quantizer: one codebook (ks × sub-dim) per subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductQuantizer {
    pub m: usize,
    pub ks: usize,
    pub dim: usize,
    codebooks: Vec<Matrix>,
}

impl ProductQuantizer {
    /// Contiguous near-equal split of the dimensions into `m` subspaces.
    fn sub_range(&self, s: usize) -> std::ops::Range<usize> {
        sub_range(self.dim, self.m, s)
    }

    fn train(residuals: &[Vec<f64>], dim: usize, m: usize, ks: usize, seed: u64) -> Self {
        let mut codebooks = Vec::with_capacity(m);
        for s in 0..m {
            let range = sub_range(dim, m, s);
            let points: Vec<&[f64]> = residuals.iter().map(|r| &r[range.clone()]).collect();
            let mut rng = stream_rng(seed, &format!("pq-kmeans/{s}"));
            codebooks.push(kmeans(&points, ks, KMEANS_ITERS, &mut rng));
        }
        ProductQuantizer { m, ks, dim, codebooks }
    }

    fn encode(&self, residual: &[f64]) -> Vec<u8> {
        (0..self.m)
            .map(|s| {
                let sub = &residual[self.sub_range(s)];
                nearest_row(&self.codebooks[s], sub) as u8
            })
            .collect()
    }

    fn decode(&self, code: &[u8]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim);
        for (s, &c) in code.iter().enumerate() {
            out.extend_from_slice(self.codebooks[s].row(c as usize));
        }
        out
    }
}

fn sub_range(dim: usize, m: usize, s: usize) -> std::ops::Range<usize> {
    (s * dim / m)..((s + 1) * dim / m)
}

#[derive(Debug, Clone, PartialEq)]
enum FineQuantizer {
    Identity,
    Product(ProductQuantizer),
}

#[derive(Debug, Clone, PartialEq)]
enum Codes {
    Identity(Vec<Vec<f64>>),
    Product(Vec<Vec<u8>>),
}

/// Immutable inverted-file index over concept vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    dim: usize,
    centroids: Matrix,
    /// Item order: concept ids sorted ascending at build time.
    ids: Vec<ConceptId>,
    assignments: Vec<usize>,
    lists: Vec<Vec<usize>>,
    fine: FineQuantizer,
    codes: Codes,
}

/// Search knobs: result count and number of probed centroid lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchParams {
    pub k: usize,
    pub nprobe: usize,
}

impl SearchParams {
    pub fn new(k: usize, nprobe: usize) -> Self {
        assert!(k >= 1 && nprobe >= 1);
        SearchParams { k, nprobe }
    }
}

const KMEANS_ITERS: usize = 25;

fn nearest_row(m: &Matrix, point: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for r in 0..m.rows {
        let d = l2_dist_sq(m.row(r), point);
        if d < best_d {
            best_d = d;
            best = r;
        }
    }
    best
}

/// Lloyd's algorithm with farthest-point initialization. Runs a fixed
/// iteration count; empty clusters keep their previous centroid. Fully
/// deterministic given the RNG state.
fn kmeans(points: &[&[f64]], k: usize, iters: usize, rng: &mut ChaCha8Rng) -> Matrix {
    assert!(!points.is_empty());
    let dim = points[0].len();
    use rand::Rng;

    let mut chosen: Vec<usize> = vec![rng.gen_range(0..points.len())];
    while chosen.len() < k {
        let mut far_idx = 0;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d = chosen
                .iter()
                .map(|&c| l2_dist_sq(points[c], p))
                .fold(f64::INFINITY, f64::min);
            if d > far_d {
                far_d = d;
                far_idx = i;
            }
        }
        chosen.push(far_idx);
    }
    let mut centroids = Matrix::zeros(k, dim);
    for (r, &i) in chosen.iter().enumerate() {
        centroids.row_mut(r).copy_from_slice(points[i]);
    }

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..iters {
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest_row(&centroids, p);
        }
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, &v) in sums.row_mut(a).iter_mut().zip(*p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
    centroids
}

/// Builds the index: √N centroids (clamped to [1, N]), nearest-centroid
/// assignment, residual encoding with the chosen fine quantizer.
pub fn build_index(
    vectors: &BTreeMap<ConceptId, EmbeddingVector>,
    fine: Quantizer,
    seed: u64,
) -> Result<IvfIndex, AnnError> {
    if vectors.is_empty() {
        return Err(AnnError::EmptyIndex);
    }
    let dim = vectors.values().next().unwrap().dim();
    for (id, v) in vectors {
        if v.dim() != dim {
            return Err(AnnError::DimensionMismatch {
                id: id.clone(),
                got: v.dim(),
                want: dim,
            });
        }
        if !v.values.iter().all(|x| x.is_finite()) {
            return Err(AnnError::DegenerateInput(id.clone()));
        }
    }

    let ids: Vec<ConceptId> = vectors.keys().cloned().collect();
    let points: Vec<&[f64]> = vectors.values().map(|v| v.values.as_slice()).collect();
    let n = points.len();
    let n_centroids = ((n as f64).sqrt().round() as usize).clamp(1, n);

    let mut rng = stream_rng(seed, "coarse-kmeans");
    let centroids = kmeans(&points, n_centroids, KMEANS_ITERS, &mut rng);

    let assignments: Vec<usize> = points.iter().map(|p| nearest_row(&centroids, p)).collect();
    let residuals: Vec<Vec<f64>> = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| {
            p.iter()
                .zip(centroids.row(a))
                .map(|(&v, &c)| v - c)
                .collect()
        })
        .collect();

    let (fine, codes) = match fine {
        Quantizer::Identity => (FineQuantizer::Identity, Codes::Identity(residuals)),
        Quantizer::Product { m, ks } => {
            let pq = ProductQuantizer::train(&residuals, dim, m, ks, seed);
            let codes = residuals.iter().map(|r| pq.encode(r)).collect();
            (FineQuantizer::Product(pq), Codes::Product(codes))
        }
    };

    let mut lists = vec![Vec::new(); n_centroids];
    for (item, &a) in assignments.iter().enumerate() {
        lists[a].push(item);
    }

    Ok(IvfIndex {
        dim,
        centroids,
        ids,
        assignments,
        lists,
        fine,
        codes,
    })
}

impl IvfIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_centroids(&self) -> usize {
        self.centroids.rows
    }

    pub fn ids(&self) -> &[ConceptId] {
        &self.ids
    }

    /// The stored residual approximation for one item.
    pub fn decode_residual(&self, item: usize) -> Vec<f64> {
        match (&self.codes, &self.fine) {
            (Codes::Identity(rs), _) => rs[item].clone(),
            (Codes::Product(cs), FineQuantizer::Product(pq)) => pq.decode(&cs[item]),
            (Codes::Product(_), FineQuantizer::Identity) => {
                unreachable!("product codes without a product quantizer")
            }
        }
    }

    /// centroid + decoded residual.
    pub fn reconstruct(&self, item: usize) -> Vec<f64> {
        let centroid = self.centroids.row(self.assignments[item]);
        self.decode_residual(item)
            .iter()
            .zip(centroid)
            .map(|(r, c)| r + c)
            .collect()
    }

    pub fn quantizer(&self) -> Quantizer {
        match &self.fine {
            FineQuantizer::Identity => Quantizer::Identity,
            FineQuantizer::Product(pq) => Quantizer::Product { m: pq.m, ks: pq.ks },
        }
    }
}

/// Probes the `nprobe` nearest centroid lists and ranks their contents by
/// asymmetric distance. When the probed lists hold fewer than `k` candidates
/// (small or skewed indexes), probing extends to further centroids until
/// enough candidates exist or all lists are read. Ascending distance, ties
/// by concept code.
pub fn search(
    index: &IvfIndex,
    query: &EmbeddingVector,
    params: SearchParams,
) -> Vec<(ConceptId, f64)> {
    assert_eq!(query.dim(), index.dim, "query dimension mismatch");
    let n_centroids = index.n_centroids();
    let nprobe = params.nprobe.min(n_centroids);

    let mut centroid_order: Vec<usize> = (0..n_centroids).collect();
    let centroid_dist: Vec<f64> = (0..n_centroids)
        .map(|c| l2_dist_sq(index.centroids.row(c), &query.values))
        .collect();
    centroid_order.sort_by(|&a, &b| centroid_dist[a].total_cmp(&centroid_dist[b]).then(a.cmp(&b)));

    let mut candidates: Vec<(usize, f64)> = Vec::new();
    let mut probed = 0;
    while probed < n_centroids && (probed < nprobe || candidates.len() < params.k) {
        let c = centroid_order[probed];
        probed += 1;
        if index.lists[c].is_empty() {
            continue;
        }
        match (&index.codes, &index.fine) {
            (Codes::Identity(rs), _) => {
                let centroid = index.centroids.row(c);
                let query_residual: Vec<f64> = query
                    .values
                    .iter()
                    .zip(centroid)
                    .map(|(q, cv)| q - cv)
                    .collect();
                for &item in &index.lists[c] {
                    candidates.push((item, l2_dist_sq(&query_residual, &rs[item])));
                }
            }
            (Codes::Product(cs), FineQuantizer::Product(pq)) => {
                // Per-centroid lookup table: squared distance from the query
                // residual to every codeword, per subspace.
                let centroid = index.centroids.row(c);
                let query_residual: Vec<f64> = query
                    .values
                    .iter()
                    .zip(centroid)
                    .map(|(q, cv)| q - cv)
                    .collect();
                let luts: Vec<Vec<f64>> = (0..pq.m)
                    .map(|s| {
                        let sub = &query_residual[pq.sub_range(s)];
                        (0..pq.ks)
                            .map(|j| l2_dist_sq(pq.codebooks[s].row(j), sub))
                            .collect()
                    })
                    .collect();
                for &item in &index.lists[c] {
                    let d = cs[item]
                        .iter()
                        .enumerate()
                        .map(|(s, &code)| luts[s][code as usize])
                        .sum();
                    candidates.push((item, d));
                }
            }
            (Codes::Product(_), FineQuantizer::Identity) => unreachable!(),
        }
    }

    candidates.sort_by(|a, b| {
        a.1.total_cmp(&b.1)
            .then_with(|| code_order(&index.ids[a.0], &index.ids[b.0]))
    });
    candidates
        .into_iter()
        .take(params.k)
        .map(|(item, d)| (index.ids[item].clone(), d.sqrt()))
        .collect()
}

/// Brute-force top-k by L2 distance — the oracle approximate search is
/// measured against. Ascending distance, ties by concept code.
pub fn exact_search(
    vectors: &BTreeMap<ConceptId, EmbeddingVector>,
    query: &EmbeddingVector,
    k: usize,
) -> Vec<(ConceptId, f64)> {
    let mut all: Vec<(&ConceptId, f64)> = vectors
        .iter()
        .map(|(id, v)| (id, l2_dist_sq(&v.values, &query.values)))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| code_order(a.0, b.0)));
    all.into_iter()
        .take(k)
        .map(|(id, d)| (id.clone(), d.sqrt()))
        .collect()
}

/// |approximate ∩ exact| / |exact| over the two top-k id sets.
pub fn recall_against_exact(approx: &[(ConceptId, f64)], exact: &[(ConceptId, f64)]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let exact_ids: std::collections::BTreeSet<&ConceptId> =
        exact.iter().map(|(id, _)| id).collect();
    let hit = approx
        .iter()
        .filter(|(id, _)| exact_ids.contains(id))
        .count();
    hit as f64 / exact.len() as f64
}

const INDEX_MAGIC: &[u8; 4] = b"IVF1";

/// File layout: magic, N, D, |C|, quantizer descriptor (with codebooks for
/// the product case), centroids, per-item (id, centroid) assignments, codes.
pub fn save_index<W: Write>(index: &IvfIndex, mut w: W) -> std::io::Result<()> {
    binio::write_magic(&mut w, INDEX_MAGIC)?;
    binio::write_u32(&mut w, index.len() as u32)?;
    binio::write_u32(&mut w, index.dim as u32)?;
    binio::write_u32(&mut w, index.n_centroids() as u32)?;
    match &index.fine {
        FineQuantizer::Identity => {
            w.write_all(&[0u8])?;
        }
        FineQuantizer::Product(pq) => {
            w.write_all(&[1u8])?;
            binio::write_u32(&mut w, pq.m as u32)?;
            binio::write_u32(&mut w, pq.ks as u32)?;
            for cb in &pq.codebooks {
                binio::write_f64_slice(&mut w, cb.data())?;
            }
        }
    }
    binio::write_f64_slice(&mut w, index.centroids.data())?;
    for (id, &assign) in index.ids.iter().zip(&index.assignments) {
        binio::write_string(&mut w, &id.to_string())?;
        binio::write_u32(&mut w, assign as u32)?;
    }
    match &index.codes {
        Codes::Identity(rs) => {
            for r in rs {
                binio::write_f64_slice(&mut w, r)?;
            }
        }
        Codes::Product(cs) => {
            for c in cs {
                w.write_all(c)?;
            }
        }
    }
    Ok(())
}

pub fn load_index<R: Read>(mut r: R) -> std::io::Result<IvfIndex> {
    let invalid = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
    binio::expect_magic(&mut r, INDEX_MAGIC)?;
    let n = binio::read_u32(&mut r)? as usize;
    let dim = binio::read_u32(&mut r)? as usize;
    let n_centroids = binio::read_u32(&mut r)? as usize;

    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let fine = match kind[0] {
        0 => FineQuantizer::Identity,
        1 => {
            let m = binio::read_u32(&mut r)? as usize;
            let ks = binio::read_u32(&mut r)? as usize;
            let mut codebooks = Vec::with_capacity(m);
            for s in 0..m {
                let sub_dim = sub_range(dim, m, s).len();
                let data = binio::read_f64_vec(&mut r, ks * sub_dim)?;
                codebooks.push(Matrix::from_data(ks, sub_dim, data));
            }
            FineQuantizer::Product(ProductQuantizer { m, ks, dim, codebooks })
        }
        other => return Err(invalid(&format!("unknown quantizer kind {other}"))),
    };

    let centroids = Matrix::from_data(
        n_centroids,
        dim,
        binio::read_f64_vec(&mut r, n_centroids * dim)?,
    );
    let mut ids = Vec::with_capacity(n);
    let mut assignments = Vec::with_capacity(n);
    for _ in 0..n {
        let id = binio::read_string(&mut r)?;
        ids.push(ConceptId::parse(&id).map_err(|e| invalid(&e.to_string()))?);
        assignments.push(binio::read_u32(&mut r)? as usize);
    }
    let codes = match &fine {
        FineQuantizer::Identity => {
            let mut rs = Vec::with_capacity(n);
            for _ in 0..n {
                rs.push(binio::read_f64_vec(&mut r, dim)?);
            }
            Codes::Identity(rs)
        }
        FineQuantizer::Product(pq) => {
            let mut cs = Vec::with_capacity(n);
            for _ in 0..n {
                let mut code = vec![0u8; pq.m];
                r.read_exact(&mut code)?;
                cs.push(code);
            }
            Codes::Product(cs)
        }
    };

    let mut lists = vec![Vec::new(); n_centroids];
    for (item, &a) in assignments.iter().enumerate() {
        if a >= n_centroids {
            return Err(invalid("assignment out of range"));
        }
        lists[a].push(item);
    }
    Ok(IvfIndex {
        dim,
        centroids,
        ids,
        assignments,
        lists,
        fine,
        codes,
    })
}
