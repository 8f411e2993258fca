//! TF-IDF vectors of token sequences behind an IVF-PQ index.

use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, nearest, sq_dist};
use super::SegmentRecord;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexConfig {
    pub n_list: usize,
    pub m: usize,
    pub nbits: u32,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            n_list: 16,
            m: 8,
            nbits: 8,
            kmeans_iters: 20,
            seed: 0,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_list == 0 || self.m == 0 {
            return Err(Error::Config("n_list and m must be positive".into()));
        }
        if !(1..=8).contains(&self.nbits) {
            return Err(Error::Config(format!("nbits must be in 1..=8, got {}", self.nbits)));
        }
        Ok(())
    }
}

/// Product quantizer over `m` sub-vectors of width `dsub` (input zero-padded
/// to `m · dsub`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProductQuantizer {
    pub m: usize,
    pub ksub: usize,
    pub dsub: usize,
    /// `m × ksub × dsub`, row-major.
    pub codebooks: Vec<f32>,
}

impl ProductQuantizer {
    fn sub<'a>(&self, x: &'a [f32], j: usize) -> &'a [f32] {
        &x[j * self.dsub..(j + 1) * self.dsub]
    }

    pub fn centroid(&self, j: usize, c: usize) -> &[f32] {
        let off = (j * self.ksub + c) * self.dsub;
        &self.codebooks[off..off + self.dsub]
    }

    /// `x` must already be padded to `m · dsub`.
    pub fn encode(&self, x: &[f32]) -> Vec<u8> {
        (0..self.m)
            .map(|j| {
                let cb = &self.codebooks[j * self.ksub * self.dsub..(j + 1) * self.ksub * self.dsub];
                nearest(self.sub(x, j), cb, self.dsub) as u8
            })
            .collect()
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        code.iter()
            .enumerate()
            .flat_map(|(j, &c)| self.centroid(j, c as usize).to_vec())
            .collect()
    }

    /// Inner products of each query sub-vector with each sub-centroid.
    pub fn ip_table(&self, q: &[f32]) -> Vec<f32> {
        let mut t = Vec::with_capacity(self.m * self.ksub);
        for j in 0..self.m {
            let qs = self.sub(q, j);
            for c in 0..self.ksub {
                t.push(qs.iter().zip(self.centroid(j, c)).map(|(a, b)| a * b).sum());
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PostingList {
    pub ids: Vec<u32>,
    /// `m` bytes per id.
    pub codes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfIndex {
    pub config: IndexConfig,
    pub k_cw: usize,
    pub idf: Vec<f32>,
    pub doc_count: usize,
    /// `n_list × padded_dim`.
    pub centroids: Vec<f32>,
    pub lists: Vec<PostingList>,
    pub pq: ProductQuantizer,
}

/// Smoothed IDF: `ln((1 + N) / (1 + df)) + 1`.
pub fn smoothed_idf(doc_freq: &[usize], n_docs: usize) -> Vec<f32> {
    doc_freq
        .iter()
        .map(|&df| (((1 + n_docs) as f64 / (1 + df) as f64).ln() + 1.0) as f32)
        .collect()
}

/// L2-normalized TF-IDF vector with TF = count / `length_s`.
pub fn tfidf_vector(tokens: &[u32], length_s: f64, idf: &[f32]) -> Vec<f32> {
    let mut v = vec![0.0f64; idf.len()];
    for &t in tokens {
        if let Some(slot) = v.get_mut(t as usize) {
            *slot += 1.0;
        }
    }
    let len = if length_s > 0.0 { length_s } else { 1.0 };
    for (x, &w) in v.iter_mut().zip(idf) {
        *x = *x / len * w as f64;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v.into_iter().map(|x| x as f32).collect()
}

impl TfIdfIndex {
    pub fn padded_dim(&self) -> usize {
        self.pq.m * self.pq.dsub
    }

    pub fn n_list(&self) -> usize {
        self.lists.len()
    }

    pub fn is_flat(&self) -> bool {
        self.lists.len() == 1 && self.centroids.iter().all(|&v| v == 0.0)
    }

    /// Query vector padded to the PQ width.
    pub fn query_vector(&self, tokens: &[u32], length_s: f64) -> Vec<f32> {
        let mut v = tfidf_vector(tokens, length_s, &self.idf);
        v.resize(self.padded_dim(), 0.0);
        v
    }

    pub fn centroid(&self, list: usize) -> &[f32] {
        let d = self.padded_dim();
        &self.centroids[list * d..(list + 1) * d]
    }

    /// Lists ordered by centroid distance to `q`, nearest first.
    pub fn probe_order(&self, q: &[f32]) -> Vec<usize> {
        let mut order: Vec<(f32, usize)> = (0..self.n_list())
            .map(|l| (sq_dist(q, self.centroid(l)), l))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, l)| l).collect()
    }

    /// Reconstructed vector of a stored segment.
    pub fn reconstruct(&self, list: usize, pos: usize) -> Vec<f32> {
        let m = self.pq.m;
        let r = self.pq.decode(&self.lists[list].codes[pos * m..(pos + 1) * m]);
        r.iter().zip(self.centroid(list)).map(|(a, b)| a + b).collect()
    }

    /// Approximate cosine scores `q · (centroid + decoded residual)` for every
    /// segment in the `nprobe` nearest lists.
    pub fn approximate_scores(&self, q: &[f32], nprobe: usize) -> Vec<(u32, f32)> {
        let table = self.pq.ip_table(q);
        let ksub = self.pq.ksub;
        let m = self.pq.m;
        let mut out = Vec::new();
        for l in self.probe_order(q).into_iter().take(nprobe.max(1)) {
            let base: f32 = q.iter().zip(self.centroid(l)).map(|(a, b)| a * b).sum();
            let list = &self.lists[l];
            for (i, &id) in list.ids.iter().enumerate() {
                let code = &list.codes[i * m..(i + 1) * m];
                let s = code
                    .iter()
                    .enumerate()
                    .fold(base, |acc, (j, &c)| acc + table[j * ksub + c as usize]);
                out.push((id, s));
            }
        }
        out
    }
}

/// Build the index. Segment ids are positions in `segments`.
pub fn build_index(segments: &[SegmentRecord], k_cw: usize, cfg: &IndexConfig) -> Result<TfIdfIndex> {
    cfg.validate()?;
    if segments.is_empty() {
        return Err(Error::EmptyInput("cannot index an empty corpus".into()));
    }
    if k_cw == 0 {
        return Err(Error::Parameter("vocabulary size must be positive".into()));
    }
    if let Some(bad) = segments
        .iter()
        .flat_map(|s| s.tokens.tokens.iter())
        .find(|&&t| t as usize >= k_cw)
    {
        return Err(Error::Index(format!("token {bad} outside vocabulary of {k_cw}")));
    }
    let n = segments.len();
    let mut df = vec![0usize; k_cw];
    for s in segments {
        for t in super::text::token_set(&s.tokens.tokens) {
            df[t as usize] += 1;
        }
    }
    let idf = smoothed_idf(&df, n);

    let m = cfg.m;
    let dsub = k_cw.div_ceil(m);
    let dim = m * dsub;
    let mut vectors = Vec::with_capacity(n * dim);
    for s in segments {
        let mut v = tfidf_vector(&s.tokens.tokens, s.length, &idf);
        v.resize(dim, 0.0);
        vectors.extend(v);
    }

    let mut r = rng::stream(cfg.seed, "ivf", 0);
    let (centroids, assign) = if n >= cfg.n_list && cfg.n_list > 1 {
        kmeans(&vectors, dim, cfg.n_list, cfg.kmeans_iters, &mut r)
    } else {
        // flat fallback: one list around the origin
        (vec![0.0; dim], vec![0; n])
    };
    let n_list = centroids.len() / dim;

    let mut residuals = vectors.clone();
    for i in 0..n {
        let c = &centroids[assign[i] * dim..(assign[i] + 1) * dim];
        for (x, cv) in residuals[i * dim..(i + 1) * dim].iter_mut().zip(c) {
            *x -= cv;
        }
    }
    let ksub = (1usize << cfg.nbits).min(n);
    let mut codebooks = Vec::with_capacity(m * ksub * dsub);
    for j in 0..m {
        let sub: Vec<f32> = residuals
            .chunks_exact(dim)
            .flat_map(|row| row[j * dsub..(j + 1) * dsub].to_vec())
            .collect();
        let mut r = rng::stream(cfg.seed, "pq", j as u64);
        let (cb, _) = kmeans(&sub, dsub, ksub, cfg.kmeans_iters, &mut r);
        codebooks.extend(cb);
    }
    let pq = ProductQuantizer {
        m,
        ksub,
        dsub,
        codebooks,
    };

    let mut lists = vec![PostingList::default(); n_list];
    for i in 0..n {
        let code = pq.encode(&residuals[i * dim..(i + 1) * dim]);
        let l = &mut lists[assign[i]];
        l.ids.push(i as u32);
        l.codes.extend(code);
    }
    Ok(TfIdfIndex {
        config: cfg.clone(),
        k_cw,
        idf,
        doc_count: n,
        centroids,
        lists,
        pq,
    })
}
