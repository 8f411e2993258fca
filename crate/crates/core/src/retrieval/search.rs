use std::cmp::Ordering;
use std::time::{Duration, Instant};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::text::{edit_similarity, jaccard_sets, token_set};
use super::{SegmentStore, TfIdfIndex};
use crate::alignment::dtw_matrices;
use crate::error::{Error, Result};
use crate::quantizer::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub nprobe: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub dtw_rerank: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            nprobe: 4,
            n1: 100,
            n2: 25,
            n3: 10,
            dtw_rerank: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub segment_id: u32,
    pub track_id: String,
    pub start: f64,
    pub stage1: f32,
    pub stage2: f64,
    pub stage3: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dtw: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stage1: Duration,
    pub stage2: Duration,
    pub stage3: Duration,
    pub rerank: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Final ranking (the stage-3 set, best first).
    pub hits: Vec<SearchHit>,
    pub stage1: Vec<u32>,
    pub stage2: Vec<u32>,
    pub stage3: Vec<u32>,
    pub timings: StageTimings,
    /// Set when no candidate shares a token with the query.
    pub low_confidence: bool,
}

struct Candidate {
    id: u32,
    s1: f32,
    s2: f64,
    s3: f64,
}

/// Token-level DTW with 0/1 substitution cost, as a similarity in [0, 1].
fn discrete_dtw_similarity(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (n, m) = (a.len(), b.len());
    // (cost, steps)
    let mut acc = vec![(f64::INFINITY, 0usize); n * m];
    for i in 0..n {
        for j in 0..m {
            let d = f64::from(u8::from(a[i] != b[j]));
            let prev = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, 0);
                for (pi, pj) in [(i.wrapping_sub(1), j.wrapping_sub(1)), (i.wrapping_sub(1), j), (i, j.wrapping_sub(1))] {
                    if pi < n && pj < m && acc[pi * m + pj].0 < best.0 {
                        best = acc[pi * m + pj];
                    }
                }
                best
            };
            acc[i * m + j] = (prev.0 + d, prev.1 + 1);
        }
    }
    let (cost, steps) = acc[n * m - 1];
    1.0 - cost / steps as f64
}

fn continuous_dtw_similarity(a: &[u32], b: &[u32], unit_codewords: ArrayView2<'_, f32>) -> Result<f64> {
    let pick = |ts: &[u32]| unit_codewords.select(ndarray::Axis(0), &ts.iter().map(|&t| t as usize).collect::<Vec<_>>());
    let (pa, pb) = (pick(a), pick(b));
    let (path, cost) = dtw_matrices(pa.view(), pb.view(), None)?;
    Ok(1.0 / (1.0 + cost / path.len() as f64))
}

/// Run the cascade: IVF-PQ TF-IDF → Jaccard → edit similarity
/// (→ optional DTW re-ranking).
///
/// `unit_codewords` is only needed for the continuous DTW re-rank.
pub fn search(
    query: &TokenSequence,
    idx: &TfIdfIndex,
    store: &SegmentStore,
    cfg: &SearchConfig,
    unit_codewords: Option<ArrayView2<'_, f32>>,
) -> Result<SearchResult> {
    if query.is_empty() {
        return Err(Error::EmptyInput("query has no tokens".into()));
    }
    if store.is_empty() || idx.doc_count == 0 {
        return Ok(SearchResult::default());
    }
    let by_desc = |a: f64, b: f64| b.partial_cmp(&a).unwrap_or(Ordering::Equal);

    let t0 = Instant::now();
    let q = idx.query_vector(&query.tokens, 1.0);
    let mut cands: Vec<Candidate> = idx
        .approximate_scores(&q, cfg.nprobe)
        .into_iter()
        .map(|(id, s1)| Candidate { id, s1, s2: 0.0, s3: 0.0 })
        .collect();
    cands.sort_by(|a, b| by_desc(a.s1 as f64, b.s1 as f64).then(a.id.cmp(&b.id)));
    cands.truncate(cfg.n1);
    let stage1: Vec<u32> = cands.iter().map(|c| c.id).collect();
    let t1 = Instant::now();

    let qset = token_set(&query.tokens);
    for c in &mut cands {
        c.s2 = jaccard_sets(&qset, store.token_set(c.id));
    }
    let low_confidence = cands.iter().all(|c| c.s2 == 0.0);
    cands.sort_by(|a, b| {
        by_desc(a.s2, b.s2)
            .then(by_desc(a.s1 as f64, b.s1 as f64))
            .then(a.id.cmp(&b.id))
    });
    cands.truncate(cfg.n2);
    let stage2: Vec<u32> = cands.iter().map(|c| c.id).collect();
    let t2 = Instant::now();

    for c in &mut cands {
        let seg = &store.get(c.id).expect("index and store agree").tokens.tokens;
        c.s3 = edit_similarity(&query.tokens, seg);
    }
    cands.sort_by(|a, b| by_desc(a.s3, b.s3).then(by_desc(a.s2, b.s2)).then(a.id.cmp(&b.id)));
    cands.truncate(cfg.n3);
    let stage3: Vec<u32> = cands.iter().map(|c| c.id).collect();
    let t3 = Instant::now();

    let mut hits: Vec<SearchHit> = cands
        .iter()
        .map(|c| {
            let rec = store.get(c.id).expect("index and store agree");
            SearchHit {
                segment_id: c.id,
                track_id: rec.track_id.clone(),
                start: rec.start,
                stage1: c.s1,
                stage2: c.s2,
                stage3: c.s3,
                dtw: None,
            }
        })
        .collect();
    if cfg.dtw_rerank {
        for h in &mut hits {
            let seg = &store.get(h.segment_id).unwrap().tokens.tokens;
            let disc = discrete_dtw_similarity(&query.tokens, seg);
            let cont = match unit_codewords {
                Some(cw) => continuous_dtw_similarity(&query.tokens, seg, cw)?,
                None => disc,
            };
            h.dtw = Some((disc, cont));
        }
        hits.sort_by(|a, b| {
            let (da, ca) = a.dtw.unwrap();
            let (db, cb) = b.dtw.unwrap();
            by_desc(ca, cb).then(by_desc(da, db)).then(a.segment_id.cmp(&b.segment_id))
        });
    }
    let t4 = Instant::now();

    Ok(SearchResult {
        hits,
        stage1,
        stage2,
        stage3,
        timings: StageTimings {
            stage1: t1 - t0,
            stage2: t2 - t1,
            stage3: t3 - t2,
            rerank: t4 - t3,
        },
        low_confidence,
    })
}
