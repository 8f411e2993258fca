use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::Rng as _;
use tempfile::TempDir;

use tokstd_core::oracle::naive_levenshtein;
use tokstd_core::quantizer::TokenSequence;
use tokstd_core::retrieval::{
    build_index, edit_distance, jaccard, load_index, save_index, search, smoothed_idf, tfidf_vector, IndexConfig,
    SearchConfig, SegmentRecord, SegmentStore,
};
use tokstd_core::rng;
use tokstd_core::synth::{random_token_segments, scramble};

fn record(id: usize, tokens: Vec<u32>) -> SegmentRecord {
    SegmentRecord {
        track_id: format!("t{}", id / 10),
        start: (id % 10) as f64 * 0.5,
        length: 1.0,
        tokens: TokenSequence::from_tokens(tokens),
    }
}

fn exact_top(q: &[f32], vectors: &[Vec<f32>], k: usize) -> Vec<usize> {
    let mut s: Vec<(f32, usize)> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (q.iter().zip(v).map(|(a, b)| a * b).sum(), i))
        .collect();
    s.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    s.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Mean overlap of IVF-PQ top-10 (all lists probed) with exact cosine top-10.
fn ivfpq_recall(n: usize, seed: u64) -> f64 {
    let k_cw = 64;
    let segs = random_token_segments(n, k_cw, 20, seed);
    let idx = build_index(&segs, k_cw, &IndexConfig::default()).unwrap();
    let vectors: Vec<Vec<f32>> = segs.iter().map(|s| tfidf_vector(&s.tokens.tokens, s.length, &idx.idf)).collect();
    let mut r = rng::stream(seed, "queries", 0);
    let mut total = 0.0;
    let n_q = 20;
    for _ in 0..n_q {
        // a segment with a few substitutions, so there is a clear neighbourhood
        let mut q = segs[r.gen_range(0..n)].tokens.tokens.clone();
        for _ in 0..4 {
            let i = r.gen_range(0..q.len());
            q[i] = r.gen_range(0..k_cw as u32);
        }
        let qv = idx.query_vector(&q, 1.0);
        let exact: BTreeSet<usize> = exact_top(&qv[..k_cw], &vectors, 10).into_iter().collect();
        let mut approx = idx.approximate_scores(&qv, idx.n_list());
        approx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let hits = approx.iter().take(10).filter(|(id, _)| exact.contains(&(*id as usize))).count();
        total += hits as f64 / 10.0;
    }
    total / n_q as f64
}

#[test]
fn ivfpq_recall_on_50_segments() {
    for seed in 0..3 {
        let recall = ivfpq_recall(50, seed);
        assert!(recall >= 0.9, "seed {seed}: recall {recall}");
    }
}

#[test]
fn every_segment_retrieves_itself_at_rank_one() {
    let segs = random_token_segments(200, 64, 20, 3);
    let idx = build_index(&segs, 64, &IndexConfig::default()).unwrap();
    let store = SegmentStore::new(segs.clone());
    let cfg = SearchConfig {
        nprobe: idx.n_list(),
        ..SearchConfig::default()
    };
    for (i, s) in segs.iter().enumerate().step_by(4) {
        let res = search(&s.tokens, &idx, &store, &cfg, None).unwrap();
        assert_eq!(res.stage1[0], i as u32, "stage 1, query {i}");
        assert_eq!(res.stage2[0], i as u32, "stage 2, query {i}");
        assert_eq!(res.stage3[0], i as u32, "stage 3, query {i}");
        assert!(!res.low_confidence);
    }
}

#[test]
fn disjoint_query_is_low_confidence() {
    let segs = random_token_segments(40, 32, 12, 4);
    let idx = build_index(&segs, 64, &IndexConfig::default()).unwrap();
    let store = SegmentStore::new(segs);
    let q = TokenSequence::from_tokens((40..50).collect());
    let res = search(&q, &idx, &store, &SearchConfig::default(), None).unwrap();
    assert!(res.low_confidence);
    assert!(res.hits.iter().all(|h| h.stage2 == 0.0));
}

#[test]
fn edit_variant_outranks_scrambled_segment() {
    let query: Vec<u32> = vec![1, 2, 3, 4, 5, 6, 7, 8, 2];
    // one substitution that keeps the token set (the repeated 2 → 5)
    let edited: Vec<u32> = vec![1, 2, 3, 4, 5, 6, 7, 8, 5];
    let mut scrambled = scramble(&query, 9);
    if scrambled == query {
        scrambled.reverse();
    }
    let mut segs: Vec<SegmentRecord> = random_token_segments(30, 64, 8, 5)
        .into_iter()
        .map(|mut s| {
            s.tokens.tokens.iter_mut().for_each(|t| *t = 20 + *t % 40);
            s
        })
        .collect();
    segs.push(record(30, scrambled.clone()));
    segs.push(record(31, edited.clone()));
    let idx = build_index(&segs, 64, &IndexConfig::default()).unwrap();
    let store = SegmentStore::new(segs);
    assert_eq!(jaccard(&query, &edited), jaccard(&query, &scrambled));
    let res = search(&TokenSequence::from_tokens(query), &idx, &store, &SearchConfig::default(), None).unwrap();
    assert_eq!(&res.stage3[..2], &[31, 30]);
}

#[test]
fn saved_index_gives_identical_results() {
    let segs = random_token_segments(120, 48, 15, 6);
    let idx = build_index(&segs, 48, &IndexConfig::default()).unwrap();
    let store = SegmentStore::new(segs.clone());
    let dir = TempDir::new().unwrap();
    save_index(dir.path(), &idx, &store, |_| {}).unwrap();
    let (idx2, store2, manifest) = load_index(dir.path()).unwrap();
    assert_eq!(manifest.doc_count, 120);
    assert_eq!(idx2, idx);
    let cfg = SearchConfig::default();
    for s in segs.iter().step_by(10) {
        let q = TokenSequence::from_tokens(scramble(&s.tokens.tokens, 1));
        let a = search(&q, &idx, &store, &cfg, None).unwrap();
        let b = search(&q, &idx2, &store2, &cfg, None).unwrap();
        assert_eq!((a.stage1, a.stage2, a.stage3), (b.stage1, b.stage2, b.stage3));
        for (x, y) in a.hits.iter().zip(&b.hits) {
            assert_eq!(x.stage2.to_bits(), y.stage2.to_bits());
            assert_eq!(x.stage3.to_bits(), y.stage3.to_bits());
            assert!((x.stage1 - y.stage1).abs() <= 1e-6);
        }
    }
}

#[test]
fn corrupted_index_file_is_detected() {
    let segs = random_token_segments(30, 16, 6, 7);
    let idx = build_index(&segs, 16, &IndexConfig::default()).unwrap();
    let dir = TempDir::new().unwrap();
    save_index(dir.path(), &idx, &SegmentStore::new(segs), |_| {}).unwrap();
    let p = dir.path().join("idf.f32");
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&p, bytes).unwrap();
    assert!(load_index(dir.path()).is_err());
}

#[test]
fn edit_distance_reference_case() {
    assert_eq!(edit_distance(&[3, 1, 4, 1, 5], &[3, 4, 1, 1, 5]), 2);
    assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
}

fn short_seq() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..5, 0..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tfidf_vectors_are_unit_or_zero(tokens in prop::collection::vec(0u32..16, 0..30), len in 0.1f64..5.0) {
        let idf = smoothed_idf(&(0..16).collect::<Vec<_>>(), 20);
        let v = tfidf_vector(&tokens, len, &idf);
        let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        if tokens.is_empty() {
            prop_assert_eq!(n, 0.0);
        } else {
            prop_assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn idf_decreases_with_document_frequency(n in 1usize..1000, a in 0usize..1000, b in 0usize..1000) {
        let (a, b) = (a.min(n), b.min(n));
        let idf = smoothed_idf(&[a, b], n);
        prop_assert!(idf.iter().all(|&v| v >= 1.0 - 1e-6));
        if a < b {
            prop_assert!(idf[0] > idf[1]);
        }
    }

    #[test]
    fn edit_distance_is_a_metric(a in short_seq(), b in short_seq(), c in short_seq()) {
        let d = |x: &[u32], y: &[u32]| edit_distance(x, y);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &b) == 0, a == b);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert_eq!(d(&a, &b), naive_levenshtein(&a, &b));
    }

    #[test]
    fn jaccard_is_symmetric_and_bounded(a in short_seq(), b in short_seq()) {
        let j = jaccard(&a, &b);
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert!((0.0..=1.0).contains(&j));
    }

    #[test]
    fn cascade_stages_are_nested(seed in 0u64..500, qlen in 1usize..15, nprobe in 1usize..6) {
        let segs = random_token_segments(60, 24, 10, seed);
        let idx = build_index(&segs, 24, &IndexConfig { n_list: 4, ..IndexConfig::default() }).unwrap();
        let store = SegmentStore::new(segs);
        let mut r = rng::stream(seed, "q", 0);
        let q = TokenSequence::from_tokens((0..qlen).map(|_| r.gen_range(0..24)).collect());
        let cfg = SearchConfig { nprobe, n1: 30, n2: 12, n3: 5, dtw_rerank: false };
        let res = search(&q, &idx, &store, &cfg, None).unwrap();
        let s1: BTreeSet<u32> = res.stage1.iter().copied().collect();
        let s2: BTreeSet<u32> = res.stage2.iter().copied().collect();
        prop_assert!(res.stage2.iter().all(|id| s1.contains(id)));
        prop_assert!(res.stage3.iter().all(|id| s2.contains(id)));
        prop_assert!(res.stage3.len() <= 5 && res.stage2.len() <= 12 && res.stage1.len() <= 30);
    }
}
