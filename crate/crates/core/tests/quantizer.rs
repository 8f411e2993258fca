use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng as _;

use tokstd_core::encoder::EmbeddingSequence;
use tokstd_core::oracle::{dense_sinkhorn, linear_scan_cosine};
use tokstd_core::quantizer::{normalized_entropy, quantize, sinkhorn_balance, Codebook, SinkhornConfig};
use tokstd_core::rng;

fn scores(seed: u64, n: usize, k: usize, spread: f64) -> Array2<f64> {
    let mut r = rng::stream(seed, "scores", 0);
    Array2::from_shape_fn((n, k), |_| r.gen_range(-spread..spread))
}

fn unit_rows(seed: u64, n: usize, d: usize) -> Array2<f64> {
    let mut m = scores(seed, n, d, 1.0);
    for mut row in m.rows_mut() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.mapv_inplace(|v| v / n);
    }
    m
}

fn converge() -> SinkhornConfig {
    SinkhornConfig {
        eps: 0.05,
        max_iter: 20_000,
        tol: 1e-8,
    }
}

#[test]
fn small_plan_matches_dense_reference() {
    let s = Array2::from_shape_vec((3, 2), vec![0.9, 0.1, 0.2, 0.7, 0.5, 0.4]).unwrap();
    let cfg = SinkhornConfig { eps: 0.1, max_iter: 10_000, tol: 1e-13 };
    let plan = sinkhorn_balance(s.view(), &cfg).unwrap();
    let reference = dense_sinkhorn(&s, 0.1, 10_000);
    let diff = (&plan.probs - &reference).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff < 1e-8, "{diff}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn converged_plans_meet_both_marginals(seed in 0u64..100_000, n in 2usize..200, k in 2usize..40, spread in 0.1f64..3.0) {
        let s = scores(seed, n, k, spread);
        let plan = sinkhorn_balance(s.view(), &converge()).unwrap();
        prop_assume!(plan.converged);
        let target = n as f64 / k as f64;
        prop_assert!(plan.row_sums().iter().all(|r| (r - 1.0).abs() <= 1e-6));
        prop_assert!(plan.col_sums().iter().all(|c| (c - target).abs() <= 1e-5 * target));
        prop_assert!(plan.probs.iter().all(|p| p.is_finite() && *p >= 0.0));
    }

    #[test]
    fn plan_beats_the_uniform_plan(seed in 0u64..100_000, n in 2usize..100, k in 2usize..20) {
        let s = scores(seed, n, k, 1.0);
        let plan = sinkhorn_balance(s.view(), &converge()).unwrap();
        let uniform = s.sum() / (n * k) as f64;
        prop_assert!(plan.objective(s.view()) >= uniform - 1e-12);
    }

    #[test]
    fn entropy_grows_with_eps(seed in 0u64..100_000, n in 4usize..60, k in 2usize..12) {
        let s = scores(seed, n, k, 1.0);
        let h: Vec<f64> = [0.05, 0.2, 0.8]
            .iter()
            .map(|&eps| sinkhorn_balance(s.view(), &SinkhornConfig { eps, ..converge() }).unwrap().entropy())
            .collect();
        prop_assert!(h[0] < h[1] && h[1] < h[2], "{:?}", h);
    }

    #[test]
    fn assignment_matches_linear_scan(seed in 0u64..100_000, t in 1usize..20) {
        let mut r = rng::stream(seed, "codebook", 0);
        let cb = Codebook::<f64>::new(scores(seed, 8, 4, 2.0)).unwrap();
        let z = unit_rows(seed + 1, t, 4);
        let emb = EmbeddingSequence { embeddings: z.clone(), valid_range: 0..t, degenerate: vec![false; t] };
        let tokens = cb.assign(&emb).unwrap();
        for (i, row) in z.rows().into_iter().enumerate() {
            prop_assert_eq!(tokens[i] as usize, linear_scan_cosine(row.as_slice().unwrap(), &cb.codewords));
        }
        // positive rescaling of any codeword never changes the argmax
        let mut scaled = cb.clone();
        for mut row in scaled.codewords.rows_mut() {
            let c: f64 = r.gen_range(0.01..100.0);
            row.mapv_inplace(|v| v * c);
        }
        prop_assert_eq!(scaled.assign(&emb).unwrap(), tokens);
    }

    #[test]
    fn quantize_counts_usage(seed in 0u64..100_000, t in 1usize..30) {
        let mut cb = Codebook::<f64>::new(unit_rows(seed, 6, 3)).unwrap();
        let z = unit_rows(seed + 3, t, 3);
        let emb = EmbeddingSequence { embeddings: z, valid_range: 0..t, degenerate: vec![false; t] };
        let toks = quantize(&emb, &mut cb).unwrap();
        prop_assert_eq!(toks.len(), t);
        prop_assert_eq!(cb.total_usage(), t as u64);
    }

    #[test]
    fn normalized_entropy_is_bounded(usage in prop::collection::vec(0u64..50, 2..20)) {
        prop_assume!(usage.iter().sum::<u64>() > 0);
        let h = normalized_entropy(&usage).unwrap();
        prop_assert!((0.0..=1.0).contains(&h));
        let uniform = usage.iter().all(|&c| c == usage[0]);
        prop_assert_eq!((h - 1.0).abs() < 1e-12, uniform);
    }
}
