//! One PASS/FAIL line per acceptance criterion, then a single assertion.
//! Lines go straight to stderr so they show up without `--nocapture`.

mod common;

use std::collections::BTreeSet;
use std::io::Write as _;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use tokstd_core::encoder::{encode_matrix, EncoderParams, EncoderShape};
use tokstd_core::evaluation::{mtwv, DetectionTrial, MtwvConfig};
use tokstd_core::quantizer::{sinkhorn_balance, SinkhornConfig};
use tokstd_core::retrieval::{build_index, search, tfidf_vector, IndexConfig, SearchConfig, SegmentStore};
use tokstd_core::rng;
use tokstd_core::selftest;
use tokstd_core::synth::random_token_segments;
use tokstd_core::training::TargetMode;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn sinkhorn_marginals() -> Outcome {
    let cfg = SinkhornConfig {
        max_iter: 10_000,
        tol: 1e-7,
        ..SinkhornConfig::default()
    };
    let mut r = rng::stream(0, "acceptance-sinkhorn", 0);
    let mut ok = true;
    let (mut worst_row, mut worst_col, mut big) = (0.0f64, 0.0f64, f64::NAN);
    for &n in &[64usize, 512, 4096] {
        for &k in &[16usize, 64, 1024] {
            let s = Array2::from_shape_fn((n, k), |_| r.gen_range(-1.0..1.0));
            let t0 = Instant::now();
            let plan = match sinkhorn_balance(s.view(), &cfg) {
                Ok(p) => p,
                Err(e) => return outcome(false, format!("N={n} K={k}: {e}")),
            };
            let secs = t0.elapsed().as_secs_f64();
            if (n, k) == (4096, 1024) {
                big = secs;
                ok &= secs < 1.0;
            }
            let target = n as f64 / k as f64;
            let row = plan.row_sums().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
            let col = plan.col_sums().iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
            worst_row = worst_row.max(row);
            worst_col = worst_col.max(col / target);
            ok &= plan.converged && row <= 1e-6 && col <= 1e-5 * target;
        }
    }
    outcome(
        ok,
        format!("row err {worst_row:.1e}, col err {worst_col:.1e}·N/K, 4096x1024 in {big:.3}s"),
    )
}

fn codebook_balance() -> Outcome {
    let mut high = 0;
    let mut lower_each = true;
    let mut rows = Vec::new();
    for seed in 0..5 {
        let (ot, _) = common::toy_balance(seed, 2000, TargetMode::Transport);
        let (am, _) = common::toy_balance(seed, 2000, TargetMode::ArgmaxOneHot);
        high += (ot >= 0.95) as usize;
        lower_each &= am < ot;
        rows.push(format!("{ot:.3}/{am:.3}"));
    }
    outcome(
        high >= 4 && lower_each,
        format!("OT ≥ 0.95 in {high}/5 seeds; OT/argmax {}", rows.join(" ")),
    )
}

fn gradients() -> Outcome {
    let c = selftest::check_gradients(20);
    outcome(c.passed, c.detail)
}

fn dtw_oracle() -> Outcome {
    let c = selftest::check_dtw(11, 100);
    outcome(c.passed, c.detail)
}

fn edit_oracle() -> Outcome {
    let c = selftest::check_edit_distance(12, 200);
    outcome(c.passed, c.detail)
}

fn self_retrieval() -> Outcome {
    let segs = random_token_segments(200, 64, 20, 13);
    let idx = build_index(&segs, 64, &IndexConfig::default()).unwrap();
    let store = SegmentStore::new(segs.clone());
    let cfg = SearchConfig {
        nprobe: idx.n_list(),
        ..SearchConfig::default()
    };
    let mut r = rng::stream(13, "acceptance-queries", 0);
    let picks: BTreeSet<usize> = std::iter::from_fn(|| Some(r.gen_range(0..segs.len()))).take(400).collect();
    let picks: Vec<usize> = picks.into_iter().take(50).collect();
    let mut hits = 0;
    for &i in &picks {
        let res = search(&segs[i].tokens, &idx, &store, &cfg, None).unwrap();
        let id = i as u32;
        if res.stage1.first() == Some(&id) && res.stage2.first() == Some(&id) && res.stage3.first() == Some(&id) {
            hits += 1;
        }
    }
    outcome(hits == picks.len() && picks.len() == 50, format!("{hits}/{} at rank 1 in all stages", picks.len()))
}

fn robustness_trend() -> Outcome {
    let aug = common::speech_consistency(true);
    let ctl = common::speech_consistency(false);
    outcome(
        aug.margin() >= 0.2 && ctl.margin() < aug.margin(),
        format!(
            "augmented {:.3} - {:.3} = {:.3}; control margin {:.3}",
            aug.same_term,
            aug.cross_term,
            aug.margin(),
            ctl.margin()
        ),
    )
}

fn snr_mixing() -> Outcome {
    let c = selftest::check_snr_mixing(14, 100);
    outcome(c.passed, c.detail)
}

fn mtwv_cases() -> Outcome {
    let trial = |term: &str, returned: &[(u32, f64)], truth: &[u32]| DetectionTrial {
        term: term.into(),
        query_id: term.into(),
        returned: returned.to_vec(),
        truth: truth.iter().copied().collect(),
    };
    // term a: truth {1, 2}, term b: truth {5}; 100 scoreable segments, β = 20
    let trials = vec![
        trial("a", &[(1, 0.9), (3, 0.8), (2, 0.5)], &[1, 2]),
        trial("b", &[(6, 0.7), (5, 0.6)], &[5]),
    ];
    let cfg = MtwvConfig {
        beta: 20.0,
        threshold_grid: Some(vec![0.55, 0.75, 0.95]),
        trial_universe: Some(100),
    };
    let r = mtwv(&trials, &cfg).unwrap();
    let by_hand = [
        1.0 - ((0.5 + 20.0 / 98.0) + 20.0 / 99.0) / 2.0,
        1.0 - ((0.5 + 20.0 / 98.0) + 1.0) / 2.0,
        0.0,
    ];
    let curve_ok = r.curve.iter().map(|c| c.1).collect::<Vec<_>>() == by_hand && r.mtwv == by_hand[0];
    let u = MtwvConfig {
        trial_universe: Some(100),
        ..Default::default()
    };
    let perfect = mtwv(&[trial("a", &[(1, 0.3), (2, 0.1)], &[1, 2]), trial("b", &[(5, 0.2)], &[5])], &u)
        .unwrap()
        .mtwv;
    let empty = mtwv(&[trial("a", &[], &[1, 2]), trial("b", &[], &[5])], &u).unwrap().mtwv;
    outcome(
        curve_ok && perfect == 1.0 && empty == 0.0,
        format!("hand case {:.6}, perfect {perfect}, empty {empty}", r.mtwv),
    )
}

fn encoder_contracts() -> Outcome {
    let shape = EncoderShape {
        input_dim: 48,
        hidden_dim: 32,
        embed_dim: 16,
        layers: 2,
    };
    let mut worst_norm = 0.0f64;
    let mut reversal = true;
    for seed in 0..20 {
        let mut r = rng::stream(seed, "acceptance-encoder", 0);
        let p = EncoderParams::<f32>::init(shape, &mut r);
        let t = r.gen_range(1..80);
        let x = Array2::from_shape_fn((t, 48), |_| {
            let v: f64 = StandardNormal.sample(&mut r);
            (3.0 * v) as f32
        });
        let (z, _) = encode_matrix(x.view(), &p).unwrap();
        for row in z.rows() {
            let n = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            worst_norm = worst_norm.max((n - 1.0).abs());
        }
        let mut xr = x.clone();
        xr.invert_axis(Axis(0));
        let (mut zr, _) = encode_matrix(xr.view(), &p.swap_directions()).unwrap();
        zr.invert_axis(Axis(0));
        reversal &= z.iter().zip(zr.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let recall = ivfpq_recall();
    outcome(
        worst_norm <= 1e-5 && reversal && recall >= 0.9,
        format!("max |‖z‖-1| {worst_norm:.1e}, reversal exact: {reversal}, IVF-PQ recall@10 {recall:.3}"),
    )
}

/// Overlap of IVF-PQ top-10 with exact cosine top-10, every list probed.
fn ivfpq_recall() -> f64 {
    let k_cw = 64;
    let segs = random_token_segments(200, k_cw, 20, 15);
    let idx = build_index(&segs, k_cw, &IndexConfig::default()).unwrap();
    let vectors: Vec<Vec<f32>> = segs.iter().map(|s| tfidf_vector(&s.tokens.tokens, s.length, &idx.idf)).collect();
    let mut r = rng::stream(15, "acceptance-recall", 0);
    let n_q = 50;
    let mut total = 0.0;
    for _ in 0..n_q {
        let mut q = segs[r.gen_range(0..segs.len())].tokens.tokens.clone();
        for _ in 0..4 {
            let i = r.gen_range(0..q.len());
            q[i] = r.gen_range(0..k_cw as u32);
        }
        let qv = idx.query_vector(&q, 1.0);
        let mut exact: Vec<(f32, usize)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (qv.iter().zip(v).map(|(a, b)| a * b).sum(), i))
            .collect();
        exact.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let exact: BTreeSet<u32> = exact.iter().take(10).map(|e| e.1 as u32).collect();
        let mut approx = idx.approximate_scores(&qv, idx.n_list());
        approx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        total += approx.iter().take(10).filter(|a| exact.contains(&a.0)).count() as f64 / 10.0;
    }
    total / n_q as f64
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("sinkhorn marginals and speed", sinkhorn_marginals),
        ("codebook balance", codebook_balance),
        ("gradient integrity", gradients),
        ("dtw oracle", dtw_oracle),
        ("edit distance oracle", edit_oracle),
        ("self retrieval", self_retrieval),
        ("robustness trend", robustness_trend),
        ("snr mixing", snr_mixing),
        ("mtwv", mtwv_cases),
        ("encoder contracts", encoder_contracts),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    writeln!(err).unwrap();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let o = check();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        writeln!(err, "{tag} {:>2} {name}: {} ({:.1}s)", i + 1, o.detail, t0.elapsed().as_secs_f64()).unwrap();
        if !o.passed {
            failed.push(name.to_string());
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
