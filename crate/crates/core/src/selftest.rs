//! Embedded oracle suite behind `tokstd selftest`.
//!
//! Each check runs a production code path against a naive reference from
//! [`crate::oracle`] on small random inputs.

use std::fmt;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::alignment::dtw_matrices;
use crate::audio::AudioClip;
use crate::augment::{mix_components, white_noise};
use crate::error::Result;
use crate::gradcheck;
use crate::oracle::{brute_force_dtw, naive_levenshtein};
use crate::quantizer::{sinkhorn_balance, SinkhornConfig};
use crate::retrieval::text::edit_distance;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<22} {}", self.name, self.detail)
    }
}

fn random_frames(r: &mut rng::Rng, n: usize, d: usize) -> Array2<f32> {
    Array2::from_shape_fn((n, d), |_| {
        let v: f64 = StandardNormal.sample(r);
        v as f32
    })
}

pub fn check_dtw(seed: u64, trials: usize) -> CheckResult {
    let mut r = rng::stream(seed, "selftest-dtw", 0);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..trials {
        let (n, m) = (r.gen_range(1..=6), r.gen_range(1..=6));
        let a = random_frames(&mut r, n, 3);
        let b = random_frames(&mut r, m, 3);
        let (brute, _) = brute_force_dtw(a.view(), b.view());
        match dtw_matrices(a.view(), b.view(), None) {
            Ok((_, cost)) => {
                worst = worst.max((cost - brute).abs());
                if cost != brute {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    CheckResult::new(
        "dtw vs brute force",
        failures == 0,
        format!("{failures}/{trials} mismatches, max |Δ| {worst:.1e}"),
    )
}

pub fn check_edit_distance(seed: u64, trials: usize) -> CheckResult {
    let mut r = rng::stream(seed, "selftest-edit", 0);
    let mut failures = 0;
    for _ in 0..trials {
        let draw = |r: &mut rng::Rng| -> Vec<u32> {
            let len = r.gen_range(0..=8);
            (0..len).map(|_| r.gen_range(0..4)).collect()
        };
        let (a, b) = (draw(&mut r), draw(&mut r));
        if edit_distance(&a, &b) != naive_levenshtein(&a, &b) {
            failures += 1;
        }
    }
    CheckResult::new(
        "edit distance",
        failures == 0,
        format!("{failures}/{trials} mismatches"),
    )
}

pub fn check_sinkhorn(seed: u64, shapes: &[(usize, usize)]) -> CheckResult {
    let mut r = rng::stream(seed, "selftest-sinkhorn", 0);
    let cfg = SinkhornConfig {
        max_iter: 10_000,
        tol: 1e-7,
        ..SinkhornConfig::default()
    };
    let mut worst_row = 0.0f64;
    let mut worst_col = 0.0f64;
    let mut ok = true;
    for &(n, k) in shapes {
        let s = Array2::from_shape_fn((n, k), |_| r.gen_range(-1.0..1.0));
        match sinkhorn_balance(s.view(), &cfg) {
            Ok(plan) => {
                let target = n as f64 / k as f64;
                let row = plan.row_sums().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
                let col = plan
                    .col_sums()
                    .iter()
                    .map(|v| (v - target).abs() / target)
                    .fold(0.0, f64::max);
                worst_row = worst_row.max(row);
                worst_col = worst_col.max(col);
                ok &= plan.converged && row <= 1e-6 && col <= 1e-5;
            }
            Err(_) => ok = false,
        }
    }
    CheckResult::new(
        "sinkhorn marginals",
        ok,
        format!("row err {worst_row:.1e}, relative col err {worst_col:.1e}"),
    )
}

pub fn check_gradients(n_seeds: u64) -> CheckResult {
    match gradcheck::suite(n_seeds) {
        Ok(rows) => {
            let e64 = rows.iter().map(|r| r.1).fold(0.0, f64::max);
            let e32 = rows.iter().map(|r| r.2).fold(0.0, f64::max);
            CheckResult::new(
                "gradients",
                e64 < 1e-6 && e32 < 1e-4,
                format!("{n_seeds} seeds, f64 err {e64:.1e}, f32 err {e32:.1e}"),
            )
        }
        Err(e) => CheckResult::new("gradients", false, e.to_string()),
    }
}

pub fn check_snr_mixing(seed: u64, trials: usize) -> CheckResult {
    let mut r = rng::stream(seed, "selftest-snr", 0);
    let mut worst = 0.0f64;
    let mut ok = true;
    for t in 0..trials {
        let n = r.gen_range(800..4000);
        let speech = white_noise(n, 16_000, rng::derive_seed(seed, "speech", t as u64));
        let speech = AudioClip {
            samples: speech.samples.iter().map(|v| v * 3.0).collect(),
            ..speech
        };
        let noise = white_noise(r.gen_range(200..2000), 16_000, rng::derive_seed(seed, "noise", t as u64));
        let target = r.gen_range(-5.0..20.0);
        let lo = r.gen_range(0..n / 4);
        let hi = r.gen_range(n / 2..=n);
        match mix_components(&speech, &noise, target, lo..hi) {
            Ok(m) => worst = worst.max((m.measured_snr_db(lo..hi) - target).abs()),
            Err(_) => ok = false,
        }
    }
    ok &= worst <= 0.1;
    CheckResult::new("snr mixing", ok, format!("{trials} draws, max |Δ| {worst:.2e} dB"))
}

/// Run every check. Fast enough to run on each invocation (a few seconds).
pub fn run(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_dtw(seed, 100),
        check_edit_distance(seed, 200),
        check_sinkhorn(seed, &[(64, 16), (512, 64), (256, 256)]),
        check_gradients(3),
        check_snr_mixing(seed, 50),
    ])
}
