//! Entropic optimal transport between frames and codewords.
//!
//! Solves `max_P Σ P·S + ε H(P)` subject to row marginals `1/N` and column
//! marginals `1/K` with Sinkhorn-Knopp scalings. The kernel is kept in a
//! stabilized form `exp((S + f + g)/ε)` whose log-potentials `f`, `g` absorb
//! the scalings whenever they drift far from 1, so the iteration never
//! overflows; inputs whose dynamic range would underflow the kernel run fully
//! in the log domain instead.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornConfig {
    pub eps: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            eps: 0.05,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// Row-stochastic soft assignment: `probs = N · P`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentPlan {
    pub probs: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Max over `|row_sum − 1|` and `|col_sum − N/K| / (N/K)`.
    pub violation: f64,
}

impl AssignmentPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.probs.sum_axis(Axis(1)).to_vec()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.probs.sum_axis(Axis(0)).to_vec()
    }

    /// `Σ P·S` with `P = probs / N`.
    pub fn objective(&self, scores: ArrayView2<'_, f64>) -> f64 {
        let n = self.probs.nrows() as f64;
        self.probs
            .iter()
            .zip(scores.iter())
            .map(|(p, s)| p * s)
            .sum::<f64>()
            / n
    }

    /// Shannon entropy of `P = probs / N`.
    pub fn entropy(&self) -> f64 {
        let n = self.probs.nrows() as f64;
        -self
            .probs
            .iter()
            .map(|&p| {
                let q = p / n;
                if q > 0.0 {
                    q * q.ln()
                } else {
                    0.0
                }
            })
            .sum::<f64>()
    }
}

/// Largest `(max − min)/ε` the stabilized kernel handles without underflow.
const KERNEL_RANGE_LIMIT: f64 = 600.0;
/// Absorb scalings into the potentials when they leave `[1/B, B]`.
const ABSORB_BOUND: f64 = 1e50;

pub fn sinkhorn_balance(scores: ArrayView2<'_, f64>, cfg: &SinkhornConfig) -> Result<AssignmentPlan> {
    let (n, k) = scores.dim();
    if n == 0 || k == 0 {
        return Err(Error::Input("score matrix must be non-empty".into()));
    }
    if !(cfg.eps > 0.0 && cfg.eps.is_finite()) {
        return Err(Error::Parameter(format!("eps must be positive, got {}", cfg.eps)));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite score".into()));
    }
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if (hi - lo) / cfg.eps <= KERNEL_RANGE_LIMIT {
        Ok(scaling(scores, cfg))
    } else {
        Ok(log_domain(scores, cfg))
    }
}

fn violation_of(probs: &Array2<f64>) -> f64 {
    let (n, k) = probs.dim();
    let target = n as f64 / k as f64;
    let rows = probs
        .sum_axis(Axis(1))
        .iter()
        .fold(0.0f64, |m, &s| m.max((s - 1.0).abs()));
    let cols = probs
        .sum_axis(Axis(0))
        .iter()
        .fold(0.0f64, |m, &s| m.max((s - target).abs() / target));
    rows.max(cols)
}

fn scaling(s: ArrayView2<'_, f64>, cfg: &SinkhornConfig) -> AssignmentPlan {
    let (n, k) = s.dim();
    let eps = cfg.eps;
    let (r, c) = (1.0 / n as f64, 1.0 / k as f64);
    let s = s.as_standard_layout();
    let s = s.as_slice().expect("standard layout");

    // Potentials start at the negated row maxima so every kernel row peaks at 1.
    let mut f: Vec<f64> = s
        .chunks_exact(k)
        .map(|row| -row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut g = vec![0.0f64; k];
    let mut kern = vec![0.0f64; n * k];
    let rebuild = |kern: &mut [f64], f: &[f64], g: &[f64]| {
        for i in 0..n {
            let row = &s[i * k..(i + 1) * k];
            let out = &mut kern[i * k..(i + 1) * k];
            for j in 0..k {
                out[j] = ((row[j] + f[i] + g[j]) / eps).exp();
            }
        }
    };
    rebuild(&mut kern, &f, &g);

    let mut u = vec![1.0f64; n];
    let mut v = vec![1.0f64; k];
    let mut kv = vec![0.0f64; n];
    let mut ktu = vec![0.0f64; k];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iter.max(1) {
        iterations = it + 1;
        // Row update; the previous column update made columns exact.
        for i in 0..n {
            let row = &kern[i * k..(i + 1) * k];
            kv[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let row_err = (0..n).fold(0.0f64, |m, i| m.max((u[i] * kv[i] / r - 1.0).abs()));
        if it > 0 && row_err < cfg.tol {
            converged = true;
            break;
        }
        for i in 0..n {
            u[i] = r / kv[i];
        }
        ktu.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let row = &kern[i * k..(i + 1) * k];
            let ui = u[i];
            for (acc, &kij) in ktu.iter_mut().zip(row) {
                *acc += ui * kij;
            }
        }
        for j in 0..k {
            v[j] = c / ktu[j];
        }
        let drift = u.iter().chain(&v).any(|&x| !(1.0 / ABSORB_BOUND..=ABSORB_BOUND).contains(&x));
        if drift {
            for i in 0..n {
                f[i] += eps * u[i].ln();
                u[i] = 1.0;
            }
            for j in 0..k {
                g[j] += eps * v[j].ln();
                v[j] = 1.0;
            }
            rebuild(&mut kern, &f, &g);
        }
    }

    let mut probs = Array2::zeros((n, k));
    let scale = n as f64;
    for i in 0..n {
        for j in 0..k {
            probs[[i, j]] = scale * u[i] * kern[i * k + j] * v[j];
        }
    }
    let violation = violation_of(&probs);
    AssignmentPlan {
        converged: converged || violation < cfg.tol,
        probs,
        iterations,
        violation,
    }
}

fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_domain(s: ArrayView2<'_, f64>, cfg: &SinkhornConfig) -> AssignmentPlan {
    let (n, k) = s.dim();
    let eps = cfg.eps;
    let (log_r, log_c) = (-(n as f64).ln(), -(k as f64).ln());
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; k];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iter.max(1) {
        iterations = it + 1;
        let mut row_err = 0.0f64;
        for i in 0..n {
            let l = lse((0..k).map(|j| (s[[i, j]] + g[j]) / eps));
            if it > 0 {
                let row = (f[i] / eps + l - log_r).exp();
                row_err = row_err.max((row - 1.0).abs());
            }
            f[i] = eps * (log_r - l);
        }
        if it > 0 && row_err < cfg.tol {
            converged = true;
            // f was just refreshed; recompute g so columns are exact again.
        }
        for j in 0..k {
            let l = lse((0..n).map(|i| (s[[i, j]] + f[i]) / eps));
            g[j] = eps * (log_c - l);
        }
        if converged {
            break;
        }
    }
    let scale = n as f64;
    let probs = Array2::from_shape_fn((n, k), |(i, j)| scale * ((s[[i, j]] + f[i] + g[j]) / eps).exp());
    let violation = violation_of(&probs);
    AssignmentPlan {
        converged: converged || violation < cfg.tol,
        probs,
        iterations,
        violation,
    }
}

/// One-hot argmax targets, the collapse-prone alternative to the OT plan.
pub fn argmax_one_hot(scores: ArrayView2<'_, f64>) -> AssignmentPlan {
    let (n, k) = scores.dim();
    let mut probs = Array2::zeros((n, k));
    for (i, row) in scores.rows().into_iter().enumerate() {
        let mut best = 0;
        for j in 1..k {
            if row[j] > row[best] {
                best = j;
            }
        }
        probs[[i, best]] = 1.0;
    }
    let violation = violation_of(&probs);
    AssignmentPlan {
        probs,
        converged: true,
        iterations: 0,
        violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::rng;
    use rand::Rng as _;

    fn random_scores(n: usize, k: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, "scores", 0);
        Array2::from_shape_fn((n, k), |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn constant_scores_give_uniform_plan() {
        let s = Array2::from_elem((6, 4), 0.3);
        let plan = sinkhorn_balance(s.view(), &SinkhornConfig::default()).unwrap();
        assert!(plan.converged);
        for p in plan.probs.iter() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn large_margin_identity_gives_a_permutation() {
        let s = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 10.0 } else { 0.0 });
        let plan = sinkhorn_balance(s.view(), &SinkhornConfig::default()).unwrap();
        assert!(plan.converged);
        for i in 0..5 {
            assert!(plan.probs[[i, i]] > 0.99);
        }
        assert!(plan.violation < 1e-6);
    }

    #[test]
    fn matches_dense_reference_on_small_case() {
        let s = ndarray::array![[0.9, 0.1], [0.4, 0.6], [0.2, 0.3]];
        let cfg = SinkhornConfig {
            eps: 0.1,
            max_iter: 10_000,
            tol: 1e-13,
        };
        let plan = sinkhorn_balance(s.view(), &cfg).unwrap();
        let reference = oracle::dense_sinkhorn(&s, 0.1, 10_000);
        for (a, b) in plan.probs.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn log_domain_path_agrees_with_scaling_path() {
        let s = random_scores(20, 6, 4);
        let cfg = SinkhornConfig {
            eps: 0.05,
            max_iter: 2000,
            tol: 1e-10,
        };
        let a = scaling(s.view(), &cfg);
        let b = log_domain(s.view(), &cfg);
        assert!(a.converged && b.converged);
        for (x, y) in a.probs.iter().zip(b.probs.iter()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn wide_dynamic_range_stays_finite() {
        let mut s = random_scores(30, 5, 2);
        s[[0, 0]] = 500.0;
        s[[3, 2]] = -500.0;
        let plan = sinkhorn_balance(s.view(), &SinkhornConfig { eps: 0.05, max_iter: 500, tol: 1e-6 }).unwrap();
        assert!(plan.probs.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert!(plan.converged, "violation {}", plan.violation);
    }

    #[test]
    fn marginals_hold_on_convergence() {
        let s = random_scores(64, 16, 1);
        let plan = sinkhorn_balance(s.view(), &SinkhornConfig::default()).unwrap();
        assert!(plan.converged);
        for r in plan.row_sums() {
            assert!((r - 1.0).abs() < 1e-6);
        }
        for c in plan.col_sums() {
            assert!((c - 4.0).abs() < 1e-5 * 4.0);
        }
    }

    #[test]
    fn entropy_increases_with_eps() {
        let s = random_scores(32, 8, 3);
        let ents: Vec<f64> = [0.05, 0.2, 1.0]
            .iter()
            .map(|&eps| {
                let cfg = SinkhornConfig { eps, max_iter: 1000, tol: 1e-9 };
                sinkhorn_balance(s.view(), &cfg).unwrap().entropy()
            })
            .collect();
        assert!(ents[0] < ents[1] && ents[1] < ents[2], "{ents:?}");
    }

    #[test]
    fn plan_beats_uniform_objective() {
        let s = random_scores(40, 8, 5);
        let plan = sinkhorn_balance(s.view(), &SinkhornConfig::default()).unwrap();
        let uniform = AssignmentPlan {
            probs: Array2::from_elem((40, 8), 1.0 / 8.0),
            converged: true,
            iterations: 0,
            violation: 0.0,
        };
        assert!(plan.objective(s.view()) >= uniform.objective(s.view()));
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = random_scores(3, 2, 0);
        assert!(matches!(
            sinkhorn_balance(s.view(), &SinkhornConfig { eps: 0.0, ..Default::default() }),
            Err(Error::Parameter(_))
        ));
        s[[1, 1]] = f64::NAN;
        assert!(matches!(
            sinkhorn_balance(s.view(), &SinkhornConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn non_convergence_is_reported() {
        let s = random_scores(50, 10, 8);
        let plan = sinkhorn_balance(s.view(), &SinkhornConfig { eps: 0.01, max_iter: 2, tol: 1e-12 }).unwrap();
        assert!(!plan.converged);
        assert!(plan.violation > 0.0);
    }
}
