//! Reference implementations used to verify the production code paths.
//!
//! Everything here is deliberately naive (exhaustive search, plain recursion,
//! dense iteration, finite differences) and shares no code with the modules
//! it checks.

use ndarray::{Array1, Array2, ArrayView2};

use crate::encoder::EncoderParams;

/// Every monotone path from (0,0) to (n−1,m−1) with unit steps, returning the
/// minimal summed Euclidean cost. Exponential; keep n, m ≤ 6.
pub fn brute_force_dtw(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> (f64, Vec<(usize, usize)>) {
    fn dist(a: &ArrayView2<'_, f32>, b: &ArrayView2<'_, f32>, i: usize, j: usize) -> f64 {
        let mut s = 0.0f64;
        for k in 0..a.ncols() {
            let d = a[[i, k]] as f64 - b[[j, k]] as f64;
            s += d * d;
        }
        s.sqrt()
    }
    fn walk(
        a: &ArrayView2<'_, f32>,
        b: &ArrayView2<'_, f32>,
        i: usize,
        j: usize,
        acc: f64,
        path: &mut Vec<(usize, usize)>,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        let acc = acc + dist(a, b, i, j);
        path.push((i, j));
        let (n, m) = (a.nrows(), b.nrows());
        if i == n - 1 && j == m - 1 {
            if acc < best.0 {
                *best = (acc, path.clone());
            }
        } else {
            for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
                if i + di < n && j + dj < m {
                    walk(a, b, i + di, j + dj, acc, path, best);
                }
            }
        }
        path.pop();
    }
    let mut best = (f64::INFINITY, Vec::new());
    walk(&a, &b, 0, 0, 0.0, &mut Vec::new(), &mut best);
    best
}

/// Sum of Euclidean frame distances along `path`, accumulated from the start.
pub fn path_cost(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>, path: &[(usize, usize)]) -> f64 {
    path.iter().fold(0.0, |acc, &(i, j)| {
        let s: f64 = (0..a.ncols())
            .map(|k| {
                let d = a[[i, k]] as f64 - b[[j, k]] as f64;
                d * d
            })
            .sum();
        acc + s.sqrt()
    })
}

/// Plain recursive Levenshtein distance.
pub fn naive_levenshtein(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let sub = naive_levenshtein(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
    let del = naive_levenshtein(&a[1..], b) + 1;
    let ins = naive_levenshtein(a, &b[1..]) + 1;
    sub.min(del).min(ins)
}

/// Dense, non-log Sinkhorn for small well-conditioned problems; returns N·P.
pub fn dense_sinkhorn(s: &Array2<f64>, eps: f64, iters: usize) -> Array2<f64> {
    let (n, k) = s.dim();
    let kern = s.mapv(|v| (v / eps).exp());
    let mut u = Array1::<f64>::ones(n);
    let mut v = Array1::<f64>::ones(k);
    for _ in 0..iters {
        let kv = kern.dot(&v);
        u = kv.mapv(|x| (1.0 / n as f64) / x);
        let ktu = kern.t().dot(&u);
        v = ktu.mapv(|x| (1.0 / k as f64) / x);
    }
    Array2::from_shape_fn((n, k), |(i, j)| n as f64 * u[i] * kern[[i, j]] * v[j])
}

/// Index of the maximal cosine similarity by linear scan (ties → lowest).
pub fn linear_scan_cosine(z: &[f64], codewords: &Array2<f64>) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, c) in codewords.rows().into_iter().enumerate() {
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s: f64 = z.iter().zip(c.iter()).map(|(a, b)| a * b).sum::<f64>() / norm;
        if s > best.1 {
            best = (k, s);
        }
    }
    best.0
}

/// Central difference of `f` at `x[i]`.
pub fn central_difference(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Fourth-order central difference of `f` at `x[i]`.
pub fn central_difference4(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    let mut at = |x: &mut [f64], d: f64| {
        x[i] = orig + d;
        f(x)
    };
    let v = -at(x, 2.0 * h) + 8.0 * at(x, h) - 8.0 * at(x, -h) + at(x, -2.0 * h);
    x[i] = orig;
    v / (12.0 * h)
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Straightforward f64 re-implementation of the encoder forward pass, written
/// with whole-matrix operations over the named tensors.
pub fn reference_encode(x: &Array2<f64>, p: &EncoderParams<f64>) -> Array2<f64> {
    let tn = p.tensors();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let t = x.nrows();
    let mut u = x.dot(&tn.stem_w.t()) + &tn.stem_b;
    for dirs in &tn.layers {
        let h = u.ncols();
        let mut xh = u.clone();
        for mut row in xh.rows_mut() {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / h as f64;
            let r = 1.0 / (ms + 1e-6).sqrt();
            row.mapv_inplace(|v| v * r);
        }
        let mut branch = Array2::<f64>::zeros((t, h));
        for (di, d) in dirs.iter().enumerate() {
            let a = d.decay_logit.mapv(sig);
            let v = xh.dot(&d.in_proj.t());
            let mut hs = Array2::<f64>::zeros((t, h));
            let mut state = Array1::<f64>::zeros(h);
            let order: Vec<usize> = if di == 0 { (0..t).collect() } else { (0..t).rev().collect() };
            for step in order {
                state = &a * &state + &(a.mapv(|x| 1.0 - x) * &v.row(step));
                hs.row_mut(step).assign(&state);
            }
            let g = (xh.dot(&d.gate_proj.t()) + &d.gate_bias).mapv(sig);
            branch = branch + (g * hs).dot(&d.out_proj.t());
        }
        u = u + branch;
    }
    let mut y = u.dot(&tn.final_w.t()) + &tn.final_b;
    for mut row in y.rows_mut() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n <= 1e-12 {
            row.fill(0.0);
            row[0] = 1.0;
        } else {
            row.mapv_inplace(|v| v / n);
        }
    }
    y
}
