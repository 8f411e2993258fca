//! Finite-difference checks of the training gradients.
//!
//! Analytic gradients are computed in the precision under test; the numeric
//! reference is always a fourth-order float64 central difference at the
//! same point.
//! The error of a check is the largest relative error `‖a − n‖ / ‖n‖` over
//! its tensors (each embedding vector, the codebook, each encoder weight or
//! bias). A single wrong tensor shows up however small its gradient is, while
//! float32 cancellation inside individual entries of a tensor does not.

use std::ops::Range;

use ndarray::Array2;
use rand::Rng as _;

use crate::encoder::{EncoderParams, EncoderShape};
use crate::error::Result;
use crate::numeric::Real;
use crate::oracle::{central_difference4, relative_error};
use crate::quantizer::{robust_consistency_loss, Codebook, ConsistencyPair, SinkhornConfig};
use crate::rng::{self, Rng};
use crate::training::{
    commitment_loss, contrastive_loss, forward_batch, objective, prepare_targets, Anchor, ItemInput, LossWeights,
    TargetMode,
};

const H: f64 = 2e-5;

fn max_error(analytic: &[f64], numeric: &[f64], groups: impl IntoIterator<Item = Range<usize>>) -> f64 {
    groups
        .into_iter()
        .map(|g| {
            let diff = analytic[g.clone()]
                .iter()
                .zip(&numeric[g.clone()])
                .map(|(a, n)| (a - n) * (a - n))
                .sum::<f64>()
                .sqrt();
            let norm = numeric[g].iter().map(|n| n * n).sum::<f64>().sqrt();
            relative_error(diff, 0.0, norm.max(1e-12))
        })
        .fold(0.0, f64::max)
}

/// Consecutive chunks of `width` entries.
fn chunks(len: usize, width: usize) -> impl Iterator<Item = Range<usize>> {
    (0..len / width).map(move |i| i * width..(i + 1) * width)
}

fn unit(r: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn cast<F: Real>(v: &[f64]) -> Vec<F> {
    v.iter().map(|&x| F::from_f64_lossy(x)).collect()
}

/// Round-trip through `F` so analytic and numeric gradients see the same point.
fn snap<F: Real>(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| F::from_f64_lossy(x).to_f64_lossy()).collect()
}

/// Contrastive loss, 2 anchors with 2 negatives each, d = 4.
pub fn contrastive<F: Real>(seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, "gradcheck-contrastive", 0);
    let d = 4;
    let (n_anchor, n_neg) = (2, 2);
    let per = 2 + n_neg;
    let x: Vec<f64> = snap::<F>(&(0..n_anchor * per).flat_map(|_| unit(&mut r, d)).collect::<Vec<_>>());
    let tau = r.gen_range(0.1..1.0);
    let eval = |x: &[f64]| -> f64 {
        let anchors: Vec<Anchor<'_, f64>> = (0..n_anchor)
            .map(|a| {
                let b = a * per * d;
                Anchor {
                    anchor: &x[b..b + d],
                    positive: &x[b + d..b + 2 * d],
                    negatives: (0..n_neg).map(|k| &x[b + (2 + k) * d..b + (3 + k) * d]).collect(),
                }
            })
            .collect();
        contrastive_loss(&anchors, tau).unwrap().loss
    };
    let xf: Vec<F> = cast(&x);
    let anchors: Vec<Anchor<'_, F>> = (0..n_anchor)
        .map(|a| {
            let b = a * per * d;
            Anchor {
                anchor: &xf[b..b + d],
                positive: &xf[b + d..b + 2 * d],
                negatives: (0..n_neg).map(|k| &xf[b + (2 + k) * d..b + (3 + k) * d]).collect(),
            }
        })
        .collect();
    let l = contrastive_loss(&anchors, tau)?;
    let mut analytic = Vec::with_capacity(x.len());
    for a in 0..n_anchor {
        analytic.extend(l.grad_anchor[a].iter().map(|v| v.to_f64_lossy()));
        analytic.extend(l.grad_positive[a].iter().map(|v| v.to_f64_lossy()));
        for k in 0..n_neg {
            analytic.extend(l.grad_negatives[a][k].iter().map(|v| v.to_f64_lossy()));
        }
    }
    let mut xs = x.clone();
    let numeric: Vec<f64> = (0..x.len()).map(|i| central_difference4(&mut xs, i, H, eval)).collect();
    Ok(max_error(&analytic, &numeric, chunks(x.len(), d)))
}

/// Commitment loss over T = 5 frames, d = 4.
pub fn commitment<F: Real>(seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, "gradcheck-commit", 0);
    let (t, d) = (5, 4);
    let z: Vec<f64> = snap::<F>(&(0..t).flat_map(|_| unit(&mut r, d)).collect::<Vec<_>>());
    let zh = Array2::from_shape_vec((t, d), (0..t).flat_map(|_| unit(&mut r, d)).collect()).unwrap();
    let eval = |x: &[f64]| {
        let zv = Array2::from_shape_vec((t, d), x.to_vec()).unwrap();
        commitment_loss(zv.view(), zh.view()).unwrap().0
    };
    let zf = Array2::from_shape_vec((t, d), cast::<F>(&z)).unwrap();
    let (_, g) = commitment_loss(zf.view(), zh.view())?;
    let analytic: Vec<f64> = g.iter().map(|v| v.to_f64_lossy()).collect();
    let mut xs = z.clone();
    let numeric: Vec<f64> = (0..z.len()).map(|i| central_difference4(&mut xs, i, H, eval)).collect();
    Ok(max_error(&analytic, &numeric, chunks(z.len(), d)))
}

/// Symmetric consistency loss: 3 pairs, K = 5 raw codewords, d = 4.
pub fn robust<F: Real>(seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, "gradcheck-robust", 0);
    let (n, k, d) = (3, 5, 4);
    let emb: Vec<f64> = (0..2 * n).flat_map(|_| unit(&mut r, d)).collect();
    let cw: Vec<f64> = (0..k * d).map(|_| r.gen_range(-1.5..1.5)).collect();
    let targets: Vec<Vec<f64>> = (0..2 * n)
        .map(|_| {
            let v: Vec<f64> = (0..k).map(|_| r.gen_range(0.01..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        })
        .collect();
    let tau = r.gen_range(0.1..0.5);
    let x = snap::<F>(&[emb, cw].concat());
    let ne = 2 * n * d;

    fn run<F: Real>(x: &[F], targets: &[Vec<f64>], n: usize, k: usize, d: usize, tau: f64) -> crate::quantizer::RobustLoss<F> {
        let ne = 2 * n * d;
        let cb = Codebook::new(Array2::from_shape_vec((k, d), x[ne..].to_vec()).unwrap()).unwrap();
        let pairs: Vec<ConsistencyPair<'_, F>> = (0..n)
            .map(|p| ConsistencyPair {
                z: &x[2 * p * d..(2 * p + 1) * d],
                z_tilde: &x[(2 * p + 1) * d..(2 * p + 2) * d],
                target_z: &targets[2 * p],
                target_z_tilde: &targets[2 * p + 1],
            })
            .collect();
        robust_consistency_loss(&pairs, &cb, tau).unwrap()
    }
    let eval = |x: &[f64]| run(x, &targets, n, k, d, tau).loss;
    let l = run(&cast::<F>(&x), &targets, n, k, d, tau);
    let mut analytic = vec![0.0; x.len()];
    for p in 0..n {
        for e in 0..d {
            analytic[2 * p * d + e] = l.grad_a[[p, e]].to_f64_lossy();
            analytic[(2 * p + 1) * d + e] = l.grad_b[[p, e]].to_f64_lossy();
        }
    }
    for (i, v) in l.grad_codewords.iter().enumerate() {
        analytic[ne + i] = v.to_f64_lossy();
    }
    let mut xs = x.clone();
    let numeric: Vec<f64> = (0..x.len()).map(|i| central_difference4(&mut xs, i, H, eval)).collect();
    Ok(max_error(&analytic, &numeric, chunks(ne, d).chain(std::iter::once(ne..x.len()))))
}

fn toy_items(r: &mut Rng, input_dim: usize) -> Vec<ItemInput<f64>> {
    (0..3)
        .map(|i| {
            let t = r.gen_range(4..7);
            let tn = t + r.gen_range(0..2);
            let clean = Array2::from_shape_fn((t, input_dim), |_| r.gen_range(-1.0..1.0));
            let noisy = Array2::from_shape_fn((tn, input_dim), |_| r.gen_range(-1.0..1.0));
            let (cv, nv) = (1..t - 1, 1..tn - 1);
            // a monotone path over the valid frames
            let (n, m) = (cv.len(), nv.len());
            let mut pairs = vec![(0usize, 0usize)];
            while *pairs.last().unwrap() != (n - 1, m - 1) {
                let (a, b) = *pairs.last().unwrap();
                let step = if a + 1 == n {
                    (a, b + 1)
                } else if b + 1 == m {
                    (a + 1, b)
                } else {
                    match r.gen_range(0..3) {
                        0 => (a + 1, b),
                        1 => (a, b + 1),
                        _ => (a + 1, b + 1),
                    }
                };
                pairs.push(step);
            }
            ItemInput {
                clean,
                noisy,
                pairs: pairs.iter().map(|&(a, b)| (a + cv.start, b + nv.start)).collect(),
                clean_valid: cv,
                noisy_valid: nv,
                label: i % 2,
            }
        })
        .collect()
}

fn cast_items<F: Real>(items: &[ItemInput<f64>]) -> Vec<ItemInput<F>> {
    items
        .iter()
        .map(|it| ItemInput {
            clean: it.clean.mapv(F::from_f64_lossy),
            noisy: it.noisy.mapv(F::from_f64_lossy),
            clean_valid: it.clean_valid.clone(),
            noisy_valid: it.noisy_valid.clone(),
            pairs: it.pairs.clone(),
            label: it.label,
        })
        .collect()
}

/// Full objective through a toy encoder, w.r.t. every encoder parameter and
/// codeword entry, on targets frozen at the starting point.
pub fn total<F: Real>(seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, "gradcheck-total", 0);
    let shape = EncoderShape {
        input_dim: 3,
        hidden_dim: 4,
        embed_dim: 3,
        layers: 2,
    };
    let p64: EncoderParams<f64> = EncoderParams::<f64>::init(shape, &mut r).cast::<F>().cast();
    let cb64: Codebook<f64> = Codebook::new(Array2::from_shape_fn((4, 3), |_| r.gen_range(-1.0..1.0)))?
        .cast::<F>()
        .cast();
    let items = cast_items::<F>(&toy_items(&mut r, shape.input_dim));
    let items64: Vec<ItemInput<f64>> = items
        .iter()
        .map(|it| ItemInput {
            clean: it.clean.mapv(|v| v.to_f64_lossy()),
            noisy: it.noisy.mapv(|v| v.to_f64_lossy()),
            clean_valid: it.clean_valid.clone(),
            noisy_valid: it.noisy_valid.clone(),
            pairs: it.pairs.clone(),
            label: it.label,
        })
        .collect();
    let w = LossWeights {
        tau: 0.5,
        tau_prime: 0.5,
        lambda1: 1.0,
        lambda2: 2.0,
    };
    let fwd = forward_batch(&p64, &items64)?;
    let targets = prepare_targets(
        &items64,
        &fwd,
        &cb64,
        3,
        TargetMode::Transport,
        &SinkhornConfig::default(),
        &mut rng::stream(seed, "gradcheck-negatives", 0),
    )?;

    let (loss, grads) = objective(&p64.cast::<F>(), &cb64.cast::<F>(), &items, &targets, &w)?;
    let mut analytic: Vec<f64> = grads.as_slice().iter().map(|v| v.to_f64_lossy()).collect();
    analytic.extend(loss.grad_codewords.iter().map(|v| v.to_f64_lossy()));

    let np = p64.len();
    let mut x: Vec<f64> = p64.as_slice().to_vec();
    x.extend(cb64.codewords.iter());
    let eval = |x: &[f64]| -> f64 {
        let p = EncoderParams::from_vec(shape, x[..np].to_vec()).unwrap();
        let cb = Codebook::new(Array2::from_shape_vec((4, 3), x[np..].to_vec()).unwrap()).unwrap();
        objective(&p, &cb, &items64, &targets, &w).unwrap().0.total
    };
    let numeric: Vec<f64> = (0..x.len()).map(|i| central_difference4(&mut x, i, H, eval)).collect();
    let groups = p64
        .tensor_ranges()
        .into_iter()
        .map(|(_, r)| r)
        .chain(std::iter::once(np..x.len()));
    Ok(max_error(&analytic, &numeric, groups))
}

/// Largest error of each check over `n` seeds, as `(name, f64 error, f32 error)`.
pub fn suite(n: u64) -> Result<Vec<(&'static str, f64, f64)>> {
    type Check = (&'static str, fn(u64) -> Result<f64>, fn(u64) -> Result<f64>);
    let checks: [Check; 4] = [
        ("contrastive", contrastive::<f64>, contrastive::<f32>),
        ("commitment", commitment::<f64>, commitment::<f32>),
        ("robust", robust::<f64>, robust::<f32>),
        ("total", total::<f64>, total::<f32>),
    ];
    checks
        .iter()
        .map(|&(name, f64_check, f32_check)| {
            let mut e64 = 0.0f64;
            let mut e32 = 0.0f64;
            for s in 0..n {
                e64 = e64.max(f64_check(s)?);
                e32 = e32.max(f32_check(s)?);
            }
            Ok((name, e64, e32))
        })
        .collect()
}
