//! Contrastive, commitment and total training objectives with hand-derived
//! gradients.
//!
//! Everything that the objective treats as a constant (negative choices,
//! the transport plan, quantized commitment targets) lives in
//! [`BatchTargets`], built once per step by [`prepare_targets`]. Holding the
//! targets fixed makes the loss an ordinary function of the parameters,
//! which is what the finite-difference checks exercise.

use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;

use crate::encoder::{encode_backward_into, encode_matrix, EmbeddingSequence, EncoderParams, ForwardCache};
use crate::error::{Error, Result};
use crate::numeric::{dot, lit, log_sum_exp, softmax_into, Real};
use crate::quantizer::{
    argmax_one_hot, robust_consistency_loss, sinkhorn_balance, Codebook, ConsistencyPair, SinkhornConfig,
};
use crate::rng::Rng;

/// Loss weights and temperatures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub tau: f64,
    pub tau_prime: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            tau: 0.1,
            tau_prime: 0.1,
            lambda1: 1.0,
            lambda2: 10.0,
        }
    }
}

/// One anchor of the contrastive objective.
pub struct Anchor<'a, F> {
    pub anchor: &'a [F],
    pub positive: &'a [F],
    pub negatives: Vec<&'a [F]>,
}

#[derive(Debug, Clone)]
pub struct ContrastiveLoss<F> {
    pub loss: F,
    pub grad_anchor: Vec<Vec<F>>,
    pub grad_positive: Vec<Vec<F>>,
    /// Per anchor, per negative.
    pub grad_negatives: Vec<Vec<Vec<F>>>,
}

/// Mean over anchors of `−log(e^{a·p/τ} / (e^{a·p/τ} + Σ_k e^{a·n_k/τ}))`.
pub fn contrastive_loss<F: Real>(anchors: &[Anchor<'_, F>], tau: f64) -> Result<ContrastiveLoss<F>> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    if anchors.is_empty() {
        return Err(Error::EmptyInput("contrastive loss needs at least one anchor".into()));
    }
    let inv_tau: F = lit(1.0 / tau);
    let scale: F = lit(1.0 / anchors.len() as f64);
    let mut out = ContrastiveLoss {
        loss: F::zero(),
        grad_anchor: Vec::with_capacity(anchors.len()),
        grad_positive: Vec::with_capacity(anchors.len()),
        grad_negatives: Vec::with_capacity(anchors.len()),
    };
    let mut logits = Vec::new();
    let mut q = Vec::new();
    for a in anchors {
        let d = a.anchor.len();
        if a.positive.len() != d || a.negatives.iter().any(|n| n.len() != d) {
            return Err(Error::Shape("anchor, positive and negatives differ in dimension".into()));
        }
        logits.clear();
        logits.push(dot(a.anchor, a.positive) * inv_tau);
        logits.extend(a.negatives.iter().map(|n| dot(a.anchor, n) * inv_tau));
        q.resize(logits.len(), F::zero());
        softmax_into(&logits, &mut q);
        out.loss += scale * (log_sum_exp(&logits) - logits[0]);

        // dL/dlogit = q − e₀
        let g0 = scale * (q[0] - F::one()) * inv_tau;
        let mut ga: Vec<F> = a.positive.iter().map(|&p| g0 * p).collect();
        let gp: Vec<F> = a.anchor.iter().map(|&x| g0 * x).collect();
        let mut gn = Vec::with_capacity(a.negatives.len());
        for (k, n) in a.negatives.iter().enumerate() {
            let gk = scale * q[k + 1] * inv_tau;
            for e in 0..d {
                ga[e] += gk * n[e];
            }
            gn.push(a.anchor.iter().map(|&x| gk * x).collect());
        }
        out.grad_anchor.push(ga);
        out.grad_positive.push(gp);
        out.grad_negatives.push(gn);
    }
    Ok(out)
}

/// `−(1/T) Σ_t z_t · ẑ_t` with `ẑ` constant. Returns the loss and dL/dz.
pub fn commitment_loss<F: Real>(z: ArrayView2<'_, F>, z_hat: ArrayView2<'_, f64>) -> Result<(F, Array2<F>)> {
    if z.dim() != z_hat.dim() {
        return Err(Error::Shape(format!(
            "embeddings {:?} vs quantized targets {:?}",
            z.dim(),
            z_hat.dim()
        )));
    }
    let t = z.nrows();
    if t == 0 {
        return Err(Error::EmptyInput("commitment loss over zero frames".into()));
    }
    let scale: F = lit(-1.0 / t as f64);
    let grad = z_hat.mapv(|v| scale * F::from_f64_lossy(v));
    let loss = z.iter().zip(grad.iter()).fold(F::zero(), |acc, (&a, &g)| acc + a * g);
    Ok((loss, grad))
}

/// Encoder inputs and alignment of one batch item, in the working precision.
#[derive(Debug, Clone)]
pub struct ItemInput<F> {
    pub clean: Array2<F>,
    pub noisy: Array2<F>,
    pub clean_valid: Range<usize>,
    pub noisy_valid: Range<usize>,
    /// Anchor-positive pairs `(t, t̃)` in padded coordinates.
    pub pairs: Vec<(usize, usize)>,
    pub label: usize,
}

/// A frame of one item's clean (`noisy == false`) or distorted embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRef {
    pub item: usize,
    pub noisy: bool,
    pub frame: usize,
}

/// How the consistency targets are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Balanced Sinkhorn plan over all valid batch frames.
    #[default]
    Transport,
    /// One-hot argmax of the codeword scores.
    ArgmaxOneHot,
}

/// Frozen quantities for one optimization step.
#[derive(Debug, Clone)]
pub struct BatchTargets {
    /// Per item, per anchor pair.
    pub negatives: Vec<Vec<Vec<FrameRef>>>,
    /// Rows follow `plan_frames`.
    pub plan: Array2<f64>,
    pub plan_frames: Vec<FrameRef>,
    /// Per item: `[clean, noisy]` frame → plan row.
    pub plan_rows: Vec<[Vec<Option<usize>>; 2]>,
    /// Per item: unit codeword of each valid clean frame.
    pub commit: Vec<Array2<f64>>,
    /// Argmax codeword of every plan frame, for usage statistics.
    pub assignments: Vec<u32>,
    pub plan_converged: bool,
    pub plan_iterations: usize,
}

/// Forward results of a batch.
pub struct BatchForward<F> {
    pub clean: Vec<(EmbeddingSequence<F>, ForwardCache<F>)>,
    pub noisy: Vec<(EmbeddingSequence<F>, ForwardCache<F>)>,
}

impl<F: Real> BatchForward<F> {
    fn frame(&self, r: FrameRef) -> &[F] {
        let side = if r.noisy { &self.noisy } else { &self.clean };
        side[r.item].0.row(r.frame)
    }
}

pub fn forward_batch<F: Real>(params: &EncoderParams<F>, items: &[ItemInput<F>]) -> Result<BatchForward<F>> {
    let run = |x: &Array2<F>, valid: &Range<usize>| -> Result<(EmbeddingSequence<F>, ForwardCache<F>)> {
        let (emb, cache) = encode_matrix(x.view(), params)?;
        let degenerate = cache.degenerate().to_vec();
        Ok((
            EmbeddingSequence {
                embeddings: emb,
                valid_range: valid.clone(),
                degenerate,
            },
            cache,
        ))
    };
    let mut clean = Vec::with_capacity(items.len());
    let mut noisy = Vec::with_capacity(items.len());
    for it in items {
        clean.push(run(&it.clean, &it.clean_valid)?);
        noisy.push(run(&it.noisy, &it.noisy_valid)?);
    }
    Ok(BatchForward { clean, noisy })
}

/// Sample negatives, solve the assignment plan and fix commitment targets.
pub fn prepare_targets<F: Real>(
    items: &[ItemInput<F>],
    fwd: &BatchForward<F>,
    cb: &Codebook<F>,
    k_neg: usize,
    mode: TargetMode,
    sinkhorn: &SinkhornConfig,
    rng: &mut Rng,
) -> Result<BatchTargets> {
    let b = items.len();
    if b == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let unit = cb.normalized()?;
    let (k, d) = (cb.size(), cb.dim());

    // Negatives: valid frames of other-label items.
    let mut negatives = Vec::with_capacity(b);
    for (i, it) in items.iter().enumerate() {
        let pool: Vec<FrameRef> = items
            .iter()
            .enumerate()
            .filter(|(_, o)| o.label != it.label)
            .flat_map(|(j, o)| {
                o.clean_valid
                    .clone()
                    .map(move |f| FrameRef { item: j, noisy: false, frame: f })
                    .chain(o.noisy_valid.clone().map(move |f| FrameRef { item: j, noisy: true, frame: f }))
            })
            .collect();
        if k_neg > 0 && pool.is_empty() {
            return Err(Error::Sampling(format!(
                "item {i} (label {}) has no other-label frames to draw negatives from",
                it.label
            )));
        }
        let take = k_neg.min(pool.len());
        let per_anchor: Vec<Vec<FrameRef>> = it
            .pairs
            .iter()
            .map(|_| sample(rng, pool.len(), take).into_iter().map(|x| pool[x]).collect())
            .collect();
        debug_assert!(per_anchor.iter().flatten().all(|r| items[r.item].label != it.label));
        negatives.push(per_anchor);
    }

    // Plan over every valid frame, clean and distorted.
    let mut plan_frames = Vec::new();
    let mut plan_rows = Vec::with_capacity(b);
    for (i, it) in items.iter().enumerate() {
        let mut rows = [vec![None; it.clean.nrows()], vec![None; it.noisy.nrows()]];
        for (side, range) in [(0usize, &it.clean_valid), (1, &it.noisy_valid)] {
            for f in range.clone() {
                rows[side][f] = Some(plan_frames.len());
                plan_frames.push(FrameRef {
                    item: i,
                    noisy: side == 1,
                    frame: f,
                });
            }
        }
        plan_rows.push(rows);
    }
    let mut scores = Array2::<f64>::zeros((plan_frames.len(), k));
    for (r, &fr) in plan_frames.iter().enumerate() {
        let z = fwd.frame(fr);
        for j in 0..k {
            let c = unit.row(j);
            scores[[r, j]] = (0..d).map(|e| z[e].to_f64_lossy() * c[e].to_f64_lossy()).sum();
        }
    }
    let assignments: Vec<u32> = scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect();
    let plan = match mode {
        TargetMode::Transport => sinkhorn_balance(scores.view(), sinkhorn)?,
        TargetMode::ArgmaxOneHot => argmax_one_hot(scores.view()),
    };

    let commit = items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let mut m = Array2::<f64>::zeros((it.clean_valid.len(), d));
            for (row, f) in it.clean_valid.clone().enumerate() {
                let a = assignments[plan_rows[i][0][f].expect("valid frame in plan")] as usize;
                for e in 0..d {
                    m[[row, e]] = unit[[a, e]].to_f64_lossy();
                }
            }
            m
        })
        .collect();

    Ok(BatchTargets {
        negatives,
        plan: plan.probs,
        plan_frames,
        plan_rows,
        commit,
        assignments,
        plan_converged: plan.converged,
        plan_iterations: plan.iterations,
    })
}

/// Loss components (batch means) and gradients w.r.t. every embedding.
#[derive(Debug, Clone)]
pub struct BatchLoss<F> {
    pub total: F,
    pub contrast: F,
    pub robust: F,
    pub commit: F,
    pub grad_clean: Vec<Array2<F>>,
    pub grad_noisy: Vec<Array2<F>>,
    pub grad_codewords: Array2<F>,
}

/// `(1/B) Σ_i [L_contrast + λ₁ L_robust + λ₂ L_commit]` on fixed targets.
pub fn batch_loss<F: Real>(
    items: &[ItemInput<F>],
    fwd: &BatchForward<F>,
    cb: &Codebook<F>,
    targets: &BatchTargets,
    w: &LossWeights,
) -> Result<BatchLoss<F>> {
    let b = items.len();
    if b == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if w.lambda1 < 0.0 || w.lambda2 < 0.0 {
        return Err(Error::Parameter("loss weights must be non-negative".into()));
    }
    let inv_b: F = lit(1.0 / b as f64);
    let l1: F = lit(w.lambda1);
    let l2: F = lit(w.lambda2);
    let mut grad_clean: Vec<Array2<F>> = fwd.clean.iter().map(|(e, _)| Array2::zeros(e.embeddings.dim())).collect();
    let mut grad_noisy: Vec<Array2<F>> = fwd.noisy.iter().map(|(e, _)| Array2::zeros(e.embeddings.dim())).collect();
    let mut grad_cw = Array2::<F>::zeros(cb.codewords.dim());
    let (mut lc, mut lr, mut lm) = (F::zero(), F::zero(), F::zero());

    let add_row = |g: &mut Array2<F>, t: usize, v: &[F], s: F| {
        for (e, &x) in v.iter().enumerate() {
            g[[t, e]] += s * x;
        }
    };

    for (i, it) in items.iter().enumerate() {
        if it.pairs.is_empty() {
            return Err(Error::EmptyInput(format!("item {i} has no anchor pairs")));
        }
        let z = &fwd.clean[i].0;
        let zn = &fwd.noisy[i].0;

        let anchors: Vec<Anchor<'_, F>> = it
            .pairs
            .iter()
            .zip(&targets.negatives[i])
            .map(|(&(t, u), negs)| Anchor {
                anchor: z.row(t),
                positive: zn.row(u),
                negatives: negs.iter().map(|&r| fwd.frame(r)).collect(),
            })
            .collect();
        let c = contrastive_loss(&anchors, w.tau)?;
        lc += c.loss;
        for (a, &(t, u)) in it.pairs.iter().enumerate() {
            add_row(&mut grad_clean[i], t, &c.grad_anchor[a], inv_b);
            add_row(&mut grad_noisy[i], u, &c.grad_positive[a], inv_b);
            for (n, r) in targets.negatives[i][a].iter().enumerate() {
                let g = if r.noisy { &mut grad_noisy[r.item] } else { &mut grad_clean[r.item] };
                add_row(g, r.frame, &c.grad_negatives[a][n], inv_b);
            }
        }

        if w.lambda1 > 0.0 {
            let row_of = |side: usize, f: usize| -> Result<usize> {
                targets.plan_rows[i][side]
                    .get(f)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::State(format!("frame {f} of item {i} is outside the plan")))
            };
            let mut rows = Vec::with_capacity(it.pairs.len());
            for &(t, u) in &it.pairs {
                rows.push((row_of(0, t)?, row_of(1, u)?));
            }
            let pairs: Vec<ConsistencyPair<'_, F>> = it
                .pairs
                .iter()
                .zip(&rows)
                .map(|(&(t, u), &(rt, ru))| ConsistencyPair {
                    z: z.row(t),
                    z_tilde: zn.row(u),
                    target_z: targets.plan.row(rt).to_slice().expect("standard layout"),
                    target_z_tilde: targets.plan.row(ru).to_slice().expect("standard layout"),
                })
                .collect();
            let r = robust_consistency_loss(&pairs, cb, w.tau_prime)?;
            lr += r.loss;
            let s = inv_b * l1;
            for (a, &(t, u)) in it.pairs.iter().enumerate() {
                add_row(&mut grad_clean[i], t, r.grad_a.row(a).to_slice().unwrap(), s);
                add_row(&mut grad_noisy[i], u, r.grad_b.row(a).to_slice().unwrap(), s);
            }
            grad_cw.zip_mut_with(&r.grad_codewords, |g, &x| *g += s * x);
        }

        let zv = z.embeddings.slice(ndarray::s![it.clean_valid.clone(), ..]);
        let (m, gm) = commitment_loss(zv, targets.commit[i].view())?;
        lm += m;
        if w.lambda2 > 0.0 {
            let s = inv_b * l2;
            for (row, t) in it.clean_valid.clone().enumerate() {
                add_row(&mut grad_clean[i], t, gm.row(row).to_slice().unwrap(), s);
            }
        }
    }
    let (lc, lr, lm) = (lc * inv_b, lr * inv_b, lm * inv_b);
    Ok(BatchLoss {
        total: lc + l1 * lr + l2 * lm,
        contrast: lc,
        robust: lr,
        commit: lm,
        grad_clean,
        grad_noisy,
        grad_codewords: grad_cw,
    })
}

/// Back-propagate embedding gradients into encoder parameters.
pub fn backward_batch<F: Real>(
    params: &EncoderParams<F>,
    fwd: &BatchForward<F>,
    loss: &BatchLoss<F>,
) -> Result<EncoderParams<F>> {
    let mut grads = EncoderParams::zeros(params.shape());
    for ((_, cache), g) in fwd.clean.iter().zip(&loss.grad_clean) {
        encode_backward_into(params, Some(cache), g.view(), &mut grads)?;
    }
    for ((_, cache), g) in fwd.noisy.iter().zip(&loss.grad_noisy) {
        encode_backward_into(params, Some(cache), g.view(), &mut grads)?;
    }
    Ok(grads)
}

/// Loss and gradients (encoder, codewords) on fixed targets.
pub fn objective<F: Real>(
    params: &EncoderParams<F>,
    cb: &Codebook<F>,
    items: &[ItemInput<F>],
    targets: &BatchTargets,
    w: &LossWeights,
) -> Result<(BatchLoss<F>, EncoderParams<F>)> {
    let fwd = forward_batch(params, items)?;
    let loss = batch_loss(items, &fwd, cb, targets, w)?;
    let grads = backward_batch(params, &fwd, &loss)?;
    Ok((loss, grads))
}
