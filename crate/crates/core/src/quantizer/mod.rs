//! Cosine-similarity vector quantizer with OT-balanced consistency targets.

mod sinkhorn;

pub use sinkhorn::{argmax_one_hot, sinkhorn_balance, AssignmentPlan, SinkhornConfig};

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::numeric::{dot, lit, l2_norm, softmax_into, Real};

/// Trainable codewords plus a running usage histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<F> {
    pub codewords: Array2<F>,
    pub usage_counts: Vec<u64>,
}

/// Ordered codeword indices of one segment or utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    #[serde(default)]
    pub segment_id: String,
    /// Frame span of the embedding sequence the tokens came from.
    #[serde(default)]
    pub frame_span: (usize, usize),
}

impl TokenSequence {
    pub fn from_tokens(tokens: Vec<u32>) -> Self {
        let n = tokens.len();
        TokenSequence {
            tokens,
            segment_id: String::new(),
            frame_span: (0, n),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodebookInit {
    #[default]
    RandomUnit,
    /// Spherical k-means on the first batch of embeddings.
    KMeans,
}

impl<F: Real> Codebook<F> {
    pub fn new(codewords: Array2<F>) -> Result<Self> {
        if codewords.nrows() < 2 {
            return Err(Error::Parameter("a codebook needs at least two codewords".into()));
        }
        if codewords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite codeword entry".into()));
        }
        let k = codewords.nrows();
        Ok(Codebook {
            codewords: codewords.as_standard_layout().into_owned(),
            usage_counts: vec![0; k],
        })
    }

    /// `k` random unit vectors in `d` dimensions.
    pub fn random_unit(k: usize, d: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        let mut cw = Array2::<F>::zeros((k, d));
        for mut row in cw.rows_mut() {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for (dst, x) in row.iter_mut().zip(v) {
                *dst = lit(x / n);
            }
        }
        Self::new(cw)
    }

    /// Spherical k-means over unit-norm `points` (rows), seeded from `rng`.
    pub fn kmeans(points: ArrayView2<'_, F>, k: usize, iters: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 {
            return Err(Error::EmptyInput("k-means needs points".into()));
        }
        let mut cw = Self::random_unit(k, d, rng)?.codewords;
        let mut order: Vec<usize> = (0..n).collect();
        for i in 0..k.min(n) {
            let j = rng.gen_range(i..n);
            order.swap(i, j);
            cw.row_mut(i).assign(&points.row(order[i]));
        }
        for _ in 0..iters {
            let mut sums = Array2::<F>::zeros((k, d));
            for p in points.rows() {
                let p = p.to_vec();
                let best = argmax_cosine(&p, cw.view());
                for (s, v) in sums.row_mut(best).iter_mut().zip(&p) {
                    *s += *v;
                }
            }
            for (i, row) in sums.rows().into_iter().enumerate() {
                let n = l2_norm(row.as_slice().unwrap());
                if n > F::zero() {
                    cw.row_mut(i).assign(&row.mapv(|v| v / n));
                }
            }
        }
        Self::new(cw)
    }

    pub fn size(&self) -> usize {
        self.codewords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.codewords.ncols()
    }

    pub fn codeword(&self, k: usize) -> &[F] {
        let d = self.dim();
        &self.codewords.as_slice().expect("standard layout")[k * d..(k + 1) * d]
    }

    /// Codewords scaled to unit norm; errors on a zero codeword.
    pub fn normalized(&self) -> Result<Array2<F>> {
        let mut out = self.codewords.clone();
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            let n = l2_norm(row.as_slice().unwrap());
            if !(n > F::zero()) {
                return Err(Error::DegenerateCodeword(k));
            }
            row.mapv_inplace(|v| v / n);
        }
        Ok(out)
    }

    pub fn total_usage(&self) -> u64 {
        self.usage_counts.iter().sum()
    }

    pub fn reset_usage(&mut self) {
        self.usage_counts.iter_mut().for_each(|c| *c = 0);
    }

    pub fn cast<G: Real>(&self) -> Codebook<G> {
        Codebook {
            codewords: self.codewords.mapv(|v| G::from_f64_lossy(v.to_f64_lossy())),
            usage_counts: self.usage_counts.clone(),
        }
    }

    /// Nearest-codeword indices without touching the usage histogram.
    pub fn assign(&self, z: &EmbeddingSequence<F>) -> Result<Vec<u32>> {
        if z.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "embedding dim {} vs codeword dim {}",
                z.dim(),
                self.dim()
            )));
        }
        let unit = self.normalized()?;
        Ok((0..z.len())
            .map(|t| argmax_cosine(z.row(t), unit.view()) as u32)
            .collect())
    }
}

/// Index of the largest `z · c_k`; the lowest index wins ties.
fn argmax_cosine<F: Real>(z: &[F], unit: ArrayView2<'_, F>) -> usize {
    let mut best = 0;
    let mut best_score = F::neg_infinity();
    for (k, c) in unit.rows().into_iter().enumerate() {
        let s = dot(z, c.as_slice().unwrap());
        if s > best_score {
            best = k;
            best_score = s;
        }
    }
    best
}

/// Tokenize every frame of `z` and record codeword usage.
pub fn quantize<F: Real>(z: &EmbeddingSequence<F>, cb: &mut Codebook<F>) -> Result<TokenSequence> {
    let tokens = cb.assign(z)?;
    for &t in &tokens {
        cb.usage_counts[t as usize] += 1;
    }
    Ok(TokenSequence {
        frame_span: (0, tokens.len()),
        tokens,
        segment_id: String::new(),
    })
}

/// Cosine scores `z · c_k / ‖c_k‖` of one (unit-norm) embedding.
pub fn codeword_similarities<F: Real>(z: &[F], cb: &Codebook<F>) -> Result<Vec<F>> {
    if z.len() != cb.dim() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs codeword dim {}",
            z.len(),
            cb.dim()
        )));
    }
    (0..cb.size())
        .map(|k| {
            let c = cb.codeword(k);
            let n = l2_norm(c);
            if !(n > F::zero()) {
                return Err(Error::DegenerateCodeword(k));
            }
            Ok(dot(z, c) / n)
        })
        .collect()
}

/// Usage entropy normalized by `log K`, in [0, 1].
pub fn normalized_entropy(usage: &[u64]) -> Result<f64> {
    let total: u64 = usage.iter().sum();
    if total == 0 {
        return Err(Error::UndefinedEntropy);
    }
    if usage.len() < 2 {
        return Err(Error::Parameter("entropy needs at least two codewords".into()));
    }
    let total = total as f64;
    let h: f64 = usage
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok((h / (usage.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Loss value and gradients of the symmetric consistency objective.
#[derive(Debug, Clone)]
pub struct RobustLoss<F> {
    pub loss: F,
    /// dL/dz for the first element of each pair, one row per pair.
    pub grad_a: Array2<F>,
    /// dL/dz̃ for the second element of each pair.
    pub grad_b: Array2<F>,
    pub grad_codewords: Array2<F>,
}

/// One pair for [`robust_consistency_loss`]: two embeddings and the (constant)
/// OT target rows of each.
pub struct ConsistencyPair<'a, F> {
    pub z: &'a [F],
    pub z_tilde: &'a [F],
    pub target_z: &'a [f64],
    pub target_z_tilde: &'a [f64],
}

/// Mean over pairs of `L(z, z̃) + L(z̃, z)` with
/// `L(z, z̃) = −Σ_k p(z|c_k) log softmax_k(z̃ · c_k / τ′)`.
///
/// The targets are constants; gradients flow into the embeddings and the raw
/// (unnormalized) codewords through the logits only.
pub fn robust_consistency_loss<F: Real>(
    pairs: &[ConsistencyPair<'_, F>],
    cb: &Codebook<F>,
    tau_prime: f64,
) -> Result<RobustLoss<F>> {
    if !(tau_prime > 0.0) {
        return Err(Error::Parameter(format!("tau' must be positive, got {tau_prime}")));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("consistency loss needs at least one pair".into()));
    }
    let (k, d) = (cb.size(), cb.dim());
    let inv_tau: F = lit(1.0 / tau_prime);
    let scale: F = lit(1.0 / pairs.len() as f64);
    let mut loss = F::zero();
    let mut grad_a = Array2::<F>::zeros((pairs.len(), d));
    let mut grad_b = Array2::<F>::zeros((pairs.len(), d));
    let mut grad_c = Array2::<F>::zeros((k, d));
    let mut logits = vec![F::zero(); k];
    let mut q = vec![F::zero(); k];

    for (pi, pair) in pairs.iter().enumerate() {
        if pair.z.len() != d || pair.z_tilde.len() != d || pair.target_z.len() != k || pair.target_z_tilde.len() != k {
            return Err(Error::Shape("pair dimensions do not match the codebook".into()));
        }
        // (target row, embedding producing the logits, gradient row)
        for (target, src, into_a) in [(pair.target_z, pair.z_tilde, false), (pair.target_z_tilde, pair.z, true)] {
            for (j, l) in logits.iter_mut().enumerate() {
                *l = dot(src, cb.codeword(j)) * inv_tau;
            }
            softmax_into(&logits, &mut q);
            let lse = crate::numeric::log_sum_exp(&logits);
            let psum: F = target.iter().map(|&p| F::from_f64_lossy(p)).sum();
            for j in 0..k {
                let p: F = lit(target[j]);
                loss -= scale * p * (logits[j] - lse);
            }
            let grow = if into_a { &mut grad_a } else { &mut grad_b };
            for j in 0..k {
                // dL/dlogit_j = q_j Σp − p_j
                let g = scale * (q[j] * psum - lit::<F>(target[j])) * inv_tau;
                if g == F::zero() {
                    continue;
                }
                let c = cb.codeword(j);
                for e in 0..d {
                    grow[[pi, e]] += g * c[e];
                    grad_c[[j, e]] += g * src[e];
                }
            }
        }
    }
    Ok(RobustLoss {
        loss,
        grad_a,
        grad_b,
        grad_codewords: grad_c,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodebookManifest {
    pub k_cw: usize,
    pub d: usize,
    pub step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UsageHistogram {
    pub usage: Vec<u64>,
    pub total: u64,
    pub normalized_entropy: Option<f64>,
}

impl Codebook<f32> {
    /// Write `<stem>.json`, `<stem>.f32` and `<stem>.usage.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str, step: u64) -> Result<()> {
        let manifest = CodebookManifest {
            k_cw: self.size(),
            d: self.dim(),
            step,
        };
        let mpath = dir.join(format!("{stem}.json"));
        fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
        let bpath = dir.join(format!("{stem}.f32"));
        let bytes: Vec<u8> = self.codewords.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&bpath, bytes).map_err(|e| Error::io(&bpath, e))?;
        let hist = UsageHistogram {
            usage: self.usage_counts.clone(),
            total: self.total_usage(),
            normalized_entropy: normalized_entropy(&self.usage_counts).ok(),
        };
        let upath = dir.join(format!("{stem}.usage.json"));
        fs::write(&upath, serde_json::to_vec_pretty(&hist)?).map_err(|e| Error::io(&upath, e))
    }

    /// Load from the manifest path (`<stem>.json`).
    pub fn load(manifest_path: &Path) -> Result<(Self, CodebookManifest)> {
        let manifest: CodebookManifest = serde_json::from_slice(
            &fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?,
        )?;
        let bpath = manifest_path.with_extension("f32");
        let bytes = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        if bytes.len() != manifest.k_cw * manifest.d * 4 {
            return Err(Error::Format(format!("{}: wrong blob size", bpath.display())));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let cw = Array2::from_shape_vec((manifest.k_cw, manifest.d), data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mut cb = Codebook::new(cw)?;
        let upath = manifest_path.with_extension("usage.json");
        if let Ok(raw) = fs::read(&upath) {
            let hist: UsageHistogram = serde_json::from_slice(&raw)?;
            if hist.usage.len() == cb.size() {
                cb.usage_counts = hist.usage;
            }
        }
        Ok((cb, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;

    fn seq(rows: Array2<f64>) -> EmbeddingSequence<f64> {
        let t = rows.nrows();
        EmbeddingSequence {
            embeddings: rows,
            valid_range: 0..t,
            degenerate: vec![false; t],
        }
    }

    #[test]
    fn orthonormal_codebook_picks_matching_axis() {
        let mut cb = Codebook::new(Array2::<f64>::eye(4)).unwrap();
        let z = seq(array![[0.0, 0.0, 1.0, 0.0]]);
        assert_eq!(quantize(&z, &mut cb).unwrap().tokens, vec![2]);
        assert_eq!(cb.usage_counts, vec![0, 0, 1, 0]);
    }

    #[test]
    fn exact_tie_goes_to_lowest_index() {
        let mut cb = Codebook::new(Array2::<f64>::eye(2)).unwrap();
        let h = 0.5f64.sqrt();
        let z = seq(array![[h, h]]);
        assert_eq!(quantize(&z, &mut cb).unwrap().tokens, vec![0]);
    }

    #[test]
    fn empty_sequence_gives_empty_tokens() {
        let mut cb = Codebook::new(Array2::<f64>::eye(3)).unwrap();
        let z = seq(Array2::zeros((0, 3)));
        assert!(quantize(&z, &mut cb).unwrap().is_empty());
    }

    #[test]
    fn argmax_is_invariant_to_codeword_scaling() {
        let mut r = rng::stream(2, "cb", 0);
        let cb = Codebook::<f64>::random_unit(8, 4, &mut r).unwrap();
        let mut scaled = cb.clone();
        for (k, mut row) in scaled.codewords.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v * (1.0 + k as f64 * 0.7));
        }
        let z = seq(Codebook::<f64>::random_unit(20, 4, &mut r).unwrap().codewords);
        assert_eq!(cb.assign(&z).unwrap(), scaled.assign(&z).unwrap());
    }

    #[test]
    fn similarity_cases() {
        let cb = Codebook::new(array![[3.0, 0.0], [0.0, 1.0]]).unwrap();
        let s = codeword_similarities(&[1.0, 0.0], &cb).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
        let bad = Codebook::new(array![[0.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(
            codeword_similarities(&[1.0, 0.0], &bad),
            Err(Error::DegenerateCodeword(0))
        ));
    }

    #[test]
    fn entropy_closed_forms() {
        assert!((normalized_entropy(&[5, 5, 5, 5]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(normalized_entropy(&[0, 9, 0, 0]).unwrap(), 0.0);
        // −(½ log ½ + ½ log ½) / log 4 = log 2 / log 4
        assert!((normalized_entropy(&[2, 2, 0, 0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(normalized_entropy(&[0, 0]), Err(Error::UndefinedEntropy)));
    }

    #[test]
    fn matched_one_hot_distributions_give_near_zero_loss() {
        let cb = Codebook::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let z = [1.0, 0.0];
        let t = [1.0, 0.0];
        let pair = ConsistencyPair { z: &z, z_tilde: &z, target_z: &t, target_z_tilde: &t };
        let out = robust_consistency_loss(&[pair], &cb, 0.01).unwrap();
        assert!(out.loss < 1e-10);
    }

    #[test]
    fn uniform_target_loss_matches_hand_evaluation() {
        let cb = Codebook::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let z = [0.6, 0.8];
        let zt = [1.0, 0.0];
        let u = [0.5, 0.5];
        let pair = ConsistencyPair { z: &z, z_tilde: &zt, target_z: &u, target_z_tilde: &u };
        let tau = 0.5;
        let out = robust_consistency_loss(&[pair], &cb, tau).unwrap();
        // L(z, z̃): logits of z̃ are (2, 0); L(z̃, z): logits of z are (1.2, 1.6)
        let half_nll = |a: f64, b: f64| {
            let lse = (a.exp() + b.exp()).ln();
            0.5 * (lse - a) + 0.5 * (lse - b)
        };
        let expected = half_nll(2.0, 0.0) + half_nll(1.2, 1.6);
        assert!((out.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_tau_is_rejected() {
        let cb = Codebook::new(Array2::<f64>::eye(2)).unwrap();
        let z = [1.0, 0.0];
        let t = [1.0, 0.0];
        let pair = ConsistencyPair { z: &z, z_tilde: &z, target_z: &t, target_z_tilde: &t };
        assert!(matches!(
            robust_consistency_loss(&[pair], &cb, 0.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn codebook_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut cb = Codebook::<f32>::random_unit(5, 3, &mut rng::stream(1, "cb", 0)).unwrap();
        cb.usage_counts = vec![1, 2, 3, 4, 5];
        cb.save(dir.path(), "codebook", 42).unwrap();
        let (back, m) = Codebook::load(&dir.path().join("codebook.json")).unwrap();
        assert_eq!(back, cb);
        assert_eq!(m.step, 42);
    }
}
