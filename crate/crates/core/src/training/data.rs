//! Pair batches: two renditions of the same term, one of them distorted,
//! plus the DTW path between the clean versions.

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::loss::ItemInput;
use crate::alignment::{anchor_positive_pairs, dtw_align_with, AlignmentPath, DtwOptions};
use crate::audio::AudioClip;
use crate::augment::{sample_distortion, AugmentSpec};
use crate::error::{Error, Result};
use crate::features::{pad_to_fixed, FeatureConfig, FeatureNormalizer, FeatureSequence, MfccExtractor, PaddedClip};
use crate::numeric::Real;
use crate::rng::{self, Rng};
use crate::synth::GaussianTerms;

/// One training pair: clean `X`, distorted partner `X̃ₙ`, and the path
/// between `X` and the clean partner `X̃`.
#[derive(Debug, Clone)]
pub struct PairItem {
    pub label: usize,
    pub clean: FeatureSequence,
    pub noisy: FeatureSequence,
    pub path: AlignmentPath,
}

impl PairItem {
    pub fn to_input<F: Real>(&self, norm: &FeatureNormalizer) -> Result<ItemInput<F>> {
        let conv = |s: &FeatureSequence| -> Result<Array2<F>> {
            Ok(norm.apply(s)?.frames.mapv(|v| F::from_f64_lossy(v as f64)))
        };
        Ok(ItemInput {
            clean: conv(&self.clean)?,
            noisy: conv(&self.noisy)?,
            clean_valid: self.clean.valid_range.clone(),
            noisy_valid: self.noisy.valid_range.clone(),
            pairs: anchor_positive_pairs(&self.path),
            label: self.label,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PairBatch {
    pub items: Vec<PairItem>,
}

pub trait PairSource {
    fn input_dim(&self) -> usize;
    fn num_labels(&self) -> usize;
    /// Feature configuration when the source works on audio.
    fn feature_config(&self) -> Option<FeatureConfig>;
    fn sample_rate(&self) -> u32 {
        16_000
    }
    fn fit_normalizer(&mut self) -> Result<FeatureNormalizer>;
    fn next_batch(&mut self, batch_size: usize) -> Result<PairBatch>;
}

/// Labels for a batch: distinct where possible, then random repeats.
fn draw_labels(eligible: &[usize], b: usize, r: &mut Rng) -> Result<Vec<usize>> {
    if eligible.len() < 2 {
        return Err(Error::Dataset(format!(
            "need at least two terms with two or more utterances, found {}",
            eligible.len()
        )));
    }
    let mut labels: Vec<usize> = eligible.to_vec();
    labels.shuffle(r);
    labels.truncate(b);
    while labels.len() < b {
        labels.push(eligible[r.gen_range(0..eligible.len())]);
    }
    Ok(labels)
}

/// A term-labelled utterance.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub term: usize,
    pub speaker: Option<String>,
    /// Padded audio; `None` for feature-only inputs, which cannot be distorted.
    pub padded: Option<PaddedClip>,
    pub features: FeatureSequence,
}

impl Utterance {
    /// Pad `clip` to `cfg.pad_s` seconds (zero context) and extract features.
    pub fn from_audio(
        term: usize,
        speaker: Option<String>,
        clip: &AudioClip,
        cfg: &FeatureConfig,
        extractor: &MfccExtractor,
    ) -> Result<Self> {
        let padded = pad_to_fixed(clip, None, cfg.pad_s)?;
        let features = padded.features(extractor, cfg)?;
        Ok(Utterance {
            term,
            speaker,
            padded: Some(padded),
            features,
        })
    }

    fn duration(&self) -> usize {
        match &self.padded {
            Some(p) => p.valid_samples.len(),
            None => self.features.valid_range.len(),
        }
    }
}

/// Pairs drawn from a labelled utterance collection; the longer utterance of
/// each pair is the one that gets distorted.
pub struct UtterancePairSource {
    cfg: FeatureConfig,
    sample_rate: u32,
    extractor: MfccExtractor,
    utts: Vec<Utterance>,
    by_term: Vec<Vec<usize>>,
    eligible: Vec<usize>,
    augment: Option<AugmentSpec>,
    distort_both: bool,
    align: DtwOptions,
    rng: Rng,
    ordinal: u64,
    warned_features_only: bool,
}

impl UtterancePairSource {
    pub fn new(
        utts: Vec<Utterance>,
        cfg: FeatureConfig,
        sample_rate: u32,
        augment: Option<AugmentSpec>,
        align: DtwOptions,
        seed: u64,
    ) -> Result<Self> {
        if let Some(a) = &augment {
            a.validate()?;
        }
        let n_terms = utts.iter().map(|u| u.term + 1).max().unwrap_or(0);
        let mut by_term = vec![Vec::new(); n_terms];
        for (i, u) in utts.iter().enumerate() {
            if u.features.valid_range.is_empty() {
                return Err(Error::Dataset(format!("utterance {i} has no valid frames")));
            }
            by_term[u.term].push(i);
        }
        let eligible: Vec<usize> = (0..n_terms).filter(|&t| by_term[t].len() >= 2).collect();
        if eligible.len() < 2 {
            return Err(Error::Dataset(format!(
                "need at least two terms with two or more utterances, found {}",
                eligible.len()
            )));
        }
        Ok(UtterancePairSource {
            extractor: MfccExtractor::new(&cfg, sample_rate)?,
            cfg,
            sample_rate,
            utts,
            by_term,
            eligible,
            augment,
            distort_both: false,
            align,
            rng: rng::stream(seed, "pairs", 0),
            ordinal: 0,
            warned_features_only: false,
        })
    }

    /// Distort both utterances of every pair instead of only the longer one.
    pub fn distort_both(mut self, yes: bool) -> Self {
        self.distort_both = yes;
        self
    }

    fn distorted(&mut self, idx: usize) -> Result<FeatureSequence> {
        let u = &self.utts[idx];
        let (Some(spec), Some(padded)) = (&self.augment, &u.padded) else {
            if self.augment.is_some() && !self.warned_features_only {
                warn!("feature-only utterances are used undistorted");
                self.warned_features_only = true;
            }
            return Ok(u.features.clone());
        };
        let (clip, _) = sample_distortion(&padded.clip, spec, padded.valid_samples.clone(), self.ordinal)?;
        self.ordinal += 1;
        self.extractor
            .extract(&clip)?
            .with_valid_range(u.features.valid_range.clone())
    }

    fn partner_of(&mut self, first: usize) -> usize {
        let group = &self.by_term[self.utts[first].term];
        let speaker = &self.utts[first].speaker;
        let cross: Vec<usize> = group
            .iter()
            .copied()
            .filter(|&j| j != first && (speaker.is_none() || self.utts[j].speaker != *speaker))
            .collect();
        if !cross.is_empty() {
            return cross[self.rng.gen_range(0..cross.len())];
        }
        let others: Vec<usize> = group.iter().copied().filter(|&j| j != first).collect();
        others[self.rng.gen_range(0..others.len())]
    }
}

impl PairSource for UtterancePairSource {
    fn input_dim(&self) -> usize {
        self.utts[0].features.dim()
    }

    fn num_labels(&self) -> usize {
        self.eligible.len()
    }

    fn feature_config(&self) -> Option<FeatureConfig> {
        Some(self.cfg.clone())
    }

    fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    fn fit_normalizer(&mut self) -> Result<FeatureNormalizer> {
        FeatureNormalizer::fit(self.utts.iter().map(|u| &u.features))
    }

    fn next_batch(&mut self, batch_size: usize) -> Result<PairBatch> {
        let labels = draw_labels(&self.eligible, batch_size, &mut self.rng)?;
        let mut items = Vec::with_capacity(batch_size);
        for label in labels {
            let group = &self.by_term[label];
            let a = group[self.rng.gen_range(0..group.len())];
            let b = self.partner_of(a);
            // ũ is the longer of the two
            let (u, ut) = if self.utts[b].duration() >= self.utts[a].duration() {
                (a, b)
            } else {
                (b, a)
            };
            let path = dtw_align_with(&self.utts[u].features, &self.utts[ut].features, self.align)?;
            let noisy = self.distorted(ut)?;
            let clean = if self.distort_both {
                self.distorted(u)?
            } else {
                self.utts[u].features.clone()
            };
            items.push(PairItem {
                label,
                clean,
                noisy,
                path,
            });
        }
        Ok(PairBatch { items })
    }
}

/// Toy pairs over [`GaussianTerms`]; distortion is additive white noise in
/// feature space with a standard deviation drawn from `noise_std`.
pub struct GaussianPairSource {
    pub terms: GaussianTerms,
    pub noise_std: Option<(f64, f64)>,
    align: DtwOptions,
    rng: Rng,
}

impl GaussianPairSource {
    pub fn new(terms: GaussianTerms, noise_std: Option<(f64, f64)>, seed: u64) -> Self {
        GaussianPairSource {
            terms,
            noise_std,
            align: DtwOptions::default(),
            rng: rng::stream(seed, "gaussian-pairs", 0),
        }
    }
}

impl PairSource for GaussianPairSource {
    fn input_dim(&self) -> usize {
        2
    }

    fn num_labels(&self) -> usize {
        self.terms.terms.len()
    }

    fn feature_config(&self) -> Option<FeatureConfig> {
        None
    }

    fn fit_normalizer(&mut self) -> Result<FeatureNormalizer> {
        let mut r = rng::stream(0, "gaussian-normalizer", 0);
        let seqs: Vec<FeatureSequence> = (0..self.terms.terms.len())
            .flat_map(|t| (0..4).map(move |_| t))
            .map(|t| self.terms.render(t, 0.0, &mut r))
            .collect();
        FeatureNormalizer::fit(seqs.iter())
    }

    fn next_batch(&mut self, batch_size: usize) -> Result<PairBatch> {
        let all: Vec<usize> = (0..self.terms.terms.len()).collect();
        let labels = draw_labels(&all, batch_size, &mut self.rng)?;
        let mut items = Vec::with_capacity(batch_size);
        for label in labels {
            let mut a = self.terms.render(label, 0.0, &mut self.rng);
            let mut b = self.terms.render(label, 0.0, &mut self.rng);
            if b.len() < a.len() {
                std::mem::swap(&mut a, &mut b);
            }
            let path = dtw_align_with(&a, &b, self.align)?;
            let noisy = match self.noise_std {
                Some((lo, hi)) => {
                    let s = if lo < hi { self.rng.gen_range(lo..hi) } else { lo };
                    self.terms.distort(&b, s, &mut self.rng)
                }
                None => b,
            };
            items.push(PairItem {
                label,
                clean: a,
                noisy,
                path,
            });
        }
        Ok(PairBatch { items })
    }
}
