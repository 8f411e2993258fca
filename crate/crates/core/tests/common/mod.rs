//! Toy training setups shared by the integration and acceptance tests.
#![allow(dead_code)]

use tokstd_core::alignment::DtwOptions;
use tokstd_core::augment::{mix_at_snr, white_noise, AugmentSpec};
use tokstd_core::encoder::{encode, EncoderShape};
use tokstd_core::features::{pad_to_fixed, FeatureConfig, MfccExtractor, PaddedClip};
use tokstd_core::quantizer::normalized_entropy;
use tokstd_core::retrieval::jaccard;
use tokstd_core::rng;
use tokstd_core::synth::{GaussianTerms, SpeechSynth};
use tokstd_core::training::{train, GaussianPairSource, StepMetrics, TargetMode, TrainingConfig};

pub const TOY_CODEBOOK: usize = 16;

/// 24 terms over a 16-component 2-D Gaussian mixture.
pub fn gaussian_terms(seed: u64) -> GaussianTerms {
    GaussianTerms::new(16, 24, (3, 5), 100 + seed)
}

pub fn gaussian_source(seed: u64) -> GaussianPairSource {
    GaussianPairSource::new(gaussian_terms(seed), Some((0.1, 0.5)), seed)
}

pub fn toy_config(seed: u64, steps: u64, targets: TargetMode) -> TrainingConfig {
    TrainingConfig {
        steps,
        seed,
        lr: 5e-4,
        batch_size: 16,
        k_neg: 8,
        lambda2: 1.0,
        codebook_size: TOY_CODEBOOK,
        targets,
        encoder: EncoderShape {
            input_dim: 2,
            hidden_dim: 16,
            embed_dim: 8,
            layers: 1,
        },
        ..TrainingConfig::default()
    }
}

/// Train on the Gaussian toy data, then measure codebook usage entropy over
/// ten clean renditions of every term.
pub fn toy_balance(seed: u64, steps: u64, targets: TargetMode) -> (f64, Vec<StepMetrics>) {
    let terms = gaussian_terms(seed);
    let out = train(&toy_config(seed, steps, targets), &mut gaussian_source(seed), None).unwrap();
    let tk = out.tokenizer;
    let mut usage = vec![0u64; TOY_CODEBOOK];
    let mut r = rng::stream(seed, "eval", 0);
    for term in 0..terms.terms.len() {
        for _ in 0..10 {
            let x = terms.render(term, 0.0, &mut r);
            let e = encode(&tk.normalizer.apply(&x).unwrap(), &tk.params).unwrap().0;
            for t in tk.codebook.assign(&e).unwrap() {
                usage[t as usize] += 1;
            }
        }
    }
    (normalized_entropy(&usage).unwrap(), out.log)
}

/// Mean Jaccard between a clean tokenization and a 0 dB white-noise
/// tokenization of the same term (held-out speakers), and the same measure
/// across different terms.
#[derive(Debug, Clone, Copy)]
pub struct Consistency {
    pub same_term: f64,
    pub cross_term: f64,
}

impl Consistency {
    pub fn margin(&self) -> f64 {
        self.same_term - self.cross_term
    }
}

pub fn speech_consistency(augment: bool) -> Consistency {
    use tokstd_core::training::{Utterance, UtterancePairSource};

    let synth = SpeechSynth::new(10, 12, 10, 7);
    let fcfg = FeatureConfig {
        pad_s: 0.7,
        ..FeatureConfig::default()
    };
    let ex = MfccExtractor::new(&fcfg, 16_000).unwrap();
    let mut r = rng::stream(1, "render", 0);
    let mut utts = Vec::new();
    for term in 0..synth.terms.len() {
        for spk in 0..8 {
            let clip = synth.render_term(term, spk, &mut r);
            utts.push(Utterance::from_audio(term, Some(format!("s{spk}")), &clip, &fcfg, &ex).unwrap());
        }
    }
    let spec = augment.then(|| AugmentSpec {
        snr_db_range: (0.0, 10.0),
        reverb_prob: 0.0,
        noise_bank: (0..4).map(|i| white_noise(32_000, 16_000, 10 + i)).collect(),
        rir_bank: Vec::new(),
        rng_seed: 3,
    });
    let mut src = UtterancePairSource::new(utts, fcfg.clone(), 16_000, spec, DtwOptions::default(), 5).unwrap();
    let cfg = TrainingConfig {
        steps: 1000,
        lr: 1e-3,
        batch_size: 8,
        k_neg: 16,
        lambda2: 1.0,
        codebook_size: 32,
        encoder: EncoderShape {
            input_dim: 48,
            hidden_dim: 32,
            embed_dim: 16,
            layers: 2,
        },
        ..TrainingConfig::default()
    };
    let tk = train(&cfg, &mut src, None).unwrap().tokenizer;

    // speakers 8 and 9 are never seen in training
    let mut er = rng::stream(2, "eval", 0);
    let noise = white_noise(32_000, 16_000, 99);
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for t in 0..synth.terms.len() {
        let a = synth.render_term(t, 8, &mut er);
        let b = synth.render_term(t, 9, &mut er);
        clean.push(tk.tokenize_term(&a).unwrap().tokens);
        let p = pad_to_fixed(&b, None, fcfg.pad_s).unwrap();
        let mixed = PaddedClip {
            clip: mix_at_snr(&p.clip, &noise, 0.0, p.valid_samples.clone()).unwrap(),
            valid_samples: p.valid_samples.clone(),
        };
        noisy.push(tk.tokenize_padded(&mixed).unwrap().tokens);
    }
    let n = clean.len();
    let same_term = (0..n).map(|i| jaccard(&clean[i], &noisy[i])).sum::<f64>() / n as f64;
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                cross += jaccard(&clean[i], &noisy[j]);
            }
        }
    }
    Consistency {
        same_term,
        cross_term: cross / (n * (n - 1)) as f64,
    }
}
