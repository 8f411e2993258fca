//! Synthetic corpora for desk-scale experiments and tests.
//!
//! * [`GaussianTerms`]: terms as sequences of 2-D Gaussian-mixture components,
//!   rendered directly as feature frames.
//! * [`SpeechSynth`]: terms as sequences of vowel-like "phones" rendered to
//!   audio with speaker-dependent pitch, formant scaling and speaking rate.
//! * [`random_token_segments`]: token sequences for index tests.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::audio::AudioClip;
use crate::features::FeatureSequence;
use crate::quantizer::TokenSequence;
use crate::retrieval::SegmentRecord;
use crate::rng::{self, Rng};

/// Terms over a 2-D Gaussian mixture whose components sit on a circle.
#[derive(Debug, Clone)]
pub struct GaussianTerms {
    pub centres: Vec<[f64; 2]>,
    pub spread: f64,
    pub terms: Vec<Vec<usize>>,
    /// Inclusive range of frames per component.
    pub frames_per_unit: (usize, usize),
}

impl GaussianTerms {
    pub fn new(n_components: usize, n_terms: usize, term_len: (usize, usize), seed: u64) -> Self {
        let mut r = rng::stream(seed, "gaussian-terms", 0);
        let centres = (0..n_components)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n_components as f64;
                [3.0 * a.cos(), 3.0 * a.sin()]
            })
            .collect();
        // Components come from a reshuffled deck so every component is used
        // equally often across the term inventory.
        let mut deck: Vec<usize> = Vec::new();
        let mut terms = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            let len = r.gen_range(term_len.0..=term_len.1);
            let mut t: Vec<usize> = Vec::with_capacity(len);
            while t.len() < len {
                if deck.is_empty() {
                    deck = (0..n_components).collect();
                    deck.shuffle(&mut r);
                }
                let c = deck.pop().unwrap();
                if t.last() == Some(&c) {
                    deck.insert(0, c);
                    continue;
                }
                t.push(c);
            }
            terms.push(t);
        }
        GaussianTerms {
            centres,
            spread: 0.35,
            terms,
            frames_per_unit: (3, 5),
        }
    }

    /// One rendition of `term`; `noise_std > 0` adds white Gaussian noise on
    /// top of the component spread.
    pub fn render(&self, term: usize, noise_std: f64, r: &mut Rng) -> FeatureSequence {
        let spread = Normal::new(0.0, self.spread).unwrap();
        let mut rows: Vec<f32> = Vec::new();
        for &c in &self.terms[term] {
            let n = r.gen_range(self.frames_per_unit.0..=self.frames_per_unit.1);
            for _ in 0..n {
                for k in 0..2 {
                    let mut v = self.centres[c][k] + spread.sample(r);
                    if noise_std > 0.0 {
                        v += Normal::new(0.0, noise_std).unwrap().sample(r);
                    }
                    rows.push(v as f32);
                }
            }
        }
        let t = rows.len() / 2;
        FeatureSequence::new(Array2::from_shape_vec((t, 2), rows).unwrap(), 0.01, 0.025)
            .expect("finite frames")
    }

    /// Add white Gaussian noise to an existing rendition.
    pub fn distort(&self, seq: &FeatureSequence, noise_std: f64, r: &mut Rng) -> FeatureSequence {
        let n = Normal::new(0.0, noise_std.max(0.0)).unwrap();
        let mut out = seq.clone();
        if noise_std > 0.0 {
            out.frames.mapv_inplace(|v| v + n.sample(r) as f32);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phone {
    pub formants: [f64; 3],
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speaker {
    pub f0: f64,
    pub formant_scale: f64,
    pub rate: f64,
}

/// Vowel-like source-filter synthesis of phone sequences.
#[derive(Debug, Clone)]
pub struct SpeechSynth {
    pub sample_rate: u32,
    pub phones: Vec<Phone>,
    pub terms: Vec<Vec<usize>>,
    pub speakers: Vec<Speaker>,
}

impl SpeechSynth {
    pub fn new(n_phones: usize, n_terms: usize, n_speakers: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "speech-synth", 0);
        let phones: Vec<Phone> = (0..n_phones)
            .map(|_| Phone {
                formants: [
                    r.gen_range(250.0..900.0),
                    r.gen_range(900.0..2400.0),
                    r.gen_range(2400.0..3500.0),
                ],
                duration_s: r.gen_range(0.07..0.11),
            })
            .collect();
        let mut terms: Vec<Vec<usize>> = Vec::with_capacity(n_terms);
        while terms.len() < n_terms {
            let len = r.gen_range(3..=5);
            let mut t: Vec<usize> = Vec::with_capacity(len);
            while t.len() < len {
                let p = r.gen_range(0..n_phones);
                if t.last() != Some(&p) {
                    t.push(p);
                }
            }
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        let speakers = (0..n_speakers)
            .map(|_| Speaker {
                f0: r.gen_range(95.0..220.0),
                formant_scale: r.gen_range(0.92..1.08),
                rate: r.gen_range(0.85..1.15),
            })
            .collect();
        SpeechSynth {
            sample_rate: 16_000,
            phones,
            terms,
            speakers,
        }
    }

    /// Render a phone sequence. Per-phone durations jitter by ±10 %.
    pub fn render_phones(&self, phones: &[usize], speaker: &Speaker, r: &mut Rng) -> AudioClip {
        let sr = self.sample_rate as f64;
        let fade = (0.008 * sr) as usize;
        let lens: Vec<usize> = phones
            .iter()
            .map(|&p| (self.phones[p].duration_s * speaker.rate * r.gen_range(0.9..1.1) * sr) as usize)
            .collect();
        let total: usize = lens.iter().sum::<usize>() + fade;
        let mut out = vec![0.0f64; total];
        let n_harm = ((3800.0 / speaker.f0) as usize).max(1);
        let jitter_phase: f64 = r.gen_range(0.0..2.0 * PI);
        let mut start = 0usize;
        for (&p, &len) in phones.iter().zip(&lens) {
            let ph = &self.phones[p];
            let amps: Vec<f64> = (1..=n_harm)
                .map(|k| {
                    let f = k as f64 * speaker.f0;
                    ph.formants
                        .iter()
                        .enumerate()
                        .map(|(i, &fm)| {
                            let fm = fm * speaker.formant_scale;
                            let bw = 90.0 + 40.0 * i as f64;
                            (1.0 / (1.0 + i as f64)) * (-((f - fm) / bw).powi(2)).exp()
                        })
                        .sum::<f64>()
                })
                .collect();
            let span = len + fade;
            for i in 0..span {
                let n = start + i;
                if n >= total {
                    break;
                }
                // raised-cosine edges so neighbouring phones cross-fade
                let env = if i < fade {
                    0.5 - 0.5 * (PI * i as f64 / fade as f64).cos()
                } else if i >= len {
                    0.5 + 0.5 * (PI * (i - len) as f64 / fade as f64).cos()
                } else {
                    1.0
                };
                let t = n as f64 / sr;
                let s: f64 = amps
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * (2.0 * PI * (k + 1) as f64 * speaker.f0 * t + jitter_phase * k as f64).sin())
                    .sum();
                out[n] += env * s;
            }
            start += len;
        }
        let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
        AudioClip {
            samples: out.iter().map(|v| (0.5 * v / peak) as f32).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn render_term(&self, term: usize, speaker: usize, r: &mut Rng) -> AudioClip {
        self.render_phones(&self.terms[term], &self.speakers[speaker], r)
    }
}

/// A rendered term inside a synthetic track.
#[derive(Debug, Clone, PartialEq)]
pub struct Occurrence {
    pub term: usize,
    pub start_s: f64,
    pub end_s: f64,
}

/// Concatenate term renditions separated by random silences.
pub fn render_track(
    synth: &SpeechSynth,
    term_sequence: &[usize],
    speaker: usize,
    gap_s: (f64, f64),
    r: &mut Rng,
) -> (AudioClip, Vec<Occurrence>) {
    let sr = synth.sample_rate as f64;
    let mut samples: Vec<f32> = Vec::new();
    let mut occ = Vec::new();
    for &term in term_sequence {
        let gap = (r.gen_range(gap_s.0..=gap_s.1) * sr) as usize;
        samples.extend(std::iter::repeat(0.0).take(gap));
        let clip = synth.render_term(term, speaker, r);
        let start = samples.len();
        samples.extend_from_slice(&clip.samples);
        occ.push(Occurrence {
            term,
            start_s: start as f64 / sr,
            end_s: samples.len() as f64 / sr,
        });
    }
    let tail = (r.gen_range(gap_s.0..=gap_s.1) * sr) as usize;
    samples.extend(std::iter::repeat(0.0).take(tail));
    (
        AudioClip {
            samples,
            sample_rate: synth.sample_rate,
        },
        occ,
    )
}

/// `n` random token segments of length `len` over a `k_cw` vocabulary.
pub fn random_token_segments(n: usize, k_cw: usize, len: usize, seed: u64) -> Vec<SegmentRecord> {
    let mut r = rng::stream(seed, "token-corpus", 0);
    (0..n)
        .map(|i| {
            let tokens: Vec<u32> = (0..len).map(|_| r.gen_range(0..k_cw as u32)).collect();
            SegmentRecord {
                track_id: format!("track-{}", i / 10),
                start: (i % 10) as f64 * 0.5,
                length: 1.0,
                tokens: TokenSequence {
                    tokens,
                    segment_id: format!("seg-{i}"),
                    frame_span: (0, len),
                },
            }
        })
        .collect()
}

/// Shuffle a token sequence (same multiset, scrambled order).
pub fn scramble(tokens: &[u32], seed: u64) -> Vec<u32> {
    let mut r = rng::stream(seed, "scramble", 0);
    let mut t = tokens.to_vec();
    t.shuffle(&mut r);
    t
}
