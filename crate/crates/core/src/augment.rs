//! Additive noise at a target SNR and room-impulse-response reverberation.

use std::ops::Range;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{decimate, load_wav, power, rms, AudioClip};
use crate::error::{Error, Result};
use crate::rng;

/// Fixed evaluation SNR grid, dB.
pub const EVAL_SNR_GRID_DB: [f64; 6] = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0];

#[derive(Debug, Clone)]
pub struct AugmentSpec {
    pub snr_db_range: (f64, f64),
    pub reverb_prob: f64,
    pub noise_bank: Vec<AudioClip>,
    pub rir_bank: Vec<AudioClip>,
    pub rng_seed: u64,
}

/// Serializable knobs of an [`AugmentSpec`]; the banks are loaded separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub reverb_prob: f64,
    pub noise_dir: Option<String>,
    pub rir_dir: Option<String>,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            snr_lo: 0.0,
            snr_hi: 10.0,
            reverb_prob: 0.5,
            noise_dir: None,
            rir_dir: None,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr_lo.is_finite() && self.snr_hi.is_finite() && self.snr_lo <= self.snr_hi) {
            return Err(Error::Config(format!("bad SNR range [{}, {}]", self.snr_lo, self.snr_hi)));
        }
        if !(0.0..=1.0).contains(&self.reverb_prob) {
            return Err(Error::Config(format!("reverb probability {} outside [0, 1]", self.reverb_prob)));
        }
        Ok(())
    }

    /// Load the banks and build the sampling spec. Without a noise directory
    /// the bank is white noise; without an RIR directory reverberation uses
    /// synthetic responses with t60 between 0.3 and 0.9 s.
    pub fn build(&self, sample_rate: u32) -> Result<AugmentSpec> {
        self.validate()?;
        let noise_bank = match &self.noise_dir {
            Some(d) => load_bank(Path::new(d), sample_rate)?,
            None => (0..4)
                .map(|i| white_noise(2 * sample_rate as usize, sample_rate, rng::derive_seed(self.seed, "noise-bank", i)))
                .collect(),
        };
        let rir_bank = match &self.rir_dir {
            Some(d) => load_bank(Path::new(d), sample_rate)?,
            None if self.reverb_prob > 0.0 => (0..4)
                .map(|i| synthetic_rir(sample_rate, 0.3 + 0.2 * i as f64, rng::derive_seed(self.seed, "rir-bank", i)))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        let spec = AugmentSpec {
            snr_db_range: (self.snr_lo, self.snr_hi),
            reverb_prob: self.reverb_prob,
            noise_bank,
            rir_bank,
            rng_seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Every `.wav` file of `dir`, in name order, at `sample_rate`.
pub fn load_bank(dir: &Path, sample_rate: u32) -> Result<Vec<AudioClip>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no .wav files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| decimate(&load_wav(p)?, sample_rate))
        .collect()
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.snr_db_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Parameter(format!("bad SNR range [{lo}, {hi}]")));
        }
        if !(0.0..=1.0).contains(&self.reverb_prob) {
            return Err(Error::Parameter(format!(
                "reverb probability {} outside [0, 1]",
                self.reverb_prob
            )));
        }
        if self.noise_bank.is_empty() {
            return Err(Error::Parameter("noise bank is empty".into()));
        }
        if self.reverb_prob > 0.0 && self.rir_bank.is_empty() {
            return Err(Error::Parameter(
                "reverb enabled but the RIR bank is empty".into(),
            ));
        }
        Ok(())
    }
}

/// Speech and scaled-noise components of a mixture; `mixed = speech + noise`
/// sample by sample (up to float rounding).
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixed: AudioClip,
    pub speech: Vec<f32>,
    pub noise: Vec<f32>,
}

impl Mixture {
    /// SNR re-measured on the output components over `range`.
    pub fn measured_snr_db(&self, range: Range<usize>) -> f64 {
        10.0 * (power(&self.speech[range.clone()]) / power(&self.noise[range])).log10()
    }
}

fn loop_extend(noise: &[f32], n: usize) -> impl Iterator<Item = f32> + '_ {
    noise.iter().copied().cycle().take(n)
}

/// Mix `noise` into `speech` at `snr_db`, measuring speech power over
/// `valid_range` only. Returns the separated components as well.
pub fn mix_components(
    speech: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    valid_range: Range<usize>,
) -> Result<Mixture> {
    speech.validate()?;
    noise.validate()?;
    if speech.sample_rate != noise.sample_rate {
        return Err(Error::Shape(format!(
            "speech at {} Hz, noise at {} Hz",
            speech.sample_rate, noise.sample_rate
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Parameter(format!("SNR must be finite, got {snr_db}")));
    }
    if valid_range.start >= valid_range.end || valid_range.end > speech.len() {
        return Err(Error::Shape(format!(
            "valid range {valid_range:?} outside 0..{}",
            speech.len()
        )));
    }
    let noise_full: Vec<f32> = loop_extend(&noise.samples, speech.len()).collect();
    let p_speech = power(&speech.samples[valid_range.clone()]);
    let p_noise = power(&noise_full[valid_range.clone()]);
    if p_speech <= 0.0 {
        return Err(Error::DegenerateSignal(
            "speech has zero power inside the valid range".into(),
        ));
    }
    if p_noise <= 0.0 {
        return Err(Error::DegenerateSignal(
            "noise has zero power inside the valid range".into(),
        ));
    }
    let gain = (p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut s: Vec<f32> = speech.samples.clone();
    let mut n: Vec<f32> = noise_full.iter().map(|&v| (v as f64 * gain) as f32).collect();
    let mut mixed: Vec<f32> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
    let peak = mixed.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        let g = 1.0 / peak;
        for v in s.iter_mut().chain(n.iter_mut()) {
            *v *= g;
        }
        mixed = s.iter().zip(&n).map(|(a, b)| a + b).collect();
    }
    Ok(Mixture {
        mixed: AudioClip {
            samples: mixed,
            sample_rate: speech.sample_rate,
        },
        speech: s,
        noise: n,
    })
}

pub fn mix_at_snr(
    speech: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    valid_range: Range<usize>,
) -> Result<AudioClip> {
    mix_components(speech, noise, snr_db, valid_range).map(|m| m.mixed)
}

/// Kernels longer than this go through FFT convolution.
const DIRECT_CONV_MAX_TAPS: usize = 64;

/// Convolve with `rir`, shifting so its peak tap lands at lag 0, truncating to
/// the input length and restoring the input RMS.
pub fn apply_rir(speech: &AudioClip, rir: &AudioClip) -> Result<AudioClip> {
    speech.validate()?;
    rir.validate()?;
    if speech.sample_rate != rir.sample_rate {
        return Err(Error::Shape(format!(
            "speech at {} Hz, RIR at {} Hz",
            speech.sample_rate, rir.sample_rate
        )));
    }
    let peak = rir
        .samples
        .iter()
        .enumerate()
        .fold((0usize, 0.0f32), |(bi, bv), (i, &v)| {
            if v.abs() > bv {
                (i, v.abs())
            } else {
                (bi, bv)
            }
        });
    if peak.1 == 0.0 {
        return Err(Error::DegenerateSignal("RIR is all zeros".into()));
    }
    let full = if rir.len() <= DIRECT_CONV_MAX_TAPS {
        convolve_direct(&speech.samples, &rir.samples)
    } else {
        convolve_fft(&speech.samples, &rir.samples)
    };
    let shift = peak.0;
    let mut out: Vec<f32> = (0..speech.len())
        .map(|i| full.get(i + shift).copied().unwrap_or(0.0) as f32)
        .collect();
    let rin = rms(&speech.samples);
    let rout = rms(&out);
    if rout > 0.0 && rin != rout {
        let g = rin / rout;
        for v in &mut out {
            *v = (*v as f64 * g) as f32;
        }
    }
    Ok(AudioClip {
        samples: out,
        sample_rate: speech.sample_rate,
    })
}

pub fn convolve_direct(x: &[f32], h: &[f32]) -> Vec<f64> {
    let mut y = vec![0.0f64; x.len() + h.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (k, &hv) in h.iter().enumerate() {
            y[i + k] += xv as f64 * hv as f64;
        }
    }
    y
}

pub fn convolve_fft(x: &[f32], h: &[f32]) -> Vec<f64> {
    let n = x.len() + h.len() - 1;
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = (0..size)
        .map(|i| Complex::new(x.get(i).copied().unwrap_or(0.0) as f64, 0.0))
        .collect();
    let mut b: Vec<Complex<f64>> = (0..size)
        .map(|i| Complex::new(h.get(i).copied().unwrap_or(0.0) as f64, 0.0))
        .collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.truncate(n);
    a.into_iter().map(|c| c.re / size as f64).collect()
}

/// What [`sample_distortion`] drew, for logging and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionDraw {
    pub snr_db: f64,
    pub noise_index: usize,
    pub rir_index: Option<usize>,
}

/// Draw and apply one distortion. The draw depends only on `spec.rng_seed`
/// and `ordinal`.
pub fn sample_distortion(
    clip: &AudioClip,
    spec: &AugmentSpec,
    valid_range: Range<usize>,
    ordinal: u64,
) -> Result<(AudioClip, DistortionDraw)> {
    spec.validate()?;
    let mut r = rng::stream(spec.rng_seed, "distortion", ordinal);
    let (lo, hi) = spec.snr_db_range;
    let snr_db = if lo == hi { lo } else { r.gen_range(lo..hi) };
    let noise_index = r.gen_range(0..spec.noise_bank.len());
    let reverb = r.gen::<f64>() < spec.reverb_prob;
    let rir_index = if reverb {
        Some(r.gen_range(0..spec.rir_bank.len()))
    } else {
        None
    };
    let reverbed;
    let speech = match rir_index {
        Some(i) => {
            reverbed = apply_rir(clip, &spec.rir_bank[i])?;
            &reverbed
        }
        None => clip,
    };
    let out = mix_at_snr(speech, &spec.noise_bank[noise_index], snr_db, valid_range)?;
    Ok((
        out,
        DistortionDraw {
            snr_db,
            noise_index,
            rir_index,
        },
    ))
}

/// Gaussian white noise with standard deviation 0.1.
pub fn white_noise(n: usize, sample_rate: u32, seed: u64) -> AudioClip {
    let mut r = rng::stream(seed, "white-noise", 0);
    let samples = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut r);
            (0.1 * v) as f32
        })
        .collect();
    AudioClip {
        samples,
        sample_rate,
    }
}

/// Exponentially decaying Gaussian noise with a unit direct-path tap: a
/// stand-in room response whose energy falls by 60 dB after `t60` seconds.
pub fn synthetic_rir(sample_rate: u32, t60: f64, seed: u64) -> Result<AudioClip> {
    if !(t60 > 0.0) {
        return Err(Error::Parameter(format!("t60 must be positive, got {t60}")));
    }
    let mut r = rng::stream(seed, "synthetic-rir", 0);
    let n = ((t60 * sample_rate as f64).ceil() as usize).max(2);
    // amplitude envelope e^{−k t} with 20·log10(e^{−k·t60}) = −60
    let k = 3.0 * std::f64::consts::LN_10 / t60;
    let mut samples = Vec::with_capacity(n);
    samples.push(1.0f32);
    for i in 1..n {
        let t = i as f64 / sample_rate as f64;
        let v: f64 = StandardNormal.sample(&mut r);
        samples.push((0.3 * v * (-k * t).exp()) as f32);
    }
    Ok(AudioClip {
        samples,
        sample_rate,
    })
}
