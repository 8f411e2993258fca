//! MFCC front end, delta features, contextual padding and feature persistence.

use std::f64::consts::PI;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{s, Array2};
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub n_mfcc: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub n_mels: usize,
    pub preemphasis: f64,
    pub log_floor: f64,
    pub delta_window: usize,
    /// Fixed input length for term utterances, seconds.
    pub pad_s: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_mfcc: 16,
            win_ms: 25.0,
            hop_ms: 10.0,
            n_fft: 512,
            n_mels: 26,
            preemphasis: 0.97,
            log_floor: 1e-10,
            delta_window: 2,
            pad_s: 1.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return Err(Error::Config(format!(
                "n_mfcc must be in 1..={} (n_mels), got {}",
                self.n_mels, self.n_mfcc
            )));
        }
        if !(self.win_ms > 0.0 && self.hop_ms > 0.0) {
            return Err(Error::Config("window and hop must be positive".into()));
        }
        if !(self.pad_s > 0.0) {
            return Err(Error::Config("pad_s must be positive".into()));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }

    /// Feature width: statics, deltas and delta-deltas.
    pub fn dim(&self) -> usize {
        3 * self.n_mfcc
    }

    pub fn win_samples(&self, sample_rate: u32) -> usize {
        ((self.win_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ((self.hop_ms * sample_rate as f64 / 1000.0).round() as usize).max(1)
    }

    pub fn frame_count(&self, n_samples: usize, sample_rate: u32) -> usize {
        let win = self.win_samples(sample_rate);
        if n_samples < win {
            0
        } else {
            1 + (n_samples - win) / self.hop_samples(sample_rate)
        }
    }

    /// Frames whose window centre falls inside `samples`; never empty when
    /// the clip has at least one frame.
    pub fn frames_for_samples(
        &self,
        samples: Range<usize>,
        n_samples: usize,
        sample_rate: u32,
    ) -> Range<usize> {
        let total = self.frame_count(n_samples, sample_rate);
        if total == 0 {
            return 0..0;
        }
        let win = self.win_samples(sample_rate) as f64;
        let hop = self.hop_samples(sample_rate) as f64;
        let centre = |f: usize| f as f64 * hop + win / 2.0;
        let mut start = 0;
        while start < total && centre(start) < samples.start as f64 {
            start += 1;
        }
        let mut end = start;
        while end < total && centre(end) < samples.end as f64 {
            end += 1;
        }
        if start == end {
            let f = start.min(total - 1);
            f..f + 1
        } else {
            start..end
        }
    }
}

/// Time-major feature matrix with framing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f32>,
    pub frame_hop: f64,
    pub window_len: f64,
    pub source_id: String,
    pub valid_range: Range<usize>,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f32>, frame_hop: f64, window_len: f64) -> Result<Self> {
        let t = frames.nrows();
        let seq = FeatureSequence {
            frames,
            frame_hop,
            window_len,
            source_id: String::new(),
            valid_range: 0..t,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.frames.nrows();
        if t == 0 {
            return Err(Error::EmptyInput("feature sequence has no frames".into()));
        }
        if self.valid_range.start > self.valid_range.end || self.valid_range.end > t {
            return Err(Error::Shape(format!(
                "valid range {:?} outside 0..{t}",
                self.valid_range
            )));
        }
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn with_valid_range(mut self, range: Range<usize>) -> Result<Self> {
        self.valid_range = range;
        self.validate()?;
        Ok(self)
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn valid_frames(&self) -> ndarray::ArrayView2<'_, f32> {
        self.frames
            .slice(s![self.valid_range.start..self.valid_range.end, ..])
    }

    pub fn reversed(&self) -> FeatureSequence {
        let t = self.len();
        let frames = self.frames.slice(s![..;-1, ..]).to_owned();
        FeatureSequence {
            frames,
            frame_hop: self.frame_hop,
            window_len: self.window_len,
            source_id: self.source_id.clone(),
            valid_range: t - self.valid_range.end..t - self.valid_range.start,
        }
    }
}

/// Reusable MFCC analyser for one sample rate and configuration.
pub struct MfccExtractor {
    cfg: FeatureConfig,
    sample_rate: u32,
    win: usize,
    hop: usize,
    n_fft: usize,
    window: Vec<f64>,
    mel_filters: Vec<Vec<(usize, f64)>>,
    dct: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MfccExtractor {
    pub fn new(cfg: &FeatureConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.win_samples(sample_rate);
        let hop = cfg.hop_samples(sample_rate);
        let n_fft = cfg.n_fft.max(win.next_power_of_two());
        let window: Vec<f64> = if win == 1 {
            vec![1.0]
        } else {
            (0..win)
                .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1) as f64).cos())
                .collect()
        };

        // Triangular filters on a HTK mel scale spanning 0..Nyquist.
        let n_bins = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mel_filters = (0..cfg.n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .filter_map(|b| {
                        let f = b as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((b, w))
                    })
                    .collect()
            })
            .collect();

        // Orthonormal DCT-II, first n_mfcc rows.
        let m = cfg.n_mels as f64;
        let dct = Array2::from_shape_fn((cfg.n_mfcc, cfg.n_mels), |(k, j)| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            scale * (PI * k as f64 * (j as f64 + 0.5) / m).cos()
        });

        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(MfccExtractor {
            cfg: cfg.clone(),
            sample_rate,
            win,
            hop,
            n_fft,
            window,
            mel_filters,
            dct,
            fft,
        })
    }

    /// Static cepstra, one row per frame.
    fn statics(&self, samples: &[f32]) -> Array2<f64> {
        let n_frames = 1 + (samples.len() - self.win) / self.hop;
        let a = self.cfg.preemphasis;
        let emph: Vec<f64> = samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if i == 0 {
                    x as f64
                } else {
                    x as f64 - a * samples[i - 1] as f64
                }
            })
            .collect();

        let n_bins = self.n_fft / 2 + 1;
        let mut out = Array2::zeros((n_frames, self.cfg.n_mfcc));
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut power = vec![0.0; n_bins];
        let mut log_mel = vec![0.0; self.cfg.n_mels];
        for f in 0..n_frames {
            let start = f * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < self.win {
                    Complex::new(emph[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for (lm, filt) in log_mel.iter_mut().zip(&self.mel_filters) {
                let e: f64 = filt.iter().map(|&(b, w)| w * power[b]).sum();
                *lm = e.max(self.cfg.log_floor).ln();
            }
            for k in 0..self.cfg.n_mfcc {
                out[[f, k]] = self
                    .dct
                    .row(k)
                    .iter()
                    .zip(&log_mel)
                    .map(|(c, l)| c * l)
                    .sum();
            }
        }
        out
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        clip.validate()?;
        if clip.sample_rate != self.sample_rate {
            return Err(Error::Shape(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate, clip.sample_rate
            )));
        }
        if clip.len() < self.win {
            return Err(Error::TooShort(format!(
                "{} samples is shorter than one {}-sample window",
                clip.len(),
                self.win
            )));
        }
        let statics = self.statics(&clip.samples);
        let d1 = deltas(&statics, self.cfg.delta_window);
        let d2 = deltas(&d1, self.cfg.delta_window);
        let t = statics.nrows();
        let n = self.cfg.n_mfcc;
        let mut frames = Array2::<f32>::zeros((t, 3 * n));
        for i in 0..t {
            for k in 0..n {
                frames[[i, k]] = statics[[i, k]] as f32;
                frames[[i, n + k]] = d1[[i, k]] as f32;
                frames[[i, 2 * n + k]] = d2[[i, k]] as f32;
            }
        }
        let sr = self.sample_rate as f64;
        FeatureSequence::new(frames, self.hop as f64 / sr, self.win as f64 / sr)
    }
}

/// Regression deltas over `±window` frames, replicating edge frames.
pub fn deltas(x: &Array2<f64>, window: usize) -> Array2<f64> {
    let (t, d) = x.dim();
    let mut out = Array2::zeros((t, d));
    if window == 0 || t == 0 {
        return out;
    }
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let last = t as isize - 1;
    for i in 0..t {
        for n in 1..=window {
            let fwd = (i as isize + n as isize).min(last) as usize;
            let bwd = (i as isize - n as isize).max(0) as usize;
            for k in 0..d {
                out[[i, k]] += n as f64 * (x[[fwd, k]] - x[[bwd, k]]);
            }
        }
        for k in 0..d {
            out[[i, k]] /= denom;
        }
    }
    out
}

pub fn compute_mfcc(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureSequence> {
    MfccExtractor::new(cfg, clip.sample_rate)?.extract(clip)
}

/// Where a term sits inside a longer recording, used as padding source.
#[derive(Debug, Clone, Copy)]
pub struct TermContext<'a> {
    pub clip: &'a AudioClip,
    /// Sample index of the term's first sample within `clip`.
    pub term_start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaddedClip {
    pub clip: AudioClip,
    /// Sample span holding the unmodified term.
    pub valid_samples: Range<usize>,
}

impl PaddedClip {
    pub fn valid_frames(&self, cfg: &FeatureConfig) -> Range<usize> {
        cfg.frames_for_samples(
            self.valid_samples.clone(),
            self.clip.len(),
            self.clip.sample_rate,
        )
    }

    /// MFCCs of the padded clip with `valid_range` set to the term's frames.
    pub fn features(&self, extractor: &MfccExtractor, cfg: &FeatureConfig) -> Result<FeatureSequence> {
        extractor
            .extract(&self.clip)?
            .with_valid_range(self.valid_frames(cfg))
    }
}

/// Centre `term` in a clip of exactly `target_len` seconds.
///
/// Padding comes from the surrounding `context` audio when given, zeros where
/// the context runs out or is absent.
pub fn pad_to_fixed(
    term: &AudioClip,
    context: Option<TermContext<'_>>,
    target_len: f64,
) -> Result<PaddedClip> {
    term.validate()?;
    let target = (target_len * term.sample_rate as f64).round() as usize;
    if term.len() > target {
        return Err(Error::Truncation(format!(
            "term has {} samples, target is {target}",
            term.len()
        )));
    }
    let left = (target - term.len()) / 2;
    let right = target - term.len() - left;
    let mut samples = Vec::with_capacity(target);
    match context {
        Some(ctx) => {
            if ctx.clip.sample_rate != term.sample_rate {
                return Err(Error::Shape("context sample rate differs from term".into()));
            }
            let start = ctx.term_start as isize;
            for i in (start - left as isize)..start {
                samples.push(context_sample(ctx.clip, i));
            }
            samples.extend_from_slice(&term.samples);
            let end = start + term.len() as isize;
            for i in end..end + right as isize {
                samples.push(context_sample(ctx.clip, i));
            }
        }
        None => {
            samples.resize(left, 0.0);
            samples.extend_from_slice(&term.samples);
            samples.resize(target, 0.0);
        }
    }
    Ok(PaddedClip {
        clip: AudioClip {
            samples,
            sample_rate: term.sample_rate,
        },
        valid_samples: left..left + term.len(),
    })
}

fn context_sample(clip: &AudioClip, i: isize) -> f32 {
    if i < 0 {
        0.0
    } else {
        clip.samples.get(i as usize).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub shape: [usize; 2],
    pub frame_hop: f64,
    pub window_len: f64,
    pub valid_range: [usize; 2],
    pub source_id: String,
}

fn sidecar(feat_path: &Path) -> PathBuf {
    let mut s = feat_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write `<stem>.feat` (row-major little-endian f32) and `<stem>.feat.json`.
pub fn write_features(seq: &FeatureSequence, dir: &Path, stem: &str) -> Result<PathBuf> {
    let feat = dir.join(format!("{stem}.feat"));
    let mut bytes = Vec::with_capacity(seq.frames.len() * 4);
    for v in seq.frames.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&feat, bytes).map_err(|e| Error::io(&feat, e))?;
    let header = FeatureHeader {
        shape: [seq.len(), seq.dim()],
        frame_hop: seq.frame_hop,
        window_len: seq.window_len,
        valid_range: [seq.valid_range.start, seq.valid_range.end],
        source_id: seq.source_id.clone(),
    };
    let json = sidecar(&feat);
    fs::write(&json, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&json, e))?;
    Ok(feat)
}

pub fn read_features(feat: &Path) -> Result<FeatureSequence> {
    let json = sidecar(feat);
    let header: FeatureHeader =
        serde_json::from_slice(&fs::read(&json).map_err(|e| Error::io(&json, e))?)?;
    let bytes = fs::read(feat).map_err(|e| Error::io(feat, e))?;
    let [t, d] = header.shape;
    if bytes.len() != t * d * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes for {t}x{d}, found {}",
            feat.display(),
            t * d * 4,
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let frames = Array2::from_shape_vec((t, d), data).map_err(|e| Error::Shape(e.to_string()))?;
    let seq = FeatureSequence {
        frames,
        frame_hop: header.frame_hop,
        window_len: header.window_len,
        source_id: header.source_id,
        valid_range: header.valid_range[0]..header.valid_range[1],
    };
    seq.validate()?;
    Ok(seq)
}

/// Per-dimension standardization applied before the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureNormalizer {
    pub fn identity(dim: usize) -> Self {
        FeatureNormalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics over every frame of `seqs`. Near-constant dimensions keep
    /// unit scale.
    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a FeatureSequence>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for seq in seqs {
            if sum.is_empty() {
                sum = vec![0.0; seq.dim()];
                sq = vec![0.0; seq.dim()];
            }
            if seq.dim() != sum.len() {
                return Err(Error::Shape("feature dimensions differ across sequences".into()));
            }
            for row in seq.frames.rows() {
                for (k, &v) in row.iter().enumerate() {
                    sum[k] += v as f64;
                    sq[k] += v as f64 * v as f64;
                }
            }
            n += seq.len();
        }
        if n == 0 {
            return Err(Error::EmptyInput("no frames to fit a normalizer".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let v = (q / nf - m * m).max(0.0).sqrt();
                if v > 1e-6 {
                    v as f32
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureNormalizer {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, seq: &FeatureSequence) -> Result<FeatureSequence> {
        if seq.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "normalizer has {} dims, features have {}",
                self.dim(),
                seq.dim()
            )));
        }
        let mut out = seq.clone();
        for mut row in out.frames.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize, sr: u32) -> AudioClip {
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                (0.3 * (2.0 * PI * 440.0 * t).sin() + 0.1 * (2.0 * PI * 1250.0 * t).sin()) as f32
            })
            .collect();
        AudioClip::new(samples, sr).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames_of_48_dims() {
        let f = compute_mfcc(&tone(16000, 16000), &FeatureConfig::default()).unwrap();
        assert_eq!(f.len(), (16000 - 400) / 160 + 1);
        assert_eq!(f.len(), 98);
        assert_eq!(f.dim(), 48);
        assert!((f.frame_hop - 0.01).abs() < 1e-12);
        assert_eq!(f.valid_range, 0..98);
    }

    #[test]
    fn silence_has_constant_statics_and_zero_deltas() {
        let clip = AudioClip::silence(8000, 16000);
        let f = compute_mfcc(&clip, &FeatureConfig::default()).unwrap();
        assert!(f.frames.iter().all(|v| v.is_finite()));
        for t in 1..f.len() {
            for k in 0..16 {
                assert_eq!(f.frames[[t, k]], f.frames[[0, k]]);
            }
        }
        for v in f.frames.slice(s![.., 16..]).iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn self_concatenation_repeats_interior_frames() {
        let half = tone(4800, 16000);
        let mut twice = half.samples.clone();
        twice.extend_from_slice(&half.samples);
        let cfg = FeatureConfig::default();
        let a = compute_mfcc(&half, &cfg).unwrap();
        let b = compute_mfcc(&AudioClip::new(twice, 16000).unwrap(), &cfg).unwrap();
        let shift = 4800 / 160;
        // away from both edges of the half (delta context is 4 frames)
        for t in 5..a.len() - 5 {
            assert_eq!(a.frames.row(t), b.frames.row(t + shift), "frame {t}");
        }
    }

    #[test]
    fn too_short_clip_is_rejected() {
        let clip = AudioClip::silence(399, 16000);
        assert!(matches!(
            compute_mfcc(&clip, &FeatureConfig::default()),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn deltas_of_a_ramp_are_its_slope_inside() {
        let x = Array2::from_shape_fn((10, 1), |(t, _)| 3.0 * t as f64);
        let d = deltas(&x, 2);
        for t in 2..8 {
            assert!((d[[t, 0]] - 3.0).abs() < 1e-12);
        }
        // replicated edges flatten the slope at the boundary
        assert!(d[[0, 0]] < 3.0);
    }

    #[test]
    fn zero_padding_is_symmetric() {
        let term = AudioClip::new(vec![0.5; 8000], 16000).unwrap();
        let p = pad_to_fixed(&term, None, 1.0).unwrap();
        assert_eq!(p.clip.len(), 16000);
        assert_eq!(p.valid_samples, 4000..12000);
        assert!(p.clip.samples[..4000].iter().all(|&s| s == 0.0));
        assert!(p.clip.samples[12000..].iter().all(|&s| s == 0.0));
        assert_eq!(&p.clip.samples[4000..12000], &term.samples[..]);
    }

    #[test]
    fn full_length_term_is_unchanged() {
        let term = tone(16000, 16000);
        let p = pad_to_fixed(&term, None, 1.0).unwrap();
        assert_eq!(p.clip, term);
        let cfg = FeatureConfig::default();
        assert_eq!(p.valid_frames(&cfg), 0..98);
    }

    #[test]
    fn context_padding_copies_surrounding_audio() {
        let ctx = tone(32000, 16000);
        let term_start = 11000;
        let term_len = 9600; // 0.6 s
        let term =
            AudioClip::new(ctx.samples[term_start..term_start + term_len].to_vec(), 16000).unwrap();
        let p = pad_to_fixed(
            &term,
            Some(TermContext {
                clip: &ctx,
                term_start,
            }),
            1.0,
        )
        .unwrap();
        // index-mapping oracle: output sample i comes from context sample
        // term_start - left + i
        let left = (16000 - term_len) / 2;
        for (i, &s) in p.clip.samples.iter().enumerate() {
            let src = term_start + i - left;
            assert_eq!(s.to_bits(), ctx.samples[src].to_bits(), "sample {i}");
        }
    }

    #[test]
    fn context_running_out_falls_back_to_zeros() {
        let ctx = tone(6000, 16000);
        let term = AudioClip::new(ctx.samples[100..4100].to_vec(), 16000).unwrap();
        let p = pad_to_fixed(
            &term,
            Some(TermContext {
                clip: &ctx,
                term_start: 100,
            }),
            0.5,
        )
        .unwrap();
        let left = (8000 - 4000) / 2;
        assert!(p.clip.samples[..left - 100].iter().all(|&s| s == 0.0));
        assert_eq!(p.clip.samples[left - 100], ctx.samples[0]);
        assert!(p.clip.samples[left + 4000 + 1900..].iter().all(|&s| s == 0.0));
    }

    #[test]
    fn overlong_term_is_a_truncation_error() {
        let term = AudioClip::silence(16001, 16000);
        assert!(matches!(
            pad_to_fixed(&term, None, 1.0),
            Err(Error::Truncation(_))
        ));
    }

    #[test]
    fn feature_files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let seq = compute_mfcc(&tone(3200, 16000), &FeatureConfig::default())
            .unwrap()
            .with_valid_range(2..10)
            .unwrap()
            .with_source_id("utt-1");
        let p = write_features(&seq, dir.path(), "utt-1").unwrap();
        assert!(dir.path().join("utt-1.feat.json").exists());
        assert_eq!(read_features(&p).unwrap(), seq);
    }
}
