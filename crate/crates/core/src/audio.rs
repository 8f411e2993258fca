//! Mono PCM clips and WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let clip = AudioClip {
            samples,
            sample_rate,
        };
        clip.validate()?;
        Ok(clip)
    }

    /// A clip of `n` zero samples. Does not enforce non-emptiness.
    pub fn silence(n: usize, sample_rate: u32) -> Self {
        AudioClip {
            samples: vec![0.0; n],
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Format("sample rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(Error::EmptyInput("audio clip has no samples".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Format(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn seconds_to_samples(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate as f64).round() as usize
    }
}

/// Mean power of `samples` (0 for an empty slice).
pub fn power(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64
}

pub fn rms(samples: &[f32]) -> f64 {
    power(samples).sqrt()
}

/// Read a PCM WAV file, downmixing to mono and scaling integers to [-1, 1).
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::Unsupported(format!("{}", path.display())),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(e.to_string()))?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(e.to_string()))?
        }
        (fmt, bits) => {
            return Err(Error::Unsupported(format!("{fmt:?} with {bits} bits")));
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Write a clip as 32-bit float mono WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    };
    let mut w = WavWriter::create(path, spec).map_err(map)?;
    for &s in &clip.samples {
        w.write_sample(s).map_err(map)?;
    }
    w.finalize().map_err(map)
}

/// Write a clip as 16-bit integer mono WAV (values clamped to the i16 range).
pub fn write_wav_i16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    };
    let mut w = WavWriter::create(path, spec).map_err(map)?;
    for &s in &clip.samples {
        let v = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(map)?;
    }
    w.finalize().map_err(map)
}

/// Downsample by an integer factor with a boxcar pre-filter.
///
/// Only exact integer ratios are accepted; anything else is unsupported.
pub fn decimate(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    if target_rate == 0 || clip.sample_rate % target_rate != 0 {
        return Err(Error::Unsupported(format!(
            "cannot decimate {} Hz to {} Hz by an integer factor",
            clip.sample_rate, target_rate
        )));
    }
    let factor = (clip.sample_rate / target_rate) as usize;
    let samples: Vec<f32> = clip
        .samples
        .chunks(factor)
        .map(|c| c.iter().sum::<f32>() / c.len() as f32)
        .collect();
    AudioClip::new(samples, target_rate)
}
