use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Split a track into overlapping windows of `length` seconds every `hop`
/// seconds. A trailing partial window is kept (zero-padded) when it covers at
/// least half a window (unless the clip is exactly one window long); a clip shorter than that yields one padded window.
pub fn segment_track(clip: &AudioClip, length: f64, hop: f64) -> Result<Vec<(f64, AudioClip)>> {
    clip.validate()?;
    if !(length > 0.0) || !(hop > 0.0) || hop > length {
        return Err(Error::Parameter(format!(
            "need 0 < hop <= length, got length {length}, hop {hop}"
        )));
    }
    let sr = clip.sample_rate as f64;
    let seg = (length * sr).round() as usize;
    let step = ((hop * sr).round() as usize).max(1);
    let n = clip.len();
    let window = |start: usize| {
        let mut samples = clip.samples[start..(start + seg).min(n)].to_vec();
        samples.resize(seg, 0.0);
        (
            start as f64 / sr,
            AudioClip {
                samples,
                sample_rate: clip.sample_rate,
            },
        )
    };
    let mut out = Vec::new();
    let mut start = 0;
    while start + seg <= n {
        out.push(window(start));
        start += step;
    }
    // 2·remaining ≥ seg ⇔ remaining ≥ l/2; a clip of exactly one window
    // stays a single segment
    if n != seg && start < n && 2 * (n - start) >= seg {
        out.push(window(start));
    }
    if out.is_empty() {
        out.push(window(0));
    }
    Ok(out)
}
