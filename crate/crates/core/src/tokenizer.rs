//! A trained tokenizer: feature front end, normalizer, encoder and codebook,
//! with its on-disk checkpoint format.

use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::audio::{decimate, AudioClip};
use crate::encoder::{encode, EmbeddingSequence, EncoderParams, EncoderShape};
use crate::error::{Error, Result};
use crate::features::{pad_to_fixed, FeatureConfig, FeatureNormalizer, FeatureSequence, MfccExtractor, PaddedClip};
use crate::quantizer::{Codebook, TokenSequence};

pub const ENCODER_MANIFEST: &str = "encoder.json";
pub const CODEBOOK_STEM: &str = "codebook";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderManifest {
    pub format_version: u32,
    pub shape: EncoderShape,
    pub param_count: usize,
    pub step: u64,
    pub sample_rate: u32,
    pub features: Option<FeatureConfig>,
    pub normalizer: FeatureNormalizer,
    /// Training configuration, kept for provenance.
    pub training: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub features: Option<FeatureConfig>,
    pub sample_rate: u32,
    pub normalizer: FeatureNormalizer,
    pub params: EncoderParams<f32>,
    pub codebook: Codebook<f32>,
    pub step: u64,
    pub training: Option<serde_json::Value>,
}

impl Tokenizer {
    /// Write `encoder.json` + `encoder.f32` and the codebook files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = EncoderManifest {
            format_version: 1,
            shape: self.params.shape(),
            param_count: self.params.len(),
            step: self.step,
            sample_rate: self.sample_rate,
            features: self.features.clone(),
            normalizer: self.normalizer.clone(),
            training: self.training.clone(),
        };
        let mpath = dir.join(ENCODER_MANIFEST);
        fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;
        let bpath = mpath.with_extension("f32");
        let bytes: Vec<u8> = self.params.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&bpath, bytes).map_err(|e| Error::io(&bpath, e))?;
        self.codebook.save(dir, CODEBOOK_STEM, self.step)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::load_files(&dir.join(ENCODER_MANIFEST), &dir.join(format!("{CODEBOOK_STEM}.json")))
    }

    /// Load from an encoder manifest and a codebook manifest.
    pub fn load_files(ckpt: &Path, codebook: &Path) -> Result<Self> {
        let m: EncoderManifest =
            serde_json::from_slice(&fs::read(ckpt).map_err(|e| Error::io(ckpt, e))?)?;
        if m.format_version != 1 {
            return Err(Error::Format(format!("unsupported checkpoint version {}", m.format_version)));
        }
        let bpath = ckpt.with_extension("f32");
        let bytes = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        if bytes.len() != m.param_count * 4 {
            return Err(Error::Format(format!("{}: wrong blob size", bpath.display())));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let params = EncoderParams::from_vec(m.shape, data)?;
        let (cb, _) = Codebook::load(codebook)?;
        if cb.dim() != m.shape.embed_dim {
            return Err(Error::Shape(format!(
                "codebook dim {} vs encoder embedding dim {}",
                cb.dim(),
                m.shape.embed_dim
            )));
        }
        if m.normalizer.dim() != m.shape.input_dim {
            return Err(Error::Shape("normalizer and encoder input dims differ".into()));
        }
        Ok(Tokenizer {
            features: m.features,
            sample_rate: m.sample_rate,
            normalizer: m.normalizer,
            params,
            codebook: cb,
            step: m.step,
            training: m.training,
        })
    }

    pub fn embed(&self, x: &FeatureSequence) -> Result<EmbeddingSequence<f32>> {
        Ok(encode(&self.normalizer.apply(x)?, &self.params)?.0)
    }

    /// Tokens of the frames in `x.valid_range`.
    pub fn tokenize_features(&self, x: &FeatureSequence) -> Result<TokenSequence> {
        let emb = self.embed(x)?;
        let all = self.codebook.assign(&emb)?;
        let r = x.valid_range.clone();
        Ok(TokenSequence {
            tokens: all[r.clone()].to_vec(),
            segment_id: x.source_id.clone(),
            frame_span: (r.start, r.end),
        })
    }

    fn front_end(&self) -> Result<(&FeatureConfig, MfccExtractor)> {
        let cfg = self
            .features
            .as_ref()
            .ok_or_else(|| Error::Config("this tokenizer has no audio front end".into()))?;
        Ok((cfg, MfccExtractor::new(cfg, self.sample_rate)?))
    }

    fn resample(&self, clip: &AudioClip) -> Result<AudioClip> {
        decimate(clip, self.sample_rate)
    }

    /// Tokenize an archive segment: every frame counts.
    pub fn tokenize_segment(&self, clip: &AudioClip) -> Result<TokenSequence> {
        let (_, ex) = self.front_end()?;
        self.tokenize_features(&ex.extract(&self.resample(clip)?)?)
    }

    /// Tokenize a spoken query: pad it like the training inputs and keep the
    /// tokens of the term's own frames.
    pub fn tokenize_term(&self, clip: &AudioClip) -> Result<TokenSequence> {
        let (cfg, ex) = self.front_end()?;
        let clip = self.resample(clip)?;
        if clip.duration() > cfg.pad_s {
            warn!(
                "query of {:.2} s is longer than the {:.2} s input window; tokenizing unpadded",
                clip.duration(),
                cfg.pad_s
            );
            return self.tokenize_features(&ex.extract(&clip)?);
        }
        self.tokenize_padded(&pad_to_fixed(&clip, None, cfg.pad_s)?)
    }

    /// Tokens of the term frames of an already padded clip.
    pub fn tokenize_padded(&self, padded: &PaddedClip) -> Result<TokenSequence> {
        let (cfg, ex) = self.front_end()?;
        if padded.clip.sample_rate != self.sample_rate {
            return Err(Error::Unsupported(format!(
                "padded clip at {} Hz, tokenizer expects {} Hz",
                padded.clip.sample_rate, self.sample_rate
            )));
        }
        self.tokenize_features(&padded.features(&ex, cfg)?)
    }
}
