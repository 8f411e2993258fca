//! Noise-robust speech tokenization and token-sequence spoken term detection.
//!
//! The pipeline runs MFCC extraction ([`features`]), distortion ([`augment`]),
//! DTW self-supervision ([`alignment`]), a bidirectional gated linear-recurrent
//! encoder ([`encoder`]), an optimal-transport balanced vector quantizer
//! ([`quantizer`]) and its training loop ([`training`]). Tokenized archives are
//! searched with a TF-IDF / IVF-PQ / Jaccard / edit-distance cascade
//! ([`retrieval`]) and scored with MTWV and token consistency ([`evaluation`]).

pub mod alignment;
pub mod audio;
pub mod augment;
pub mod config;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod gradcheck;
pub mod numeric;
pub mod oracle;
pub mod quantizer;
pub mod retrieval;
pub mod rng;
pub mod selftest;
pub mod synth;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
pub use numeric::Real;
