//! Pair-batch training of the encoder and codebook.

mod adam;
mod data;
mod loss;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use log::{debug, info};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use data::{GaussianPairSource, PairBatch, PairItem, PairSource, Utterance, UtterancePairSource};
pub use loss::{
    backward_batch, batch_loss, commitment_loss, contrastive_loss, forward_batch, objective, prepare_targets, Anchor,
    BatchForward, BatchLoss, BatchTargets, ContrastiveLoss, FrameRef, ItemInput, LossWeights, TargetMode,
};

use crate::encoder::{EncoderParams, EncoderShape};
use crate::error::{Error, Result};
use crate::features::FeatureNormalizer;
use crate::quantizer::{normalized_entropy, Codebook, CodebookInit, SinkhornConfig};
use crate::rng;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub tau: f64,
    pub tau_prime: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub k_neg: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub steps: u64,
    pub seed: u64,
    pub codebook_size: usize,
    pub codebook_init: CodebookInit,
    pub targets: TargetMode,
    pub sinkhorn: SinkhornConfig,
    pub encoder: EncoderShape,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            tau: 0.1,
            tau_prime: 0.1,
            lambda1: 1.0,
            lambda2: 10.0,
            k_neg: 16,
            batch_size: 8,
            lr: 5e-4,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            steps: 2000,
            seed: 0,
            codebook_size: 64,
            codebook_init: CodebookInit::RandomUnit,
            targets: TargetMode::Transport,
            sinkhorn: SinkhornConfig::default(),
            encoder: EncoderShape::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.tau_prime > 0.0) {
            return bad(format!("temperatures must be positive: tau {}, tau' {}", self.tau, self.tau_prime));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.adam_betas.0) || !(0.0..1.0).contains(&self.adam_betas.1) {
            return bad("invalid optimizer settings".into());
        }
        if self.codebook_size < 2 {
            return bad("codebook needs at least two codewords".into());
        }
        if self.encoder.hidden_dim == 0 || self.encoder.embed_dim == 0 || self.encoder.input_dim == 0 {
            return bad("encoder dimensions must be positive".into());
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            tau: self.tau,
            tau_prime: self.tau_prime,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub l_contrast: f64,
    pub l_robust: f64,
    pub l_commit: f64,
    pub total: f64,
    /// Normalized entropy of the batch's argmax codeword usage.
    pub entropy: f64,
    pub sinkhorn_converged: bool,
}

pub const METRICS_HEADER: &str = "step,l_contrast,l_robust,l_commit,total,entropy,sinkhorn_converged";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.6},{}",
            self.step,
            self.l_contrast,
            self.l_robust,
            self.l_commit,
            self.total,
            self.entropy,
            self.sinkhorn_converged as u8
        )
    }
}

pub struct TrainOutcome {
    pub tokenizer: Tokenizer,
    pub log: Vec<StepMetrics>,
}

#[derive(Serialize)]
struct NanDump<'a> {
    step: u64,
    what: &'a str,
    l_contrast: f64,
    l_robust: f64,
    l_commit: f64,
    labels: Vec<usize>,
    params_finite: bool,
    codewords_finite: bool,
}

/// Train an encoder and codebook on batches from `source`.
///
/// Runs single-threaded and is deterministic for a fixed seed. With
/// `out_dir`, writes `metrics.csv`, periodic checkpoints under
/// `checkpoint-<step>/` and the final tokenizer under `final/`.
pub fn train(cfg: &TrainingConfig, source: &mut dyn PairSource, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if source.num_labels() < 2 {
        return Err(Error::Dataset("fewer than two terms; cannot draw negatives".into()));
    }
    let mut shape = cfg.encoder;
    if shape.input_dim != source.input_dim() {
        debug!("encoder input dim follows the data: {}", source.input_dim());
        shape.input_dim = source.input_dim();
    }
    let normalizer = source.fit_normalizer()?;
    let mut params: EncoderParams<f32> = EncoderParams::init(shape, &mut rng::stream(cfg.seed, "encoder-init", 0));
    let mut codebook = init_codebook(cfg, &params, &normalizer, source)?;

    let mut metrics_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("metrics.csv");
            let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
            writeln!(f, "{METRICS_HEADER}").map_err(|e| Error::io(&p, e))?;
            Some((f, p))
        }
        None => None,
    };

    let weights = cfg.weights();
    let mut opt_enc = Adam::new(params.len(), cfg.lr, cfg.adam_betas, cfg.adam_eps);
    let mut opt_cb = Adam::new(codebook.codewords.len(), cfg.lr, cfg.adam_betas, cfg.adam_eps);
    let training_json = serde_json::to_value(cfg)?;
    let mut log = Vec::with_capacity(cfg.steps as usize);
    let feature_cfg = source.feature_config();
    let sample_rate = source.sample_rate();
    let snapshot = |params: &EncoderParams<f32>, cb: &Codebook<f32>, step: u64| Tokenizer {
        features: feature_cfg.clone(),
        sample_rate,
        normalizer: normalizer.clone(),
        params: params.clone(),
        codebook: cb.clone(),
        step,
        training: Some(training_json.clone()),
    };

    for step in 1..=cfg.steps {
        let batch = source.next_batch(cfg.batch_size)?;
        let items: Vec<ItemInput<f32>> = batch
            .items
            .iter()
            .map(|it| it.to_input(&normalizer))
            .collect::<Result<_>>()?;
        let fwd = forward_batch(&params, &items)?;
        let mut nrng = rng::stream(cfg.seed, "negatives", step);
        let targets = prepare_targets(&items, &fwd, &codebook, cfg.k_neg, cfg.targets, &cfg.sinkhorn, &mut nrng)?;
        let loss = batch_loss(&items, &fwd, &codebook, &targets, &weights)?;
        let grads = backward_batch(&params, &fwd, &loss)?;

        let finite = loss.total.is_finite()
            && grads.is_finite()
            && loss.grad_codewords.iter().all(|v| v.is_finite());
        if !finite {
            let dump = NanDump {
                step,
                what: if loss.total.is_finite() { "gradient" } else { "loss" },
                l_contrast: loss.contrast as f64,
                l_robust: loss.robust as f64,
                l_commit: loss.commit as f64,
                labels: items.iter().map(|i| i.label).collect(),
                params_finite: params.is_finite(),
                codewords_finite: codebook.codewords.iter().all(|v| v.is_finite()),
            };
            let text = serde_json::to_string_pretty(&dump)?;
            if let Some(dir) = out_dir {
                let p = dir.join("nan_dump.json");
                fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
            }
            return Err(Error::Numeric(format!("non-finite {} at step {step}: {text}", dump.what)));
        }

        opt_enc.step(params.as_mut_slice(), grads.as_slice());
        opt_cb.step(
            codebook.codewords.as_slice_mut().expect("standard layout"),
            loss.grad_codewords.as_slice().expect("standard layout"),
        );
        let mut hist = vec![0u64; codebook.size()];
        for &a in &targets.assignments {
            hist[a as usize] += 1;
            codebook.usage_counts[a as usize] += 1;
        }
        let m = StepMetrics {
            step,
            l_contrast: loss.contrast as f64,
            l_robust: loss.robust as f64,
            l_commit: loss.commit as f64,
            total: loss.total as f64,
            entropy: normalized_entropy(&hist).unwrap_or(0.0),
            sinkhorn_converged: targets.plan_converged,
        };
        if let Some((f, p)) = metrics_file.as_mut() {
            writeln!(f, "{}", m.csv_row()).map_err(|e| Error::io(&*p, e))?;
        }
        if step % 100 == 0 || step == cfg.steps {
            info!(
                "step {step}: total {:.4} (contrast {:.4}, robust {:.4}, commit {:.4}), entropy {:.3}",
                m.total, m.l_contrast, m.l_robust, m.l_commit, m.entropy
            );
        }
        log.push(m);
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps {
                snapshot(&params, &codebook, step).save(&dir.join(format!("checkpoint-{step}")))?;
            }
        }
    }

    let tokenizer = snapshot(&params, &codebook, cfg.steps);
    if let Some(dir) = out_dir {
        tokenizer.save(&dir.join("final"))?;
    }
    Ok(TrainOutcome { tokenizer, log })
}

fn init_codebook(
    cfg: &TrainingConfig,
    params: &EncoderParams<f32>,
    normalizer: &FeatureNormalizer,
    source: &mut dyn PairSource,
) -> Result<Codebook<f32>> {
    let d = params.shape().embed_dim;
    let mut r = rng::stream(cfg.seed, "codebook-init", 0);
    match cfg.codebook_init {
        CodebookInit::RandomUnit => Codebook::random_unit(cfg.codebook_size, d, &mut r),
        CodebookInit::KMeans => {
            // Draw from a throwaway stream position: the first batch is
            // consumed here and training starts with the next one.
            let batch = source.next_batch(cfg.batch_size)?;
            let items: Vec<ItemInput<f32>> = batch
                .items
                .iter()
                .map(|it| it.to_input(normalizer))
                .collect::<Result<_>>()?;
            let fwd = forward_batch(params, &items)?;
            let rows: Vec<f32> = fwd
                .clean
                .iter()
                .flat_map(|(e, _)| {
                    e.valid_range
                        .clone()
                        .flat_map(move |t| e.row(t).to_vec())
                })
                .collect();
            let n = rows.len() / d;
            let pts = Array2::from_shape_vec((n, d), rows).expect("shape");
            Codebook::kmeans(pts.view(), cfg.codebook_size, 20, &mut r)
        }
    }
}
