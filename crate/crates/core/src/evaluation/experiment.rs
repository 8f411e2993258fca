use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{mtwv, token_consistency, DetectionTrial, MtwvConfig, MtwvResult};
use crate::audio::AudioClip;
use crate::augment::{apply_rir, mix_at_snr, EVAL_SNR_GRID_DB};
use crate::error::{Error, Result};
use crate::features::{pad_to_fixed, PaddedClip};
use crate::retrieval::{search, segment_track, SearchConfig, SegmentRecord, SegmentStore, TfIdfIndex};
use crate::rng;
use crate::tokenizer::Tokenizer;
use rand::Rng as _;

/// Acoustic condition applied to the queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Condition {
    Clean,
    Noise { snr_db: f64 },
    NoiseReverb { snr_db: f64 },
}

impl Condition {
    pub fn name(&self) -> String {
        match self {
            Condition::Clean => "clean".into(),
            Condition::Noise { snr_db } => format!("noise_{snr_db}dB"),
            Condition::NoiseReverb { snr_db } => format!("noise+reverb_{snr_db}dB"),
        }
    }

    /// Clean plus the evaluation SNR grid with and without reverberation.
    pub fn standard_set() -> Vec<Condition> {
        let mut v = vec![Condition::Clean];
        v.extend(EVAL_SNR_GRID_DB.iter().map(|&s| Condition::Noise { snr_db: s }));
        v.extend(EVAL_SNR_GRID_DB.iter().map(|&s| Condition::NoiseReverb { snr_db: s }));
        v
    }
}

/// A spoken query. Queries with `condition` set are already recorded under
/// that condition and are used as they are.
#[derive(Debug, Clone)]
pub struct Query {
    pub id: String,
    pub term: String,
    pub clip: AudioClip,
    pub condition: Option<String>,
}

/// A true occurrence of a term in an archive track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRecord {
    pub term: String,
    pub track_id: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Segments overlapping a true occurrence of `term` by at least half of the
/// occurrence's duration.
pub fn ground_truth(store: &SegmentStore, truth: &[TruthRecord], term: &str) -> BTreeSet<u32> {
    let mut out = BTreeSet::new();
    for occ in truth.iter().filter(|o| o.term == term) {
        let dur = occ.end_s - occ.start_s;
        for (id, seg) in store.records.iter().enumerate() {
            if seg.track_id != occ.track_id {
                continue;
            }
            let overlap = (seg.start + seg.length).min(occ.end_s) - seg.start.max(occ.start_s);
            if overlap >= 0.5 * dur - 1e-9 {
                out.insert(id as u32);
            }
        }
    }
    out
}

/// Segment, tokenize and index archive tracks.
pub fn tokenize_tracks(
    tokenizer: &Tokenizer,
    tracks: &[(String, AudioClip)],
    length: f64,
    hop: f64,
) -> Result<Vec<SegmentRecord>> {
    let mut out = Vec::new();
    for (track_id, clip) in tracks {
        for (start, seg) in segment_track(clip, length, hop)? {
            let mut tokens = tokenizer.tokenize_segment(&seg)?;
            tokens.segment_id = format!("{track_id}@{start:.3}");
            out.push(SegmentRecord {
                track_id: track_id.clone(),
                start,
                length,
                tokens,
            });
        }
    }
    Ok(out)
}

pub struct Experiment<'a> {
    pub tokenizer: &'a Tokenizer,
    pub index: &'a TfIdfIndex,
    pub store: &'a SegmentStore,
    pub queries: &'a [Query],
    pub truth: &'a [TruthRecord],
    pub conditions: Vec<Condition>,
    pub noise_bank: Vec<AudioClip>,
    pub rir_bank: Vec<AudioClip>,
    pub search: SearchConfig,
    pub mtwv: MtwvConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub queries: usize,
    pub terms: usize,
    pub token_consistency: f64,
    pub mtwv: MtwvResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub trial_universe: usize,
    pub beta: f64,
    pub conditions: Vec<ConditionReport>,
}

impl Report {
    pub fn csv(&self) -> String {
        let mut s = String::from("condition,mtwv,best_threshold,token_consistency,queries,terms\n");
        for c in &self.conditions {
            s.push_str(&format!(
                "{},{:.6},{},{:.6},{},{}\n",
                c.condition, c.mtwv.mtwv, c.mtwv.best_threshold, c.token_consistency, c.queries, c.terms
            ));
        }
        s
    }

    /// Write `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("report.csv");
        fs::write(&p, self.csv()).map_err(|e| Error::io(&p, e))?;
        let p = dir.join("report.json");
        // JSON has no infinity; the "nothing detected" threshold is written as null.
        fs::write(&p, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(&p, e))
    }
}

impl Experiment<'_> {
    fn validate(&self) -> Result<()> {
        if self.queries.is_empty() {
            return Err(Error::Config("no queries".into()));
        }
        if self.conditions.is_empty() {
            return Err(Error::Config("no conditions".into()));
        }
        for c in &self.conditions {
            let synthetic = !self.queries.iter().any(|q| q.condition.as_deref() == Some(&c.name()));
            match c {
                Condition::Noise { .. } | Condition::NoiseReverb { .. } if synthetic && self.noise_bank.is_empty() => {
                    return Err(Error::Config(format!("condition {} needs a noise bank", c.name())))
                }
                Condition::NoiseReverb { .. } if synthetic && self.rir_bank.is_empty() => {
                    return Err(Error::Config(format!("condition {} needs an RIR bank", c.name())))
                }
                _ => {}
            }
        }
        self.mtwv.validate()
    }

    fn padded(&self, clip: &AudioClip) -> Result<PaddedClip> {
        let pad = self.tokenizer.features.as_ref().map_or(0.0, |f| f.pad_s);
        if clip.duration() <= pad {
            pad_to_fixed(clip, None, pad)
        } else {
            Ok(PaddedClip {
                valid_samples: 0..clip.len(),
                clip: clip.clone(),
            })
        }
    }

    fn distort(&self, p: &PaddedClip, cond: &Condition, ordinal: u64) -> Result<PaddedClip> {
        let mut r = rng::stream(self.seed, "eval-distortion", ordinal);
        let (snr, reverb) = match cond {
            Condition::Clean => return Ok(p.clone()),
            Condition::Noise { snr_db } => (*snr_db, false),
            Condition::NoiseReverb { snr_db } => (*snr_db, true),
        };
        let noise = &self.noise_bank[r.gen_range(0..self.noise_bank.len())];
        let speech = if reverb {
            apply_rir(&p.clip, &self.rir_bank[r.gen_range(0..self.rir_bank.len())])?
        } else {
            p.clip.clone()
        };
        Ok(PaddedClip {
            clip: mix_at_snr(&speech, noise, snr, p.valid_samples.clone())?,
            valid_samples: p.valid_samples.clone(),
        })
    }
}

/// Distort, tokenize and search every query under every condition.
pub fn run_experiment(exp: &Experiment<'_>) -> Result<Report> {
    exp.validate()?;
    let universe = exp.mtwv.trial_universe.unwrap_or(exp.store.len());
    let mcfg = MtwvConfig {
        trial_universe: Some(universe),
        ..exp.mtwv.clone()
    };
    let base: Vec<(usize, &Query)> = exp.queries.iter().enumerate().filter(|(_, q)| q.condition.is_none()).collect();
    let clean_tokens: BTreeMap<usize, Vec<u32>> = base
        .iter()
        .map(|&(i, q)| Ok((i, exp.tokenizer.tokenize_padded(&exp.padded(&q.clip)?)?.tokens)))
        .collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(exp.conditions.len());
    for (ci, cond) in exp.conditions.iter().enumerate() {
        let name = cond.name();
        let recorded: Vec<(usize, &Query)> = exp
            .queries
            .iter()
            .enumerate()
            .filter(|(_, q)| q.condition.as_deref() == Some(&name))
            .collect();
        let synthetic = recorded.is_empty();
        let chosen = if synthetic { base.clone() } else { recorded };
        if chosen.is_empty() {
            return Err(Error::Config(format!("no queries for condition {name}")));
        }
        let mut trials = Vec::with_capacity(chosen.len());
        let mut tokens: Vec<(usize, String, Vec<u32>)> = Vec::with_capacity(chosen.len());
        for &(qi, q) in &chosen {
            let p = exp.padded(&q.clip)?;
            let p = if synthetic {
                exp.distort(&p, cond, (ci as u64) << 32 | qi as u64)?
            } else {
                p
            };
            let toks = exp.tokenizer.tokenize_padded(&p)?;
            let res = search(&toks, exp.index, exp.store, &exp.search, None)?;
            trials.push(DetectionTrial {
                term: q.term.clone(),
                query_id: q.id.clone(),
                returned: res.hits.iter().map(|h| (h.segment_id, h.dtw.map_or(h.stage3, |d| d.1))).collect(),
                truth: ground_truth(exp.store, exp.truth, &q.term),
            });
            tokens.push((qi, q.term.clone(), toks.tokens));
        }

        // Consistency: clean tokens of each base query against this
        // condition's tokens of the next query of the same term (itself if
        // the term has a single query).
        let mut by_term: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (k, (_, term, _)) in tokens.iter().enumerate() {
            by_term.entry(term.as_str()).or_default().push(k);
        }
        let mut pairs: Vec<(&[u32], &[u32])> = Vec::new();
        for ks in by_term.values() {
            for (n, &k) in ks.iter().enumerate() {
                let partner = ks[(n + 1) % ks.len()];
                let clean = match clean_tokens.get(&tokens[k].0) {
                    Some(c) => c.as_slice(),
                    None => continue,
                };
                pairs.push((clean, tokens[partner].2.as_slice()));
            }
        }
        let consistency = if pairs.is_empty() { f64::NAN } else { token_consistency(&pairs)? };
        reports.push(ConditionReport {
            condition: name,
            queries: chosen.len(),
            terms: by_term.len(),
            token_consistency: consistency,
            mtwv: mtwv(&trials, &mcfg)?,
        });
    }
    Ok(Report {
        trial_universe: universe,
        beta: mcfg.beta,
        conditions: reports,
    })
}
