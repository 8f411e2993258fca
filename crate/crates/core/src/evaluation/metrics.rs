use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::jaccard;

/// Mean Jaccard similarity over token-sequence pairs.
pub fn token_consistency<A: AsRef<[u32]>, B: AsRef<[u32]>>(pairs: &[(A, B)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("token consistency needs at least one pair".into()));
    }
    Ok(pairs.iter().map(|(a, b)| jaccard(a.as_ref(), b.as_ref())).sum::<f64>() / pairs.len() as f64)
}

/// One query's output and the segments that truly contain its term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrial {
    pub term: String,
    pub query_id: String,
    /// `(segment id, score)` for every returned segment.
    pub returned: Vec<(u32, f64)>,
    pub truth: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MtwvConfig {
    /// False-alarm cost weight.
    pub beta: f64,
    /// Fixed thresholds; `None` sweeps every distinct returned score.
    pub threshold_grid: Option<Vec<f64>>,
    /// Scoreable segments per query.
    pub trial_universe: Option<usize>,
}

impl Default for MtwvConfig {
    fn default() -> Self {
        MtwvConfig {
            beta: 20.0,
            threshold_grid: None,
            trial_universe: None,
        }
    }
}

impl MtwvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if let Some(g) = &self.threshold_grid {
            if g.is_empty() || g.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::Config("threshold grid must be non-empty and strictly increasing".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermStats {
    pub term: String,
    pub true_count: usize,
    pub misses: usize,
    pub false_alarms: usize,
    pub p_miss: f64,
    pub p_fa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtwvResult {
    pub mtwv: f64,
    pub best_threshold: f64,
    /// `(threshold, TWV)` in increasing threshold order.
    pub curve: Vec<(f64, f64)>,
    /// Per-term rates at the best threshold.
    pub per_term: Vec<TermStats>,
    /// Terms without true occurrences, left out of the mean.
    pub excluded_terms: Vec<String>,
}

/// Term-weighted value swept over thresholds; a segment is detected when
/// its score is at least the threshold.
///
/// Counts are pooled over all queries of a term:
/// `P_miss = misses / true`, `P_FA = false alarms / Σ (universe − true)`, and
/// `TWV(θ) = 1 − mean_terms(P_miss + β·P_FA)`.
pub fn mtwv(trials: &[DetectionTrial], cfg: &MtwvConfig) -> Result<MtwvResult> {
    cfg.validate()?;
    let universe = cfg
        .trial_universe
        .ok_or_else(|| Error::Config("the trial universe is undefined".into()))?;
    if trials.iter().flat_map(|t| &t.returned).any(|(_, s)| !s.is_finite()) {
        return Err(Error::Input("non-finite detection score".into()));
    }
    let mut by_term: BTreeMap<&str, Vec<&DetectionTrial>> = BTreeMap::new();
    for t in trials {
        by_term.entry(t.term.as_str()).or_default().push(t);
    }
    let mut excluded = Vec::new();
    by_term.retain(|term, ts| {
        let keep = ts.iter().any(|t| !t.truth.is_empty());
        if !keep {
            warn!("term {term:?} has no true occurrences; excluded from MTWV");
            excluded.push(term.to_string());
        }
        keep
    });
    if by_term.is_empty() {
        return Err(Error::Input("no term with true occurrences to score".into()));
    }

    let grid: Vec<f64> = match &cfg.threshold_grid {
        Some(g) => g.clone(),
        None => {
            let mut g: Vec<f64> = trials.iter().flat_map(|t| t.returned.iter().map(|r| r.1)).collect();
            g.sort_by(f64::total_cmp);
            g.dedup();
            g.push(f64::INFINITY);
            g
        }
    };

    let stats_at = |theta: f64| -> Vec<TermStats> {
        by_term
            .iter()
            .map(|(term, ts)| {
                let (mut true_count, mut misses, mut fas, mut non_target) = (0, 0, 0, 0usize);
                for t in ts {
                    let detected: BTreeSet<u32> =
                        t.returned.iter().filter(|r| r.1 >= theta).map(|r| r.0).collect();
                    true_count += t.truth.len();
                    misses += t.truth.difference(&detected).count();
                    fas += detected.difference(&t.truth).count();
                    non_target += universe.saturating_sub(t.truth.len());
                }
                TermStats {
                    term: term.to_string(),
                    true_count,
                    misses,
                    false_alarms: fas,
                    p_miss: misses as f64 / true_count as f64,
                    p_fa: if non_target > 0 { fas as f64 / non_target as f64 } else { 0.0 },
                }
            })
            .collect()
    };
    let twv = |stats: &[TermStats]| {
        1.0 - stats.iter().map(|s| s.p_miss + cfg.beta * s.p_fa).sum::<f64>() / stats.len() as f64
    };

    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, Vec<TermStats>)> = None;
    for &theta in &grid {
        let stats = stats_at(theta);
        let v = twv(&stats);
        curve.push((theta, v));
        if best.as_ref().map_or(true, |b| v > b.1) {
            best = Some((theta, v, stats));
        }
    }
    let (best_threshold, value, per_term) = best.expect("non-empty grid");
    Ok(MtwvResult {
        mtwv: value,
        best_threshold,
        curve,
        per_term,
        excluded_terms: excluded,
    })
}
