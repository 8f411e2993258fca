//! DTW alignment between two clean renditions of a term, and the
//! anchor-positive frame pairs derived from it.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignMode {
    /// Keep every pair on the warping path.
    #[default]
    Full,
    /// Keep one partner per frame of the first sequence: the closest frame
    /// among those the path aligns with it.
    OneToOne,
}

/// Monotone warping path in valid-range coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
    /// `valid_range.start` of the two sequences the path was computed on.
    pub offsets: (usize, usize),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DtwOptions {
    /// Sakoe-Chiba half-width around the length-scaled diagonal.
    pub band: Option<usize>,
    pub mode: AlignMode,
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn in_band(i: usize, j: usize, n: usize, m: usize, band: Option<usize>) -> bool {
    match band {
        None => true,
        Some(w) => {
            let w = w.max(1) as f64;
            let centre = if n == 1 {
                0.0
            } else {
                i as f64 * (m - 1) as f64 / (n - 1) as f64
            };
            (j as f64 - centre).abs() <= w
        }
    }
}

/// Classical DTW over two frame matrices (rows are frames).
///
/// Steps (1,0), (0,1), (1,1); ties in the backtrack prefer the diagonal.
pub fn dtw_matrices(
    a: ArrayView2<'_, f32>,
    b: ArrayView2<'_, f32>,
    band: Option<usize>,
) -> Result<(Vec<(usize, usize)>, f64)> {
    let (n, m) = (a.nrows(), b.nrows());
    if n == 0 || m == 0 {
        return Err(Error::EmptyInput("DTW needs two non-empty sequences".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!(
            "frame widths differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let a_rows: Vec<&[f32]> = a
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();
    let b_rows: Vec<&[f32]> = b
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("standard layout"))
        .collect();

    let inf = f64::INFINITY;
    let mut acc = vec![inf; n * m];
    for i in 0..n {
        for j in 0..m {
            if !in_band(i, j, n, m, band) {
                continue;
            }
            let d = euclidean(a_rows[i], b_rows[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { inf };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { inf };
                let left = if j > 0 { acc[i * m + j - 1] } else { inf };
                diag.min(up).min(left)
            };
            acc[i * m + j] = best + d;
        }
    }
    let cost = acc[n * m - 1];
    if !cost.is_finite() {
        return Err(Error::Parameter(
            "band too narrow: no admissible warping path".into(),
        ));
    }

    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { inf };
        let up = if i > 0 { acc[(i - 1) * m + j] } else { inf };
        let left = if j > 0 { acc[i * m + j - 1] } else { inf };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok((path, cost))
}

/// Align the valid (non-padding) frames of `a` and `b`.
pub fn dtw_align(a: &FeatureSequence, b: &FeatureSequence) -> Result<AlignmentPath> {
    dtw_align_with(a, b, DtwOptions::default())
}

pub fn dtw_align_with(
    a: &FeatureSequence,
    b: &FeatureSequence,
    opts: DtwOptions,
) -> Result<AlignmentPath> {
    if a.valid_range.is_empty() || b.valid_range.is_empty() {
        return Err(Error::EmptyInput("empty valid range".into()));
    }
    let av = a.valid_frames();
    let bv = b.valid_frames();
    let (pairs, cost) = dtw_matrices(av, bv, opts.band)?;
    let pairs = match opts.mode {
        AlignMode::Full => pairs,
        AlignMode::OneToOne => collapse_one_to_one(&pairs, av, bv),
    };
    Ok(AlignmentPath {
        pairs,
        cost,
        offsets: (a.valid_range.start, b.valid_range.start),
    })
}

fn collapse_one_to_one(
    pairs: &[(usize, usize)],
    a: ArrayView2<'_, f32>,
    b: ArrayView2<'_, f32>,
) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut best = f64::INFINITY;
    for &(t, u) in pairs {
        let d = euclidean(
            a.row(t).to_slice().expect("standard layout"),
            b.row(u).to_slice().expect("standard layout"),
        );
        match out.last_mut() {
            Some(last) if last.0 == t => {
                if d < best {
                    *last = (t, u);
                    best = d;
                }
            }
            _ => {
                out.push((t, u));
                best = d;
            }
        }
    }
    out
}

/// Path pairs shifted into padded-sequence coordinates, addressing encoder
/// output frames directly.
pub fn anchor_positive_pairs(path: &AlignmentPath) -> Vec<(usize, usize)> {
    let (oa, ob) = path.offsets;
    path.pairs.iter().map(|&(t, u)| (t + oa, u + ob)).collect()
}

impl AlignmentPath {
    /// Check monotonicity, unit steps, boundary conditions and coverage for
    /// sequences of `n` and `m` valid frames.
    pub fn check(&self, n: usize, m: usize) -> Result<()> {
        let first = self.pairs.first().ok_or_else(|| Error::EmptyInput("empty path".into()))?;
        if *first != (0, 0) {
            return Err(Error::State(format!("path starts at {first:?}")));
        }
        let last = *self.pairs.last().unwrap();
        if last != (n - 1, m - 1) {
            return Err(Error::State(format!("path ends at {last:?}")));
        }
        for w in self.pairs.windows(2) {
            let (di, dj) = (w[1].0 as isize - w[0].0 as isize, w[1].1 as isize - w[0].1 as isize);
            if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
                return Err(Error::State(format!("illegal step {:?} -> {:?}", w[0], w[1])));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn seq(rows: &[&[f32]]) -> FeatureSequence {
        let d = rows[0].len();
        let data: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        FeatureSequence::new(Array2::from_shape_vec((rows.len(), d), data).unwrap(), 0.01, 0.025)
            .unwrap()
    }

    #[test]
    fn identical_sequences_align_diagonally() {
        let a = seq(&[&[0.0, 1.0], &[2.0, 0.5], &[1.0, 1.0], &[3.0, -1.0], &[0.0, 0.0]]);
        let p = dtw_align(&a, &a).unwrap();
        assert_eq!(p.cost, 0.0);
        assert_eq!(p.pairs, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn single_frame_forces_a_row_path() {
        let a = seq(&[&[1.0]]);
        let b = seq(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let p = dtw_align(&a, &b).unwrap();
        assert_eq!(p.pairs, vec![(0, 0), (0, 1), (0, 2), (0, 3)]);
        assert_eq!(p.cost, 1.0 + 0.0 + 1.0 + 2.0);
        p.check(1, 4).unwrap();
    }

    #[test]
    fn padding_is_excluded_and_offsets_recorded() {
        let a = seq(&[&[9.0], &[1.0], &[2.0], &[9.0]]).with_valid_range(1..3).unwrap();
        let b = seq(&[&[7.0], &[7.0], &[1.0], &[2.0]]).with_valid_range(2..4).unwrap();
        let p = dtw_align(&a, &b).unwrap();
        assert_eq!(p.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(p.offsets, (1, 2));
        assert_eq!(anchor_positive_pairs(&p), vec![(1, 2), (2, 3)]);
    }

    #[test]
    fn empty_valid_range_is_rejected() {
        let a = seq(&[&[1.0], &[2.0]]).with_valid_range(1..1).unwrap();
        assert!(matches!(dtw_align(&a, &a), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn anchor_pairs_apply_asymmetric_offsets() {
        let p = AlignmentPath {
            pairs: vec![(0, 0), (1, 1), (1, 2)],
            cost: 0.0,
            offsets: (5, 8),
        };
        assert_eq!(anchor_positive_pairs(&p), vec![(5, 8), (6, 9), (6, 10)]);
        let zero = AlignmentPath { offsets: (0, 0), ..p.clone() };
        assert_eq!(anchor_positive_pairs(&zero), zero.pairs);
    }

    #[test]
    fn one_to_one_keeps_closest_partner() {
        let a = seq(&[&[0.0], &[5.0]]);
        let b = seq(&[&[0.0], &[4.0], &[5.0], &[6.0]]);
        let full = dtw_align(&a, &b).unwrap();
        assert_eq!(full.pairs, vec![(0, 0), (1, 1), (1, 2), (1, 3)]);
        let one = dtw_align_with(&a, &b, DtwOptions { band: None, mode: AlignMode::OneToOne }).unwrap();
        assert_eq!(one.pairs, vec![(0, 0), (1, 2)]);
    }

    #[test]
    fn wide_band_matches_unbanded() {
        let a = seq(&[&[0.0], &[1.0], &[3.0], &[2.0], &[5.0]]);
        let b = seq(&[&[0.5], &[3.0], &[2.5], &[4.0]]);
        let free = dtw_align(&a, &b).unwrap();
        let banded =
            dtw_align_with(&a, &b, DtwOptions { band: Some(10), mode: AlignMode::Full }).unwrap();
        assert_eq!(free, banded);
    }
}
