//! Lloyd's k-means (squared Euclidean) for the coarse and product quantizers.

use rand::seq::index::sample;

use crate::rng::Rng;

pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn nearest(x: &[f32], centroids: &[f32], dim: usize) -> usize {
    let mut best = (0, f32::INFINITY);
    for (c, cent) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(x, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Train `k` centroids on row-major `points` of width `dim`. Returns the
/// flattened centroids and each point's assignment.
pub(crate) fn kmeans(points: &[f32], dim: usize, k: usize, iters: usize, rng: &mut Rng) -> (Vec<f32>, Vec<usize>) {
    let n = points.len() / dim;
    assert!(n >= k && k > 0, "k-means needs at least k points");
    let mut centroids: Vec<f32> = sample(rng, n, k)
        .into_iter()
        .flat_map(|i| points[i * dim..(i + 1) * dim].to_vec())
        .collect();
    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        let mut changed = false;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let c = nearest(p, &centroids, dim);
            if c != assign[i] {
                changed = true;
                assign[i] = c;
            }
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * dim..(assign[i] + 1) * dim].iter_mut().zip(p) {
                *s += *v as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster with the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a * dim..(a + 1) * dim], &centroids[assign[a] * dim..(assign[a] + 1) * dim]);
                        let db = sq_dist(&points[b * dim..(b + 1) * dim], &centroids[assign[b] * dim..(assign[b] + 1) * dim]);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[far * dim..(far + 1) * dim]);
                assign[far] = c;
                changed = true;
                continue;
            }
            for j in 0..dim {
                centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
            }
        }
        if !changed {
            break;
        }
    }
    for (i, p) in points.chunks_exact(dim).enumerate() {
        assign[i] = nearest(p, &centroids, dim);
    }
    (centroids, assign)
}
