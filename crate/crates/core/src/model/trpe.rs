//! Trajectory-aware relative position bias.
//!
//! Every token carries the centroid trajectory of the joint or corner group
//! it came from. The distance between two tokens is the mean over observed
//! frames of the distance between their centroids; it selects one of a few
//! log-spaced bins, and each attention head learns one scalar per bin.

use serde::{Deserialize, Serialize};

use crate::types::{centroid, distance, Point3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrpeBins {
    /// Ascending upper edges; `edges.len() + 1` bins.
    edges: Vec<f64>,
}

impl TrpeBins {
    /// `bins` bins with edges `first, 2 first, 4 first, ...`.
    pub fn log_spaced(bins: usize, first_edge: f64) -> Self {
        let edges = (0..bins.saturating_sub(1))
            .map(|i| first_edge * 2f64.powi(i as i32))
            .collect();
        Self { edges }
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of edges `<= d`.
    pub fn bin(&self, d: f64) -> usize {
        self.edges.partition_point(|&e| e <= d)
    }
}

/// Centroid of each group of points, per frame.
pub fn group_centroid_trajectories<'a>(
    frames: impl Iterator<Item = &'a [Point3]>,
    groups: &[Vec<usize>],
) -> Vec<Vec<Point3>> {
    let mut out = vec![Vec::new(); groups.len()];
    for frame in frames {
        for (traj, group) in out.iter_mut().zip(groups) {
            let pts: Vec<Point3> = group.iter().map(|&j| frame[j]).collect();
            traj.push(centroid(&pts));
        }
    }
    out
}

pub fn mean_trajectory_distance(a: &[Point3], b: &[Point3]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(p, q)| distance(*p, *q)).sum::<f64>() / n as f64
}

/// Bin of every (query token, key token) pair, row-major. Each trajectory
/// stands for `tokens_per_group` consecutive tokens.
pub fn token_pair_bins(
    query: &[Vec<Point3>],
    key: &[Vec<Point3>],
    tokens_per_group: usize,
    bins: &TrpeBins,
) -> Vec<usize> {
    let group_bins: Vec<Vec<usize>> = query
        .iter()
        .map(|q| key.iter().map(|k| bins.bin(mean_trajectory_distance(q, k))).collect())
        .collect();
    let nk = key.len() * tokens_per_group;
    let mut out = Vec::with_capacity(query.len() * tokens_per_group * nk);
    for row in &group_bins {
        for _ in 0..tokens_per_group {
            for &b in row {
                out.extend(std::iter::repeat_n(b, tokens_per_group));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_edges() {
        let b = TrpeBins::log_spaced(8, 0.5);
        assert_eq!(b.edges(), &[0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        assert_eq!(b.len(), 8);
        assert_eq!(b.bin(0.0), 0);
        assert_eq!(b.bin(10.0), 5);
        assert_eq!(b.bin(8.0), 5);
        assert_eq!(b.bin(1e9), 7);
    }

    #[test]
    fn coincident_and_constant_separation() {
        let bins = TrpeBins::log_spaced(8, 0.5);
        let a: Vec<Point3> = (0..11).map(|t| [t as f64, 0.0, 1.0]).collect();
        assert_eq!(bins.bin(mean_trajectory_distance(&a, &a)), 0);
        let b: Vec<Point3> = a.iter().map(|p| [p[0], p[1] + 10.0, p[2]]).collect();
        let d = mean_trajectory_distance(&a, &b);
        assert!((d - 10.0).abs() < 1e-12);
        let k = bins.bin(d);
        assert!(bins.edges()[k - 1] <= 10.0 && 10.0 < bins.edges()[k]);
    }

    #[test]
    fn monotone_binning() {
        let bins = TrpeBins::log_spaced(8, 0.5);
        let mut last = 0;
        for i in 0..1000 {
            let b = bins.bin(i as f64 * 0.05);
            assert!(b >= last);
            last = b;
        }
    }

    fn bisect_oracle(edges: &[f64], d: f64) -> usize {
        let (mut lo, mut hi) = (0usize, edges.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if edges[mid] <= d {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn pair_bins_match_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bins = TrpeBins::log_spaced(8, 0.5);
        for _ in 0..50 {
            let frames = rng.random_range(1..12);
            let mut traj = |n: usize| -> Vec<Vec<Point3>> {
                (0..n)
                    .map(|_| {
                        (0..frames)
                            .map(|_| [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0])
                            .collect()
                    })
                    .collect()
            };
            let (q, k) = (traj(3), traj(4));
            let l = 2;
            let got = token_pair_bins(&q, &k, l, &bins);
            assert_eq!(got.len(), 3 * l * 4 * l);
            for i in 0..3 * l {
                for j in 0..4 * l {
                    let (qa, kb) = (&q[i / l], &k[j / l]);
                    let mut total = 0.0;
                    for t in 0..frames {
                        let d: f64 = (0..3).map(|c| (qa[t][c] - kb[t][c]).powi(2)).sum();
                        total += d.sqrt();
                    }
                    let expect = bisect_oracle(bins.edges(), total / frames as f64);
                    assert_eq!(got[i * 4 * l + j], expect);
                }
            }
        }
    }
}
