use serde::{Deserialize, Serialize};

use super::{kmeans, ClusterAssignment, ClusterError};
use crate::embeddings::{Metric, Vector};
use crate::Scalar;

/// Mean silhouette over non-noise points.
///
/// Points in singleton clusters score 0.
pub fn silhouette<T: Scalar>(points: &[Vector<T>], assignment: &ClusterAssignment, metric: Metric) -> Result<f64, ClusterError> {
    if points.len() != assignment.labels.len() {
        return Err(ClusterError::LengthMismatch { labels: assignment.labels.len(), points: points.len() });
    }
    let idx: Vec<(usize, usize)> = assignment.labels.iter().enumerate().filter_map(|(i, l)| l.map(|c| (i, c))).collect();
    let k = idx.iter().map(|(_, c)| c + 1).max().unwrap_or(0);
    let mut sizes = vec![0usize; k];
    for (_, c) in &idx {
        sizes[*c] += 1;
    }
    let present = sizes.iter().filter(|s| **s > 0).count();
    if present < 2 {
        return Err(ClusterError::TooFewClusters(present));
    }

    let mut total = 0.0;
    for &(i, ci) in &idx {
        if sizes[ci] == 1 {
            continue;
        }
        let mut sums = vec![0.0f64; k];
        for &(j, cj) in &idx {
            if i != j {
                sums[cj] += metric.distance(&points[i], &points[j])?.as_f64();
            }
        }
        let a = sums[ci] / (sizes[ci] - 1) as f64;
        let b = (0..k)
            .filter(|c| *c != ci && sizes[*c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / idx.len() as f64)
}

/// Outcome of a silhouette sweep over a k grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectK {
    pub k: usize,
    pub scores: Vec<(usize, f64)>,
    /// Scores strictly increase or strictly decrease along the grid (three
    /// or more points), so the maximum says little about the true k.
    pub monotone: bool,
}

/// Runs k-means for each k and keeps the best silhouette; ties keep the
/// earlier grid value.
pub fn select_k<T: Scalar>(points: &[Vector<T>], grid: &[usize], metric: Metric, seed: u64) -> Result<SelectK, ClusterError> {
    if grid.is_empty() {
        return Err(ClusterError::EmptyGrid);
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &k in grid {
        let a = kmeans(points, k, metric, seed)?;
        let s = silhouette(points, &a, metric)?;
        scores.push((k, s));
    }
    let mut best = scores[0];
    for s in &scores[1..] {
        if s.1 > best.1 {
            best = *s;
        }
    }
    let monotone = scores.len() >= 3
        && (scores.windows(2).all(|w| w[1].1 > w[0].1) || scores.windows(2).all(|w| w[1].1 < w[0].1));
    Ok(SelectK { k: best.0, scores, monotone })
}
