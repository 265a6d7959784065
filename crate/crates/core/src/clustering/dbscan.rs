use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{relabel, Algorithm, ClusterAssignment, ClusterError};
use crate::embeddings::{Metric, Vector};
use crate::Scalar;

/// DBSCAN over an abstract neighbourhood relation.
///
/// `within(i, j)` must be symmetric; every point is its own neighbour. Core
/// points have at least `min_pts` neighbours. Clusters are grown breadth
/// first from unvisited core points in index order, so a border point
/// reachable from several clusters joins the earliest one.
pub fn dbscan_with<F>(n: usize, min_pts: usize, within: F) -> Vec<Option<usize>>
where
    F: Fn(usize, usize) -> bool,
{
    let mut neighbours: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for i in 0..n {
        for j in i + 1..n {
            if within(i, j) {
                neighbours[i].push(j);
                neighbours[j].push(i);
            }
        }
    }
    for list in &mut neighbours {
        list.sort_unstable();
    }
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbours[p] {
                if labels[q].is_none() {
                    labels[q] = Some(next);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

fn distance_matrix<T: Scalar>(points: &[Vector<T>], metric: Metric) -> Result<Vec<Vec<T>>, ClusterError> {
    let n = points.len();
    let mut d = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = metric.distance(&points[i], &points[j])?;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Density-based clustering; points not density-reachable from a core
/// point are noise.
pub fn dbscan<T: Scalar>(
    points: &[Vector<T>],
    eps: T,
    min_pts: usize,
    metric: Metric,
) -> Result<ClusterAssignment, ClusterError> {
    if !(eps > T::zero()) {
        return Err(ClusterError::Eps(eps.as_f64()));
    }
    if min_pts == 0 {
        return Err(ClusterError::MinPts);
    }
    let d = distance_matrix(points, metric)?;
    let mut labels = dbscan_with(points.len(), min_pts, |i, j| d[i][j] <= eps);
    let k = relabel(&mut labels);
    Ok(ClusterAssignment { labels, k, algorithm: Algorithm::Dbscan, metric, seed: 0 })
}

/// One eps value of a DBSCAN sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSweepRow {
    pub eps: f64,
    pub clusters: usize,
    pub singleton_clusters: usize,
    pub noise: usize,
    pub largest_cluster: usize,
    /// Share of single-sentence groups, counting every noise point as a
    /// group of its own.
    pub singleton_fraction: f64,
}

/// Runs DBSCAN for every eps and reports how fragmented the result is.
pub fn eps_sweep<T: Scalar>(
    points: &[Vector<T>],
    eps_values: &[f64],
    min_pts: usize,
    metric: Metric,
) -> Result<Vec<EpsSweepRow>, ClusterError> {
    if min_pts == 0 {
        return Err(ClusterError::MinPts);
    }
    let d = distance_matrix(points, metric)?;
    eps_values
        .iter()
        .map(|&eps| {
            if !(eps > 0.0) {
                return Err(ClusterError::Eps(eps));
            }
            let e = T::of(eps);
            let mut labels = dbscan_with(points.len(), min_pts, |i, j| d[i][j] <= e);
            let k = relabel(&mut labels);
            let mut sizes = vec![0usize; k];
            for c in labels.iter().flatten() {
                sizes[*c] += 1;
            }
            let noise = labels.iter().filter(|l| l.is_none()).count();
            let singleton_clusters = sizes.iter().filter(|s| **s == 1).count();
            let groups = k + noise;
            Ok(EpsSweepRow {
                eps,
                clusters: k,
                singleton_clusters,
                noise,
                largest_cluster: sizes.iter().copied().max().unwrap_or(0),
                singleton_fraction: if groups == 0 { 0.0 } else { (singleton_clusters + noise) as f64 / groups as f64 },
            })
        })
        .collect()
}
