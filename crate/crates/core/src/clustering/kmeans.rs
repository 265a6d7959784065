use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{relabel, Algorithm, ClusterAssignment, ClusterError};
use crate::embeddings::{squared_euclidean, Metric, Vector, VectorError};
use crate::Scalar;

pub const MAX_ITERATIONS: usize = 300;
/// Independent seedings per fit.
pub const N_INIT: usize = 10;

/// Full k-means result.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<T> {
    pub assignment: ClusterAssignment,
    /// Final centres, indexed like the relabelled clusters.
    pub centroids: Vec<Vector<T>>,
    /// Within-cluster sum of squares after every assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn distinct_count<T: Scalar>(points: &[Vector<T>]) -> usize {
    points
        .iter()
        .map(|p| p.as_slice().iter().map(|v| v.as_f64().to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

fn nearest<T: Scalar>(p: &Vector<T>, centres: &[Vector<T>]) -> Result<(usize, T), VectorError> {
    let mut best = (0, T::infinity());
    for (c, centre) in centres.iter().enumerate() {
        let d = squared_euclidean(p, centre)?;
        if d < best.1 {
            best = (c, d);
        }
    }
    Ok(best)
}

fn sample_weighted(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let r = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if *w > 0.0 && r < acc {
            return i;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Greedy k-means++: each new centre is the best of `2 + ln k` candidates
/// drawn with probability proportional to squared distance.
fn seed_centres<T: Scalar>(points: &[Vector<T>], k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vector<T>>, VectorError> {
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centres = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut weights: Vec<f64> = points
        .iter()
        .map(|p| squared_euclidean(p, &centres[0]).map(|d| d.as_f64()))
        .collect::<Result<_, _>>()?;
    while centres.len() < k {
        let total: f64 = weights.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 { sample_weighted(&weights, total, rng) } else { rng.gen_range(0..points.len()) };
            let updated: Vec<f64> = points
                .iter()
                .zip(&weights)
                .map(|(p, w)| squared_euclidean(p, &points[pick]).map(|d| d.as_f64().min(*w)))
                .collect::<Result<_, _>>()?;
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, pick, updated));
            }
        }
        let (_, pick, updated) = best.expect("trials >= 2");
        centres.push(points[pick].clone());
        weights = updated;
    }
    Ok(centres)
}

fn assign<T: Scalar>(points: &[Vector<T>], centres: &[Vector<T>]) -> Result<(Vec<usize>, f64), VectorError> {
    let nearest: Vec<(usize, T)> = points.par_iter().map(|p| nearest(p, centres)).collect::<Result<_, _>>()?;
    let objective = nearest.iter().map(|(_, d)| d.as_f64()).sum();
    Ok((nearest.into_iter().map(|(c, _)| c).collect(), objective))
}

fn objective<T: Scalar>(points: &[Vector<T>], labels: &[usize], centres: &[Vector<T>]) -> Result<f64, VectorError> {
    points
        .iter()
        .zip(labels)
        .map(|(p, c)| squared_euclidean(p, &centres[*c]).map(|d| d.as_f64()))
        .sum()
}

/// Recomputes centres, moving the farthest point of the largest cluster into
/// any cluster left empty.
fn update<T: Scalar>(points: &[Vector<T>], labels: &mut [usize], centres: &mut [Vector<T>]) -> Result<(), VectorError> {
    let k = centres.len();
    let recompute = |labels: &[usize], c: usize| Vector::mean(points.iter().zip(labels).filter(|(_, l)| **l == c).map(|(p, _)| p));
    for c in 0..k {
        if let Some(m) = recompute(labels, c) {
            centres[c] = m;
        }
    }
    loop {
        let mut sizes = vec![0usize; k];
        for l in labels.iter() {
            sizes[*l] += 1;
        }
        let Some(empty) = sizes.iter().position(|s| *s == 0) else {
            return Ok(());
        };
        let largest = (0..k).max_by(|a, b| sizes[*a].cmp(&sizes[*b]).then(b.cmp(a))).expect("k >= 1");
        let mut far = (usize::MAX, T::neg_infinity());
        for (i, p) in points.iter().enumerate() {
            if labels[i] == largest {
                let d = squared_euclidean(p, &centres[largest])?;
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        labels[far.0] = empty;
        centres[empty] = points[far.0].clone();
        if let Some(m) = recompute(labels, largest) {
            centres[largest] = m;
        }
    }
}

struct Run<T> {
    labels: Vec<usize>,
    centres: Vec<Vector<T>>,
    history: Vec<f64>,
    iterations: usize,
}

fn lloyd<T: Scalar>(working: &[Vector<T>], k: usize, rng: &mut ChaCha8Rng) -> Result<Run<T>, VectorError> {
    let mut centres = seed_centres(working, k, rng)?;
    let (mut labels, first) = assign(working, &centres)?;
    let mut history = vec![first];
    let mut iterations = 1;
    while iterations < MAX_ITERATIONS {
        update(working, &mut labels, &mut centres)?;
        let after_update = objective(working, &labels, &centres)?;
        let (next, j) = assign(working, &centres)?;
        let prev = *history.last().expect("non-empty");
        let tol = 1e-9 * (1.0 + prev.abs());
        assert!(after_update <= prev + tol, "k-means update step increased the objective: {prev} -> {after_update}");
        assert!(j <= after_update + tol, "k-means assignment step increased the objective: {after_update} -> {j}");
        iterations += 1;
        history.push(j);
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(Run { labels, centres, history, iterations })
}

/// Lloyd's algorithm from k-means++ seeding, run to an exact assignment
/// fixed point or [`MAX_ITERATIONS`]. The best of [`N_INIT`] seedings by
/// final objective is kept; all draw from one generator seeded by `seed`.
///
/// With [`Metric::Cosine`] the points are L2-normalized first. Cluster ids
/// are renumbered by first appearance.
pub fn kmeans_fit<T: Scalar>(points: &[Vector<T>], k: usize, metric: Metric, seed: u64) -> Result<KMeansFit<T>, ClusterError> {
    if k == 0 {
        return Err(ClusterError::ZeroK);
    }
    let working: Vec<Vector<T>> = match metric {
        Metric::Euclidean => points.to_vec(),
        Metric::Cosine => points
            .iter()
            .map(|p| if p.is_zero() { Err(VectorError::ZeroVector) } else { Ok(p.normalized()) })
            .collect::<Result<_, _>>()?,
    };
    let distinct = distinct_count(&working);
    if k > distinct {
        return Err(ClusterError::TooFewPoints { k, distinct });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Run<T>> = None;
    for _ in 0..N_INIT {
        let run = lloyd(&working, k, &mut rng)?;
        let last = |r: &Run<T>| *r.history.last().expect("non-empty");
        if best.as_ref().is_none_or(|b| last(&run) < last(b)) {
            best = Some(run);
        }
    }
    let Run { labels, centres, history, iterations } = best.expect("N_INIT >= 1");

    let mut opt: Vec<Option<usize>> = labels.iter().map(|c| Some(*c)).collect();
    let k_out = relabel(&mut opt);
    let mut order = vec![usize::MAX; k];
    for (old, new) in labels.iter().zip(&opt) {
        order[new.expect("no noise")] = *old;
    }
    let centroids = order.iter().filter(|o| **o != usize::MAX).map(|o| centres[*o].clone()).collect();
    Ok(KMeansFit {
        assignment: ClusterAssignment { labels: opt, k: k_out, algorithm: Algorithm::Kmeans, metric, seed },
        centroids,
        objective: history,
        iterations,
    })
}

pub fn kmeans<T: Scalar>(points: &[Vector<T>], k: usize, metric: Metric, seed: u64) -> Result<ClusterAssignment, ClusterError> {
    kmeans_fit(points, k, metric, seed).map(|f| f.assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pts(raw: &[(f64, f64)]) -> Vec<Vector<f64>> {
        raw.iter().map(|(x, y)| Vector::new(vec![*x, *y]).unwrap()).collect()
    }

    fn wcss(points: &[(f64, f64)], mask: u32) -> f64 {
        let mut total = 0.0;
        for side in [0, 1] {
            let members: Vec<_> = points.iter().enumerate().filter(|(i, _)| (mask >> i) & 1 == side).map(|(_, p)| *p).collect();
            if members.is_empty() {
                return f64::INFINITY;
            }
            let n = members.len() as f64;
            let (cx, cy) = (members.iter().map(|p| p.0).sum::<f64>() / n, members.iter().map(|p| p.1).sum::<f64>() / n);
            total += members.iter().map(|p| (p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sum::<f64>();
        }
        total
    }

    /// Exhaustive search over every 2-partition.
    fn best_partition(points: &[(f64, f64)]) -> Vec<bool> {
        let n = points.len();
        let best = (1u32..(1 << n) - 1)
            .min_by(|a, b| wcss(points, *a).total_cmp(&wcss(points, *b)))
            .unwrap();
        (0..n).map(|i| (best >> i) & 1 == 1).collect()
    }

    fn same_partition(labels: &[Option<usize>], sides: &[bool]) -> bool {
        (0..labels.len()).all(|i| (0..labels.len()).all(|j| (labels[i] == labels[j]) == (sides[i] == sides[j])))
    }

    #[test]
    fn k_one_is_one_cluster() {
        let p = pts(&[(0.0, 0.0), (2.0, 2.0), (4.0, 0.0)]);
        let fit = kmeans_fit(&p, 1, Metric::Euclidean, 7).unwrap();
        assert!(fit.assignment.labels.iter().all(|l| *l == Some(0)));
        assert_eq!(fit.centroids[0].as_slice(), &[2.0, 2.0 / 3.0]);
    }

    #[test]
    fn k_equal_n_gives_singletons() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (5.0, 5.0)]);
        let a = kmeans(&p, 4, Metric::Euclidean, 3).unwrap();
        assert_eq!(a.labels, [Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        let p = pts(&[(1.0, 1.0), (1.0, 1.0), (2.0, 2.0)]);
        assert_eq!(kmeans(&p, 3, Metric::Euclidean, 0), Err(ClusterError::TooFewPoints { k: 3, distinct: 2 }));
        assert_eq!(kmeans(&p, 0, Metric::Euclidean, 0), Err(ClusterError::ZeroK));
    }

    #[test]
    fn two_blobs_match_exhaustive_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<(f64, f64)> = (0..10)
            .map(|i| {
                let cx = if i < 5 { 0.0 } else { 6.0 };
                (cx + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            })
            .collect();
        let a = kmeans(&pts(&raw), 2, Metric::Euclidean, 1).unwrap();
        assert!(same_partition(&a.labels, &best_partition(&raw)));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<Vector<f64>> = (0..60).map(|_| Vector::new(vec![rng.gen(), rng.gen(), rng.gen()]).unwrap()).collect();
        let a = serde_json::to_string(&kmeans(&p, 5, Metric::Cosine, 42).unwrap()).unwrap();
        let b = serde_json::to_string(&kmeans(&p, 5, Metric::Cosine, 42).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..10 {
            let p: Vec<Vector<f64>> = (0..80).map(|_| Vector::new(vec![rng.gen(), rng.gen()]).unwrap()).collect();
            let fit = kmeans_fit(&p, 6, Metric::Euclidean, seed).unwrap();
            for w in fit.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{:?}", fit.objective);
            }
            assert!(fit.iterations <= MAX_ITERATIONS);
            assert_eq!(fit.assignment.sizes().iter().filter(|s| **s == 0).count(), 0);
        }
    }

    #[test]
    fn runs_in_single_precision() {
        let p: Vec<Vector<f32>> = [(0.0, 0.0), (0.1, 0.0), (9.0, 9.0), (9.1, 9.0)]
            .iter()
            .map(|(x, y)| Vector::new(vec![*x, *y]).unwrap())
            .collect();
        let a = kmeans(&p, 2, Metric::Euclidean, 0).unwrap();
        assert_eq!(a.labels, [Some(0), Some(0), Some(1), Some(1)]);
    }

    #[test]
    fn cosine_rejects_zero_vectors() {
        let p = pts(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(matches!(kmeans(&p, 1, Metric::Cosine, 0), Err(ClusterError::Vector(VectorError::ZeroVector))));
    }
}
