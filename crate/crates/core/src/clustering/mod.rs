//! Relation-type clustering of sentence vectors.

mod dbscan;
mod kmeans;
mod quality;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use dbscan::{dbscan, dbscan_with, eps_sweep, EpsSweepRow};
pub use kmeans::{kmeans, kmeans_fit, KMeansFit, MAX_ITERATIONS, N_INIT};
pub use quality::{select_k, silhouette, SelectK};

use crate::embeddings::{euclidean_distance, EmbeddedSentence, Metric, Vector, VectorError};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {distinct} distinct points")]
    TooFewPoints { k: usize, distinct: usize },
    #[error("eps must be positive, got {0}")]
    Eps(f64),
    #[error("min_pts must be at least 1")]
    MinPts,
    #[error("silhouette needs at least two clusters, found {0}")]
    TooFewClusters(usize),
    #[error("empty k grid")]
    EmptyGrid,
    #[error("assignment covers {labels} points but {points} were given")]
    LengthMismatch { labels: usize, points: usize },
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Kmeans,
    Dbscan,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Kmeans => "kmeans",
            Algorithm::Dbscan => "dbscan",
        })
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kmeans" => Ok(Algorithm::Kmeans),
            "dbscan" => Ok(Algorithm::Dbscan),
            other => Err(format!("unknown algorithm {other:?} (expected kmeans or dbscan)")),
        }
    }
}

/// Cluster index per point, `None` for noise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<Option<usize>>,
    /// Number of non-noise clusters; indices run `0..k`.
    pub k: usize,
    pub algorithm: Algorithm,
    pub metric: Metric,
    pub seed: u64,
}

impl ClusterAssignment {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for c in self.labels.iter().flatten() {
            sizes[*c] += 1;
        }
        sizes
    }

    /// Export form keyed by instance id; noise is `-1`.
    pub fn record(&self, instance_ids: &[String]) -> Result<AssignmentRecord, ClusterError> {
        if instance_ids.len() != self.labels.len() {
            return Err(ClusterError::LengthMismatch { labels: self.labels.len(), points: instance_ids.len() });
        }
        Ok(AssignmentRecord {
            algorithm: self.algorithm,
            metric: self.metric,
            k: self.k,
            seed: self.seed,
            labels: instance_ids
                .iter()
                .zip(&self.labels)
                .map(|(id, l)| (id.clone(), l.map_or(-1, |c| c as i64)))
                .collect(),
        })
    }

    /// Inverse of [`record`](Self::record) for the given instance order.
    pub fn from_record(record: &AssignmentRecord, instance_ids: &[String]) -> Result<Self, ClusterError> {
        let labels = instance_ids
            .iter()
            .map(|id| match record.labels.get(id) {
                Some(c) if *c >= 0 => Ok(Some(*c as usize)),
                Some(_) => Ok(None),
                None => Err(ClusterError::LengthMismatch { labels: record.labels.len(), points: instance_ids.len() }),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { labels, k: record.k, algorithm: record.algorithm, metric: record.metric, seed: record.seed })
    }
}

/// `{algorithm, metric, k, seed, labels: {instance_id: cluster}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub algorithm: Algorithm,
    pub metric: Metric,
    pub k: usize,
    pub seed: u64,
    pub labels: BTreeMap<String, i64>,
}

/// Renumbers clusters in order of first appearance.
pub(crate) fn relabel(labels: &mut [Option<usize>]) -> usize {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    for l in labels.iter_mut().flatten() {
        let next = map.len();
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

/// Members of one relation type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCluster<T = f64> {
    pub cluster_id: usize,
    pub members: Vec<String>,
    /// Mean of the member vectors.
    pub centroid: Vector<T>,
    /// Member closest to the centroid (Euclidean; first one on ties).
    pub medoid: String,
    /// Vector of the medoid member.
    pub medoid_vector: Vector<T>,
}

impl<T> RelationCluster<T> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Clusters plus the ids left out as noise.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltClusters<T> {
    pub clusters: Vec<RelationCluster<T>>,
    pub noise: Vec<String>,
}

/// Materializes clusters from an assignment aligned with `embedded`.
///
/// The medoid is picked by Euclidean distance to the centroid; for unit
/// vectors this is the same member cosine distance would pick.
pub fn build_clusters<T: Scalar>(
    assignment: &ClusterAssignment,
    embedded: &[EmbeddedSentence<T>],
) -> Result<BuiltClusters<T>, ClusterError> {
    if assignment.labels.len() != embedded.len() {
        return Err(ClusterError::LengthMismatch { labels: assignment.labels.len(), points: embedded.len() });
    }
    let mut groups: Vec<Vec<&EmbeddedSentence<T>>> = vec![Vec::new(); assignment.k];
    let mut noise = Vec::new();
    for (label, e) in assignment.labels.iter().zip(embedded) {
        match label {
            Some(c) if *c < groups.len() => groups[*c].push(e),
            Some(c) => return Err(ClusterError::LengthMismatch { labels: *c + 1, points: assignment.k }),
            None => noise.push(e.instance_id.clone()),
        }
    }
    let mut clusters = Vec::new();
    for (cluster_id, members) in groups.into_iter().enumerate() {
        let Some(centroid) = Vector::mean(members.iter().map(|e| &e.vector)) else {
            continue;
        };
        let mut best: Option<(T, &EmbeddedSentence<T>)> = None;
        for e in &members {
            let d = euclidean_distance(&e.vector, &centroid)?;
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, e));
            }
        }
        let (_, medoid) = best.expect("non-empty cluster");
        clusters.push(RelationCluster {
            cluster_id,
            members: members.iter().map(|e| e.instance_id.clone()).collect(),
            centroid,
            medoid: medoid.instance_id.clone(),
            medoid_vector: medoid.vector.clone(),
        });
    }
    Ok(BuiltClusters { clusters, noise })
}
