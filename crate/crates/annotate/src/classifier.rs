//! Relation classifier built from reviewed clusters.

use std::collections::BTreeMap;

use novelkg_core::clustering::RelationCluster;
use novelkg_core::embeddings::{Metric, Vector, VectorError};
use novelkg_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::store::{Annotation, Status};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifyError {
    #[error("the run has no clusters to classify against")]
    NoClusters,
    #[error(transparent)]
    Vector(#[from] VectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Validated,
    Automatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub source: LabelSource,
    pub distance: f64,
    pub cluster_id: usize,
}

/// A cluster as the classifier sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype<T> {
    pub cluster_id: usize,
    pub automatic_label: String,
    /// Reviewed label for validated and edited clusters.
    pub final_label: Option<String>,
    pub centroid: Vector<T>,
    pub medoid: Vector<T>,
}

/// Nearest reviewed cluster within `tau`, else the nearest cluster's
/// automatic label. A cluster's distance is the smaller of its centroid
/// and medoid distances. Rejected clusters are left out.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationClassifier<T = f64> {
    pub prototypes: Vec<Prototype<T>>,
    pub tau: f64,
    pub metric: Metric,
}

fn distance<T: Scalar>(metric: Metric, u: &Vector<T>, v: &Vector<T>) -> Result<f64, VectorError> {
    if u == v {
        return Ok(0.0);
    }
    metric.distance(u, v).map(|d| d.as_f64())
}

impl<T: Scalar> RelationClassifier<T> {
    /// Pure function of the clusters, automatic labels and annotations.
    pub fn build(
        clusters: &[RelationCluster<T>],
        automatic: &BTreeMap<usize, String>,
        annotations: &BTreeMap<usize, Annotation>,
        tau: f64,
        metric: Metric,
    ) -> Self {
        let prototypes = clusters
            .iter()
            .filter_map(|c| {
                let annotation = annotations.get(&c.cluster_id);
                let final_label = match annotation.map(|a| a.status) {
                    Some(Status::Rejected) => return None,
                    Some(Status::Validated | Status::Edited) => annotation.map(|a| a.final_label.clone()),
                    _ => None,
                };
                Some(Prototype {
                    cluster_id: c.cluster_id,
                    automatic_label: automatic.get(&c.cluster_id).cloned().unwrap_or_else(|| novelkg_core::labeling::UNLABELED.to_owned()),
                    final_label,
                    centroid: c.centroid.clone(),
                    medoid: c.medoid_vector.clone(),
                })
            })
            .collect();
        Self { prototypes, tau, metric }
    }

    pub fn validated_count(&self) -> usize {
        self.prototypes.iter().filter(|p| p.final_label.is_some()).count()
    }

    pub fn classify(&self, v: &Vector<T>) -> Result<Classification, ClassifyError> {
        let mut nearest: Option<(f64, &Prototype<T>)> = None;
        let mut nearest_validated: Option<(f64, &Prototype<T>)> = None;
        for p in &self.prototypes {
            let d = distance(self.metric, v, &p.centroid)?.min(distance(self.metric, v, &p.medoid)?);
            if nearest.is_none_or(|(best, _)| d < best) {
                nearest = Some((d, p));
            }
            if p.final_label.is_some() && nearest_validated.is_none_or(|(best, _)| d < best) {
                nearest_validated = Some((d, p));
            }
        }
        if let Some((d, p)) = nearest_validated.filter(|(d, _)| *d <= self.tau) {
            return Ok(Classification {
                label: p.final_label.clone().expect("validated"),
                source: LabelSource::Validated,
                distance: d,
                cluster_id: p.cluster_id,
            });
        }
        let (d, p) = nearest.ok_or(ClassifyError::NoClusters)?;
        Ok(Classification { label: p.automatic_label.clone(), source: LabelSource::Automatic, distance: d, cluster_id: p.cluster_id })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector<f64> {
        Vector::new(x.to_vec()).unwrap()
    }

    fn cluster(id: usize, centroid: &[f64], medoid: &[f64]) -> RelationCluster<f64> {
        RelationCluster { cluster_id: id, members: vec![format!("m{id}")], centroid: v(centroid), medoid: format!("m{id}"), medoid_vector: v(medoid) }
    }

    fn annotation(id: usize, status: Status, label: &str) -> (usize, Annotation) {
        (id, Annotation { cluster_id: id, status, final_label: label.into(), note: None, timestamp: 0, version: 1 })
    }

    fn fixture() -> (Vec<RelationCluster<f64>>, BTreeMap<usize, String>) {
        let clusters = vec![cluster(0, &[1.0, 0.1], &[1.0, 0.0]), cluster(1, &[0.1, 1.0], &[0.0, 1.0]), cluster(2, &[-1.0, 0.2], &[-1.0, 0.0])];
        let automatic = [(0, "smile"), (1, "look_at"), (2, "walk")].into_iter().map(|(i, l)| (i, l.to_owned())).collect();
        (clusters, automatic)
    }

    #[test]
    fn medoid_hits_at_distance_zero() {
        let (clusters, automatic) = fixture();
        let ann = BTreeMap::from([annotation(0, Status::Validated, "smile")]);
        let c = RelationClassifier::build(&clusters, &automatic, &ann, 0.35, Metric::Cosine);
        let got = c.classify(&v(&[1.0, 0.0])).unwrap();
        assert_eq!(got, Classification { label: "smile".into(), source: LabelSource::Validated, distance: 0.0, cluster_id: 0 });
    }

    #[test]
    fn no_validated_clusters_fall_back_to_automatic() {
        let (clusters, automatic) = fixture();
        let c = RelationClassifier::build(&clusters, &automatic, &BTreeMap::new(), 0.35, Metric::Cosine);
        let got = c.classify(&v(&[1.0, 0.0])).unwrap();
        assert_eq!((got.label.as_str(), got.source, got.distance), ("smile", LabelSource::Automatic, 0.0));
    }

    #[test]
    fn beyond_tau_uses_the_nearest_automatic_label() {
        let (clusters, automatic) = fixture();
        let ann = BTreeMap::from([annotation(0, Status::Edited, "beam_at")]);
        let c = RelationClassifier::build(&clusters, &automatic, &ann, 0.35, Metric::Cosine);
        // 1 - cos(80 degrees) is about 0.83 from cluster 0 and 0.015 from cluster 1
        let probe = v(&[80f64.to_radians().cos(), 80f64.to_radians().sin()]);
        let got = c.classify(&probe).unwrap();
        assert_eq!((got.label.as_str(), got.source, got.cluster_id), ("look_at", LabelSource::Automatic, 1));
        let near = c.classify(&v(&[1.0, 0.05])).unwrap();
        assert_eq!((near.label.as_str(), near.source), ("beam_at", LabelSource::Validated));
    }

    #[test]
    fn rejected_clusters_are_excluded() {
        let (clusters, automatic) = fixture();
        let ann = BTreeMap::from([annotation(2, Status::Rejected, "walk")]);
        let c = RelationClassifier::build(&clusters, &automatic, &ann, 0.35, Metric::Cosine);
        assert_eq!(c.prototypes.len(), 2);
        assert_ne!(c.classify(&v(&[-1.0, 0.0])).unwrap().cluster_id, 2);
    }

    #[test]
    fn zero_tau_needs_an_exact_embedding() {
        let (clusters, automatic) = fixture();
        let ann = BTreeMap::from([annotation(0, Status::Validated, "smile")]);
        let c = RelationClassifier::build(&clusters, &automatic, &ann, 0.0, Metric::Cosine);
        assert_eq!(c.classify(&v(&[1.0, 0.0])).unwrap().source, LabelSource::Validated);
        assert_eq!(c.classify(&v(&[1.0, 1e-3])).unwrap().source, LabelSource::Automatic);
    }

    #[test]
    fn build_is_deterministic_and_errors_are_typed() {
        let (clusters, automatic) = fixture();
        let ann = BTreeMap::from([annotation(1, Status::Validated, "look_at")]);
        let a = RelationClassifier::build(&clusters, &automatic, &ann, 0.35, Metric::Cosine);
        assert_eq!(a, RelationClassifier::build(&clusters, &automatic, &ann, 0.35, Metric::Cosine));
        assert_eq!(a.validated_count(), 1);
        let empty = RelationClassifier::<f64>::build(&[], &automatic, &ann, 0.35, Metric::Cosine);
        assert_eq!(empty.classify(&v(&[1.0, 0.0])), Err(ClassifyError::NoClusters));
        assert!(matches!(a.classify(&v(&[1.0, 0.0, 0.0])), Err(ClassifyError::Vector(_))));
    }
}
