//! Human review of relation clusters and the classifier built from it.
//!
//! [`store`] persists annotations, [`classifier`] turns validated clusters
//! into a nearest-prototype relation classifier, and [`service`] exposes
//! both over HTTP next to the run's artifacts.

pub mod classifier;
pub mod service;
pub mod store;

pub use classifier::{Classification, LabelSource, RelationClassifier};
pub use service::{router, serve, AppState, ServiceOptions};
pub use store::{Annotation, AnnotationStore, Decision, Status};
