//! HTTP API over a completed run and its annotation store.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use novelkg_core::corpus::{SentId, Sentence};
use novelkg_core::embeddings::{Embedder, Metric, Vector};
use novelkg_core::entities::{canonicalize, AliasEntry, CharacterId};
use novelkg_core::kg::{GraphFormat, KnowledgeGraph};
use novelkg_core::labeling::{render_names, SummarySource};
use novelkg_core::pipeline::{artifacts, load_run, run_id, PipelineConfig, PipelineError, RunArtifacts, RunReport};
use novelkg_core::provider::{connect, Provider, ProviderSpec};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::classifier::{Classification, ClassifyError, RelationClassifier};
use crate::store::{Annotation, AnnotationStore, Decision, Status, StoreError};

pub const RUN_ID_HEADER: &str = "x-run-id";
pub const DEFAULT_PAGE_SIZE: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Run(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("provider: {0}")]
    Provider(String),
}

/// How to start the service.
#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Annotation store directory; defaults to `<run>/annotations`.
    pub store_dir: Option<PathBuf>,
    /// Directory served for any path the API does not handle.
    pub ui_dir: Option<PathBuf>,
    /// Overrides the run configuration's threshold.
    pub tau: Option<f64>,
    /// Overrides the run configuration's embedding provider.
    pub embedding: Option<ProviderSpec>,
}

enum EmbedBackend {
    Builtin { dim: usize },
    External(Box<dyn Provider>),
    Missing(String),
}

/// Shared state behind the router.
pub struct AppState {
    run_id: String,
    report: RunReport,
    run: RunArtifacts,
    automatic: BTreeMap<usize, String>,
    instance_index: HashMap<String, usize>,
    metric: Metric,
    tau: f64,
    store: Mutex<AnnotationStore>,
    classifier: RwLock<Arc<RelationClassifier>>,
    stale: AtomicBool,
    rebuild: Mutex<()>,
    embedder: Mutex<EmbedBackend>,
}

impl AppState {
    /// Loads a completed run directory.
    pub fn load(run_dir: &Path, options: &ServiceOptions) -> Result<Self, ServiceError> {
        let run = load_run(run_dir)?;
        let run_id = run_id(run_dir)?;
        let config = PipelineConfig::from_toml(&std::fs::read_to_string(run_dir.join(artifacts::CONFIG)).map_err(|e| PipelineError::Config(e.to_string()))?)?;
        let report = novelkg_core::pipeline::stats(run_dir)?;
        let store_dir = options.store_dir.clone().unwrap_or_else(|| run_dir.join("annotations"));
        let store = AnnotationStore::open(&store_dir, &run_id)?;
        let spec = options.embedding.clone().unwrap_or(config.embedding.provider.clone());
        let embedder = match &spec {
            ProviderSpec::Builtin { dim } => EmbedBackend::Builtin { dim: *dim },
            ProviderSpec::None => EmbedBackend::Missing("no embedding provider configured".into()),
            other => match connect(other, &config.providers.connect_options()) {
                Ok(Some(p)) => EmbedBackend::External(p),
                Ok(None) => EmbedBackend::Missing(format!("{other} cannot embed")),
                Err(e) => {
                    log::warn!("embedding provider unavailable: {e}");
                    EmbedBackend::Missing(e.to_string())
                }
            },
        };
        let metric = run.assignment.as_ref().map_or(config.clustering.metric, |a| a.metric);
        let tau = options.tau.unwrap_or(config.classifier.tau);
        let automatic: BTreeMap<usize, String> = run.labels.iter().map(|l| (l.label.cluster_id, l.label.label.clone())).collect();
        let classifier = RelationClassifier::build(&run.clusters, &automatic, store.all(), tau, metric);
        let instance_index = run.instances.iter().enumerate().map(|(i, inst)| (inst.instance_id.clone(), i)).collect();
        Ok(Self {
            run_id,
            report,
            run,
            automatic,
            instance_index,
            metric,
            tau,
            store: Mutex::new(store),
            classifier: RwLock::new(Arc::new(classifier)),
            stale: AtomicBool::new(false),
            rebuild: Mutex::new(()),
            embedder: Mutex::new(embedder),
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Current classifier, rebuilt first if annotations changed since the
    /// last build. Readers keep the previous one until the swap.
    pub fn classifier(&self) -> Arc<RelationClassifier> {
        if self.stale.load(Ordering::Acquire) {
            let _guard = self.rebuild.lock().expect("rebuild lock");
            if self.stale.swap(false, Ordering::AcqRel) {
                let annotations = self.store.lock().expect("store lock").all().clone();
                let fresh = RelationClassifier::build(&self.run.clusters, &self.automatic, &annotations, self.tau, self.metric);
                *self.classifier.write().expect("classifier lock") = Arc::new(fresh);
            }
        }
        self.classifier.read().expect("classifier lock").clone()
    }

    /// Canonicalizes `text` with the run's alias table and embeds it.
    pub fn embed(&self, text: &str) -> Result<(String, Vector<f64>), ApiError> {
        let sentence = Sentence { sent_id: SentId::new("probe", 0), text: text.to_owned(), char_span: 0..text.len() };
        let canonical = canonicalize(&[sentence], &self.run.aliases).remove(0).text;
        let mut backend = self.embedder.lock().expect("embedder lock");
        let mut embedder = match &mut *backend {
            EmbedBackend::Builtin { dim } => Embedder::Builtin { dim: *dim },
            EmbedBackend::External(p) => Embedder::External(p.as_mut()),
            EmbedBackend::Missing(why) => return Err(ApiError::unavailable(format!("embedding provider unavailable: {why}"))),
        };
        let mut vectors = embedder
            .embed_batch::<f64>(std::slice::from_ref(&canonical))
            .map_err(|e| ApiError::unavailable(format!("embedding failed: {e}")))?;
        Ok((canonical, vectors.remove(0)))
    }

    pub fn classify(&self, text: &str) -> Result<(String, Classification), ApiError> {
        let (canonical, vector) = self.embed(text)?;
        let result = self.classifier().classify(&vector).map_err(|e| match e {
            ClassifyError::NoClusters => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            ClassifyError::Vector(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        })?;
        Ok((canonical, result))
    }

    pub fn annotate(&self, cluster_id: usize, request: AnnotationRequest) -> Result<(Annotation, bool), ApiError> {
        let automatic = self.automatic.get(&cluster_id).ok_or_else(|| ApiError::not_found(cluster_id))?;
        let written = {
            let mut store = self.store.lock().expect("store lock");
            store.annotate(cluster_id, request.decision, automatic, request.note, request.version).map_err(|e| match e {
                StoreError::InvalidLabel(_) => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
                other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
            })?
        };
        self.stale.store(true, Ordering::Release);
        Ok((written.annotation, written.conflict))
    }

    fn view(&self, cluster_id: usize) -> Option<ClusterView> {
        let cluster = self.run.clusters.iter().find(|c| c.cluster_id == cluster_id)?;
        let labeled = self.run.labels.iter().find(|l| l.label.cluster_id == cluster_id);
        let annotation = self.store.lock().expect("store lock").get(cluster_id).cloned();
        let members = cluster
            .members
            .iter()
            .filter_map(|id| self.instance_index.get(id).map(|i| &self.run.instances[*i]))
            .map(|inst| MemberView {
                instance_id: inst.instance_id.clone(),
                sent_id: inst.sent_id.to_string(),
                text: inst.full_text.clone(),
                display_text: render_names(&inst.full_text, &self.run.aliases),
                subject: inst.subject,
                object: inst.object,
                symmetric: inst.symmetric,
            })
            .collect();
        Some(ClusterView {
            cluster_id,
            size: cluster.members.len(),
            summary: labeled.map(|l| l.summary.summary_text.clone()).unwrap_or_default(),
            summary_source: labeled.map(|l| l.summary.source),
            automatic_label: self.automatic.get(&cluster_id).cloned().unwrap_or_default(),
            lemmas: labeled.map(|l| l.label.lemmas.clone()).unwrap_or_default(),
            status: annotation.as_ref().map_or(Status::Pending, |a| a.status),
            final_label: annotation.as_ref().map(|a| a.final_label.clone()),
            note: annotation.as_ref().and_then(|a| a.note.clone()),
            version: annotation.as_ref().map_or(0, |a| a.version),
            medoid: cluster.medoid.clone(),
            members,
        })
    }

    fn graph(&self) -> &KnowledgeGraph {
        &self.run.graph
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberView {
    pub instance_id: String,
    pub sent_id: String,
    /// Canonical text with `CHARn` ids.
    pub text: String,
    /// The same text with canonical names.
    pub display_text: String,
    pub subject: CharacterId,
    pub object: CharacterId,
    pub symmetric: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterView {
    pub cluster_id: usize,
    pub size: usize,
    pub summary: String,
    pub summary_source: Option<SummarySource>,
    pub automatic_label: String,
    pub lemmas: Vec<String>,
    pub status: Status,
    pub final_label: Option<String>,
    pub note: Option<String>,
    /// Annotation version; send it back to detect concurrent edits.
    pub version: u64,
    pub medoid: String,
    pub members: Vec<MemberView>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct AnnotationRequest {
    #[serde(flatten)]
    pub decision: Decision,
    #[serde(default)]
    pub note: Option<String>,
    /// Version the client last saw.
    #[serde(default)]
    pub version: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ClassifyRequest {
    pub text: String,
}

#[derive(Debug, Default, Deserialize)]
pub struct ListQuery {
    pub status: Option<String>,
    pub sort: Option<String>,
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
pub struct GraphQuery {
    pub format: Option<String>,
}

/// JSON error body with a status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(cluster_id: usize) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown cluster {cluster_id}"))
    }

    fn unavailable(message: String) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type Shared = Arc<AppState>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn list_clusters(State(state): State<Shared>, Query(q): Query<ListQuery>) -> Result<Json<serde_json::Value>, ApiError> {
    let status: Option<Status> = q.status.as_deref().filter(|s| !s.is_empty()).map(str::parse).transpose().map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let mut views: Vec<ClusterView> = state.run.clusters.iter().filter_map(|c| state.view(c.cluster_id)).collect();
    if let Some(status) = status {
        views.retain(|v| v.status == status);
    }
    match q.sort.as_deref().unwrap_or("cluster_id") {
        "cluster_id" | "" => views.sort_by_key(|v| v.cluster_id),
        "size" => views.sort_by(|a, b| b.size.cmp(&a.size).then(a.cluster_id.cmp(&b.cluster_id))),
        other => return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown sort {other:?} (expected size or cluster_id)"))),
    }
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, 1000);
    let page = q.page.unwrap_or(1).max(1);
    let total = views.len();
    let items: Vec<ClusterView> = views.into_iter().skip((page - 1) * page_size).take(page_size).collect();
    Ok(Json(serde_json::json!({
        "run_id": state.run_id,
        "page": page,
        "page_size": page_size,
        "total": total,
        "clusters": items,
    })))
}

async fn get_cluster(State(state): State<Shared>, UrlPath(id): UrlPath<usize>) -> Result<Json<serde_json::Value>, ApiError> {
    let view = state.view(id).ok_or_else(|| ApiError::not_found(id))?;
    Ok(Json(serde_json::json!({ "run_id": state.run_id, "cluster": view })))
}

async fn post_annotation(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<usize>,
    Json(request): Json<AnnotationRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let s = state.clone();
    let (annotation, conflict) = blocking(move || s.annotate(id, request)).await?;
    let view = state.view(id).ok_or_else(|| ApiError::not_found(id))?;
    Ok(Json(serde_json::json!({
        "run_id": state.run_id,
        "annotation": annotation,
        "conflict": conflict,
        "cluster": view,
    })))
}

async fn post_classify(State(state): State<Shared>, Json(request): Json<ClassifyRequest>) -> Result<Json<serde_json::Value>, ApiError> {
    let s = state.clone();
    let text = request.text.clone();
    let (canonical, result) = blocking(move || s.classify(&text)).await?;
    Ok(Json(serde_json::json!({
        "run_id": state.run_id,
        "text": request.text,
        "canonical_text": canonical,
        "label": result.label,
        "source": result.source,
        "distance": result.distance,
        "cluster_id": result.cluster_id,
    })))
}

async fn get_graph(State(state): State<Shared>, Query(q): Query<GraphQuery>) -> Result<Response, ApiError> {
    let format: GraphFormat = q
        .format
        .as_deref()
        .unwrap_or("json")
        .parse()
        .map_err(|e: novelkg_core::kg::KgError| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(match format {
        GraphFormat::Json => Json(serde_json::json!({ "run_id": state.run_id, "graph": state.graph() })).into_response(),
        other => {
            let content_type = if other == GraphFormat::Dot { "text/vnd.graphviz; charset=utf-8" } else { "text/tab-separated-values; charset=utf-8" };
            ([(header::CONTENT_TYPE, content_type)], novelkg_core::kg::export(state.graph(), other)).into_response()
        }
    })
}

async fn get_report(State(state): State<Shared>) -> Json<RunReport> {
    Json(state.report.clone())
}

async fn get_aliases(State(state): State<Shared>) -> Json<serde_json::Value> {
    let aliases: BTreeMap<CharacterId, AliasEntry> = state.run.aliases.export();
    Json(serde_json::json!({ "run_id": state.run_id, "aliases": aliases }))
}

async fn get_classifier(State(state): State<Shared>) -> Json<serde_json::Value> {
    let c = state.classifier();
    Json(serde_json::json!({
        "run_id": state.run_id,
        "tau": c.tau,
        "metric": c.metric,
        "clusters": c.prototypes.len(),
        "validated": c.validated_count(),
    }))
}

/// Every API route, plus the UI bundle when `ui_dir` is given. All
/// responses carry the run id in the `X-Run-Id` header.
pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let run_id = HeaderValue::from_str(&state.run_id).expect("run ids are hex");
    let mut app = Router::new()
        .route("/clusters", get(list_clusters))
        .route("/clusters/{id}", get(get_cluster))
        .route("/clusters/{id}/annotation", post(post_annotation))
        .route("/classify", post(post_classify))
        .route("/classifier", get(get_classifier))
        .route("/graph", get(get_graph))
        .route("/run/report", get(get_report))
        .route("/aliases", get(get_aliases))
        .with_state(state);
    if let Some(dir) = ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(axum::middleware::map_response(move |mut response: Response| {
        let run_id = run_id.clone();
        async move {
            response.headers_mut().insert(RUN_ID_HEADER, run_id);
            response
        }
    }))
}

/// Serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, ui_dir: Option<&Path>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service for run {} on http://{}", state.run_id, listener.local_addr()?);
    axum::serve(listener, router(state, ui_dir)).await
}
