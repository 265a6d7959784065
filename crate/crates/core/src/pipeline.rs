//! End-to-end extraction runs: configuration, stages, artifacts and reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{
    build_clusters, dbscan, eps_sweep, kmeans, select_k, Algorithm, AssignmentRecord, ClusterAssignment, EpsSweepRow,
    RelationCluster, SelectK,
};
use crate::corpus::{load_corpus, sentence_table, Sentence};
use crate::embeddings::{EmbeddedSentence, Embedder, Metric, Vector, DEFAULT_HASH_DIM};
use crate::entities::{
    apply_overrides, canonicalize, dealias, detect_mentions, parse_overrides, AliasEntry, AliasTable, CanonicalSentence,
    DealiasConfig, Gazetteer, Mention, PersonTagger,
};
use crate::kg::{build_graph, to_dot, to_json, to_tsv, KnowledgeGraph};
use crate::labeling::{label_clusters, write_labels_tsv, ClusterSummary, RelationLabel};
use crate::provider::{connect, ConnectOptions, Provider, ProviderError, ProviderSpec};
use crate::relations::{expand_all, find_relational, RelationalInstance};

/// Artifact file names inside an output directory.
pub mod artifacts {
    pub const CONFIG: &str = "config.toml";
    pub const SENTENCES_TSV: &str = "sentences.tsv";
    pub const SENTENCES: &str = "sentences.jsonl";
    pub const MENTIONS: &str = "mentions.jsonl";
    pub const ALIASES: &str = "aliases.json";
    pub const SURFACE_COUNTS: &str = "surface_counts.json";
    pub const CANONICAL: &str = "canonical.jsonl";
    pub const INSTANCES: &str = "instances.jsonl";
    pub const EMBEDDINGS: &str = "embeddings.jsonl";
    pub const ASSIGNMENT: &str = "assignment.json";
    pub const CLUSTERS: &str = "clusters.json";
    pub const DIAGNOSTICS: &str = "diagnostics.json";
    pub const LABELS_TSV: &str = "labels.tsv";
    pub const LABELS: &str = "labels.json";
    pub const GRAPH_JSON: &str = "graph.json";
    pub const GRAPH_TSV: &str = "graph.tsv";
    pub const GRAPH_DOT: &str = "graph.dot";
    pub const REPORT: &str = "report.json";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Corpus,
    Entities,
    Relations,
    Embeddings,
    Clustering,
    Labeling,
    Kg,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Corpus,
        Stage::Entities,
        Stage::Relations,
        Stage::Embeddings,
        Stage::Clustering,
        Stage::Labeling,
        Stage::Kg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Entities => "entities",
            Stage::Relations => "relations",
            Stage::Embeddings => "embeddings",
            Stage::Clustering => "clustering",
            Stage::Labeling => "labeling",
            Stage::Kg => "kg",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<_> = Stage::ALL.iter().map(|st| st.name()).collect();
            format!("unknown stage {s:?} (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("stage {stage}: provider failure: {source}")]
    Provider {
        stage: Stage,
        #[source]
        source: ProviderError,
    },
}

impl PipelineError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Stage { .. } => 2,
            PipelineError::Provider { .. } => 3,
        }
    }

    fn stage(stage: Stage, e: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        PipelineError::Stage { stage, source: e.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MentionsConfig {
    /// Person tagger; `none` uses capitalization plus a gazetteer.
    pub tagger: ProviderSpec,
    /// Names always treated as persons.
    pub gazetteer: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: ProviderSpec,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { provider: ProviderSpec::Builtin { dim: DEFAULT_HASH_DIM } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub algorithm: Algorithm,
    pub k: usize,
    pub eps: f64,
    pub min_pts: usize,
    pub metric: Metric,
    pub seed: u64,
    /// Candidate k values for silhouette selection; empty skips selection.
    pub k_grid: Vec<usize>,
    /// DBSCAN radii to report in the diagnostics; empty skips the sweep.
    pub eps_sweep: Vec<f64>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Kmeans,
            k: 200,
            eps: 0.5,
            min_pts: 2,
            metric: Metric::Cosine,
            seed: 0,
            k_grid: Vec::new(),
            eps_sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummarizationConfig {
    /// `none` and `builtin` summarize with the cluster medoid.
    pub provider: ProviderSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Largest cosine distance at which a validated cluster claims a sentence.
    pub tau: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { tau: 0.35 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderOptions {
    pub timeout_secs: u64,
    pub max_batch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for ProviderOptions {
    fn default() -> Self {
        Self { timeout_secs: 120, max_batch: 64, cache_dir: None }
    }
}

impl ProviderOptions {
    pub fn connect_options(&self) -> ConnectOptions {
        ConnectOptions {
            timeout: Duration::from_secs(self.timeout_secs),
            cache_dir: self.cache_dir.clone(),
            max_batch: self.max_batch,
        }
    }
}

/// Everything a run depends on. The output directory is not written back
/// to `config.toml`, so runs into different directories stay identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    /// `surface<TAB>CHARn` lines applied after dealiasing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias_overrides: Option<PathBuf>,
    #[serde(default)]
    pub mentions: MentionsConfig,
    #[serde(default)]
    pub dealias: DealiasConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub summarization: SummarizationConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub providers: ProviderOptions,
}

impl PipelineConfig {
    pub fn new(inputs: Vec<PathBuf>) -> Self {
        Self {
            inputs,
            output: None,
            alias_overrides: None,
            mentions: MentionsConfig::default(),
            dealias: DealiasConfig::default(),
            embedding: EmbeddingConfig::default(),
            clustering: ClusteringConfig::default(),
            summarization: SummarizationConfig::default(),
            classifier: ClassifierConfig::default(),
            providers: ProviderOptions::default(),
        }
    }

    /// Parses TOML. Relative paths are kept as written.
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.inputs.iter_mut().for_each(resolve);
        config.output.iter_mut().for_each(resolve);
        config.alias_overrides.iter_mut().for_each(resolve);
        config.providers.cache_dir.iter_mut().for_each(resolve);
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, PipelineError> {
        toml::to_string(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.inputs.is_empty() {
            return bad("no input files".into());
        }
        self.dealias.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.embedding.provider == ProviderSpec::None {
            return bad("an embedding provider is required".into());
        }
        let c = &self.clustering;
        match c.algorithm {
            Algorithm::Kmeans if c.k == 0 => return bad("clustering.k must be at least 1".into()),
            Algorithm::Dbscan if !(c.eps > 0.0 && c.eps.is_finite()) => {
                return bad(format!("clustering.eps must be positive, got {}", c.eps))
            }
            _ => {}
        }
        if c.min_pts == 0 {
            return bad("clustering.min_pts must be at least 1".into());
        }
        if let Some(k) = c.k_grid.iter().find(|k| **k < 2) {
            return bad(format!("clustering.k_grid entries must be at least 2, got {k}"));
        }
        if let Some(e) = c.eps_sweep.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return bad(format!("clustering.eps_sweep entries must be positive, got {e}"));
        }
        if !(self.classifier.tau >= 0.0 && self.classifier.tau.is_finite()) {
            return bad(format!("classifier.tau must be non-negative, got {}", self.classifier.tau));
        }
        if self.providers.max_batch == 0 || self.providers.timeout_secs == 0 {
            return bad("providers.max_batch and providers.timeout_secs must be positive".into());
        }
        Ok(())
    }
}

/// What the clustering stage decided and why.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub k_configured: usize,
    pub select_k: Option<SelectK>,
    pub eps_sweep: Vec<EpsSweepRow>,
    pub warnings: Vec<String>,
}

/// One row of `labels.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCluster {
    pub summary: ClusterSummary,
    pub label: RelationLabel,
}

/// Totals of a run, mirroring the quantities reported for the method.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub summary: String,
    pub documents: usize,
    pub sentences: usize,
    pub mentions: usize,
    pub characters: usize,
    pub relational_sentences: usize,
    pub symmetric_sentences: usize,
    pub asymmetric_sentences: usize,
    /// Directed instances after symmetric expansion.
    pub instances: usize,
    pub algorithm: Option<Algorithm>,
    pub metric: Option<Metric>,
    pub seed: u64,
    pub clusters: usize,
    pub singleton_clusters: usize,
    /// Single-sentence clusters plus noise points over clusters plus noise.
    pub singleton_fraction: f64,
    pub largest_cluster: usize,
    pub noise: usize,
    pub unlabeled_clusters: usize,
    pub edges: usize,
    pub graph_weight: usize,
    pub components: usize,
    pub select_k: Option<SelectK>,
    pub eps_sweep: Vec<EpsSweepRow>,
    pub warnings: Vec<String>,
}

/// Everything a run produced, in memory.
#[derive(Debug, Default)]
pub struct RunArtifacts {
    pub sentences: Vec<Sentence>,
    pub mentions: Vec<Mention>,
    pub aliases: AliasTable,
    pub canonical: Vec<CanonicalSentence>,
    pub instances: Vec<RelationalInstance>,
    pub embedded: Vec<EmbeddedSentence<f64>>,
    pub assignment: Option<ClusterAssignment>,
    pub clusters: Vec<RelationCluster<f64>>,
    pub diagnostics: Diagnostics,
    pub labels: Vec<LabeledCluster>,
    pub graph: KnowledgeGraph,
}

fn write_artifact(dir: &Path, stage: Stage, name: &str, content: &str) -> Result<(), PipelineError> {
    fs::write(dir.join(name), content).map_err(|e| PipelineError::stage(stage, format!("writing {name}: {e}")))
}

fn read_artifact(dir: &Path, stage: Stage, name: &str) -> Result<String, PipelineError> {
    fs::read_to_string(dir.join(name))
        .map_err(|e| PipelineError::stage(stage, format!("missing artifact {}: {e}", dir.join(name).display())))
}

fn json_pretty<T: Serialize>(stage: Stage, value: &T) -> Result<String, PipelineError> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| PipelineError::stage(stage, e))
}

fn jsonl<T: Serialize>(stage: Stage, items: &[T]) -> Result<String, PipelineError> {
    crate::jsonl::to_string(items).map_err(|e| PipelineError::stage(stage, e))
}

fn parse_json<T: serde::de::DeserializeOwned>(stage: Stage, name: &str, text: &str) -> Result<T, PipelineError> {
    serde_json::from_str(text).map_err(|e| PipelineError::stage(stage, format!("{name}: {e}")))
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(stage: Stage, name: &str, text: &str) -> Result<Vec<T>, PipelineError> {
    crate::jsonl::read(text.as_bytes()).map_err(|e| PipelineError::stage(stage, format!("{name}: {e}")))
}

struct ProviderTagger<'a>(&'a mut dyn Provider);

impl PersonTagger for ProviderTagger<'_> {
    fn tag_persons(&mut self, text: &str) -> Result<Vec<std::ops::Range<usize>>, ProviderError> {
        self.0.tag(text)
    }
}

fn connect_provider(stage: Stage, spec: &ProviderSpec, config: &PipelineConfig) -> Result<Option<Box<dyn Provider>>, PipelineError> {
    connect(spec, &config.providers.connect_options()).map_err(|source| PipelineError::Provider { stage, source })
}

fn stage_corpus(config: &PipelineConfig, dir: &Path, st: &mut RunArtifacts) -> Result<(), PipelineError> {
    let corpus = load_corpus(&config.inputs).map_err(|e| PipelineError::stage(Stage::Corpus, e))?;
    st.sentences = corpus.sentences();
    write_artifact(dir, Stage::Corpus, artifacts::SENTENCES_TSV, &sentence_table(&st.sentences))?;
    write_artifact(dir, Stage::Corpus, artifacts::SENTENCES, &jsonl(Stage::Corpus, &st.sentences)?)
}

/// Without a tagger, names seen mid-clause in a first pass are added to the
/// gazetteer so that clause-initial occurrences are found in a second pass.
fn detect_all(config: &PipelineConfig, sentences: &[Sentence]) -> Result<Vec<Mention>, PipelineError> {
    const STAGE: Stage = Stage::Entities;
    let provider_failure = |source| PipelineError::Provider { stage: STAGE, source };
    if let Some(mut provider) = connect_provider(STAGE, &config.mentions.tagger, config)? {
        let mut tagger = ProviderTagger(provider.as_mut());
        let mut out = Vec::new();
        for s in sentences {
            out.extend(detect_mentions(s, None, Some(&mut tagger)).map_err(provider_failure)?);
        }
        return Ok(out);
    }
    let pass = |gazetteer: &Gazetteer| -> Result<Vec<Mention>, PipelineError> {
        let per_sentence: Vec<Vec<Mention>> = sentences
            .par_iter()
            .map(|s| detect_mentions(s, Some(gazetteer), None))
            .collect::<Result<_, _>>()
            .map_err(provider_failure)?;
        Ok(per_sentence.into_iter().flatten().collect())
    };
    let mut gazetteer = Gazetteer::new(&config.mentions.gazetteer);
    let first = pass(&gazetteer)?;
    gazetteer.extend(first.iter().map(|m| m.surface.as_str()));
    pass(&gazetteer)
}

fn stage_entities(config: &PipelineConfig, dir: &Path, st: &mut RunArtifacts) -> Result<(), PipelineError> {
    const STAGE: Stage = Stage::Entities;
    st.mentions = detect_all(config, &st.sentences)?;
    st.aliases = dealias(&st.mentions, &config.dealias);
    if let Some(path) = &config.alias_overrides {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::stage(STAGE, format!("{}: {e}", path.display())))?;
        let overrides = parse_overrides(&text).map_err(|e| PipelineError::stage(STAGE, e))?;
        apply_overrides(&mut st.aliases, &overrides);
    }
    st.canonical = canonicalize(&st.sentences, &st.aliases);
    write_artifact(dir, STAGE, artifacts::MENTIONS, &jsonl(STAGE, &st.mentions)?)?;
    write_artifact(dir, STAGE, artifacts::ALIASES, &json_pretty(STAGE, &st.aliases.export())?)?;
    write_artifact(dir, STAGE, artifacts::SURFACE_COUNTS, &json_pretty(STAGE, &st.aliases.frequency)?)?;
    write_artifact(dir, STAGE, artifacts::CANONICAL, &jsonl(STAGE, &st.canonical)?)
}

fn stage_relations(dir: &Path, st: &mut RunArtifacts) -> Result<(), PipelineError> {
    st.instances = expand_all(&find_relational(&st.canonical));
    if st.instances.is_empty() {
        log::warn!("no relational sentences found");
    }
    write_artifact(dir, Stage::Relations, artifacts::INSTANCES, &jsonl(Stage::Relations, &st.instances)?)
}

fn stage_embeddings(config: &PipelineConfig, dir: &Path, st: &mut RunArtifacts) -> Result<(), PipelineError> {
    const STAGE: Stage = Stage::Embeddings;
    let texts: Vec<String> = st.instances.iter().map(|i| i.full_text.clone()).collect();
    let mut connection = connect_provider(STAGE, &config.embedding.provider, config)?;
    let mut embedder = match (&config.embedding.provider, connection.as_deref_mut()) {
        (_, Some(p)) => Embedder::External(p),
        (ProviderSpec::Builtin { dim }, None) => Embedder::Builtin { dim: *dim },
        (spec, None) => return Err(PipelineError::Config(format!("embedding provider {spec} cannot embed"))),
    };
    let vectors = embedder.embed_batch::<f64>(&texts).map_err(|e| match e {
        crate::embeddings::EmbedError::Provider { source, .. } => PipelineError::Provider { stage: STAGE, source },
        other => PipelineError::stage(STAGE, other),
    })?;
    st.embedded = st
        .instances
        .iter()
        .zip(vectors)
        .map(|(i, vector)| EmbeddedSentence { instance_id: i.instance_id.clone(), vector })
        .collect();
    write_artifact(dir, STAGE, artifacts::EMBEDDINGS, &jsonl(STAGE, &st.embedded)?)
}

fn distinct_points(points: &[Vector<f64>], metric: Metric) -> usize {
    let key = |v: &Vector<f64>| -> Vec<u64> {
        let v = if metric == Metric::Cosine && !v.is_zero() { v.normalized() } else { v.clone() };
        v.as_slice().iter().map(|x| x.to_bits()).collect()
    };
    points.iter().map(key).collect::<HashSet<_>>().len()
}

fn stage_clustering(config: &PipelineConfig, dir: &Path, st: &mut RunArtifacts) -> Result<(), PipelineError> {
    const STAGE: Stage = Stage::Clustering;
    let c = &config.clustering;
    let fail = |e| PipelineError::stage(STAGE, e);
    let points: Vec<Vector<f64>> = st.embedded.iter().map(|e| e.vector.clone()).collect();
    let mut diagnostics = Diagnostics { k_configured: c.k, ..Default::default() };

    let assignment = if points.is_empty() {
        ClusterAssignment { labels: Vec::new(), k: 0, algorithm: c.algorithm, metric: c.metric, seed: c.seed }
    } else {
        if !c.eps_sweep.is_empty() {
            diagnostics.eps_sweep = eps_sweep(&points, &c.eps_sweep, c.min_pts, c.metric).map_err(fail)?;
        }
        match c.algorithm {
            Algorithm::Kmeans => {
                let distinct = distinct_points(&points, c.metric);
                let mut k = c.k;
                if k > distinct {
                    diagnostics.warnings.push(format!("k = {k} exceeds the {distinct} distinct points; using k = {distinct}"));
                    k = distinct;
                }
                let grid: Vec<usize> = c.k_grid.iter().copied().filter(|g| *g <= distinct).collect();
                if grid.len() < c.k_grid.len() {
                    diagnostics.warnings.push(format!("k grid entries above {distinct} distinct points were skipped"));
                }
                if !grid.is_empty() {
                    let selection = select_k(&points, &grid, c.metric, c.seed).map_err(fail)?;
                    if selection.monotone {
                        diagnostics.warnings.push(format!(
                            "silhouette scores are monotone across the k grid; keeping the configured k = {k}"
                        ));
                    } else {
                        k = selection.k;
                    }
                    diagnostics.select_k = Some(selection);
                }
                kmeans(&points, k, c.metric, c.seed).map_err(fail)?
            }
            Algorithm::Dbscan => {
                let mut a = dbscan(&points, c.eps, c.min_pts, c.metric).map_err(fail)?;
                a.seed = c.seed;
                a
            }
        }
    };
    let built = build_clusters(&assignment, &st.embedded).map_err(fail)?;
    let (singletons, fraction) = singleton_share(&assignment);
    if assignment.k > 0 && fraction > 0.5 {
        diagnostics.warnings.push(format!(
            "number of single-sentence clusters is high: {singletons} singleton clusters and {} noise points",
            assignment.noise_count()
        ));
    }
    for w in &diagnostics.warnings {
        log::warn!("{w}");
    }
    let ids: Vec<String> = st.instances.iter().map(|i| i.instance_id.clone()).collect();
    let record = assignment.record(&ids).map_err(fail)?;
    write_artifact(dir, STAGE, artifacts::ASSIGNMENT, &json_pretty(STAGE, &record)?)?;
    write_artifact(dir, STAGE, artifacts::CLUSTERS, &json_pretty(STAGE, &built.clusters)?)?;
    write_artifact(dir, STAGE, artifacts::DIAGNOSTICS, &json_pretty(STAGE, &diagnostics)?)?;
    st.assignment = Some(assignment);
    st.clusters = built.clusters;
    st.diagnostics = diagnostics;
    Ok(())
}

/// Singleton clusters, and the share of singletons plus noise among
/// clusters plus noise.
fn singleton_share(assignment: &ClusterAssignment) -> (usize, f64) {
    let sizes = assignment.sizes();
    let singletons = sizes.iter().filter(|s| **s == 1).count();
    let noise = assignment.noise_count();
    let denominator = sizes.len() + noise;
    let fraction = if denominator == 0 { 0.0 } else { (singletons + noise) as f64 / denominator as f64 };
    (singletons, fraction)
}

fn stage_labeling(config: &PipelineConfig, dir: &Path, st: &mut RunArtifacts) -> Result<(), PipelineError> {
    const STAGE: Stage = Stage::Labeling;
    let mut provider = connect_provider(STAGE, &config.summarization.provider, config)?;
    let rows = label_clusters(&st.clusters, &st.instances, provider.as_deref_mut());
    let mut tsv = Vec::new();
    write_labels_tsv(&mut tsv, &rows).map_err(|e| PipelineError::stage(STAGE, e))?;
    st.labels = rows.into_iter().map(|(summary, label)| LabeledCluster { summary, label }).collect();
    write_artifact(dir, STAGE, artifacts::LABELS_TSV, &String::from_utf8_lossy(&tsv))?;
    write_artifact(dir, STAGE, artifacts::LABELS, &json_pretty(STAGE, &st.labels)?)
}

fn stage_kg(dir: &Path, st: &mut RunArtifacts) -> Result<(), PipelineError> {
    const STAGE: Stage = Stage::Kg;
    let labels: BTreeMap<usize, String> = st.labels.iter().map(|l| (l.label.cluster_id, l.label.label.clone())).collect();
    let assignment = st.assignment.as_ref().ok_or_else(|| PipelineError::stage(STAGE, "no cluster assignment"))?;
    let built = build_graph(&st.instances, assignment, &labels, &st.aliases).map_err(|e| PipelineError::stage(STAGE, e))?;
    st.graph = built.graph;
    write_artifact(dir, STAGE, artifacts::GRAPH_JSON, &to_json(&st.graph))?;
    write_artifact(dir, STAGE, artifacts::GRAPH_TSV, &to_tsv(&st.graph))?;
    write_artifact(dir, STAGE, artifacts::GRAPH_DOT, &to_dot(&st.graph))
}

/// Loads what `stage` wrote into `st`.
fn load_stage(dir: &Path, stage: Stage, st: &mut RunArtifacts) -> Result<(), PipelineError> {
    use artifacts::*;
    let read = |name| read_artifact(dir, stage, name);
    match stage {
        Stage::Corpus => st.sentences = parse_jsonl(stage, SENTENCES, &read(SENTENCES)?)?,
        Stage::Entities => {
            st.mentions = parse_jsonl(stage, MENTIONS, &read(MENTIONS)?)?;
            let export: BTreeMap<crate::entities::CharacterId, AliasEntry> = parse_json(stage, ALIASES, &read(ALIASES)?)?;
            let counts = parse_json(stage, SURFACE_COUNTS, &read(SURFACE_COUNTS)?)?;
            st.aliases = AliasTable::from_export(export, counts);
            st.canonical = parse_jsonl(stage, CANONICAL, &read(CANONICAL)?)?;
        }
        Stage::Relations => st.instances = parse_jsonl(stage, INSTANCES, &read(INSTANCES)?)?,
        Stage::Embeddings => st.embedded = parse_jsonl(stage, EMBEDDINGS, &read(EMBEDDINGS)?)?,
        Stage::Clustering => {
            let record: AssignmentRecord = parse_json(stage, ASSIGNMENT, &read(ASSIGNMENT)?)?;
            let ids: Vec<String> = st.instances.iter().map(|i| i.instance_id.clone()).collect();
            let assignment = ClusterAssignment::from_record(&record, &ids).map_err(|e| PipelineError::stage(stage, e))?;
            st.assignment = Some(assignment);
            st.clusters = parse_json(stage, CLUSTERS, &read(CLUSTERS)?)?;
            st.diagnostics = parse_json(stage, DIAGNOSTICS, &read(DIAGNOSTICS)?)?;
        }
        Stage::Labeling => st.labels = parse_json(stage, LABELS, &read(LABELS)?)?,
        Stage::Kg => {
            st.graph = KnowledgeGraph::from_json(&read(GRAPH_JSON)?).map_err(|e| PipelineError::stage(stage, e))?;
        }
    }
    Ok(())
}

/// Runs every stage from `from` on, loading earlier stages' artifacts from
/// the output directory. Artifacts of completed stages stay on disk when a
/// later stage fails.
pub fn run(config: &PipelineConfig, from: Stage) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let dir = config.output.as_deref().ok_or_else(|| PipelineError::Config("no output directory".into()))?;
    fs::create_dir_all(dir).map_err(|e| PipelineError::Config(format!("cannot create {}: {e}", dir.display())))?;
    write_artifact(dir, from, artifacts::CONFIG, &config.to_toml()?)?;

    let mut st = RunArtifacts::default();
    for stage in Stage::ALL {
        if stage < from {
            load_stage(dir, stage, &mut st)?;
            continue;
        }
        log::info!("stage {stage}");
        match stage {
            Stage::Corpus => stage_corpus(config, dir, &mut st)?,
            Stage::Entities => stage_entities(config, dir, &mut st)?,
            Stage::Relations => stage_relations(dir, &mut st)?,
            Stage::Embeddings => stage_embeddings(config, dir, &mut st)?,
            Stage::Clustering => stage_clustering(config, dir, &mut st)?,
            Stage::Labeling => stage_labeling(config, dir, &mut st)?,
            Stage::Kg => stage_kg(dir, &mut st)?,
        }
    }
    let report = report(dir, &st)?;
    write_artifact(dir, Stage::Kg, artifacts::REPORT, &json_pretty(Stage::Kg, &report)?)?;
    Ok(report)
}

/// Loads every artifact of a completed run.
pub fn load_run(dir: &Path) -> Result<RunArtifacts, PipelineError> {
    let mut st = RunArtifacts::default();
    for stage in Stage::ALL {
        load_stage(dir, stage, &mut st)?;
    }
    Ok(st)
}

/// Recomputes the report of a completed run from its artifacts.
pub fn stats(dir: &Path) -> Result<RunReport, PipelineError> {
    report(dir, &load_run(dir)?)
}

/// Short digest of the configuration, instances and assignment.
pub fn run_id(dir: &Path) -> Result<String, PipelineError> {
    let mut hasher = Sha256::new();
    for name in [artifacts::CONFIG, artifacts::INSTANCES, artifacts::ASSIGNMENT] {
        hasher.update(read_artifact(dir, Stage::Kg, name)?.as_bytes());
        hasher.update([0u8]);
    }
    Ok(hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
}

fn report(dir: &Path, st: &RunArtifacts) -> Result<RunReport, PipelineError> {
    let documents = st.sentences.iter().map(|s| &s.sent_id.doc_id).collect::<HashSet<_>>().len();
    let relational: BTreeMap<_, bool> = st.instances.iter().map(|i| (&i.sent_id, i.symmetric)).collect();
    let symmetric = relational.values().filter(|s| **s).count();
    let mut warnings = Vec::new();
    if st.instances.is_empty() {
        warnings.push("no relational sentences found; the graph is empty".to_owned());
    }
    warnings.extend(st.diagnostics.warnings.iter().cloned());

    let (algorithm, metric, seed, sizes, noise, fraction) = match &st.assignment {
        Some(a) if !a.labels.is_empty() => {
            let (_, fraction) = singleton_share(a);
            (Some(a.algorithm), Some(a.metric), a.seed, a.sizes(), a.noise_count(), fraction)
        }
        _ => (None, None, 0, Vec::new(), 0, 0.0),
    };
    Ok(RunReport {
        run_id: run_id(dir)?,
        summary: format!("{} suitable sentences out of {}", relational.len(), st.sentences.len()),
        documents,
        sentences: st.sentences.len(),
        mentions: st.mentions.len(),
        characters: st.aliases.len(),
        relational_sentences: relational.len(),
        symmetric_sentences: symmetric,
        asymmetric_sentences: relational.len() - symmetric,
        instances: st.instances.len(),
        algorithm,
        metric,
        seed,
        clusters: sizes.len(),
        singleton_clusters: sizes.iter().filter(|s| **s == 1).count(),
        singleton_fraction: fraction,
        largest_cluster: sizes.iter().copied().max().unwrap_or(0),
        noise,
        unlabeled_clusters: st.labels.iter().filter(|l| l.label.is_unlabeled()).count(),
        edges: st.graph.edges.len(),
        graph_weight: st.graph.total_weight(),
        components: st.graph.connected_components().len(),
        select_k: st.diagnostics.select_k.clone(),
        eps_sweep: st.diagnostics.eps_sweep.clone(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("graph".parse::<Stage>().is_err());
    }

    #[test]
    fn config_defaults_and_round_trip() {
        let config = PipelineConfig::from_toml("inputs = [\"a.txt\"]\n").unwrap();
        assert_eq!(config.classifier.tau, 0.35);
        assert_eq!(config.clustering.k, 200);
        assert_eq!(config.embedding.provider, ProviderSpec::Builtin { dim: DEFAULT_HASH_DIM });
        config.validate().unwrap();
        let text = config.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), config);
    }

    #[test]
    fn output_is_not_serialized() {
        let mut config = PipelineConfig::new(vec!["a.txt".into()]);
        config.output = Some("/tmp/somewhere".into());
        config.validate().unwrap();
        let text = config.to_toml().unwrap();
        assert!(!text.contains("somewhere"));
        assert_eq!(PipelineConfig::from_toml(&text).unwrap().output, None);
    }

    #[test]
    fn invalid_configs() {
        let base = PipelineConfig::new(vec!["a.txt".into()]);
        let cases: Vec<Box<dyn Fn(&mut PipelineConfig)>> = vec![
            Box::new(|c| c.inputs.clear()),
            Box::new(|c| c.clustering.k = 0),
            Box::new(|c| c.clustering.k_grid = vec![1, 3]),
            Box::new(|c| c.clustering.eps_sweep = vec![0.0]),
            Box::new(|c| c.classifier.tau = -1.0),
            Box::new(|c| c.dealias.epsilon = 2.0),
            Box::new(|c| c.embedding.provider = ProviderSpec::None),
            Box::new(|c| {
                c.clustering.algorithm = Algorithm::Dbscan;
                c.clustering.eps = -0.1
            }),
        ];
        for (i, mutate) in cases.iter().enumerate() {
            let mut c = base.clone();
            mutate(&mut c);
            let err = c.validate().expect_err(&format!("case {i}"));
            assert_eq!(err.exit_code(), 1);
        }
        assert!(PipelineConfig::from_toml("inputs = []\nbogus = 1\n").is_err());
    }

    #[test]
    fn singleton_share_counts_noise() {
        let a = ClusterAssignment {
            labels: vec![Some(0), Some(0), Some(1), None],
            k: 2,
            algorithm: Algorithm::Dbscan,
            metric: Metric::Euclidean,
            seed: 0,
        };
        assert_eq!(singleton_share(&a), (1, 2.0 / 3.0));
    }
}
