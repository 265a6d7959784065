//! Client and server sides of the line-delimited JSON protocol that isolates
//! model inference (embedding, summarization, person tagging) from the core.
//!
//! Requests and responses are single JSON objects, one per line:
//!
//! ```text
//! {"op":"dim"}                                   -> {"dim":384}
//! {"op":"embed","id":0,"text":"..."}             -> {"id":0,"vector":[...]}
//! {"op":"summarize","id":1,"sentences":["..."]}  -> {"id":1,"summary":"..."}
//! {"op":"tag","id":2,"text":"..."}               -> {"id":2,"persons":[[0,5]]}
//! ```
//!
//! A failed request is answered with `{"id":k,"error":"..."}`. Responses may
//! arrive out of order; ids are mandatory.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{SentId, Sentence};
use crate::embeddings::hash_embed;
use crate::entities::{detect_mentions, PersonTagger};

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("provider did not answer within {0:?}")]
    Timeout(Duration),
    #[error("provider rejected request {id}: {message}")]
    Remote { id: u64, message: String },
    #[error("request {index} failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<ProviderError>,
    },
    #[error("provider does not support {0:?}")]
    Unsupported(&'static str),
}

/// A request line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Dim,
    Embed { id: u64, text: String },
    Summarize { id: u64, sentences: Vec<String> },
    Tag { id: u64, text: String },
}

/// A response line. Exactly one payload field is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persons: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Model access used by the pipeline.
pub trait Provider: Send {
    /// Stable identifier, used to key the vector cache.
    fn id(&self) -> String;
    fn dim(&mut self) -> Result<usize, ProviderError>;
    /// Raw vectors in input order.
    fn embed(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
    fn summarize(&mut self, sentences: &[String]) -> Result<String, ProviderError>;
    fn tag(&mut self, text: &str) -> Result<Vec<Range<usize>>, ProviderError>;
}

impl PersonTagger for dyn Provider + '_ {
    fn tag_persons(&mut self, text: &str) -> Result<Vec<Range<usize>>, ProviderError> {
        self.tag(text)
    }
}

/// How to reach a provider, as written in configuration.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ProviderSpec {
    /// No provider: fallbacks only.
    #[default]
    None,
    /// In-process hashing embedder.
    Builtin { dim: usize },
    /// Subprocess speaking the protocol on stdin/stdout, run through `sh -c`.
    Exec { command: String },
    /// Local HTTP endpoint accepting one request per POST.
    Http { url: String },
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderSpec::None => f.write_str("none"),
            ProviderSpec::Builtin { dim } => write!(f, "builtin:{dim}"),
            ProviderSpec::Exec { command } => write!(f, "exec:{command}"),
            ProviderSpec::Http { url } => f.write_str(url),
        }
    }
}

impl FromStr for ProviderSpec {
    type Err = String;

    /// `none`, `builtin`, `builtin:<dim>`, `exec:<command line>` or an
    /// `http://` URL.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "none" {
            return Ok(ProviderSpec::None);
        }
        if s == "builtin" {
            return Ok(ProviderSpec::Builtin { dim: crate::embeddings::DEFAULT_HASH_DIM });
        }
        if let Some(dim) = s.strip_prefix("builtin:") {
            let dim: usize = dim.parse().map_err(|_| format!("bad builtin dimension {dim:?}"))?;
            if dim < 16 {
                return Err(format!("builtin dimension must be at least 16, got {dim}"));
            }
            return Ok(ProviderSpec::Builtin { dim });
        }
        if let Some(command) = s.strip_prefix("exec:") {
            if command.trim().is_empty() {
                return Err("empty provider command".into());
            }
            return Ok(ProviderSpec::Exec { command: command.trim().to_owned() });
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(ProviderSpec::Http { url: s.to_owned() });
        }
        Err(format!("unrecognized provider {s:?} (expected none, builtin[:dim], exec:<cmd> or http://...)"))
    }
}

impl Serialize for ProviderSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProviderSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct ConnectOptions {
    pub timeout: Duration,
    /// Directory for the on-disk vector cache; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    /// Requests in flight per round trip.
    pub max_batch: usize,
}

impl Default for ConnectOptions {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(120), cache_dir: None, max_batch: 64 }
    }
}

/// Opens an external provider. `None` and `Builtin` specs have no
/// connection and return `Ok(None)`.
pub fn connect(spec: &ProviderSpec, options: &ConnectOptions) -> Result<Option<Box<dyn Provider>>, ProviderError> {
    let transport: Box<dyn Transport> = match spec {
        ProviderSpec::None | ProviderSpec::Builtin { .. } => return Ok(None),
        ProviderSpec::Exec { command } => Box::new(ProcessTransport::spawn(command)?),
        ProviderSpec::Http { url } => Box::new(HttpTransport::new(url, options.timeout)),
    };
    let mut provider = WireProvider::new(spec.to_string(), transport, options.timeout);
    provider.max_batch = options.max_batch.max(1);
    if let Some(dir) = &options.cache_dir {
        provider.cache = Some(VectorCache::open(dir, &provider.id)?);
    }
    Ok(Some(Box::new(provider)))
}

/// Moves request and response lines.
pub trait Transport: Send {
    fn send(&mut self, line: &str) -> Result<(), ProviderError>;
    fn recv(&mut self, timeout: Duration) -> Result<String, ProviderError>;
}

/// Child process; a reader thread drains stdout so writes never block on a
/// full pipe.
pub struct ProcessTransport {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl ProcessTransport {
    pub fn spawn(command: &str) -> Result<Self, ProviderError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ProviderError::Unavailable(format!("cannot start {command:?}: {e}")))?;
        let stdin = child.stdin.take().ok_or_else(|| ProviderError::Unavailable("no stdin".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| ProviderError::Unavailable("no stdout".into()))?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, stdin: BufWriter::new(stdin), lines: rx })
    }
}

impl Transport for ProcessTransport {
    fn send(&mut self, line: &str) -> Result<(), ProviderError> {
        writeln!(self.stdin, "{line}")?;
        self.stdin.flush()?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, ProviderError> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Ok(line?),
            Err(RecvTimeoutError::Timeout) => Err(ProviderError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(ProviderError::Unavailable("provider closed its output".into()))
            }
        }
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// One POST per request; the response body is the response line.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
    pending: std::collections::VecDeque<String>,
}

impl HttpTransport {
    pub fn new(url: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { url: url.to_owned(), agent, pending: Default::default() }
    }
}

impl Transport for HttpTransport {
    fn send(&mut self, line: &str) -> Result<(), ProviderError> {
        let mut response = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(line)
            .map_err(|e| ProviderError::Unavailable(format!("{}: {e}", self.url)))?;
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Protocol(format!("unreadable response body: {e}")))?;
        self.pending.push_back(body);
        Ok(())
    }

    fn recv(&mut self, _timeout: Duration) -> Result<String, ProviderError> {
        self.pending.pop_front().ok_or_else(|| ProviderError::Protocol("no response pending".into()))
    }
}

/// Embedding cache keyed by (provider id, content hash), one JSON line per
/// vector.
pub struct VectorCache {
    path: PathBuf,
    entries: HashMap<String, Vec<f64>>,
    writer: Option<BufWriter<File>>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    hash: String,
    vector: Vec<f64>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl VectorCache {
    pub fn open(dir: &Path, provider_id: &str) -> Result<Self, ProviderError> {
        std::fs::create_dir_all(dir)?;
        let name = hex(&Sha256::digest(provider_id.as_bytes())[..8]);
        let path = dir.join(format!("vectors-{name}.jsonl"));
        let mut entries = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                // a torn final line after a crash is skipped
                if let Ok(entry) = serde_json::from_str::<CacheLine>(&line) {
                    entries.insert(entry.hash, entry.vector);
                }
            }
        }
        Ok(Self { path, entries, writer: None })
    }

    pub fn key(text: &str) -> String {
        hex(&Sha256::digest(text.as_bytes()))
    }

    pub fn get(&self, text: &str) -> Option<&Vec<f64>> {
        self.entries.get(&Self::key(text))
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) -> Result<(), ProviderError> {
        let hash = Self::key(text);
        if self.entries.contains_key(&hash) {
            return Ok(());
        }
        if self.writer.is_none() {
            let file = OpenOptions::new().create(true).append(true).open(&self.path)?;
            self.writer = Some(BufWriter::new(file));
        }
        if let Some(w) = self.writer.as_mut() {
            serde_json::to_writer(&mut *w, &CacheLine { hash: hash.clone(), vector: vector.clone() })
                .map_err(|e| ProviderError::Io(e.into()))?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.entries.insert(hash, vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// [`Provider`] speaking the wire protocol over a [`Transport`].
pub struct WireProvider {
    id: String,
    transport: Box<dyn Transport>,
    timeout: Duration,
    dim: Option<usize>,
    next_id: u64,
    pub max_batch: usize,
    pub cache: Option<VectorCache>,
}

impl WireProvider {
    pub fn new(id: String, transport: Box<dyn Transport>, timeout: Duration) -> Self {
        Self { id, transport, timeout, dim: None, next_id: 0, max_batch: 64, cache: None }
    }

    fn send(&mut self, request: &Request) -> Result<(), ProviderError> {
        let line = serde_json::to_string(request).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        self.transport.send(&line)
    }

    fn recv(&mut self) -> Result<Response, ProviderError> {
        let line = self.transport.recv(self.timeout)?;
        serde_json::from_str(&line).map_err(|e| ProviderError::Protocol(format!("bad response {line:?}: {e}")))
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Sends all requests, then collects one response per id in any order.
    fn round_trip(&mut self, requests: Vec<(u64, Request)>) -> Result<HashMap<u64, Response>, ProviderError> {
        let mut wanted: BTreeMap<u64, usize> = BTreeMap::new();
        for (index, (id, request)) in requests.iter().enumerate() {
            wanted.insert(*id, index);
            self.send(request)?;
        }
        let mut out = HashMap::new();
        while !wanted.is_empty() {
            let response = self.recv()?;
            let id = response
                .id
                .ok_or_else(|| ProviderError::Protocol("response without id".into()))?;
            let index = wanted
                .remove(&id)
                .ok_or_else(|| ProviderError::Protocol(format!("unexpected response id {id}")))?;
            if let Some(message) = response.error.clone() {
                return Err(ProviderError::Batch { index, source: Box::new(ProviderError::Remote { id, message }) });
            }
            out.insert(id, response);
        }
        Ok(out)
    }
}

impl Provider for WireProvider {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn dim(&mut self) -> Result<usize, ProviderError> {
        if let Some(dim) = self.dim {
            return Ok(dim);
        }
        self.send(&Request::Dim)?;
        let response = self.recv()?;
        if let Some(message) = response.error {
            return Err(ProviderError::Remote { id: 0, message });
        }
        let dim = response.dim.ok_or_else(|| ProviderError::Protocol("dim response without dim".into()))?;
        if dim == 0 {
            return Err(ProviderError::Protocol("provider reported dim 0".into()));
        }
        self.dim = Some(dim);
        Ok(dim)
    }

    fn embed(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.dim()?;
        let mut out: Vec<Option<Vec<f64>>> = texts
            .iter()
            .map(|t| self.cache.as_ref().and_then(|c| c.get(t).cloned()))
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|i| out[*i].is_none()).collect();
        for chunk in missing.chunks(self.max_batch) {
            let requests: Vec<(u64, Request)> = chunk
                .iter()
                .map(|&i| {
                    let id = self.fresh_id();
                    (id, Request::Embed { id, text: texts[i].clone() })
                })
                .collect();
            let ids: Vec<u64> = requests.iter().map(|(id, _)| *id).collect();
            let mut responses = self.round_trip(requests).map_err(|e| match e {
                ProviderError::Batch { index, source } => ProviderError::Batch { index: chunk[index], source },
                other => other,
            })?;
            for (&i, id) in chunk.iter().zip(ids) {
                let vector = responses
                    .remove(&id)
                    .and_then(|r| r.vector)
                    .ok_or_else(|| ProviderError::Batch {
                        index: i,
                        source: Box::new(ProviderError::Protocol("embed response without vector".into())),
                    })?;
                if let Some(cache) = self.cache.as_mut() {
                    cache.insert(&texts[i], vector.clone())?;
                }
                out[i] = Some(vector);
            }
        }
        Ok(out.into_iter().map(Option::unwrap_or_default).collect())
    }

    fn summarize(&mut self, sentences: &[String]) -> Result<String, ProviderError> {
        let id = self.fresh_id();
        let mut responses = self.round_trip(vec![(id, Request::Summarize { id, sentences: sentences.to_vec() })])?;
        responses
            .remove(&id)
            .and_then(|r| r.summary)
            .ok_or_else(|| ProviderError::Protocol("summarize response without summary".into()))
    }

    fn tag(&mut self, text: &str) -> Result<Vec<Range<usize>>, ProviderError> {
        let id = self.fresh_id();
        let mut responses = self.round_trip(vec![(id, Request::Tag { id, text: text.to_owned() })])?;
        let persons = responses
            .remove(&id)
            .and_then(|r| r.persons)
            .ok_or_else(|| ProviderError::Protocol("tag response without persons".into()))?;
        persons
            .into_iter()
            .map(|[start, end]| {
                if start <= end && end <= text.len() && text.is_char_boundary(start) && text.is_char_boundary(end) {
                    Ok(start..end)
                } else {
                    Err(ProviderError::Protocol(format!("person span {start}..{end} outside text")))
                }
            })
            .collect()
    }
}

/// What a provider server computes. Implemented by [`ReferenceBackend`] and
/// by test doubles.
pub trait Backend {
    fn dim(&self) -> usize;
    fn embed(&mut self, text: &str) -> Result<Vec<f64>, String>;
    fn summarize(&mut self, sentences: &[String]) -> Result<String, String>;
    fn tag(&mut self, text: &str) -> Result<Vec<[usize; 2]>, String>;
}

/// Model-free backend: hashing embedder, lead-sentence summary and the
/// rule-based person tagger.
#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    pub dim: usize,
}

impl Backend for ReferenceBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&mut self, text: &str) -> Result<Vec<f64>, String> {
        Ok(hash_embed::<f64>(text, self.dim).vector.into_inner())
    }

    fn summarize(&mut self, sentences: &[String]) -> Result<String, String> {
        sentences.first().cloned().ok_or_else(|| "no sentences to summarize".to_owned())
    }

    fn tag(&mut self, text: &str) -> Result<Vec<[usize; 2]>, String> {
        let sentence = Sentence { sent_id: SentId::new("tag", 0), text: text.to_owned(), char_span: 0..text.len() };
        let mentions = detect_mentions(&sentence, None, None).map_err(|e| e.to_string())?;
        Ok(mentions.into_iter().map(|m| [m.byte_span.start, m.byte_span.end]).collect())
    }
}

/// Answers one request line. Malformed input yields an error response.
pub fn handle_line(backend: &mut dyn Backend, line: &str) -> Response {
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64));
            return Response { id, error: Some(format!("malformed request: {e}")), ..Default::default() };
        }
    };
    match request {
        Request::Dim => Response { dim: Some(backend.dim()), ..Default::default() },
        Request::Embed { id, text } => match backend.embed(&text) {
            Ok(vector) => Response { id: Some(id), vector: Some(vector), ..Default::default() },
            Err(e) => Response { id: Some(id), error: Some(e), ..Default::default() },
        },
        Request::Summarize { id, sentences } => match backend.summarize(&sentences) {
            Ok(summary) => Response { id: Some(id), summary: Some(summary), ..Default::default() },
            Err(e) => Response { id: Some(id), error: Some(e), ..Default::default() },
        },
        Request::Tag { id, text } => match backend.tag(&text) {
            Ok(persons) => Response { id: Some(id), persons: Some(persons), ..Default::default() },
            Err(e) => Response { id: Some(id), error: Some(e), ..Default::default() },
        },
    }
}

/// Serves the protocol until `input` is exhausted.
pub fn serve<R: BufRead, W: Write>(backend: &mut dyn Backend, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_line(backend, &line);
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
