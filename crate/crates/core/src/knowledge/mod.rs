//! Knowledge banks: chunking, embedding, exact retrieval and persistence.

mod store;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::Model;

pub use store::Manifest;
pub(crate) use store::{load_index, save_index};

/// Dimension of the hashed bag-of-words embedding.
pub const MOCK_EMBEDDING_DIM: usize = 64;

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Lowercased alphanumeric words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hashed bag-of-words, L2-normalized. Empty text maps to the zero vector.
pub fn hashed_bow(text: &str, dim: usize) -> Vec<f32> {
    let dim = dim.max(1);
    let mut v = vec![0f64; dim];
    for tok in tokenize(text) {
        v[(fnv1a(&tok) % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|x| (x / norm) as f32).collect()
    } else {
        vec![0.0; dim]
    }
}

/// Cosine similarity in f64; zero when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Fixed character windows: `(start_char, end_char, text)`.
///
/// Windows start every `size - overlap` characters and the last one ends at
/// the end of the text, giving `ceil((len - overlap) / (size - overlap))`
/// chunks for `len > overlap`.
pub fn chunk_text(text: &str, size: usize, overlap: usize) -> Result<Vec<(usize, usize, String)>> {
    if size == 0 || overlap >= size {
        return Err(Error::validation(format!(
            "chunk_size ({size}) must be positive and greater than chunk_overlap ({overlap})"
        )));
    }
    let chars: Vec<char> = text.chars().collect();
    let len = chars.len();
    let step = size - overlap;
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + size).min(len);
        out.push((start, end, chars[start..end].iter().collect()));
        if end == len {
            break;
        }
        start += step;
    }
    Ok(out)
}

/// Anything that turns texts into vectors.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

impl Embedder for Model {
    fn name(&self) -> &str {
        self.config_name()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Model::embed(self, texts)
    }
}

/// Hashed bag-of-words embedder that counts its calls.
#[derive(Debug)]
pub struct MockEmbedder {
    dim: usize,
    calls: AtomicU64,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(MOCK_EMBEDDING_DIM)
    }
}

impl Embedder for MockEmbedder {
    fn name(&self) -> &str {
        "mock-embedder"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(texts.iter().map(|t| hashed_bow(t, self.dim)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub chunk_id: String,
    pub source_path: String,
    pub span: (usize, usize),
    pub text: String,
    #[serde(skip)]
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved {
    pub knowledge_id: String,
    pub entry: KnowledgeEntry,
    pub score: f64,
}

impl Retrieved {
    /// `[source_path#chunk_id] text`
    pub fn render(&self) -> String {
        format!("[{}#{}] {}", self.entry.source_path, self.entry.chunk_id, self.entry.text)
    }
}

/// One object of `knowledge_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeConfig {
    pub knowledge_id: String,
    pub data_dir: PathBuf,
    #[serde(default)]
    pub extensions: Vec<String>,
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default)]
    pub chunk_overlap: usize,
    /// Embedding model `config_name`; the mock embedder when absent.
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default)]
    pub persist_dir: Option<PathBuf>,
}

fn default_chunk_size() -> usize {
    512
}

impl KnowledgeConfig {
    pub fn new(knowledge_id: impl Into<String>, data_dir: impl Into<PathBuf>, chunk_size: usize, chunk_overlap: usize) -> Self {
        Self {
            knowledge_id: knowledge_id.into(),
            data_dir: data_dir.into(),
            extensions: Vec::new(),
            chunk_size,
            chunk_overlap,
            embedding_model: None,
            persist_dir: None,
        }
    }

    pub fn with_extensions(mut self, exts: &[&str]) -> Self {
        self.extensions = exts.iter().map(|e| e.to_string()).collect();
        self
    }

    pub fn with_persist_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.persist_dir = Some(dir.into());
        self
    }

    fn matches(&self, path: &Path) -> bool {
        if self.extensions.is_empty() {
            return true;
        }
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        self.extensions
            .iter()
            .any(|want| want.trim_start_matches('.').eq_ignore_ascii_case(ext))
    }

    /// Matching files as (relative path with `/` separators, absolute path),
    /// sorted by relative path.
    pub fn source_files(&self) -> Result<Vec<(String, PathBuf)>> {
        if !self.data_dir.is_dir() {
            return Err(Error::validation(format!(
                "knowledge '{}': data_dir {} does not exist",
                self.knowledge_id,
                self.data_dir.display()
            )));
        }
        let mut out = Vec::new();
        let mut stack = vec![self.data_dir.clone()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if self.matches(&path) {
                    let rel = path
                        .strip_prefix(&self.data_dir)
                        .unwrap_or(&path)
                        .components()
                        .map(|c| c.as_os_str().to_string_lossy().into_owned())
                        .collect::<Vec<_>>()
                        .join("/");
                    out.push((rel, path));
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Digest of the matched files' names and contents plus chunking params.
    pub fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(format!("{}:{}\n", self.chunk_size, self.chunk_overlap));
        for (rel, abs) in self.source_files()? {
            let bytes = std::fs::read(&abs)?;
            h.update(rel.as_bytes());
            h.update([0u8]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }
}

/// An insert/delete/replace on a knowledge object.
#[derive(Debug, Clone, PartialEq)]
pub enum KnowledgeUpdate {
    Insert { source_path: String, text: String },
    Delete { chunk_id: String },
    Replace { chunk_id: String, text: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Index {
    pub(crate) entries: Vec<KnowledgeEntry>,
    pub(crate) dim: Option<usize>,
    pub(crate) next_seq: u64,
    pub(crate) fingerprint: Option<String>,
}

impl Index {
    fn next_chunk_id(&mut self) -> String {
        let id = format!("c{:06}", self.next_seq);
        self.next_seq += 1;
        id
    }

    fn check_dim(&mut self, v: &[f32]) -> Result<()> {
        match self.dim {
            None => {
                self.dim = Some(v.len());
                Ok(())
            }
            Some(d) if d == v.len() => Ok(()),
            Some(d) => Err(Error::validation(format!(
                "embedding dimension mismatch: index has {d}, got {}",
                v.len()
            ))),
        }
    }
}

/// A chunked, embedded document index under one `knowledge_id`.
pub struct KnowledgeObject {
    knowledge_id: String,
    index: RwLock<Index>,
    embedder: Arc<dyn Embedder>,
    config: Option<KnowledgeConfig>,
    persist_dir: Option<PathBuf>,
}

impl std::fmt::Debug for KnowledgeObject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeObject")
            .field("knowledge_id", &self.knowledge_id)
            .field("entries", &self.len())
            .field("persist_dir", &self.persist_dir)
            .finish()
    }
}

impl KnowledgeObject {
    pub fn empty(knowledge_id: impl Into<String>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            knowledge_id: knowledge_id.into(),
            index: RwLock::new(Index::default()),
            embedder,
            config: None,
            persist_dir: None,
        }
    }

    /// Builds from the configured directory, or loads from an intact
    /// `persist_dir` whose fingerprint matches without calling the embedder.
    pub fn from_config(config: KnowledgeConfig, embedder: Arc<dyn Embedder>) -> Result<Self> {
        let fingerprint = config.fingerprint()?;
        let mut obj = Self {
            knowledge_id: config.knowledge_id.clone(),
            index: RwLock::new(Index::default()),
            embedder,
            persist_dir: config.persist_dir.clone(),
            config: Some(config),
        };
        if let Some(dir) = obj.persist_dir.clone() {
            if let Ok(index) = load_index(&dir, &obj.knowledge_id) {
                if index.fingerprint.as_deref() == Some(fingerprint.as_str()) {
                    obj.index = RwLock::new(index);
                    return Ok(obj);
                }
            }
        }
        let index = obj.build_index(fingerprint)?;
        *obj.index.write().unwrap() = index;
        obj.persist()?;
        Ok(obj)
    }

    /// Loads an index persisted by another object.
    pub fn load(knowledge_id: &str, persist_dir: impl Into<PathBuf>, embedder: Arc<dyn Embedder>) -> Result<Self> {
        let dir = persist_dir.into();
        let index = load_index(&dir, knowledge_id)?;
        Ok(Self {
            knowledge_id: knowledge_id.to_string(),
            index: RwLock::new(index),
            embedder,
            config: None,
            persist_dir: Some(dir),
        })
    }

    fn build_index(&self, fingerprint: String) -> Result<Index> {
        let config = self
            .config
            .as_ref()
            .ok_or_else(|| Error::validation(format!("knowledge '{}' has no source config", self.knowledge_id)))?;
        let mut index = Index {
            fingerprint: Some(fingerprint),
            ..Index::default()
        };
        let mut pending = Vec::new();
        for (rel, abs) in config.source_files()? {
            let text = std::fs::read_to_string(&abs)?;
            for (start, end, chunk) in chunk_text(&text, config.chunk_size, config.chunk_overlap)? {
                pending.push(KnowledgeEntry {
                    chunk_id: index.next_chunk_id(),
                    source_path: rel.clone(),
                    span: (start, end),
                    text: chunk,
                    embedding: Vec::new(),
                });
            }
        }
        if !pending.is_empty() {
            let texts: Vec<String> = pending.iter().map(|e| e.text.clone()).collect();
            let vectors = self.embedder.embed(&texts)?;
            if vectors.len() != pending.len() {
                return Err(Error::Unresolvable(format!(
                    "embedder returned {} vectors for {} texts",
                    vectors.len(),
                    pending.len()
                )));
            }
            for (mut e, v) in pending.into_iter().zip(vectors) {
                index.check_dim(&v)?;
                e.embedding = v;
                index.entries.push(e);
            }
        }
        Ok(index)
    }

    pub fn knowledge_id(&self) -> &str {
        &self.knowledge_id
    }

    pub fn persist_dir(&self) -> Option<&Path> {
        self.persist_dir.as_deref()
    }

    pub fn config(&self) -> Option<&KnowledgeConfig> {
        self.config.as_ref()
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> Vec<KnowledgeEntry> {
        self.index.read().unwrap().entries.clone()
    }

    pub fn dim(&self) -> Option<usize> {
        self.index.read().unwrap().dim
    }

    /// Writes the index to `persist_dir` (no-op without one).
    pub fn persist(&self) -> Result<()> {
        match &self.persist_dir {
            Some(dir) => save_index(dir, &self.knowledge_id, &self.index.read().unwrap()),
            None => Ok(()),
        }
    }

    /// Independent copy; it has no `persist_dir`, so its updates stay in memory.
    pub fn deep_copy(&self) -> KnowledgeObject {
        KnowledgeObject {
            knowledge_id: self.knowledge_id.clone(),
            index: RwLock::new(self.index.read().unwrap().clone()),
            embedder: self.embedder.clone(),
            config: self.config.clone(),
            persist_dir: None,
        }
    }

    fn embed_one(&self, text: &str) -> Result<Vec<f32>> {
        self.embedder
            .embed(&[text.to_string()])?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Unresolvable("embedder returned no vector".into()))
    }

    /// Top-`k` entries by cosine similarity, ties broken by `chunk_id`.
    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<Retrieved>> {
        let q = self.embed_one(query)?;
        self.retrieve_by_vector(&q, k)
    }

    pub fn retrieve_by_vector(&self, query: &[f32], k: usize) -> Result<Vec<Retrieved>> {
        if k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        let index = self.index.read().unwrap();
        if let Some(d) = index.dim {
            if d != query.len() {
                return Err(Error::validation(format!(
                    "embedding dimension mismatch: index has {d}, query has {}",
                    query.len()
                )));
            }
        }
        let mut scored: Vec<Retrieved> = index
            .entries
            .iter()
            .map(|e| Retrieved {
                knowledge_id: self.knowledge_id.clone(),
                score: cosine(query, &e.embedding),
                entry: e.clone(),
            })
            .collect();
        rank(&mut scored);
        scored.truncate(k);
        Ok(scored)
    }

    /// Applies one update to the index and `persist_dir`.
    pub fn update(&self, op: KnowledgeUpdate) -> Result<Vec<String>> {
        let mut index = self.index.write().unwrap();
        let mut next = index.clone();
        let touched = match op {
            KnowledgeUpdate::Insert { source_path, text } => {
                let v = self.embed_one(&text)?;
                next.check_dim(&v)?;
                let chunk_id = next.next_chunk_id();
                let len = text.chars().count();
                next.entries.push(KnowledgeEntry {
                    chunk_id: chunk_id.clone(),
                    source_path,
                    span: (0, len),
                    text,
                    embedding: v,
                });
                vec![chunk_id]
            }
            KnowledgeUpdate::Delete { chunk_id } => {
                let pos = position_of(&next, &chunk_id)?;
                next.entries.remove(pos);
                vec![chunk_id]
            }
            KnowledgeUpdate::Replace { chunk_id, text } => {
                let pos = position_of(&next, &chunk_id)?;
                let v = self.embed_one(&text)?;
                next.check_dim(&v)?;
                let e = &mut next.entries[pos];
                e.span = (e.span.0, e.span.0 + text.chars().count());
                e.text = text;
                e.embedding = v;
                vec![chunk_id]
            }
        };
        if let Some(dir) = &self.persist_dir {
            save_index(dir, &self.knowledge_id, &next)?;
        }
        *index = next;
        Ok(touched)
    }

    pub fn insert(&self, source_path: impl Into<String>, text: impl Into<String>) -> Result<String> {
        self.update(KnowledgeUpdate::Insert {
            source_path: source_path.into(),
            text: text.into(),
        })
        .map(|mut ids| ids.remove(0))
    }

    pub fn delete(&self, chunk_id: &str) -> Result<()> {
        self.update(KnowledgeUpdate::Delete {
            chunk_id: chunk_id.to_string(),
        })
        .map(|_| ())
    }

    pub fn replace(&self, chunk_id: &str, text: impl Into<String>) -> Result<()> {
        self.update(KnowledgeUpdate::Replace {
            chunk_id: chunk_id.to_string(),
            text: text.into(),
        })
        .map(|_| ())
    }

    /// Rebuilds from the source directory if its contents changed.
    /// Returns whether a rebuild happened.
    pub fn refresh(&self) -> Result<bool> {
        let Some(config) = &self.config else {
            return Ok(false);
        };
        let fingerprint = config.fingerprint()?;
        if self.index.read().unwrap().fingerprint.as_deref() == Some(fingerprint.as_str()) {
            return Ok(false);
        }
        let index = self.build_index(fingerprint)?;
        let mut current = self.index.write().unwrap();
        if let Some(dir) = &self.persist_dir {
            save_index(dir, &self.knowledge_id, &index)?;
        }
        *current = index;
        Ok(true)
    }
}

fn position_of(index: &Index, chunk_id: &str) -> Result<usize> {
    index
        .entries
        .iter()
        .position(|e| e.chunk_id == chunk_id)
        .ok_or_else(|| Error::validation(format!("unknown chunk_id: {chunk_id}")))
}

fn rank(items: &mut [Retrieved]) {
    items.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.entry.chunk_id.cmp(&b.entry.chunk_id))
            .then_with(|| a.knowledge_id.cmp(&b.knowledge_id))
    });
}

/// Polls an object's source directory and refreshes it on change.
#[derive(Debug)]
pub struct WatchHandle {
    stop: Arc<AtomicBool>,
    refreshes: Arc<AtomicU64>,
    thread: Option<JoinHandle<()>>,
}

impl WatchHandle {
    pub fn refreshes(&self) -> u64 {
        self.refreshes.load(Ordering::SeqCst)
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for WatchHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn watch_dir(obj: Arc<KnowledgeObject>, interval: Duration) -> WatchHandle {
    let stop = Arc::new(AtomicBool::new(false));
    let refreshes = Arc::new(AtomicU64::new(0));
    let (s, r) = (stop.clone(), refreshes.clone());
    let thread = std::thread::spawn(move || {
        while !s.load(Ordering::SeqCst) {
            if let Ok(true) = obj.refresh() {
                r.fetch_add(1, Ordering::SeqCst);
            }
            let mut waited = Duration::ZERO;
            while waited < interval && !s.load(Ordering::SeqCst) {
                let step = Duration::from_millis(10).min(interval - waited);
                std::thread::sleep(step);
                waited += step;
            }
        }
    });
    WatchHandle {
        stop,
        refreshes,
        thread: Some(thread),
    }
}

/// Weighted retrieval over several objects: each source's cosine scores are
/// multiplied by its weight, merged and re-ranked. Zero-weight sources are
/// skipped.
pub fn fused_retrieve(sources: &[(&KnowledgeObject, f64)], query: &str, k: usize) -> Result<Vec<Retrieved>> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if sources.iter().any(|(_, w)| *w < 0.0 || !w.is_finite()) {
        return Err(Error::validation("fusion weights must be finite and non-negative"));
    }
    if !sources.iter().any(|(_, w)| *w > 0.0) {
        return Err(Error::validation("at least one fusion weight must be positive"));
    }
    let mut merged = Vec::new();
    for (obj, w) in sources.iter().filter(|(_, w)| *w > 0.0) {
        let all = obj.retrieve(query, obj.len().max(1))?;
        merged.extend(all.into_iter().map(|mut r| {
            r.score *= *w;
            r
        }));
    }
    rank(&mut merged);
    merged.truncate(k);
    Ok(merged)
}

/// Parses a bank config: a JSON array of objects or `{"knowledge": [...]}`.
pub fn parse_bank_config(text: &str) -> Result<Vec<KnowledgeConfig>> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let items = match v {
        serde_json::Value::Array(_) => v,
        serde_json::Value::Object(mut m) => m
            .remove("knowledge")
            .ok_or_else(|| Error::validation("knowledge config missing field: knowledge"))?,
        _ => return Err(Error::validation("knowledge config must be an array or object")),
    };
    serde_json::from_value(items).map_err(|e| Error::validation(format!("invalid knowledge config: {e}")))
}

/// A collection of knowledge objects keyed by `knowledge_id`.
#[derive(Debug, Default)]
pub struct KnowledgeBank {
    objects: RwLock<HashMap<String, Arc<KnowledgeObject>>>,
    warnings: RwLock<Vec<String>>,
}

impl KnowledgeBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds (or loads) every configured object. `embedder_for` maps an
    /// embedding model name (`None` for the default) to an embedder.
    pub fn init(
        configs: Vec<KnowledgeConfig>,
        embedder_for: impl Fn(Option<&str>) -> Result<Arc<dyn Embedder>>,
    ) -> Result<Self> {
        let bank = Self::new();
        for cfg in configs {
            let embedder = embedder_for(cfg.embedding_model.as_deref())?;
            if cfg.source_files()?.is_empty() {
                bank.warnings.write().unwrap().push(format!(
                    "knowledge '{}': no files in {} match {:?}",
                    cfg.knowledge_id,
                    cfg.data_dir.display(),
                    cfg.extensions
                ));
            }
            bank.add(KnowledgeObject::from_config(cfg, embedder)?)?;
        }
        Ok(bank)
    }

    pub fn add(&self, obj: KnowledgeObject) -> Result<Arc<KnowledgeObject>> {
        let mut objects = self.objects.write().unwrap();
        if objects.contains_key(obj.knowledge_id()) {
            return Err(Error::validation(format!("duplicate knowledge_id: {}", obj.knowledge_id())));
        }
        let arc = Arc::new(obj);
        objects.insert(arc.knowledge_id().to_string(), arc.clone());
        Ok(arc)
    }

    /// Shared reference to the bank's object.
    pub fn get(&self, knowledge_id: &str) -> Result<Arc<KnowledgeObject>> {
        self.objects
            .read()
            .unwrap()
            .get(knowledge_id)
            .cloned()
            .ok_or_else(|| Error::validation(format!("unknown knowledge_id: {knowledge_id}")))
    }

    pub fn get_copy(&self, knowledge_id: &str) -> Result<KnowledgeObject> {
        Ok(self.get(knowledge_id)?.deep_copy())
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.objects.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn warnings(&self) -> Vec<String> {
        self.warnings.read().unwrap().clone()
    }
}
