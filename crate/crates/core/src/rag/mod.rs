//! Retrieval over reference documents and chat history.
//!
//! Documents are split into overlapping character windows, embedded through
//! the [`Gateway`], and held in an exact [`FlatIndex`]. Writers build a new
//! index copy and swap it in, so readers always query a consistent snapshot
//! and re-indexing a document is atomic.

pub mod chunk;
pub mod index;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RagConfig;
use crate::llm::{Gateway, LlmError};
use crate::store::{Store, StoreError};

pub use chunk::{chunk_spans, chunk_text};
pub use index::{cosine, DocumentChunk, FlatIndex, ScoredChunk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DocSource {
    Reference,
    ChatHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source: DocSource,
    pub title: String,
    pub text: String,
    pub added_at: DateTime<Utc>,
}

impl Document {
    pub fn reference(title: &str, text: String, added_at: DateTime<Utc>) -> Self {
        Document {
            doc_id: reference_doc_id(title),
            source: DocSource::Reference,
            title: title.to_string(),
            text,
            added_at,
        }
    }

    pub fn chat(message_id: u64, text: String, added_at: DateTime<Utc>) -> Self {
        Document {
            doc_id: chat_doc_id(message_id),
            source: DocSource::ChatHistory,
            title: format!("chat message {message_id}"),
            text,
            added_at,
        }
    }
}

/// `ref:` plus a lowercase slug of the title. Never contains whitespace.
pub fn reference_doc_id(title: &str) -> String {
    let mut slug = String::new();
    for c in title.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            slug.push(c);
        } else if !slug.is_empty() && !slug.ends_with('-') {
            slug.push('-');
        }
    }
    let slug = slug.trim_end_matches('-');
    if slug.is_empty() {
        "ref:untitled".to_string()
    } else {
        format!("ref:{slug}")
    }
}

pub fn chat_doc_id(message_id: u64) -> String {
    format!("chat:{message_id}")
}

#[derive(Debug, Error)]
pub enum RagError {
    #[error("chunk size {size} must exceed overlap {overlap}")]
    BadParams { size: usize, overlap: usize },
    #[error("document text is empty")]
    EmptyText,
    #[error("embedding failed: {0}")]
    EmbedFailed(#[from] LlmError),
    #[error("embedding dimension {found} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("document {0} is already being indexed")]
    DuplicateInFlight(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl RagError {
    pub fn code(&self) -> &'static str {
        match self {
            RagError::BadParams { .. } => "BAD_PARAMS",
            RagError::EmptyText => "BAD_TEXT",
            RagError::EmbedFailed(_) | RagError::DimensionMismatch { .. } => "EMBED_FAILED",
            RagError::DuplicateInFlight(_) => "DUPLICATE_IN_FLIGHT",
            RagError::Store(e) => e.code(),
        }
    }
}

// equality on the error kind is enough for tests
impl PartialEq for RagError {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (RagError::BadParams { size: a, overlap: b }, RagError::BadParams { size: c, overlap: d }) => {
                a == c && b == d
            }
            (RagError::DuplicateInFlight(a), RagError::DuplicateInFlight(b)) => a == b,
            _ => std::mem::discriminant(self) == std::mem::discriminant(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PendingChat {
    message_id: u64,
    text: String,
    at: DateTime<Utc>,
}

struct InFlight<'a> {
    set: &'a Mutex<HashSet<String>>,
    doc_id: String,
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.set.lock().expect("in-flight lock").remove(&self.doc_id);
    }
}

pub struct RagEngine {
    gateway: Arc<Gateway>,
    params: RwLock<RagConfig>,
    index: RwLock<Arc<FlatIndex>>,
    writer: Mutex<()>,
    in_flight: Mutex<HashSet<String>>,
    pending_chat: Mutex<Vec<PendingChat>>,
    store: Option<Arc<Store>>,
    manifest_path: Option<PathBuf>,
}

impl RagEngine {
    pub fn new(gateway: Arc<Gateway>, params: RagConfig) -> Self {
        RagEngine {
            gateway,
            params: RwLock::new(params),
            index: RwLock::new(Arc::new(FlatIndex::default())),
            writer: Mutex::new(()),
            in_flight: Mutex::new(HashSet::new()),
            pending_chat: Mutex::new(Vec::new()),
            store: None,
            manifest_path: None,
        }
    }

    /// Persists documents to `store` and rebuilds the index from it.
    pub fn with_store(mut self, store: Arc<Store>) -> Self {
        let mut index = FlatIndex::default();
        for (doc, chunks) in store.documents() {
            index.replace(&doc.doc_id, chunks);
        }
        self.index = RwLock::new(Arc::new(index));
        self.store = Some(store);
        self
    }

    /// Keeps a plain-text list of indexed documents at `path`.
    pub fn with_manifest(mut self, path: PathBuf) -> Self {
        self.manifest_path = Some(path);
        self
    }

    pub fn params(&self) -> RagConfig {
        *self.params.read().expect("params lock")
    }

    pub fn set_params(&self, params: RagConfig) {
        *self.params.write().expect("params lock") = params;
    }

    pub fn snapshot(&self) -> Arc<FlatIndex> {
        Arc::clone(&self.index.read().expect("index lock"))
    }

    pub fn index_document(&self, doc: Document) -> Result<usize, RagError> {
        let params = self.params();
        if doc.text.is_empty() {
            return Err(RagError::EmptyText);
        }
        let pieces = chunk_text(&doc.text, params.chunk_size, params.overlap)?;
        let _guard = self.claim(&doc.doc_id)?;

        let texts: Vec<String> = pieces.iter().map(|(_, t)| t.clone()).collect();
        let embeddings = self.gateway.embed_all(&texts)?;
        let chunks: Vec<DocumentChunk> = pieces
            .into_iter()
            .zip(embeddings)
            .enumerate()
            .map(|(i, ((span, text), embedding))| DocumentChunk {
                doc_id: doc.doc_id.clone(),
                chunk_index: i,
                span: (span.start, span.end),
                text,
                embedding,
            })
            .collect();
        let count = chunks.len();

        let _writer = self.writer.lock().expect("writer lock");
        let mut next = FlatIndex::clone(&self.snapshot());
        if !next.replace(&doc.doc_id, chunks.clone()) {
            return Err(RagError::DimensionMismatch {
                expected: next.dimension().unwrap_or(0),
                found: chunks[0].embedding.len(),
            });
        }
        if let Some(store) = &self.store {
            store.put_document(&doc, &chunks)?;
        }
        *self.index.write().expect("index lock") = Arc::new(next);
        self.write_manifest();
        Ok(count)
    }

    fn claim(&self, doc_id: &str) -> Result<InFlight<'_>, RagError> {
        let mut set = self.in_flight.lock().expect("in-flight lock");
        if !set.insert(doc_id.to_string()) {
            return Err(RagError::DuplicateInFlight(doc_id.to_string()));
        }
        Ok(InFlight {
            set: &self.in_flight,
            doc_id: doc_id.to_string(),
        })
    }

    /// Top-`k` chunks for `text` with score at least `min_score`.
    pub fn query(&self, text: &str, k: usize, min_score: f64) -> Result<Vec<ScoredChunk>, RagError> {
        let snapshot = self.snapshot();
        if snapshot.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let embedding = self.gateway.embed_batch(&[text.to_string()])?.remove(0);
        Ok(snapshot.query(&embedding, k, min_score))
    }

    /// Query with the configured `k` and `min_score`.
    pub fn query_default(&self, text: &str) -> Result<Vec<ScoredChunk>, RagError> {
        let p = self.params();
        self.query(text, p.k, p.min_score)
    }

    /// Indexes a chat message as its own document when it is long enough.
    /// Failed embeddings are queued for [`RagEngine::retry_pending`].
    pub fn index_chat_message(&self, message_id: u64, text: &str, at: DateTime<Utc>) -> Result<bool, RagError> {
        if text.chars().count() < self.params().min_chat_index_chars {
            return Ok(false);
        }
        match self.index_document(Document::chat(message_id, text.to_string(), at)) {
            Ok(_) => Ok(true),
            Err(e @ (RagError::EmbedFailed(_) | RagError::DimensionMismatch { .. })) => {
                self.pending_chat.lock().expect("pending lock").push(PendingChat {
                    message_id,
                    text: text.to_string(),
                    at,
                });
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    pub fn pending_chat_count(&self) -> usize {
        self.pending_chat.lock().expect("pending lock").len()
    }

    /// Retries queued chat messages; returns how many were indexed.
    pub fn retry_pending(&self) -> usize {
        let queued = std::mem::take(&mut *self.pending_chat.lock().expect("pending lock"));
        let mut done = 0;
        for p in queued {
            // failures re-queue themselves
            if let Ok(true) = self.index_chat_message(p.message_id, &p.text, p.at) {
                done += 1;
            }
        }
        done
    }

    fn write_manifest(&self) {
        let Some(path) = &self.manifest_path else { return };
        let snapshot = self.snapshot();
        let mut text = String::from("# doc_id\tchunks\n");
        for id in snapshot.doc_ids() {
            let n = snapshot.chunks(id).map_or(0, <[_]>::len);
            text.push_str(&format!("{id}\t{n}\n"));
        }
        let tmp = path.with_extension("tmp");
        let result = std::fs::write(&tmp, text).and_then(|_| std::fs::rename(&tmp, path));
        if let Err(e) = result {
            tracing::warn!(path = %path.display(), error = %e, "could not write index manifest");
        }
    }
}
