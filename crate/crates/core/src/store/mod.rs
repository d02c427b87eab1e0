//! Single-file durable store.
//!
//! The file is an append-only log of checksummed records (see [`record`]).
//! Every append is fsynced before it is acknowledged. Opening replays the
//! log into memory; [`Store::open`] refuses a file whose tail is torn or
//! corrupt, while [`Store::open_recovering`] keeps a backup and truncates to
//! the last intact record. [`Store::compact`] rewrites the log atomically and
//! drops activity older than the retention window.

pub mod record;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activity::{ActivityEvent, EventKind};
use crate::focus::FocusSession;
use crate::gamification::{Award, GameEvent};
use crate::notifier::DeliveryRecord;
use crate::prompt::ResponseType;
use crate::rag::{Document, DocumentChunk};

pub use record::{Record, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    User,
    Assistant,
    System,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "USER",
            Role::Assistant => "ASSISTANT",
            Role::System => "SYSTEM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub id: u64,
    pub at: DateTime<Utc>,
    pub role: Role,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub response_type: Option<ResponseType>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub linked_trigger_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub schema_version: u32,
    pub created_at: DateTime<Utc>,
    pub store_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub at: DateTime<Utc>,
    pub event: ActivityEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSession {
    pub at: DateTime<Utc>,
    pub session: FocusSession,
}

/// A game event together with the awards it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameStep {
    pub event: GameEvent,
    pub awards: Vec<Award>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredDocument {
    pub doc: Document,
    pub chunks: Vec<DocumentChunk>,
}

/// Everything the log folds into.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StoreState {
    pub manifest: Option<StoreManifest>,
    pub messages: Vec<ChatMessage>,
    pub events: Vec<StoredEvent>,
    pub sessions: Vec<StoredSession>,
    pub game: Vec<GameStep>,
    pub documents: BTreeMap<String, StoredDocument>,
    pub notifications: Vec<DeliveryRecord>,
    pub settings: Option<serde_json::Value>,
}

impl StoreState {
    pub fn apply(&mut self, record: Record) {
        match record {
            Record::Manifest(m) => self.manifest = Some(m),
            Record::Message(m) => self.messages.push(m),
            Record::Event(e) => self.events.push(e),
            Record::Session(s) => self.sessions.push(s),
            Record::Game(g) => self.game.push(g),
            Record::Document(d) => {
                self.documents.insert(d.doc.doc_id.clone(), d);
            }
            Record::Notification(n) => self.notifications.push(n),
            Record::Settings(s) => self.settings = Some(s),
        }
    }

    pub fn last_message_id(&self) -> u64 {
        self.messages.last().map_or(0, |m| m.id)
    }

    pub fn awards(&self) -> Vec<Award> {
        self.game.iter().flat_map(|g| g.awards.iter().cloned()).collect()
    }

    fn records(&self) -> Vec<Record> {
        let mut out = Vec::new();
        out.extend(self.manifest.clone().map(Record::Manifest));
        out.extend(self.settings.clone().map(Record::Settings));
        out.extend(self.documents.values().cloned().map(Record::Document));
        out.extend(self.game.iter().cloned().map(Record::Game));
        out.extend(self.messages.iter().cloned().map(Record::Message));
        out.extend(self.sessions.iter().cloned().map(Record::Session));
        out.extend(self.events.iter().cloned().map(Record::Event));
        out.extend(self.notifications.iter().cloned().map(Record::Notification));
        out
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store {path} is corrupt at byte {offset}: {reason}; backup written to {backup}")]
    Corruption {
        path: PathBuf,
        offset: u64,
        reason: String,
        backup: PathBuf,
    },
    #[error("store schema version {found} is not supported (expected {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("store is full ({size} bytes, limit {limit})")]
    Full { size: u64, limit: u64 },
    #[error("store is closed after a failed write")]
    Poisoned,
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io { .. } | StoreError::Poisoned => "IO_ERROR",
            StoreError::Corruption { .. } => "CORRUPTION",
            StoreError::Schema { .. } => "SCHEMA_MISMATCH",
            StoreError::Full { .. } => "STORE_FULL",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Simulated crash for durability tests: the append numbered `at_append`
/// (0-based, counted from open) writes only `keep_bytes` of its frame and
/// fails, leaving the store unusable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultPlan {
    pub at_append: u64,
    pub keep_bytes: usize,
}

/// What [`Store::open_recovering`] had to repair.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub backup: PathBuf,
    pub valid_len: u64,
    pub dropped_bytes: u64,
    pub reason: String,
}

struct Inner {
    file: File,
    len: u64,
    state: StoreState,
    appends: u64,
    fault: Option<FaultPlan>,
    poisoned: bool,
    redact_titles: bool,
}

pub struct Store {
    path: PathBuf,
    max_bytes: u64,
    inner: Mutex<Inner>,
}

fn backup_path(path: &Path) -> PathBuf {
    let stamp = Utc::now().format("%Y%m%dT%H%M%S%.3f");
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    path.with_file_name(format!("{name}.corrupt-{stamp}"))
}

impl Store {
    /// Opens or creates the store, failing on any damage.
    pub fn open(path: &Path, created_at: DateTime<Utc>) -> Result<Store, StoreError> {
        Store::open_inner(path, created_at, false).map(|(s, _)| s)
    }

    /// Opens or creates the store, truncating a damaged tail. The damaged
    /// file is copied aside first.
    pub fn open_recovering(path: &Path, created_at: DateTime<Utc>) -> Result<(Store, Option<Recovery>), StoreError> {
        Store::open_inner(path, created_at, true)
    }

    fn open_inner(
        path: &Path,
        created_at: DateTime<Utc>,
        repair: bool,
    ) -> Result<(Store, Option<Recovery>), StoreError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let exists = path.exists() && std::fs::metadata(path).map_err(io_err(path))?.len() > 0;
        if !exists {
            let mut file = OpenOptions::new()
                .create(true)
                .truncate(true)
                .read(true)
                .write(true)
                .open(path)
                .map_err(io_err(path))?;
            let mut bytes = record::file_header();
            let manifest = Record::Manifest(StoreManifest {
                schema_version: SCHEMA_VERSION,
                created_at,
                store_path: path.to_path_buf(),
            });
            bytes.extend(record::encode(&manifest));
            file.write_all(&bytes).map_err(io_err(path))?;
            file.sync_all().map_err(io_err(path))?;
            let mut state = StoreState::default();
            state.apply(manifest);
            return Ok((Store::from_parts(path, file, bytes.len() as u64, state), None));
        }

        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let scan = record::scan(&bytes)?;
        let mut recovery = None;
        if let Some(damage) = &scan.damage {
            let backup = backup_path(path);
            std::fs::copy(path, &backup).map_err(io_err(path))?;
            if !repair {
                return Err(StoreError::Corruption {
                    path: path.to_path_buf(),
                    offset: scan.valid_len,
                    reason: damage.clone(),
                    backup,
                });
            }
            tracing::warn!(path = %path.display(), backup = %backup.display(), reason = %damage, "truncating damaged store tail");
            let found = Recovery {
                backup,
                valid_len: scan.valid_len,
                dropped_bytes: bytes.len() as u64 - scan.valid_len,
                reason: damage.clone(),
            };
            if scan.valid_len == 0 {
                // nothing salvageable: start over
                std::fs::remove_file(path).map_err(io_err(path))?;
                let (store, _) = Store::open_inner(path, created_at, false)?;
                return Ok((store, Some(found)));
            }
            recovery = Some(found);
        }
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        if recovery.is_some() {
            file.set_len(scan.valid_len).map_err(io_err(path))?;
            file.sync_all().map_err(io_err(path))?;
        }
        let mut state = StoreState::default();
        for r in scan.records {
            state.apply(r);
        }
        Ok((Store::from_parts(path, file, scan.valid_len, state), recovery))
    }

    fn from_parts(path: &Path, mut file: File, len: u64, state: StoreState) -> Store {
        let _ = file.seek(SeekFrom::Start(len));
        Store {
            path: path.to_path_buf(),
            max_bytes: 0,
            inner: Mutex::new(Inner {
                file,
                len,
                state,
                appends: 0,
                fault: None,
                poisoned: false,
                redact_titles: false,
            }),
        }
    }

    /// Caps the file size; 0 means unlimited.
    pub fn with_max_bytes(mut self, max_bytes: u64) -> Self {
        self.max_bytes = max_bytes;
        self
    }

    pub fn set_redact_titles(&self, redact: bool) {
        self.lock().redact_titles = redact;
    }

    pub fn inject_fault(&self, plan: FaultPlan) {
        self.lock().fault = Some(plan);
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Durably appends `record` and folds it into the in-memory state.
    pub fn append(&self, record: Record) -> Result<(), StoreError> {
        let mut inner = self.lock();
        self.append_locked(&mut inner, record)
    }

    fn append_locked(&self, inner: &mut Inner, mut record: Record) -> Result<(), StoreError> {
        if inner.poisoned {
            return Err(StoreError::Poisoned);
        }
        if inner.redact_titles {
            if let Record::Event(e) = &mut record {
                e.event = e.event.redacted();
            }
        }
        let frame = record::encode(&record);
        if self.max_bytes > 0 && inner.len + frame.len() as u64 > self.max_bytes {
            return Err(StoreError::Full {
                size: inner.len,
                limit: self.max_bytes,
            });
        }
        let n = inner.appends;
        inner.appends += 1;
        if let Some(plan) = inner.fault.filter(|p| p.at_append == n) {
            let keep = plan.keep_bytes.min(frame.len());
            let _ = inner.file.write_all(&frame[..keep]);
            let _ = inner.file.sync_all();
            inner.poisoned = true;
            return Err(StoreError::Io {
                path: self.path.clone(),
                source: std::io::Error::other("simulated crash"),
            });
        }
        let written = inner.file.write_all(&frame).and_then(|_| inner.file.sync_data());
        if let Err(source) = written {
            inner.poisoned = true;
            return Err(StoreError::Io {
                path: self.path.clone(),
                source,
            });
        }
        inner.len += frame.len() as u64;
        inner.state.apply(record);
        Ok(())
    }

    pub fn state(&self) -> StoreState {
        self.lock().state.clone()
    }

    pub fn size_bytes(&self) -> u64 {
        self.lock().len
    }

    pub fn append_message(
        &self,
        role: Role,
        text: &str,
        at: DateTime<Utc>,
        response_type: Option<ResponseType>,
        linked_trigger_id: Option<String>,
    ) -> Result<ChatMessage, StoreError> {
        let mut inner = self.lock();
        let msg = ChatMessage {
            id: inner.state.last_message_id() + 1,
            at,
            role,
            text: text.to_string(),
            response_type,
            linked_trigger_id,
        };
        self.append_locked(&mut inner, Record::Message(msg.clone()))?;
        Ok(msg)
    }

    /// Newest first, at most `limit`, only ids below `before_id` when given.
    pub fn list_messages(&self, limit: usize, before_id: Option<u64>) -> Vec<ChatMessage> {
        let inner = self.lock();
        inner
            .state
            .messages
            .iter()
            .rev()
            .filter(|m| before_id.is_none_or(|b| m.id < b))
            .take(limit)
            .cloned()
            .collect()
    }

    /// The last `limit` messages, oldest first.
    pub fn recent_messages(&self, limit: usize) -> Vec<ChatMessage> {
        let mut page = self.list_messages(limit, None);
        page.reverse();
        page
    }

    pub fn append_event(&self, event: &ActivityEvent, at: DateTime<Utc>) -> Result<(), StoreError> {
        self.append(Record::Event(StoredEvent {
            at,
            event: event.clone(),
        }))
    }

    pub fn append_session(&self, session: &FocusSession, at: DateTime<Utc>) -> Result<(), StoreError> {
        self.append(Record::Session(StoredSession {
            at,
            session: session.clone(),
        }))
    }

    pub fn append_game(&self, event: &GameEvent, awards: &[Award]) -> Result<(), StoreError> {
        self.append(Record::Game(GameStep {
            event: event.clone(),
            awards: awards.to_vec(),
        }))
    }

    pub fn append_notification(&self, record: &DeliveryRecord) -> Result<(), StoreError> {
        self.append(Record::Notification(record.clone()))
    }

    pub fn put_settings(&self, settings: serde_json::Value) -> Result<(), StoreError> {
        self.append(Record::Settings(settings))
    }

    pub fn put_document(&self, doc: &Document, chunks: &[DocumentChunk]) -> Result<(), StoreError> {
        self.append(Record::Document(StoredDocument {
            doc: doc.clone(),
            chunks: chunks.to_vec(),
        }))
    }

    pub fn documents(&self) -> Vec<(Document, Vec<DocumentChunk>)> {
        self.lock()
            .state
            .documents
            .values()
            .map(|d| (d.doc.clone(), d.chunks.clone()))
            .collect()
    }

    /// Rewrites the log with only live records, dropping activity events
    /// and sessions recorded before `now - retention_days`.
    pub fn compact(&self, now: DateTime<Utc>, retention_days: u32) -> Result<u64, StoreError> {
        let mut inner = self.lock();
        if inner.poisoned {
            return Err(StoreError::Poisoned);
        }
        let cutoff = now - Duration::days(i64::from(retention_days));
        let mut state = inner.state.clone();
        state.events.retain(|e| e.at >= cutoff);
        state.sessions.retain(|s| s.at >= cutoff);
        // input bursts are already bucketed; only zero-count ones are noise
        state
            .events
            .retain(|e| !matches!(e.event.kind, EventKind::InputBurst { keys: 0, clicks: 0 }));

        let mut bytes = record::file_header();
        for r in state.records() {
            bytes.extend(record::encode(&r));
        }
        let tmp = self.path.with_extension("compact");
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(&bytes).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        std::fs::rename(&tmp, &self.path).map_err(io_err(&self.path))?;
        if let Some(dir) = self.path.parent() {
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(&self.path)
            .map_err(io_err(&self.path))?;
        file.seek(SeekFrom::End(0)).map_err(io_err(&self.path))?;
        let saved = inner.len.saturating_sub(bytes.len() as u64);
        inner.file = file;
        inner.len = bytes.len() as u64;
        inner.state = state;
        Ok(saved)
    }

    /// Reopens the file from disk and compares it with memory.
    pub fn verify_reload(&self) -> Result<bool, StoreError> {
        let bytes = std::fs::read(&self.path).map_err(io_err(&self.path))?;
        let scan = record::scan(&bytes)?;
        if let Some(reason) = scan.damage {
            return Err(StoreError::Corruption {
                path: self.path.clone(),
                offset: scan.valid_len,
                reason,
                backup: PathBuf::new(),
            });
        }
        let mut state = StoreState::default();
        for r in scan.records {
            state.apply(r);
        }
        Ok(state == self.lock().state)
    }
}
