//! On-disk record framing.
//!
//! ```text
//! file   := magic "TETHERDB" | schema u32 LE | frame*
//! frame  := len u32 LE | crc32 u32 LE | kind u8 | body[len - 1]
//! ```
//!
//! `len` counts kind and body; the CRC covers the same bytes. Bodies are
//! JSON, except documents, whose embeddings follow the JSON as raw f64 LE so
//! they round-trip bit for bit.

use serde::{Deserialize, Serialize};

use super::{ChatMessage, GameStep, StoreError, StoreManifest, StoredDocument, StoredEvent, StoredSession};
use crate::notifier::DeliveryRecord;
use crate::rag::{Document, DocumentChunk};

pub const MAGIC: &[u8; 8] = b"TETHERDB";
pub const SCHEMA_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Manifest(StoreManifest),
    Message(ChatMessage),
    Event(StoredEvent),
    Session(StoredSession),
    Game(GameStep),
    Document(StoredDocument),
    Notification(DeliveryRecord),
    Settings(serde_json::Value),
}

#[derive(Serialize, Deserialize)]
struct DocumentHead {
    doc: Document,
    chunks: Vec<DocumentChunk>,
    dimension: usize,
}

pub fn file_header() -> Vec<u8> {
    let mut v = MAGIC.to_vec();
    v.extend(SCHEMA_VERSION.to_le_bytes());
    v
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("store records serialize")
}

fn body(record: &Record) -> (u8, Vec<u8>) {
    match record {
        Record::Manifest(m) => (1, json(m)),
        Record::Message(m) => (2, json(m)),
        Record::Event(e) => (3, json(e)),
        Record::Session(s) => (4, json(s)),
        Record::Game(g) => (5, json(g)),
        Record::Document(d) => {
            let dimension = d.chunks.first().map_or(0, |c| c.embedding.len());
            let head = json(&DocumentHead {
                doc: d.doc.clone(),
                chunks: d.chunks.clone(),
                dimension,
            });
            let mut out = (head.len() as u32).to_le_bytes().to_vec();
            out.extend(head);
            for c in &d.chunks {
                for x in &c.embedding {
                    out.extend(x.to_le_bytes());
                }
            }
            (6, out)
        }
        Record::Notification(n) => (7, json(n)),
        Record::Settings(s) => (8, json(s)),
    }
}

pub fn encode(record: &Record) -> Vec<u8> {
    let (kind, body) = body(record);
    let mut payload = Vec::with_capacity(body.len() + 1);
    payload.push(kind);
    payload.extend(body);
    let mut frame = Vec::with_capacity(payload.len() + 8);
    frame.extend((payload.len() as u32).to_le_bytes());
    frame.extend(crc32fast::hash(&payload).to_le_bytes());
    frame.extend(payload);
    frame
}

fn decode_document(body: &[u8]) -> Result<StoredDocument, String> {
    let head_len = u32::from_le_bytes(body.get(..4).ok_or("short document")?.try_into().expect("4 bytes")) as usize;
    let head_bytes = body.get(4..4 + head_len).ok_or("short document head")?;
    let mut head: DocumentHead = serde_json::from_slice(head_bytes).map_err(|e| e.to_string())?;
    let mut rest = &body[4 + head_len..];
    if rest.len() != head.chunks.len() * head.dimension * 8 {
        return Err("embedding length mismatch".into());
    }
    for c in &mut head.chunks {
        let (mine, tail) = rest.split_at(head.dimension * 8);
        c.embedding = mine
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        rest = tail;
    }
    Ok(StoredDocument {
        doc: head.doc,
        chunks: head.chunks,
    })
}

fn decode(kind: u8, body: &[u8]) -> Result<Record, String> {
    fn j<T: for<'de> Deserialize<'de>>(b: &[u8]) -> Result<T, String> {
        serde_json::from_slice(b).map_err(|e| e.to_string())
    }
    Ok(match kind {
        1 => Record::Manifest(j(body)?),
        2 => Record::Message(j(body)?),
        3 => Record::Event(j(body)?),
        4 => Record::Session(j(body)?),
        5 => Record::Game(j(body)?),
        6 => Record::Document(decode_document(body)?),
        7 => Record::Notification(j(body)?),
        8 => Record::Settings(j(body)?),
        other => return Err(format!("unknown record kind {other}")),
    })
}

pub struct Scan {
    pub records: Vec<Record>,
    /// Length of the intact prefix (header plus whole valid frames).
    pub valid_len: u64,
    /// Why reading stopped early, if it did.
    pub damage: Option<String>,
}

pub fn scan(bytes: &[u8]) -> Result<Scan, StoreError> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Ok(Scan {
            records: Vec::new(),
            valid_len: 0,
            damage: Some("missing or damaged file header".into()),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != SCHEMA_VERSION {
        return Err(StoreError::Schema {
            found: version,
            expected: SCHEMA_VERSION,
        });
    }
    let mut records = Vec::new();
    let mut at = HEADER_LEN;
    let damage = loop {
        if at == bytes.len() {
            break None;
        }
        if bytes.len() - at < 8 {
            break Some("torn frame header".to_string());
        }
        let len = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        let crc = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().expect("4 bytes"));
        let Some(payload) = bytes.get(at + 8..at + 8 + len) else {
            break Some("torn frame body".to_string());
        };
        if len == 0 || crc32fast::hash(payload) != crc {
            break Some("checksum mismatch".to_string());
        }
        match decode(payload[0], &payload[1..]) {
            Ok(r) => records.push(r),
            Err(e) => break Some(format!("undecodable record: {e}")),
        }
        at += 8 + len;
    };
    Ok(Scan {
        records,
        valid_len: at as u64,
        damage,
    })
}
