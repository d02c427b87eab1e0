use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub doc_id: String,
    pub chunk_index: usize,
    /// Half-open char range within the source document.
    pub span: (usize, usize),
    pub text: String,
    #[serde(skip)]
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredChunk {
    pub chunk: Arc<DocumentChunk>,
    pub score: f64,
}

impl ScoredChunk {
    pub fn doc_id(&self) -> &str {
        &self.chunk.doc_id
    }

    /// Result order: score descending, then (doc_id, chunk_index) ascending.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.chunk.doc_id.cmp(&other.chunk.doc_id))
            .then_with(|| self.chunk.chunk_index.cmp(&other.chunk.chunk_index))
    }
}

/// Heap entry whose maximum is the worst-ranked candidate.
struct Worst(ScoredChunk);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// Cosine of two unit vectors, clamped against rounding.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0)
}

/// Exhaustive in-memory vector index. Cloning is cheap: chunks are shared.
#[derive(Debug, Clone, Default)]
pub struct FlatIndex {
    docs: BTreeMap<String, Vec<Arc<DocumentChunk>>>,
    dimension: Option<usize>,
}

impl FlatIndex {
    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.docs.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    pub fn chunks(&self, doc_id: &str) -> Option<&[Arc<DocumentChunk>]> {
        self.docs.get(doc_id).map(Vec::as_slice)
    }

    pub fn contains(&self, doc_id: &str, chunk_index: usize) -> bool {
        self.docs
            .get(doc_id)
            .is_some_and(|c| c.iter().any(|c| c.chunk_index == chunk_index))
    }

    /// Replaces every chunk of `doc_id`. Returns false when the embedding
    /// dimension disagrees with what the index already holds.
    pub fn replace(&mut self, doc_id: &str, chunks: Vec<DocumentChunk>) -> bool {
        let Some(dim) = chunks.first().map(|c| c.embedding.len()) else {
            self.docs.remove(doc_id);
            return true;
        };
        let only_doc = self.docs.len() == 1 && self.docs.contains_key(doc_id);
        if chunks.iter().any(|c| c.embedding.len() != dim)
            || (self.dimension.is_some_and(|d| d != dim) && !only_doc && !self.docs.is_empty())
        {
            return false;
        }
        self.dimension = Some(dim);
        self.docs
            .insert(doc_id.to_string(), chunks.into_iter().map(Arc::new).collect());
        true
    }

    pub fn remove(&mut self, doc_id: &str) -> bool {
        let removed = self.docs.remove(doc_id).is_some();
        if self.docs.is_empty() {
            self.dimension = None;
        }
        removed
    }

    /// Top `k` chunks with score ≥ `min_score`.
    pub fn query(&self, embedding: &[f64], k: usize, min_score: f64) -> Vec<ScoredChunk> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
        for chunk in self.docs.values().flatten() {
            if chunk.embedding.len() != embedding.len() {
                continue;
            }
            let score = cosine(embedding, &chunk.embedding);
            if score < min_score {
                continue;
            }
            heap.push(Worst(ScoredChunk {
                chunk: Arc::clone(chunk),
                score,
            }));
            if heap.len() > k {
                heap.pop();
            }
        }
        let mut out: Vec<ScoredChunk> = heap.into_iter().map(|w| w.0).collect();
        out.sort_by(ScoredChunk::rank_cmp);
        out
    }
}
