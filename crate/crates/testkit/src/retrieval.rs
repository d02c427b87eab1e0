//! Exhaustive cosine scan over hashed bag-of-words embeddings.
//!
//! The embedding lowercases the text, splits it on whitespace, puts each
//! token into bucket `fnv1a_64(token) mod 256`, counts, and scales to unit
//! length. A text with no tokens counts the empty token once.

use rand::Rng;

pub const DIMENSION: usize = 256;

fn fnv1a_64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325_u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

pub fn embed(text: &str) -> Vec<f64> {
    let mut counts = vec![0.0_f64; DIMENSION];
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower.split_whitespace().collect();
    let tokens = if tokens.is_empty() { vec![""] } else { tokens };
    for tok in tokens {
        counts[(fnv1a_64(tok.as_bytes()) % DIMENSION as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    counts.iter().map(|c| c / norm).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub doc_id: String,
    pub chunk_index: usize,
    pub score: f64,
}

/// Scores every chunk, keeps those at or above `min_score`, sorts by score
/// descending then `(doc_id, chunk_index)` ascending, and takes `k`.
pub fn top_k(chunks: &[(String, usize, String)], query: &str, k: usize, min_score: f64) -> Vec<Hit> {
    let q = embed(query);
    let mut all: Vec<Hit> = chunks
        .iter()
        .map(|(doc_id, chunk_index, text)| {
            let e = embed(text);
            let dot: f64 = q.iter().zip(&e).map(|(a, b)| a * b).sum();
            Hit {
                doc_id: doc_id.clone(),
                chunk_index: *chunk_index,
                score: dot.clamp(-1.0, 1.0),
            }
        })
        .filter(|h| h.score >= min_score)
        .collect();
    all.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
            .then_with(|| a.chunk_index.cmp(&b.chunk_index))
    });
    all.truncate(k);
    all
}

/// A vocabulary of `n` distinct lowercase words.
pub fn vocabulary(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}{}", ["a", "e", "o", "u"][i % 4])).collect()
}

/// `len` words drawn from `vocab` with a skew toward the front, so texts
/// share words often enough to produce ties and near ties.
pub fn random_words(rng: &mut impl Rng, vocab: &[String], len: usize) -> String {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let limit = if rng.gen_bool(0.5) {
            vocab.len().min(20)
        } else {
            vocab.len()
        };
        let w = &vocab[rng.gen_range(0..limit)];
        out.push(if rng.gen_bool(0.1) { w.to_uppercase() } else { w.clone() });
    }
    out.join(if rng.gen_bool(0.2) { "\n" } else { " " })
}
