//! Deterministic offline provider.
//!
//! Embeddings are hashed bags of words: lowercase, split on whitespace,
//! FNV-1a each token into one of [`STUB_DIMENSION`] buckets, count, and
//! normalize. Generation echoes the prompt's template id and first grounding
//! document as `[template|doc_id]` followed by a fixed supportive sentence.

use std::time::Duration;

use super::{Provider, ProviderError};

pub const STUB_DIMENSION: usize = 256;

pub const STUB_SENTENCE: &str = " One small step at a time: pick the next tiny task and give it ten focused minutes.";

/// Marker line the prompt renderer writes so the stub can echo the template.
pub const TEMPLATE_MARKER: &str = "template: ";
/// Prefix of each grounding entry in the rendered RETRIEVED section.
pub const DOC_MARKER: &str = "[doc_id=";

#[derive(Debug, Clone, Copy, Default)]
pub struct StubProvider;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Raw bucket counts before normalization. Text with no tokens hashes the
/// empty token, so every input maps to a non-zero vector.
pub fn bag_of_words(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; STUB_DIMENSION];
    let lower = text.to_lowercase();
    let mut any = false;
    for token in lower.split_whitespace() {
        v[(fnv1a(token.as_bytes()) % STUB_DIMENSION as u64) as usize] += 1.0;
        any = true;
    }
    if !any {
        v[(fnv1a(b"") % STUB_DIMENSION as u64) as usize] = 1.0;
    }
    v
}

/// `(template_id, first doc_id)` as found in a rendered prompt.
pub fn prompt_markers(prompt: &str) -> (String, String) {
    let template = prompt
        .lines()
        .find_map(|l| l.strip_prefix(TEMPLATE_MARKER))
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string());
    let retrieved = prompt.split("## RETRIEVED").nth(1).unwrap_or("");
    let retrieved = retrieved.split("\n## ").next().unwrap_or("");
    let doc = retrieved
        .lines()
        .find_map(|l| l.trim_start().strip_prefix(DOC_MARKER))
        .and_then(|rest| rest.split([' ', ']']).next())
        .map(str::to_string)
        .unwrap_or_else(|| "none".to_string());
    (template, doc)
}

impl Provider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn generate(&self, prompt: &str, _temperature: f64, _timeout: Duration) -> Result<String, ProviderError> {
        let (template, doc) = prompt_markers(prompt);
        Ok(format!("[{template}|{doc}]{STUB_SENTENCE}"))
    }

    fn embed(&self, texts: &[String], _timeout: Duration) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts.iter().map(|t| bag_of_words(t)).collect())
    }
}
