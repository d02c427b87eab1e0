use std::sync::Arc;

use chrono::Utc;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use tether_core::config::RagConfig;
use tether_core::llm::Gateway;
use tether_core::rag::{chunk_spans, chunk_text, Document, RagEngine};
use tether_testkit::{retrieval, text};

fn engine(chunk_size: usize, overlap: usize) -> RagEngine {
    RagEngine::new(
        Arc::new(Gateway::stub()),
        RagConfig {
            chunk_size,
            overlap,
            ..RagConfig::default()
        },
    )
}

/// Indexes `n` random documents and returns the oracle's view of the chunks.
fn corpus(rng: &mut StdRng, rag: &RagEngine, n: usize, vocab: &[String]) -> Vec<(String, usize, String)> {
    let p = rag.params();
    let mut chunks = Vec::new();
    for i in 0..n {
        let words = rng.gen_range(1..400);
        let body = retrieval::random_words(rng, vocab, words);
        let doc = Document::reference(&format!("doc {i:04}"), body.clone(), Utc::now());
        let doc_id = doc.doc_id.clone();
        rag.index_document(doc).unwrap();
        for (j, piece) in text::windows(&body, p.chunk_size, p.overlap).into_iter().enumerate() {
            chunks.push((doc_id.clone(), j, piece));
        }
    }
    chunks
}

fn ranked(rag: &RagEngine, q: &str, k: usize, min: f64) -> Vec<(String, usize, f64)> {
    rag.query(q, k, min)
        .unwrap()
        .into_iter()
        .map(|h| (h.chunk.doc_id.clone(), h.chunk.chunk_index, h.score))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn query_equals_exhaustive_scan(
        seed in any::<u64>(),
        docs in 1usize..60,
        k in 1usize..12,
        min in prop_oneof![Just(0.0), Just(0.25), 0.0f64..0.6],
        size in 200usize..1600,
    ) {
        let mut rng = StdRng::seed_from_u64(seed);
        let vocab = retrieval::vocabulary(rng.gen_range(5..200));
        let rag = engine(size, size / 8);
        let chunks = corpus(&mut rng, &rag, docs, &vocab);
        prop_assert_eq!(rag.snapshot().len(), chunks.len());
        for _ in 0..10 {
            let len = rng.gen_range(1..12);
            let q = retrieval::random_words(&mut rng, &vocab, len);
            let got = ranked(&rag, &q, k, min);
            let want: Vec<_> = retrieval::top_k(&chunks, &q, k, min)
                .into_iter()
                .map(|h| (h.doc_id, h.chunk_index, h.score))
                .collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn smaller_k_is_a_prefix(seed in any::<u64>(), k in 1usize..10) {
        let mut rng = StdRng::seed_from_u64(seed);
        let vocab = retrieval::vocabulary(30);
        let rag = engine(400, 50);
        corpus(&mut rng, &rag, 30, &vocab);
        let q = retrieval::random_words(&mut rng, &vocab, 4);
        let big = ranked(&rag, &q, k + 5, 0.0);
        let small = ranked(&rag, &q, k, 0.0);
        prop_assert_eq!(&big[..small.len()], &small[..]);
        prop_assert!(big.windows(2).all(|w| w[0].2 >= w[1].2));
    }

    #[test]
    fn spans_cover_text_with_fixed_overlap(len in 1usize..20_000, size in 2usize..2000, overlap_frac in 0.0f64..0.95) {
        let overlap = ((size as f64) * overlap_frac) as usize;
        let spans = chunk_spans(len, size, overlap).unwrap();
        prop_assert_eq!(spans[0].start, 0);
        prop_assert_eq!(spans.last().unwrap().end, len);
        for w in spans.windows(2) {
            prop_assert_eq!(w[0].len(), size);
            prop_assert_eq!(w[0].end - w[1].start, overlap);
        }
        prop_assert!(spans.iter().all(|s| !s.is_empty() && s.len() <= size));
    }

    #[test]
    fn chunks_reassemble_to_input(seed in any::<u64>(), len in 1usize..8000, size in 2usize..1700) {
        let mut rng = StdRng::seed_from_u64(seed);
        let overlap = rng.gen_range(0..size);
        let input = text::random_text(&mut rng, len);
        let pieces: Vec<String> = chunk_text(&input, size, overlap).unwrap().into_iter().map(|(_, t)| t).collect();
        prop_assert_eq!(text::reassemble(&pieces, overlap), input);
    }
}

#[test]
fn identical_text_scores_one_and_ranks_first() {
    let rag = engine(1600, 200);
    rag.index_document(Document::reference(
        "a",
        "plan the afternoon in short blocks".into(),
        Utc::now(),
    ))
    .unwrap();
    rag.index_document(Document::reference("b", "afternoon coffee".into(), Utc::now()))
        .unwrap();
    let hits = rag.query("plan the afternoon in short blocks", 4, 0.0).unwrap();
    assert_eq!(hits[0].doc_id(), "ref:a");
    assert!((hits[0].score - 1.0).abs() < 1e-12);
}

#[test]
fn disjoint_fixture_pair_is_orthogonal() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let a = std::fs::read_to_string(dir.join("disjoint_a.txt")).unwrap();
    let b = std::fs::read_to_string(dir.join("disjoint_b.txt")).unwrap();
    let e = Gateway::stub().embed_batch(&[a, b]).unwrap();
    let cos: f64 = e[0].iter().zip(&e[1]).map(|(x, y)| x * y).sum();
    // frozen from the independent hashed bag-of-words oracle
    assert_eq!(cos, 0.0);
}

#[test]
fn stub_embeddings_match_oracle_bit_for_bit() {
    let mut rng = StdRng::seed_from_u64(11);
    let vocab = retrieval::vocabulary(400);
    let (left, right) = vocab.split_at(200);
    for _ in 0..200 {
        let a = retrieval::random_words(&mut rng, left, 40);
        let b = retrieval::random_words(&mut rng, right, 40);
        let ea = retrieval::embed(&a);
        let eb = retrieval::embed(&b);
        let cos: f64 = ea.iter().zip(&eb).map(|(x, y)| x * y).sum();
        let gw = Gateway::stub().embed_batch(&[a.clone(), b.clone()]).unwrap();
        let engine_cos: f64 = gw[0].iter().zip(&gw[1]).map(|(x, y)| x * y).sum();
        assert_eq!(cos.to_bits(), engine_cos.to_bits());
    }
}

#[test]
fn reindexing_replaces_old_chunks() {
    let rag = engine(100, 10);
    let long = "word ".repeat(200);
    assert!(rag.index_document(Document::reference("x", long, Utc::now())).unwrap() > 1);
    assert_eq!(
        rag.index_document(Document::reference("x", "short".into(), Utc::now()))
            .unwrap(),
        1
    );
    assert_eq!(rag.snapshot().len(), 1);
}

#[test]
fn ten_thousand_chunk_index_matches_exhaustive_scan() {
    let mut rng = StdRng::seed_from_u64(10_000);
    let vocab = retrieval::vocabulary(120);
    let rag = engine(60, 10);
    let mut chunks = Vec::new();
    let mut i = 0;
    while chunks.len() < 9_900 {
        let body = retrieval::random_words(&mut rng, &vocab, 60);
        let doc = Document::reference(&format!("bulk {i:05}"), body.clone(), Utc::now());
        let doc_id = doc.doc_id.clone();
        rag.index_document(doc).unwrap();
        chunks.extend(
            text::windows(&body, 60, 10)
                .into_iter()
                .enumerate()
                .map(|(j, t)| (doc_id.clone(), j, t)),
        );
        i += 1;
    }
    assert!(chunks.len() <= 10_000);
    assert_eq!(rag.snapshot().len(), chunks.len());
    for _ in 0..3 {
        let q = retrieval::random_words(&mut rng, &vocab, 5);
        let want: Vec<_> = retrieval::top_k(&chunks, &q, 8, 0.0)
            .into_iter()
            .map(|h| (h.doc_id, h.chunk_index, h.score))
            .collect();
        assert_eq!(ranked(&rag, &q, 8, 0.0), want);
    }
}
