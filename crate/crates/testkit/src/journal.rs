//! Expected store contents after a sequence of acknowledged writes.
//!
//! Messages get ids `1, 2, ...` in write order; events and game events
//! accumulate; a document write replaces any earlier document with the same
//! id; settings keep the last write.

use std::collections::BTreeMap;

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Message(String),
    Event(f64),
    Game(f64),
    Document {
        id: String,
        text: String,
        embedding: Vec<f64>,
    },
    Settings(u32),
}

#[derive(Debug, Default, PartialEq)]
pub struct Model {
    pub messages: Vec<(u64, String)>,
    pub events: Vec<f64>,
    pub games: Vec<f64>,
    /// Document id to text and embedding bits.
    pub documents: BTreeMap<String, (String, Vec<u64>)>,
    pub settings: Option<u32>,
}

impl Model {
    pub fn apply(&mut self, op: &Op) {
        match op {
            Op::Message(text) => self.messages.push((self.messages.len() as u64 + 1, text.clone())),
            Op::Event(t) => self.events.push(*t),
            Op::Game(t) => self.games.push(*t),
            Op::Document { id, text, embedding } => {
                let bits = embedding.iter().map(|x| x.to_bits()).collect();
                self.documents.insert(id.clone(), (text.clone(), bits));
            }
            Op::Settings(n) => self.settings = Some(*n),
        }
    }

    pub fn of(ops: &[Op]) -> Model {
        let mut m = Model::default();
        ops.iter().for_each(|op| m.apply(op));
        m
    }
}

/// `n` writes with increasing times, multi-byte text and a few documents
/// rewritten under the same id.
pub fn random_ops(rng: &mut impl Rng, n: usize) -> Vec<Op> {
    (0..n)
        .map(|i| match rng.gen_range(0..5) {
            0 => Op::Message(format!("message {i} {}", "é".repeat(rng.gen_range(0..40)))),
            1 => Op::Event(i as f64),
            2 => Op::Game(i as f64),
            3 => Op::Document {
                id: format!("doc{}", rng.gen_range(0..4)),
                text: format!("text {i}"),
                embedding: (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            },
            _ => Op::Settings(i as u32),
        })
        .collect()
}
