//! Synthetic corpora with a known class signal.
#![allow(dead_code)]

use edu4fd::corpus::{Document, Label};
use edu4fd::discourse::{Edge, Relation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MARKER: &str = "zqmarker";

fn word(rng: &mut ChaCha8Rng) -> String {
    format!("w{}", rng.gen_range(0..40))
}

/// One document of 3 to 5 EDUs, each of 3 to 6 pool words, joined by a
/// random tree whose edges all carry `rel`.
fn doc(rng: &mut ChaCha8Rng, id: String, label: Label, rel: Relation, marker: bool) -> Document {
    let n = rng.gen_range(3..=5);
    let mut edus: Vec<Vec<String>> = (0..n)
        .map(|_| (0..rng.gen_range(3..=6)).map(|_| word(rng)).collect())
        .collect();
    if marker {
        let e = rng.gen_range(0..n);
        let pos = rng.gen_range(0..=edus[e].len());
        edus[e].insert(pos, MARKER.to_string());
    }
    let edges = (1..n).map(|d| Edge::new(rng.gen_range(0..d), d, rel)).collect();
    let edus: Vec<String> = edus.iter().map(|e| e.join(" ")).collect();
    let mut d = Document::new(id, edus.join(" "), label);
    d.edus = Some(edus);
    d.graph = Some(edges);
    d
}

fn corpus(n: usize, seed: u64, prefix: &str, marker: bool) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (label, rel) = if i % 2 == 0 {
                (Label::Real, Relation::Elaboration)
            } else {
                (Label::Fake, Relation::Contrast)
            };
            doc(&mut rng, format!("{prefix}{i}"), label, rel, marker && label == Label::Fake)
        })
        .collect()
}

/// Fake documents carry the marker token and Contrast edges; real ones
/// carry Elaboration edges.
pub fn separable(n: usize, seed: u64, prefix: &str) -> Vec<Document> {
    corpus(n, seed, prefix, true)
}

/// The class shows only in the edge relation. Words and tree shapes are
/// drawn from the same distribution for both classes.
pub fn graph_only(n: usize, seed: u64, prefix: &str) -> Vec<Document> {
    corpus(n, seed, prefix, false)
}
