//! Shared inputs for the benchmarks.

use gdlnn::data::generate_ba2motifs;
use gdlnn::mining::TrainingSet;
use gdlnn::{parse_program, Program};

/// A five-node house: a roof over a square, all edges both ways.
pub const HOUSE: &str = "node a\nnode b\nnode c\nnode d\nnode e\n\
edge (a, b)\nedge (b, a)\nedge (a, c)\nedge (c, a)\nedge (b, c)\nedge (c, b)\n\
edge (b, d)\nedge (d, b)\nedge (c, e)\nedge (e, c)\nedge (d, e)\nedge (e, d)";

pub fn house() -> Program {
    parse_program(HOUSE).expect("valid program")
}

/// Seeded BA-2Motifs graphs as a training set.
pub fn ba_training_set(count: usize, seed: u64) -> TrainingSet {
    TrainingSet::from_labeled(generate_ba2motifs(count, seed).graphs().to_vec()).expect("generated graphs are labelled")
}
