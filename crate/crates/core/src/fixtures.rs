//! A four-graph toy dataset and two hand-written programs that separate its
//! labels. Used by the docs, the tests and the CLI smoke runs.
//!
//! ```text
//! G1 (label 1): <4.0> -> <2.0> -> <1.0>, <2.0> -> <1.0>
//! G2 (label 2): <1.0> -> <2.0> -> <4.0>, <2.0> -> <1.0>
//! G3 (label 1): <3.0> -> <2.0> -> <1.0> -> <1.0>
//! G4 (label 2): <1.0> -> <2.0> -> <1.0> -> <3.0>
//! ```

use rand::seq::SliceRandom;
use rand::Rng;

use crate::gdl::{parse_program, Description, EdgeDescription, Interval, IntervalVec, NodeDescription, Program};
use crate::graph::Graph;

pub const PROGRAM_A: &str = "node x <[3.0, 4.0]>\nnode y <[2.0, 2.0]>\nnode z <[1.0, 1.0]>\nedge (x, y)\nedge (y, z)";
pub const PROGRAM_B: &str = "node x <[1.0, 1.0]>\nnode y <[0.0, 5.0]>\nnode z <[1.0, 1.0]>\nedge (x, y)\nedge (y, z)";

fn chain(values: [f64; 4], edges: [(usize, usize); 3], label: i64) -> Graph {
    Graph::new(1, 0, values.iter().map(|&v| vec![v]).collect(), edges.to_vec(), vec![])
        .expect("toy graph is valid")
        .with_label(label)
}

pub fn toy_graphs() -> [Graph; 4] {
    [
        chain([4.0, 2.0, 1.0, 1.0], [(0, 1), (1, 2), (1, 3)], 1),
        chain([1.0, 2.0, 4.0, 1.0], [(0, 1), (1, 2), (1, 3)], 2),
        chain([3.0, 2.0, 1.0, 1.0], [(0, 1), (1, 2), (2, 3)], 1),
        chain([1.0, 2.0, 1.0, 3.0], [(0, 1), (1, 2), (2, 3)], 2),
    ]
}

/// Matches the label-1 toy graphs: a high node feeding a `<2.0>` node that
/// feeds a `<1.0>` node.
pub fn program_a() -> Program {
    parse_program(PROGRAM_A).expect("valid program")
}

/// Matches the label-2 toy graphs: `<1.0> -> * -> <1.0>`.
pub fn program_b() -> Program {
    parse_program(PROGRAM_B).expect("valid program")
}

/// Small integer bounds, so random programs and graphs match often.
pub const SMALL_BOUNDS: [f64; 4] = [0.0, 1.0, 2.0, 3.0];

/// Random graph with 1 to `max_nodes` nodes, each ordered pair (self-loops
/// included) an edge with probability 0.3, and features drawn from
/// `{0, 1, 2}`.
pub fn random_graph(rng: &mut impl Rng, max_nodes: usize, node_dim: usize, edge_dim: usize) -> Graph {
    let n = rng.random_range(1..=max_nodes);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if rng.random_bool(0.3) {
                edges.push((a, b));
            }
        }
    }
    let mut feature = |dim: usize| (0..dim).map(|_| rng.random_range(0..3) as f64).collect::<Vec<f64>>();
    let nodes = (0..n).map(|_| feature(node_dim)).collect();
    let edge_feats = if edge_dim == 0 {
        Vec::new()
    } else {
        edges.iter().map(|_| feature(edge_dim)).collect()
    };
    Graph::new(node_dim, edge_dim, nodes, edges, edge_feats).expect("random graph is valid")
}

/// Random program over 1 to `max_vars` variables. Interval ends come from
/// `bounds` or are infinite; each ordered variable pair is an edge with
/// probability 0.25.
pub fn random_program(rng: &mut impl Rng, max_vars: usize, node_dim: usize, edge_dim: usize, bounds: &[f64]) -> Program {
    const STEMS: [&str; 4] = ["x", "v", "n_", "Q"];
    let k = rng.random_range(1..=max_vars);
    let names: Vec<String> = (0..k).map(|i| format!("{}{i}", STEMS[rng.random_range(0..STEMS.len())])).collect();
    let mut descs = Vec::new();
    for name in &names {
        descs.push(Description::Node(NodeDescription {
            var: name.clone(),
            constraints: random_constraints(rng, node_dim, bounds, 0.6),
        }));
    }
    for a in &names {
        for b in &names {
            if rng.random_bool(0.25) {
                descs.push(Description::Edge(EdgeDescription {
                    src: a.clone(),
                    dst: b.clone(),
                    constraints: random_constraints(rng, edge_dim, bounds, 0.5),
                }));
            }
        }
    }
    descs.shuffle(rng);
    Program::new(descs).expect("names are distinct and edges use declared names")
}

fn random_constraints(rng: &mut impl Rng, dim: usize, bounds: &[f64], p: f64) -> Option<IntervalVec> {
    if dim == 0 || !rng.random_bool(p) {
        return None;
    }
    let intervals = (0..dim)
        .map(|_| {
            let lo = if rng.random_bool(0.15) {
                f64::NEG_INFINITY
            } else {
                bounds[rng.random_range(0..bounds.len())]
            };
            let hi = if rng.random_bool(0.15) {
                f64::INFINITY
            } else {
                let above: Vec<f64> = bounds.iter().copied().filter(|&b| b >= lo).collect();
                if above.is_empty() {
                    f64::INFINITY
                } else {
                    above[rng.random_range(0..above.len())]
                }
            };
            Interval::new(lo, hi).expect("lo <= hi")
        })
        .collect();
    Some(IntervalVec::new(intervals))
}
