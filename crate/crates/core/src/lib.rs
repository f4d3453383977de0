//! Interpretable graph classification with graph-pattern programs.
//!
//! A model has two stages. The first is a layer of GDL programs mined from
//! labelled training graphs; each program turns a graph into one coordinate
//! of its representation (1.0 when the graph contains the pattern). The
//! second is a small multi-layer perceptron over that representation.
//! Because every input coordinate is a readable pattern, attributions over
//! the representation translate directly into subgraph explanations.

pub mod data;
pub mod explain;
pub mod fixtures;
pub mod gdl;
pub mod graph;
pub mod matcher;
pub mod mining;
pub mod model;

pub use gdl::{parse_program, print_program, Description, EdgeDescription, GdlError, Interval, IntervalVec, NodeDescription, Program};
pub use graph::{Graph, GraphError, Label};
pub use matcher::{MatchError, Pattern, Valuation, DEFAULT_BUDGET};
pub use mining::{Layer, MiningConfig, MiningError, ScoredProgram, TrainingSet};
pub use model::{Activation, Mlp, Model, ModelError, Prediction, TrainConfig};
pub use explain::{ExplainConfig, ExplainError, Explanation, SubgraphExplanation};
