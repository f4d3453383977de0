//! Explanations: which layer features drive a prediction, and the
//! subgraph that still carries them.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{Graph, Label};
use crate::matcher::{MatchError, Pattern};
use crate::model::{Model, Prediction};
use crate::print_program;

const RIDGE_LAMBDA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("at least 100 surrogate samples are needed, got {0}")]
    TooFewSamples(usize),
    #[error("{graphs} graphs but {explanations} explanations")]
    LengthMismatch { graphs: usize, explanations: usize },
    #[error("graph {graph}: {source}")]
    Match { graph: usize, source: MatchError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExplainConfig {
    pub samples: usize,
    /// Most features kept per explanation.
    pub select: usize,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            samples: 1000,
            select: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceResult {
    /// Predicted class the surrogate explains.
    pub class: usize,
    /// One surrogate coefficient per layer feature; inactive features get 0.
    pub weights: Vec<f64>,
    /// Positive-weight features, strongest first.
    pub selected: Vec<usize>,
    /// Weighted coefficient of determination of the surrogate.
    pub r2: f64,
    /// Every sampled mask was the same, so nothing could be fitted.
    pub degenerate: bool,
}

/// Fits a local linear surrogate of the predicted-class probability around
/// the representation `x`. Each sample draws a count uniformly from
/// `1..=a` (`a` active features) and switches off that many active features
/// chosen at random; samples are weighted by `exp(-d^2 / s^2)` where `d` is
/// the Euclidean distance between the masks (the square root of the
/// switched-off count) and `s = 0.75 sqrt(k)`.
pub fn importance_from_representation(model: &Model, x: &[f64], cfg: &ExplainConfig, rng: &mut ChaCha8Rng) -> Result<ImportanceResult, ExplainError> {
    if cfg.samples < 100 {
        return Err(ExplainError::TooFewSamples(cfg.samples));
    }
    let k = x.len();
    let class = model.predict_from_representation(x).class;
    let active: Vec<usize> = (0..k).filter(|&i| x[i] != 0.0).collect();
    let mut weights = vec![0.0; k];
    let degenerate_result = |weights| ImportanceResult {
        class,
        weights,
        selected: Vec::new(),
        r2: 0.0,
        degenerate: true,
    };
    if active.is_empty() {
        return Ok(degenerate_result(weights));
    }

    let a = active.len();
    let width = 0.75 * (k as f64).sqrt();
    // design matrix: intercept column, then one column per active feature
    let mut design = DMatrix::<f64>::zeros(cfg.samples, a + 1);
    let mut target = DVector::<f64>::zeros(cfg.samples);
    let mut kernel = DVector::<f64>::zeros(cfg.samples);
    let mut z = x.to_vec();
    for s in 0..cfg.samples {
        design[(s, 0)] = 1.0;
        // the first sample is the unperturbed representation
        let off = if s == 0 { 0 } else { rng.random_range(1..=a) };
        let mut keep = vec![true; a];
        for c in index::sample(rng, a, off) {
            keep[c] = false;
        }
        for (c, &i) in active.iter().enumerate() {
            z[i] = if keep[c] { x[i] } else { 0.0 };
            design[(s, c + 1)] = if keep[c] { 1.0 } else { 0.0 };
        }
        target[s] = model.predict_from_representation(&z).scores[class];
        kernel[s] = (-(off as f64) / (width * width)).exp();
    }
    let varied = (1..=a).any(|c| (1..cfg.samples).any(|s| design[(s, c)] != design[(0, c)]));
    if !varied {
        return Ok(degenerate_result(weights));
    }

    let weighted = DMatrix::from_fn(cfg.samples, a + 1, |s, c| design[(s, c)] * kernel[s]);
    let mut gram = design.transpose() * &weighted;
    for c in 1..=a {
        gram[(c, c)] += RIDGE_LAMBDA;
    }
    let rhs = weighted.transpose() * &target;
    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(a + 1)),
    };
    for (c, &i) in active.iter().enumerate() {
        weights[i] = beta[c + 1];
    }

    let fitted = &design * &beta;
    let total_w: f64 = kernel.sum();
    let mean = kernel.dot(&target) / total_w;
    let ss_res: f64 = (0..cfg.samples).map(|s| kernel[s] * (target[s] - fitted[s]).powi(2)).sum();
    let ss_tot: f64 = (0..cfg.samples).map(|s| kernel[s] * (target[s] - mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let mut selected: Vec<usize> = active.iter().copied().filter(|&i| weights[i] > 0.0).collect();
    selected.sort_by(|&p, &q| weights[q].total_cmp(&weights[p]).then(p.cmp(&q)));
    selected.truncate(cfg.select);
    Ok(ImportanceResult {
        class,
        weights,
        selected,
        r2,
        degenerate: false,
    })
}

pub fn important_features(g: &Graph, model: &Model, cfg: &ExplainConfig) -> Result<ImportanceResult, ExplainError> {
    let x = model.embed(g).map_err(|source| ExplainError::Match { graph: 0, source })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    importance_from_representation(model, &x, cfg, &mut rng)
}

/// One greedy pass: tries to drop each node of `kept` (highest index
/// first) while every pattern in `required` stays satisfied. Returns the
/// surviving original node indices, ascending.
pub fn refine(g: &Graph, kept: &[usize], required: &[&Pattern], budget: u64) -> Result<Vec<usize>, MatchError> {
    let mut kept = kept.to_vec();
    kept.sort_unstable();
    let mut i = kept.len();
    while i > 0 {
        i -= 1;
        let mut trial = kept.clone();
        trial.remove(i);
        let sub = g.induced_subgraph(&trial);
        let mut ok = true;
        for p in required {
            if !p.satisfies(&sub, budget)? {
                ok = false;
                break;
            }
        }
        if ok {
            kept = trial;
        }
    }
    Ok(kept)
}

/// Kept nodes of a graph together with the induced edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphExplanation {
    /// Original node indices, ascending.
    pub kept: Vec<usize>,
    /// Induced edges in original node indices.
    pub edges: Vec<(usize, usize)>,
    /// Selected features whose programs the original graph satisfies.
    pub satisfied: Vec<usize>,
    /// Refine passes until nothing changed.
    pub passes: usize,
}

impl SubgraphExplanation {
    pub fn subgraph(&self, g: &Graph) -> Graph {
        g.induced_subgraph(&self.kept)
    }

    /// The whole graph, as an explanation that removes nothing.
    pub fn whole(g: &Graph) -> Self {
        SubgraphExplanation {
            kept: (0..g.node_count()).collect(),
            edges: g.edges().to_vec(),
            satisfied: Vec::new(),
            passes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub prediction: Prediction,
    pub importance: ImportanceResult,
    pub subgraph: SubgraphExplanation,
}

/// Surrogate importance followed by refine passes until a fixpoint.
pub fn explain(g: &Graph, model: &Model, cfg: &ExplainConfig) -> Result<Explanation, ExplainError> {
    explain_with_rng(g, model, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).map_err(|e| match e {
        ExplainError::Match { source, .. } => ExplainError::Match { graph: 0, source },
        other => other,
    })
}

fn explain_with_rng(g: &Graph, model: &Model, cfg: &ExplainConfig, rng: &mut ChaCha8Rng) -> Result<Explanation, ExplainError> {
    let wrap = |source| ExplainError::Match { graph: 0, source };
    let x = model.embed(g).map_err(wrap)?;
    let prediction = model.predict_from_representation(&x);
    let importance = importance_from_representation(model, &x, cfg, rng)?;
    let satisfied: Vec<usize> = importance.selected.iter().copied().filter(|&i| x[i] != 0.0).collect();
    if importance.selected.is_empty() {
        log::warn!("empty feature selection, explanation degenerates to the empty subgraph");
    }
    let required: Vec<&Pattern> = satisfied.iter().map(|&i| &model.patterns()[i]).collect();
    let mut kept: Vec<usize> = (0..g.node_count()).collect();
    let mut passes = 0;
    loop {
        passes += 1;
        let next = refine(g, &kept, &required, model.budget()).map_err(wrap)?;
        if next == kept {
            break;
        }
        kept = next;
    }
    let sub = g.induced_subgraph(&kept);
    let edges = sub.edges().iter().map(|&(u, v)| (kept[u], kept[v])).collect();
    Ok(Explanation {
        prediction,
        importance,
        subgraph: SubgraphExplanation {
            kept,
            edges,
            satisfied,
            passes,
        },
    })
}

/// Explains every graph in parallel. Graph `i` draws its surrogate samples
/// from stream `i` of the seeded generator, so results do not depend on
/// the number of threads.
pub fn explain_all(graphs: &[Graph], model: &Model, cfg: &ExplainConfig) -> Result<Vec<Explanation>, ExplainError> {
    graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            explain_with_rng(g, model, cfg, &mut rng).map_err(|e| match e {
                ExplainError::Match { source, .. } => ExplainError::Match { graph: i, source },
                other => other,
            })
        })
        .collect()
}

/// Number of explanations whose subgraph fails a selected program that
/// the original graph satisfies, checked again with the matcher.
pub fn contract_violations(graphs: &[Graph], model: &Model, explanations: &[SubgraphExplanation]) -> Result<usize, ExplainError> {
    if graphs.len() != explanations.len() {
        return Err(ExplainError::LengthMismatch {
            graphs: graphs.len(),
            explanations: explanations.len(),
        });
    }
    let bad = graphs
        .par_iter()
        .zip(explanations)
        .enumerate()
        .map(|(graph, (g, e))| {
            let wrap = |source| ExplainError::Match { graph, source };
            let sub = e.subgraph(g);
            for &i in &e.satisfied {
                let p = &model.patterns()[i];
                if p.satisfies(g, model.budget()).map_err(wrap)? && !p.satisfies(&sub, model.budget()).map_err(wrap)? {
                    return Ok(true);
                }
            }
            Ok(false)
        })
        .collect::<Result<Vec<bool>, ExplainError>>()?;
    Ok(bad.into_iter().filter(|&b| b).count())
}

/// Mean over graphs of `[model right on the graph] - [model right on its
/// explanation]`; lower is better.
pub fn fidelity(model: &Model, test: &[(Graph, Label)], explanations: &[SubgraphExplanation]) -> Result<f64, ExplainError> {
    if test.len() != explanations.len() {
        return Err(ExplainError::LengthMismatch {
            graphs: test.len(),
            explanations: explanations.len(),
        });
    }
    if test.is_empty() {
        return Ok(0.0);
    }
    let terms = test
        .par_iter()
        .zip(explanations)
        .enumerate()
        .map(|(graph, ((g, y), e))| {
            let wrap = |source| ExplainError::Match { graph, source };
            let full = model.predict(g).map_err(wrap)?.label == *y;
            let part = model.predict(&e.subgraph(g)).map_err(wrap)?.label == *y;
            Ok(f64::from(u8::from(full)) - f64::from(u8::from(part)))
        })
        .collect::<Result<Vec<f64>, ExplainError>>()?;
    Ok(terms.iter().sum::<f64>() / test.len() as f64)
}

/// Mean fraction of nodes an explanation removes; higher is better.
pub fn sparsity(graphs: &[Graph], explanations: &[SubgraphExplanation]) -> Result<f64, ExplainError> {
    if graphs.len() != explanations.len() {
        return Err(ExplainError::LengthMismatch {
            graphs: graphs.len(),
            explanations: explanations.len(),
        });
    }
    if graphs.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = graphs
        .iter()
        .zip(explanations)
        .map(|(g, e)| match g.node_count() {
            0 => 0.0,
            n => 1.0 - e.kept.len() as f64 / n as f64,
        })
        .sum();
    Ok(total / graphs.len() as f64)
}

/// Plain-text explanation report ending with a DOT rendering of the kept
/// subgraph.
pub fn render_explanation(name: &str, g: &Graph, model: &Model, e: &Explanation) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "graph {name}");
    let _ = writeln!(out, "predicted {}", e.prediction.label);
    let scores: Vec<String> = e.prediction.scores.iter().map(|s| format!("{s:?}")).collect();
    let _ = writeln!(out, "scores {}", scores.join(" "));
    let weights: Vec<String> = e.importance.weights.iter().map(|w| format!("{w:?}")).collect();
    let _ = writeln!(out, "weights {}", weights.join(" "));
    let _ = writeln!(out, "surrogate_r2 {:?}", e.importance.r2);
    let selected: Vec<String> = e.importance.selected.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "selected {}", selected.join(" "));
    let programs: Vec<_> = model.programs().collect();
    for &i in &e.importance.selected {
        let held = if e.subgraph.satisfied.contains(&i) { "satisfied" } else { "unsatisfied" };
        let _ = writeln!(out, "# feature {i} weight={:?} {held}", e.importance.weights[i]);
        let text = print_program(programs[i]);
        if !text.is_empty() {
            let _ = writeln!(out, "{text}");
        }
    }
    let kept: Vec<String> = e.subgraph.kept.iter().map(usize::to_string).collect();
    let _ = writeln!(out, "kept {}", kept.join(" "));
    out.push_str(&to_dot(name, g, &e.subgraph));
    out
}

/// DOT digraph of the kept nodes (labelled by index and features) and
/// their induced edges.
pub fn to_dot(name: &str, g: &Graph, e: &SubgraphExplanation) -> String {
    let mut out = String::new();
    let id: String = name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
    let _ = writeln!(out, "digraph g_{id} {{");
    for &v in &e.kept {
        let feats: Vec<String> = g.node_feature(v).iter().map(|x| format!("{x}")).collect();
        let _ = writeln!(out, "  n{v} [label=\"{v}: {}\"];", feats.join(", "));
    }
    for &(u, v) in &e.edges {
        let _ = writeln!(out, "  n{u} -> n{v};");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{program_a, program_b, toy_graphs};
    use crate::mining::{Layer, ScoredProgram};
    use crate::model::{Activation, Mlp};

    fn toy_model() -> Model {
        let programs = [program_a(), program_b()]
            .into_iter()
            .zip([1, 2])
            .map(|(program, label)| ScoredProgram {
                program,
                label,
                score: 1.0,
                matched_same: 2,
                matched_total: 2,
            })
            .collect();
        let layer = Layer {
            k: 2,
            epsilon: 1.0,
            programs,
        };
        // class 0 (label 1) follows feature 0, class 1 follows feature 1
        let mlp = Mlp::from_params(&[2, 2], vec![2.0, -2.0, -2.0, 2.0, 0.0, 0.0]).unwrap();
        Model::new(layer, Activation::Sigma, vec![1, 2], mlp, 10_000).unwrap()
    }

    #[test]
    fn first_toy_graph_is_explained_by_its_chain() {
        let model = toy_model();
        let g = &toy_graphs()[0];
        let e = explain(g, &model, &ExplainConfig::default()).unwrap();
        assert_eq!(e.prediction.label, 1);
        assert_eq!(e.importance.selected, vec![0]);
        assert!(e.importance.weights[0] > 0.0);
        let sub = e.subgraph.subgraph(g);
        assert_eq!(sub.node_count(), 3);
        let mut feats: Vec<f64> = (0..3).map(|v| sub.node_feature(v)[0]).collect();
        feats.sort_by(f64::total_cmp);
        assert_eq!(feats, vec![1.0, 2.0, 4.0]);
        assert!(Pattern::compile(&program_a()).satisfies(&sub, 1000).unwrap());
        assert!(e.subgraph.passes <= g.node_count() + 1);
    }

    #[test]
    fn surrogate_is_seeded() {
        let model = toy_model();
        let g = &toy_graphs()[1];
        let cfg = ExplainConfig::default();
        assert_eq!(important_features(g, &model, &cfg).unwrap(), important_features(g, &model, &cfg).unwrap());
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let cfg = ExplainConfig {
            samples: 99,
            ..ExplainConfig::default()
        };
        assert!(matches!(
            important_features(&toy_graphs()[0], &toy_model(), &cfg),
            Err(ExplainError::TooFewSamples(99))
        ));
    }

    #[test]
    fn empty_selection_removes_every_node() {
        let g = &toy_graphs()[0];
        let kept: Vec<usize> = (0..g.node_count()).collect();
        assert!(refine(g, &kept, &[], 10).unwrap().is_empty());
    }

    #[test]
    fn metrics_on_whole_graphs() {
        let model = toy_model();
        let test: Vec<(Graph, Label)> = toy_graphs().into_iter().zip([1, 2, 1, 2]).collect();
        let whole: Vec<SubgraphExplanation> = test.iter().map(|(g, _)| SubgraphExplanation::whole(g)).collect();
        assert_eq!(fidelity(&model, &test, &whole).unwrap(), 0.0);
        let graphs: Vec<Graph> = test.iter().map(|(g, _)| g.clone()).collect();
        assert_eq!(sparsity(&graphs, &whole).unwrap(), 0.0);
        assert!(fidelity(&model, &test, &whole[..2]).is_err());
    }

    #[test]
    fn empty_explanations_flip_correct_predictions() {
        let model = toy_model();
        // the empty graph embeds to zeros, which the toy head labels 1
        let test: Vec<(Graph, Label)> = toy_graphs().into_iter().zip([1, 2, 1, 2]).collect();
        let empty: Vec<SubgraphExplanation> = test
            .iter()
            .map(|_| SubgraphExplanation {
                kept: vec![],
                edges: vec![],
                satisfied: vec![],
                passes: 1,
            })
            .collect();
        assert_eq!(fidelity(&model, &test, &empty).unwrap(), 0.5);
        let graphs: Vec<Graph> = test.iter().map(|(g, _)| g.clone()).collect();
        assert_eq!(sparsity(&graphs, &empty).unwrap(), 1.0);
    }

    #[test]
    fn half_kept_gives_half_sparsity() {
        let g = toy_graphs()[0].clone();
        let e = SubgraphExplanation {
            kept: vec![0, 1],
            edges: vec![],
            satisfied: vec![],
            passes: 1,
        };
        assert_eq!(g.node_count(), 4);
        assert_eq!(sparsity(&[g], &[e]).unwrap(), 0.5);
    }

    #[test]
    fn dot_lists_kept_nodes_and_edges() {
        let model = toy_model();
        let g = &toy_graphs()[0];
        let e = explain(g, &model, &ExplainConfig::default()).unwrap();
        let text = render_explanation("g0", g, &model, &e);
        assert!(text.starts_with("graph g0\npredicted 1\n"));
        assert!(text.contains("digraph g_g0 {"));
        assert_eq!(text.matches(" -> ").count(), e.subgraph.edges.len());
    }
}
