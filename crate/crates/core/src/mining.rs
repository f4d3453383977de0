//! Mining GDL programs from a labeled training set.
//!
//! Each training graph seeds a greedy walk: start from the most specific
//! program describing the graph, then repeatedly apply the best-scoring
//! one-step generalization (drop a node, drop an edge, or open one interval
//! bound) until every generalization scores worse. The pooled results are
//! ranked by score and the best `k` form a GDL layer.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::gdl::{
    parse_program, print_program, Description, EdgeDescription, GdlError, IntervalVec, NodeDescription, Program,
};
use crate::graph::{Graph, Label};
use crate::matcher::{Diagnosis, MatchError, Pattern, Refutation, DEFAULT_BUDGET};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MiningError {
    #[error("graph {index} has no label")]
    Unlabeled { index: usize },
    #[error("graph {index} has feature dimensions ({node_dim}, {edge_dim}), expected ({expected_node}, {expected_edge})")]
    DimensionMismatch {
        index: usize,
        node_dim: usize,
        edge_dim: usize,
        expected_node: usize,
        expected_edge: usize,
    },
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("graph {graph}: {source}")]
    Match { graph: usize, source: MatchError },
    #[error(transparent)]
    Gdl(#[from] GdlError),
    #[error("layer file line {line}: {message}")]
    LayerFormat { line: usize, message: String },
}

/// Labeled graphs sharing one node and edge feature dimension.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    graphs: Vec<Graph>,
    labels: Vec<Label>,
    label_set: Vec<Label>,
}

impl TrainingSet {
    pub fn new(items: Vec<(Graph, Label)>) -> Result<Self, MiningError> {
        let (graphs, labels): (Vec<Graph>, Vec<Label>) = items.into_iter().unzip();
        if let Some(first) = graphs.first() {
            let (d, c) = (first.node_dim(), first.edge_dim());
            for (index, g) in graphs.iter().enumerate() {
                if g.node_dim() != d || g.edge_dim() != c {
                    return Err(MiningError::DimensionMismatch {
                        index,
                        node_dim: g.node_dim(),
                        edge_dim: g.edge_dim(),
                        expected_node: d,
                        expected_edge: c,
                    });
                }
            }
        }
        let mut label_set = labels.clone();
        label_set.sort_unstable();
        label_set.dedup();
        Ok(TrainingSet {
            graphs,
            labels,
            label_set,
        })
    }

    /// Builds a training set from graphs carrying their own labels.
    pub fn from_labeled(graphs: Vec<Graph>) -> Result<Self, MiningError> {
        let items = graphs
            .into_iter()
            .enumerate()
            .map(|(index, g)| match g.label() {
                Some(y) => Ok((g, y)),
                None => Err(MiningError::Unlabeled { index }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(items)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Distinct labels in ascending order.
    pub fn label_set(&self) -> &[Label] {
        &self.label_set
    }

    pub fn graph(&self, i: usize) -> &Graph {
        &self.graphs[i]
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn count_label(&self, y: Label) -> usize {
        self.labels.iter().filter(|&&l| l == y).count()
    }

    fn check_graph(&self, g: &Graph) -> Result<(), MiningError> {
        match self.graphs.first() {
            Some(first) if first.node_dim() != g.node_dim() || first.edge_dim() != g.edge_dim() => {
                Err(MiningError::DimensionMismatch {
                    index: usize::MAX,
                    node_dim: g.node_dim(),
                    edge_dim: g.edge_dim(),
                    expected_node: first.node_dim(),
                    expected_edge: first.edge_dim(),
                })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    pub epsilon: f64,
    /// Width of the GDL layer.
    pub k: usize,
    /// Per-query matcher budget; queries that exceed it count as unmatched.
    pub match_budget: u64,
    /// Carried for reproducibility records; mining itself is deterministic.
    pub seed: u64,
    /// Fill the layer round-robin across labels instead of by global rank.
    pub balanced: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            epsilon: 0.1,
            k: 32,
            match_budget: DEFAULT_BUDGET,
            seed: 0,
            balanced: false,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(MiningError::InvalidEpsilon(self.epsilon));
        }
        if self.k == 0 {
            return Err(MiningError::InvalidK);
        }
        Ok(())
    }
}

/// Candidate values for epsilon given the training set size.
pub fn epsilon_grid(n: usize) -> Vec<f64> {
    vec![0.1, 1.0, 0.01 * n as f64]
}

/// Candidate layer widths given the training set size.
pub fn k_grid(n: usize) -> Vec<usize> {
    [0.01, 0.2, 0.4, 0.6, 0.8, 1.0]
        .iter()
        .map(|f| ((f * n as f64).ceil() as usize).max(1))
        .collect()
}

/// Layer width used when none is given: the 20% point of [`k_grid`].
pub fn default_k(n: usize) -> usize {
    k_grid(n)[1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSummary {
    pub score: f64,
    pub matched_same: usize,
    pub matched_total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProgram {
    pub program: Program,
    pub label: Label,
    pub score: f64,
    pub matched_same: usize,
    pub matched_total: usize,
}

#[inline]
fn ratio(same: usize, total: usize, eps: f64) -> f64 {
    same as f64 / (total as f64 + eps)
}

/// Precision of `p` for label `y`: the fraction of graphs it matches that
/// carry `y`, damped by `eps`.
pub fn score(p: &Program, d: &TrainingSet, y: Label, eps: f64, budget: u64) -> Result<ScoreSummary, MiningError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(MiningError::InvalidEpsilon(eps));
    }
    let pat = Pattern::compile(p);
    let (mut same, mut total) = (0, 0);
    for (graph, g) in d.graphs.iter().enumerate() {
        if pat.satisfies(g, budget).map_err(|source| MiningError::Match { graph, source })? {
            total += 1;
            if d.labels[graph] == y {
                same += 1;
            }
        }
    }
    Ok(ScoreSummary {
        score: ratio(same, total, eps),
        matched_same: same,
        matched_total: total,
    })
}

/// The most specific program describing `g`: one variable `v<i>` per node
/// and one edge description per edge, all with point intervals.
pub fn initialize(g: &Graph) -> Program {
    Draft::initialize(g).to_program()
}

/// Every vector obtained by opening exactly one finite bound of `v`: lower
/// bounds first, then upper bounds, by coordinate.
pub fn generalize_itv(v: &IntervalVec) -> Vec<IntervalVec> {
    let itvs = v.intervals();
    let mut out = Vec::new();
    for j in 0..itvs.len() {
        if itvs[j].lo() != f64::NEG_INFINITY {
            let mut w = itvs.to_vec();
            w[j] = w[j].with_lo(f64::NEG_INFINITY);
            out.push(IntervalVec::new(w));
        }
    }
    for j in 0..itvs.len() {
        if itvs[j].hi() != f64::INFINITY {
            let mut w = itvs.to_vec();
            w[j] = w[j].with_hi(f64::INFINITY);
            out.push(IntervalVec::new(w));
        }
    }
    out
}

/// All one-step generalizations of `p`: node removals (with their incident
/// edges), edge removals, then interval widenings of nodes and of edges.
/// Output programs list node descriptions before edge descriptions.
pub fn enumerate_mutations(p: &Program) -> Vec<Program> {
    let draft = Draft::from_program(p);
    let mut seen = HashSet::new();
    draft
        .mutations()
        .iter()
        .map(|m| draft.apply(m).to_program())
        .filter(|q| seen.insert(print_program(q)))
        .collect()
}

/// Best-scoring candidate; ties go to fewer descriptions, then to the
/// smaller canonical text.
pub fn choose(
    candidates: &[Program],
    d: &TrainingSet,
    y: Label,
    eps: f64,
    budget: u64,
) -> Result<Option<Program>, MiningError> {
    let mut best: Option<(f64, usize, String, &Program)> = None;
    for p in candidates {
        let s = score(p, d, y, eps, budget)?.score;
        let text = print_program(p);
        let better = match &best {
            None => true,
            Some((bs, bl, bt, _)) => s > *bs || (s == *bs && (p.len(), &text) < (*bl, bt)),
        };
        if better {
            best = Some((s, p.len(), text, p));
        }
    }
    Ok(best.map(|(_, _, _, p)| p.clone()))
}

/// Renames variables to `v0, v1, ...` in order of node declaration.
pub fn canonicalize(p: &Program) -> Program {
    let mut draft = Draft::from_program(p);
    draft.names = (0..draft.names.len()).map(|i| format!("v{i}")).collect();
    draft.to_program()
}

/// Greedy walk from `initialize(g)`, where `(g, y)` is a member of `d`.
/// A generalization is taken when it scores at least as well as the current
/// program, so the walk crosses plateaus; it ends when every
/// generalization scores worse or none is left.
pub fn mine(d: &TrainingSet, g: &Graph, y: Label, cfg: &MiningConfig) -> Result<ScoredProgram, MiningError> {
    cfg.validate()?;
    d.check_graph(g)?;
    let counter = AtomicU64::new(0);
    Ok(Miner::new(d, y, cfg, &counter).mine(g))
}

/// Outcome of [`learn_with_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct LearnReport {
    pub programs: Vec<ScoredProgram>,
    /// Programs mined (one per training graph).
    pub mined: usize,
    /// Distinct programs among them.
    pub distinct: usize,
    /// Matcher queries that ran out of budget and were counted as unmatched.
    pub budget_exceeded: u64,
}

/// Mines one program per training graph and keeps the `k` best.
pub fn learn(d: &TrainingSet, cfg: &MiningConfig) -> Result<Vec<ScoredProgram>, MiningError> {
    Ok(learn_with_report(d, cfg)?.programs)
}

pub fn learn_with_report(d: &TrainingSet, cfg: &MiningConfig) -> Result<LearnReport, MiningError> {
    cfg.validate()?;
    let counter = AtomicU64::new(0);
    let done = AtomicU64::new(0);
    let mined: Vec<ScoredProgram> = (0..d.len())
        .into_par_iter()
        .map(|i| {
            let sp = Miner::new(d, d.labels[i], cfg, &counter).mine(&d.graphs[i]);
            let n = done.fetch_add(1, Ordering::Relaxed) + 1;
            if n % 100 == 0 {
                log::debug!("mined={n}/{}", d.len());
            }
            sp
        })
        .collect();
    let total = mined.len();
    let mut seen = HashSet::new();
    let pool: Vec<ScoredProgram> = mined
        .into_iter()
        .filter(|sp| seen.insert((sp.label, print_program(&sp.program))))
        .collect();
    let distinct = pool.len();
    let budget_exceeded = counter.load(Ordering::Relaxed);
    if budget_exceeded > 0 {
        log::warn!("budget_exceeded={budget_exceeded} queries counted as unmatched");
    }
    Ok(LearnReport {
        programs: top_k(pool, cfg.k, cfg.balanced),
        mined: total,
        distinct,
        budget_exceeded,
    })
}

/// Orders by descending score, then fewer descriptions, then canonical
/// text, and keeps the first `k`. With `balanced`, labels take turns.
pub fn top_k(pool: Vec<ScoredProgram>, k: usize, balanced: bool) -> Vec<ScoredProgram> {
    let mut keyed: Vec<(String, ScoredProgram)> = pool.into_iter().map(|sp| (print_program(&sp.program), sp)).collect();
    keyed.sort_by(|(ta, a), (tb, b)| {
        b.score
            .total_cmp(&a.score)
            .then(a.program.len().cmp(&b.program.len()))
            .then(ta.cmp(tb))
            .then(a.label.cmp(&b.label))
    });
    if !balanced {
        return keyed.into_iter().take(k).map(|(_, sp)| sp).collect();
    }
    let mut labels: Vec<Label> = keyed.iter().map(|(_, sp)| sp.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut taken = vec![false; keyed.len()];
    let mut count = 0;
    'rounds: loop {
        let mut progressed = false;
        for &y in &labels {
            if count == k {
                break 'rounds;
            }
            if let Some(i) = (0..keyed.len()).find(|&i| !taken[i] && keyed[i].1.label == y) {
                taken[i] = true;
                count += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    keyed
        .into_iter()
        .zip(taken)
        .filter(|(_, t)| *t)
        .map(|((_, sp), _)| sp)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HammingObjective {
    pub value: f64,
    /// Set when there are no programs, so similarity is undefined.
    pub degenerate: bool,
}

/// Sum over ordered pairs `i != j` of the Hamming similarity of the two
/// graphs' 0/1 representations, signed `+` for equal labels and `-`
/// otherwise. Queries over budget count as unmatched.
pub fn hamming_objective(programs: &[Program], d: &TrainingSet) -> HammingObjective {
    if programs.is_empty() {
        return HammingObjective {
            value: 0.0,
            degenerate: true,
        };
    }
    let mut signed = 0i64;
    for p in programs {
        let pat = Pattern::compile(p);
        // (bit, label) -> count
        let mut groups: std::collections::BTreeMap<(bool, Label), i64> = Default::default();
        for (g, &y) in d.graphs.iter().zip(&d.labels) {
            let bit = pat.satisfies(g, DEFAULT_BUDGET).unwrap_or(false);
            *groups.entry((bit, y)).or_default() += 1;
        }
        for bit in [false, true] {
            let sizes: Vec<i64> = groups.iter().filter(|((b, _), _)| *b == bit).map(|(_, &c)| c).collect();
            let n: i64 = sizes.iter().sum();
            let same: i64 = sizes.iter().map(|c| c * (c - 1)).sum();
            let all = n * (n - 1);
            signed += same - (all - same);
        }
    }
    HammingObjective {
        value: signed as f64 / programs.len() as f64,
        degenerate: false,
    }
}

/// A mined GDL layer as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub k: usize,
    pub epsilon: f64,
    pub programs: Vec<ScoredProgram>,
}

impl Layer {
    pub fn to_text(&self) -> String {
        let mut out = format!("gdl-layer k={} epsilon={:?}\n", self.k, self.epsilon);
        for (i, sp) in self.programs.iter().enumerate() {
            let _ = writeln!(
                out,
                "# program {i} label={} score={:?} matched={}/{}",
                sp.label, sp.score, sp.matched_same, sp.matched_total
            );
            let text = print_program(&sp.program);
            if !text.is_empty() {
                out.push_str(&text);
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Layer, MiningError> {
        let err = |line: usize, message: &str| MiningError::LayerFormat {
            line,
            message: message.to_string(),
        };
        let lines: Vec<&str> = text.lines().collect();
        let header = lines.first().ok_or_else(|| err(1, "missing header"))?;
        let fields = header
            .strip_prefix("gdl-layer ")
            .ok_or_else(|| err(1, "expected `gdl-layer k=<k> epsilon=<eps>`"))?;
        let k = field(fields, "k").and_then(|v| v.parse().ok()).ok_or_else(|| err(1, "bad k"))?;
        let epsilon = field(fields, "epsilon")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(1, "bad epsilon"))?;

        let mut programs = Vec::new();
        let mut i = 1;
        while i < lines.len() {
            let line_no = i + 1;
            if lines[i].trim().is_empty() {
                i += 1;
                continue;
            }
            let meta = lines[i]
                .strip_prefix("# program ")
                .ok_or_else(|| err(line_no, "expected `# program` line"))?;
            let label = field(meta, "label").and_then(|v| v.parse().ok()).ok_or_else(|| err(line_no, "bad label"))?;
            let score = field(meta, "score").and_then(|v| v.parse().ok()).ok_or_else(|| err(line_no, "bad score"))?;
            let (a, b) = field(meta, "matched")
                .and_then(|v| v.split_once('/'))
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| err(line_no, "bad matched count"))?;
            i += 1;
            let start = i;
            while i < lines.len() && !lines[i].starts_with("# program ") {
                i += 1;
            }
            let program = parse_program(&lines[start..i].join("\n")).map_err(|e| err(start + 1, &e.to_string()))?;
            programs.push(ScoredProgram {
                program,
                label,
                score,
                matched_same: a,
                matched_total: b,
            });
        }
        Ok(Layer { k, epsilon, programs })
    }
}

fn field<'a>(s: &'a str, key: &str) -> Option<&'a str> {
    s.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
}

/// Program under construction, with variables referred to by id.
#[derive(Debug, Clone)]
struct Draft {
    names: Arc<[String]>,
    nodes: Vec<(u32, Option<IntervalVec>)>,
    edges: Vec<(u32, u32, Option<IntervalVec>)>,
}

#[derive(Debug, Clone)]
enum Mutation {
    RemoveNode(usize),
    RemoveEdge(usize),
    GeneralizeNode(usize, IntervalVec),
    GeneralizeEdge(usize, IntervalVec),
}

fn exact(values: &[f64]) -> Option<IntervalVec> {
    (!values.is_empty()).then(|| IntervalVec::exact(values))
}

impl Draft {
    fn initialize(g: &Graph) -> Self {
        let n = g.node_count();
        Draft {
            names: (0..n).map(|i| format!("v{i}")).collect(),
            nodes: (0..n).map(|i| (i as u32, exact(g.node_feature(i)))).collect(),
            edges: g
                .edges()
                .iter()
                .enumerate()
                .map(|(j, &(a, b))| (a as u32, b as u32, exact(g.edge_feature(j))))
                .collect(),
        }
    }

    fn from_program(p: &Program) -> Self {
        let names: Arc<[String]> = p.nodes().map(|n| n.var.clone()).collect();
        let id = |var: &str| names.iter().position(|n| n == var).expect("declared variable") as u32;
        let nodes = p.nodes().enumerate().map(|(i, n)| (i as u32, n.constraints.clone())).collect();
        let edges = p
            .edges()
            .map(|e| (id(&e.src), id(&e.dst), e.constraints.clone()))
            .collect();
        Draft {
            names: names.clone(),
            nodes,
            edges,
        }
    }

    fn to_program(&self) -> Program {
        let name = |id: u32| self.names[id as usize].clone();
        let nodes = self.nodes.iter().map(|(id, c)| {
            Description::Node(NodeDescription {
                var: name(*id),
                constraints: c.clone(),
            })
        });
        let edges = self.edges.iter().map(|(a, b, c)| {
            Description::Edge(EdgeDescription {
                src: name(*a),
                dst: name(*b),
                constraints: c.clone(),
            })
        });
        Program::new_unchecked(nodes.chain(edges).collect())
    }

    fn len(&self) -> usize {
        self.nodes.len() + self.edges.len()
    }

    fn mutations(&self) -> Vec<Mutation> {
        let mut out: Vec<Mutation> = (0..self.nodes.len()).map(Mutation::RemoveNode).collect();
        out.extend((0..self.edges.len()).map(Mutation::RemoveEdge));
        for (i, (_, c)) in self.nodes.iter().enumerate() {
            if let Some(c) = c {
                out.extend(generalize_itv(c).into_iter().map(|w| Mutation::GeneralizeNode(i, w)));
            }
        }
        for (i, (_, _, c)) in self.edges.iter().enumerate() {
            if let Some(c) = c {
                out.extend(generalize_itv(c).into_iter().map(|w| Mutation::GeneralizeEdge(i, w)));
            }
        }
        out
    }

    fn apply(&self, m: &Mutation) -> Draft {
        let mut next = self.clone();
        match m {
            Mutation::RemoveNode(i) => {
                let id = next.nodes.remove(*i).0;
                next.edges.retain(|&(a, b, _)| a != id && b != id);
            }
            Mutation::RemoveEdge(i) => {
                next.edges.remove(*i);
            }
            Mutation::GeneralizeNode(i, w) => next.nodes[*i].1 = Some(w.clone()),
            Mutation::GeneralizeEdge(i, w) => next.edges[*i].2 = Some(w.clone()),
        }
        next
    }

    fn compile(&self) -> Pattern {
        let mut pos = vec![usize::MAX; self.names.len()];
        for (i, &(id, _)) in self.nodes.iter().enumerate() {
            pos[id as usize] = i;
        }
        Pattern::from_parts(
            self.nodes.iter().map(|(_, c)| c.clone()).collect(),
            self.edges
                .iter()
                .map(|(a, b, c)| (pos[*a as usize], pos[*b as usize], c.clone()))
                .collect(),
        )
    }
}

/// A part of the current program that is unsatisfiable on some graph:
/// the node descriptions of `core` plus the edge descriptions `edges`.
/// While a mutation leaves all of them in place, the mutated program stays
/// unsatisfiable there too.
#[derive(Debug, Clone)]
struct Witness {
    core: Vec<bool>,
    // core plus the endpoints of `edges`
    reach: Vec<bool>,
    edges: Vec<(u32, u32)>,
}

impl Witness {
    fn new(draft: &Draft, r: &Refutation) -> Self {
        let mut core = vec![false; draft.names.len()];
        for &p in &r.vars {
            core[draft.nodes[p].0 as usize] = true;
        }
        let mut reach = core.clone();
        let mut edges: Vec<(u32, u32)> = r
            .edges
            .iter()
            .map(|&pe| {
                let (a, b, _) = draft.edges[pe];
                reach[a as usize] = true;
                reach[b as usize] = true;
                (a, b)
            })
            .collect();
        edges.sort_unstable();
        Witness { core, reach, edges }
    }

    fn touched_by(&self, draft: &Draft, m: &Mutation) -> bool {
        match m {
            Mutation::RemoveNode(i) => self.reach[draft.nodes[*i].0 as usize],
            Mutation::GeneralizeNode(i, _) => self.core[draft.nodes[*i].0 as usize],
            Mutation::RemoveEdge(i) | Mutation::GeneralizeEdge(i, _) => {
                let (a, b, _) = draft.edges[*i];
                self.edges.binary_search(&(a, b)).is_ok()
            }
        }
    }
}

// Whether a widening lets in a node or edge of `g` that the old interval
// vector kept out. If not, every candidate set on `g` stays the same.
fn widening_admits_more(draft: &Draft, m: &Mutation, g: &Graph) -> bool {
    let newly = |old: Option<&IntervalVec>, new: &IntervalVec, x: &[f64]| {
        new.contains(x) && !old.is_none_or(|o| o.contains(x))
    };
    match m {
        Mutation::GeneralizeNode(i, w) => {
            let old = draft.nodes[*i].1.as_ref();
            (0..g.node_count()).any(|u| newly(old, w, g.node_feature(u)))
        }
        Mutation::GeneralizeEdge(i, w) => {
            let old = draft.edges[*i].2.as_ref();
            (0..g.edge_count()).any(|j| newly(old, w, g.edge_feature(j)))
        }
        Mutation::RemoveNode(_) | Mutation::RemoveEdge(_) => true,
    }
}

#[derive(Debug, Clone)]
enum Status {
    Matched,
    // `None`: no small witness, re-check after any mutation
    Unmatched(Option<Witness>),
}

struct Best {
    draft: Draft,
    updates: Vec<(usize, Status)>,
    same: usize,
    total: usize,
    score: f64,
    text: Option<String>,
}

struct Miner<'a> {
    data: &'a TrainingSet,
    label: Label,
    eps: f64,
    budget: u64,
    budget_hits: &'a AtomicU64,
}

impl<'a> Miner<'a> {
    fn new(data: &'a TrainingSet, label: Label, cfg: &MiningConfig, budget_hits: &'a AtomicU64) -> Self {
        Miner {
            data,
            label,
            eps: cfg.epsilon,
            budget: cfg.match_budget,
            budget_hits,
        }
    }

    fn status(&self, pat: &Pattern, draft: &Draft, graph: usize) -> Status {
        match pat.diagnose(&self.data.graphs[graph], self.budget) {
            Ok(Diagnosis::Match) => Status::Matched,
            Ok(Diagnosis::Refuted(None)) => Status::Unmatched(None),
            Ok(Diagnosis::Refuted(Some(r))) => Status::Unmatched(Some(Witness::new(draft, &r))),
            Err(e) => {
                if matches!(e, MatchError::BudgetExceeded { .. }) {
                    self.budget_hits.fetch_add(1, Ordering::Relaxed);
                }
                debug_assert!(matches!(e, MatchError::BudgetExceeded { .. }), "{e}");
                Status::Unmatched(None)
            }
        }
    }

    fn mine(&self, g: &Graph) -> ScoredProgram {
        let n = self.data.len();
        let is_same: Vec<bool> = self.data.labels.iter().map(|&l| l == self.label).collect();
        let mut draft = Draft::initialize(g);
        let pat = draft.compile();
        let mut status: Vec<Status> = (0..n).map(|i| self.status(&pat, &draft, i)).collect();
        let matched = |st: &Status| matches!(st, Status::Matched);
        let mut same = (0..n).filter(|&i| is_same[i] && matched(&status[i])).count();
        let mut total = status.iter().filter(|s| matched(s)).count();
        let mut current = ratio(same, total, self.eps);

        loop {
            let mut muts = draft.mutations();
            if muts.is_empty() {
                break;
            }
            // Smaller programs first so that tie-breaks settle early.
            muts.sort_by_cached_key(|m| draft.apply(m).len());
            let unmatched_same: Vec<usize> = (0..n).filter(|&i| is_same[i] && !matched(&status[i])).collect();
            let unmatched_other: Vec<usize> = (0..n).filter(|&i| !is_same[i] && !matched(&status[i])).collect();

            let mut best: Option<Best> = None;
            let mut todo_same = Vec::new();
            let mut todo_other = Vec::new();
            for m in &muts {
                let touched = |i: &&usize| match &status[**i] {
                    Status::Unmatched(Some(w)) => {
                        w.touched_by(&draft, m) && widening_admits_more(&draft, m, &self.data.graphs[**i])
                    }
                    _ => true,
                };
                todo_same.clear();
                todo_same.extend(unmatched_same.iter().filter(touched));
                todo_other.clear();
                todo_other.extend(unmatched_other.iter().filter(touched));

                let cand = draft.apply(m);
                let mut cand_text = None;
                // Whether the candidate wins a tie against the current best.
                let wins_tie = match &mut best {
                    None => true,
                    Some(b) if cand.len() != b.draft.len() => cand.len() < b.draft.len(),
                    Some(b) => {
                        let bt = b.text.get_or_insert_with(|| print_program(&b.draft.to_program()));
                        let ct = cand_text.insert(print_program(&cand.to_program()));
                        ct < bt
                    }
                };
                let pruned = |s: usize, t: usize| {
                    best.as_ref().is_some_and(|b| {
                        let ub = ratio(s, t, self.eps);
                        ub < b.score || (ub == b.score && !wins_tie)
                    })
                };

                let (mut s, mut t) = (same, total);
                let mut rem = todo_same.len();
                if pruned(s + rem, t + rem) {
                    continue;
                }
                let pat = cand.compile();
                let mut updates = Vec::new();
                let mut cut = false;
                for &i in todo_same.iter().chain(&todo_other) {
                    let st = self.status(&pat, &cand, i);
                    if is_same[i] {
                        rem -= 1;
                    }
                    if matched(&st) {
                        t += 1;
                        if is_same[i] {
                            s += 1;
                        }
                    }
                    updates.push((i, st));
                    if pruned(s + rem, t + rem) {
                        cut = true;
                        break;
                    }
                }
                if cut {
                    continue;
                }
                best = Some(Best {
                    draft: cand,
                    updates,
                    same: s,
                    total: t,
                    score: ratio(s, t, self.eps),
                    text: cand_text,
                });
            }

            let Some(best) = best else { break };
            if best.score < current {
                break;
            }
            draft = best.draft;
            for (i, st) in best.updates {
                status[i] = st;
            }
            same = best.same;
            total = best.total;
            current = best.score;
        }

        ScoredProgram {
            program: canonicalize(&draft.to_program()),
            label: self.label,
            score: current,
            matched_same: same,
            matched_total: total,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::gdl::Interval;

    fn toy_set() -> TrainingSet {
        TrainingSet::from_labeled(fixtures::toy_graphs().to_vec()).unwrap()
    }

    #[test]
    fn score_of_initialized_g3_is_one_half() {
        let d = toy_set();
        let p = initialize(d.graph(2));
        let s = score(&p, &d, 1, 1.0, DEFAULT_BUDGET).unwrap();
        assert_eq!((s.matched_same, s.matched_total, s.score), (1, 1, 0.5));
    }

    #[test]
    fn empty_program_matches_everything() {
        let d = toy_set();
        let s = score(&Program::empty(), &d, 1, 1.0, DEFAULT_BUDGET).unwrap();
        assert_eq!((s.matched_same, s.matched_total, s.score), (2, 4, 0.4));
    }

    #[test]
    fn initialize_g3() {
        let d = toy_set();
        let p = initialize(d.graph(2));
        assert_eq!(
            print_program(&p),
            "node v0 <[3.0, 3.0]>\nnode v1 <[2.0, 2.0]>\nnode v2 <[1.0, 1.0]>\nnode v3 <[1.0, 1.0]>\n\
             edge (v0, v1)\nedge (v1, v2)\nedge (v2, v3)"
        );
        let empty = Graph::new(1, 0, vec![], vec![], vec![]).unwrap();
        assert!(initialize(&empty).is_empty());
    }

    #[test]
    fn generalize_itv_cases() {
        let v = IntervalVec::exact(&[3.0]);
        let got = generalize_itv(&v);
        assert_eq!(
            got,
            vec![
                IntervalVec::new(vec![Interval::new(f64::NEG_INFINITY, 3.0).unwrap()]),
                IntervalVec::new(vec![Interval::new(3.0, f64::INFINITY).unwrap()]),
            ]
        );
        assert!(generalize_itv(&IntervalVec::new(vec![Interval::UNBOUNDED])).is_empty());
        let two = IntervalVec::new(vec![Interval::new(1.0, 2.0).unwrap(), Interval::point(0.0)]);
        assert_eq!(generalize_itv(&two).len(), 4);
    }

    #[test]
    fn mutation_counts() {
        let d = toy_set();
        // 4 node removals + 3 edge removals + 4 nodes x 2 widenings; edges
        // carry no features so they have nothing to widen.
        assert_eq!(enumerate_mutations(&initialize(d.graph(0))).len(), 15);
        assert!(enumerate_mutations(&Program::empty()).is_empty());
        let g3 = initialize(d.graph(2));
        let expected: Program =
            "node v0 <[3.0, 3.0]>\nnode v1 <[2.0, 2.0]>\nnode v2 <[1.0, 1.0]>\nedge (v0, v1)\nedge (v1, v2)"
                .parse()
                .unwrap();
        assert!(enumerate_mutations(&g3).contains(&expected));
    }

    #[test]
    fn choose_breaks_ties_by_size_then_text() {
        let d = toy_set();
        assert_eq!(choose(&[], &d, 1, 1.0, DEFAULT_BUDGET).unwrap(), None);
        // Both match only G1 and G3 (score 2/3).
        let a: Program = "node b <[3.0, 4.0]>\nnode c".parse().unwrap();
        let b: Program = "node a <[3.0, 4.0]>".parse().unwrap();
        let c: Program = "node b <[3.0, 4.0]>".parse().unwrap();
        let got = choose(&[a, c, b.clone()], &d, 1, 1.0, DEFAULT_BUDGET).unwrap();
        assert_eq!(got, Some(b));
    }

    #[test]
    fn mining_g3_never_drops_below_initial_score() {
        let d = toy_set();
        let cfg = MiningConfig {
            epsilon: 1.0,
            ..MiningConfig::default()
        };
        let sp = mine(&d, d.graph(2), 1, &cfg).unwrap();
        assert!(sp.score >= 0.5);
        let again = score(&sp.program, &d, 1, 1.0, DEFAULT_BUDGET).unwrap();
        assert_eq!(again.score, sp.score);
        assert_eq!((again.matched_same, again.matched_total), (sp.matched_same, sp.matched_total));
    }

    #[test]
    fn learned_toy_layer_separates_labels() {
        let d = toy_set();
        let cfg = MiningConfig {
            epsilon: 1.0,
            k: 2,
            ..MiningConfig::default()
        };
        let layer = learn(&d, &cfg).unwrap();
        assert_eq!(layer.len(), 2);
        let rows: Vec<Vec<bool>> = d
            .graphs()
            .iter()
            .map(|g| layer.iter().map(|sp| Pattern::compile(&sp.program).satisfies(g, DEFAULT_BUDGET).unwrap()).collect())
            .collect();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(rows[i] == rows[j], d.label(i) == d.label(j), "{rows:?}");
            }
        }
    }

    #[test]
    fn hamming_objective_on_toy_programs() {
        let d = toy_set();
        let h = hamming_objective(&[fixtures::program_a(), fixtures::program_b()], &d);
        assert_eq!(h, HammingObjective { value: 4.0, degenerate: false });
        assert!(hamming_objective(&[], &d).degenerate);
        let single = TrainingSet::new(vec![(d.graph(0).clone(), 1)]).unwrap();
        assert_eq!(hamming_objective(&[fixtures::program_a()], &single).value, 0.0);
    }

    #[test]
    fn top_k_handles_ties_and_balance() {
        let sp = |text: &str, label, score| ScoredProgram {
            program: text.parse().unwrap(),
            label,
            score,
            matched_same: 0,
            matched_total: 0,
        };
        let pool = vec![
            sp("node a\nnode b", 1, 0.5),
            sp("node a", 1, 0.5),
            sp("node a <[1.0, 1.0]>", 1, 0.9),
            sp("node a <[2.0, 2.0]>", 2, 0.1),
        ];
        let top = top_k(pool.clone(), 2, false);
        assert_eq!(top.iter().map(|s| s.score).collect::<Vec<_>>(), vec![0.9, 0.5]);
        assert_eq!(top[1].program.len(), 1);
        let bal = top_k(pool, 2, true);
        assert_eq!(bal.iter().map(|s| s.label).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn layer_text_round_trips() {
        let layer = Layer {
            k: 3,
            epsilon: 0.1,
            programs: vec![
                ScoredProgram {
                    program: fixtures::program_a(),
                    label: -1,
                    score: 2.0 / 3.1,
                    matched_same: 2,
                    matched_total: 3,
                },
                ScoredProgram {
                    program: Program::empty(),
                    label: 1,
                    score: 0.25,
                    matched_same: 1,
                    matched_total: 4,
                },
            ],
        };
        let text = layer.to_text();
        assert!(text.starts_with("gdl-layer k=3 epsilon=0.1\n# program 0 label=-1 score="));
        assert_eq!(Layer::parse(&text).unwrap(), layer);
        assert!(matches!(Layer::parse("gdl-layer k=x epsilon=1"), Err(MiningError::LayerFormat { line: 1, .. })));
    }
}
