//! Deciding and enumerating matches of a GDL program in a graph.
//!
//! A match is an injective valuation from the program's node variables to
//! graph nodes such that every node description's intervals contain the
//! node's features, and every edge description `(x, y)` maps to an existing
//! directed edge whose features lie in its intervals. Edges of the graph not
//! mentioned by the program are allowed.

use std::collections::{BTreeMap, HashMap, VecDeque};

use thiserror::Error;

use crate::gdl::{IntervalVec, Program};
use crate::graph::Graph;

/// Default number of attempted variable assignments per query.
pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("matching exceeded the budget of {budget} assignments")]
    BudgetExceeded { budget: u64 },
    #[error("variable `{0}` has no assignment")]
    Unassigned(String),
    #[error("variable `{var}` is mapped to node {node}, graph has {n} nodes")]
    NodeOutOfRange { var: String, node: usize, n: usize },
    #[error("valuation maps `{a}` and `{b}` to the same node {node}")]
    NotInjective { a: String, b: String, node: usize },
    #[error("constraint has {found} intervals, features have {expected} coordinates")]
    DimensionMismatch { expected: usize, found: usize },
}

/// `true` iff every coordinate of `x` lies in its interval; absent
/// constraints accept everything.
pub fn interval_vec_contains(constraints: Option<&IntervalVec>, x: &[f64]) -> Result<bool, MatchError> {
    match constraints {
        None => Ok(true),
        Some(c) if c.len() != x.len() => Err(MatchError::DimensionMismatch {
            expected: x.len(),
            found: c.len(),
        }),
        Some(c) => Ok(c.contains(x)),
    }
}

/// An injective map from variable names to node indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Valuation {
    assignment: BTreeMap<String, usize>,
}

impl Valuation {
    pub fn new(assignment: BTreeMap<String, usize>) -> Result<Self, MatchError> {
        let mut seen: HashMap<usize, &str> = HashMap::new();
        for (var, &node) in &assignment {
            if let Some(prev) = seen.insert(node, var) {
                return Err(MatchError::NotInjective {
                    a: prev.to_string(),
                    b: var.clone(),
                    node,
                });
            }
        }
        Ok(Valuation { assignment })
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, usize)>) -> Result<Self, MatchError> {
        Self::new(pairs.into_iter().map(|(v, n)| (v.to_string(), n)).collect())
    }

    pub fn get(&self, var: &str) -> Option<usize> {
        self.assignment.get(var).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.assignment.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Whether `(g, eta)` belongs to the denotation of `p`.
pub fn check_valuation(p: &Program, g: &Graph, eta: &Valuation) -> Result<bool, MatchError> {
    let node_of = |var: &str| -> Result<usize, MatchError> {
        let node = eta.get(var).ok_or_else(|| MatchError::Unassigned(var.to_string()))?;
        if node >= g.node_count() {
            return Err(MatchError::NodeOutOfRange {
                var: var.to_string(),
                node,
                n: g.node_count(),
            });
        }
        Ok(node)
    };
    let mut ok = true;
    for n in p.nodes() {
        let v = node_of(&n.var)?;
        ok &= interval_vec_contains(n.constraints.as_ref(), g.node_feature(v))?;
    }
    for e in p.edges() {
        let (a, b) = (node_of(&e.src)?, node_of(&e.dst)?);
        ok &= match g.edge_index(a, b) {
            Some(j) => interval_vec_contains(e.constraints.as_ref(), g.edge_feature(j))?,
            None => false,
        };
    }
    Ok(ok)
}

pub fn satisfies(p: &Program, g: &Graph, budget: u64) -> Result<bool, MatchError> {
    Pattern::compile(p).satisfies(g, budget)
}

pub fn count_valuations(p: &Program, g: &Graph, budget: u64) -> Result<u64, MatchError> {
    Pattern::compile(p).count(g, budget)
}

/// A witness valuation, if `g` satisfies `p`.
pub fn find_valuation(p: &Program, g: &Graph, budget: u64) -> Result<Option<Valuation>, MatchError> {
    let pat = Pattern::compile(p);
    Ok(pat.find(g, budget)?.map(|nodes| pat.valuation(&nodes)))
}

/// Every valuation of `p` in `g`, in search order.
pub fn enumerate_valuations(p: &Program, g: &Graph, budget: u64) -> Result<Vec<Valuation>, MatchError> {
    let pat = Pattern::compile(p);
    let mut out = Vec::new();
    pat.for_each(g, budget, |nodes| {
        out.push(pat.valuation(nodes));
        true
    })?;
    Ok(out)
}

/// Exhaustive check over every injective assignment, straight from the
/// semantics. Exponential; meant for small instances and as a test oracle.
pub fn brute_force_satisfies(p: &Program, g: &Graph) -> bool {
    brute_force(p, g, true) > 0
}

/// Number of valuations by exhaustive enumeration.
pub fn brute_force_count(p: &Program, g: &Graph) -> u64 {
    brute_force(p, g, false)
}

fn brute_force(p: &Program, g: &Graph, stop_at_first: bool) -> u64 {
    let vars: Vec<&str> = p.nodes().map(|n| n.var.as_str()).collect();
    let mut assignment: Vec<usize> = Vec::with_capacity(vars.len());
    let mut count = 0;
    brute_force_rec(p, g, &vars, &mut assignment, &mut count, stop_at_first);
    count
}

fn brute_force_rec(
    p: &Program,
    g: &Graph,
    vars: &[&str],
    assignment: &mut Vec<usize>,
    count: &mut u64,
    stop_at_first: bool,
) {
    if stop_at_first && *count > 0 {
        return;
    }
    if assignment.len() == vars.len() {
        let holds = |var: &str| assignment[vars.iter().position(|v| *v == var).unwrap()];
        let nodes_ok = p
            .nodes()
            .all(|n| n.constraints.as_ref().is_none_or(|c| c.contains(g.node_feature(holds(&n.var)))));
        let edges_ok = p.edges().all(|e| {
            let (a, b) = (holds(&e.src), holds(&e.dst));
            g.edges()
                .iter()
                .position(|&edge| edge == (a, b))
                .is_some_and(|j| e.constraints.as_ref().is_none_or(|c| c.contains(g.edge_feature(j))))
        });
        if nodes_ok && edges_ok {
            *count += 1;
        }
        return;
    }
    for node in 0..g.node_count() {
        if assignment.contains(&node) {
            continue;
        }
        assignment.push(node);
        brute_force_rec(p, g, vars, assignment, count, stop_at_first);
        assignment.pop();
    }
}

#[derive(Debug, Clone)]
struct PatternEdge {
    src: usize,
    dst: usize,
    constraints: Option<IntervalVec>,
}

/// A program compiled to index form for repeated matching.
#[derive(Debug, Clone)]
pub struct Pattern {
    vars: Vec<String>,
    node_constraints: Vec<Option<IntervalVec>>,
    edges: Vec<PatternEdge>,
    // per variable: non-self-loop pattern edge indices
    incident: Vec<Vec<usize>>,
    out_degree: Vec<usize>,
    in_degree: Vec<usize>,
    self_loop: Vec<Option<usize>>,
}

/// Result of [`Pattern::diagnose`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Diagnosis {
    Match,
    /// No match, with a part of the program that already has none, or
    /// `None` when only the whole program is known to fail.
    Refuted(Option<Refutation>),
}

/// Node descriptions of `vars` plus the edge descriptions `edges` (pattern
/// edge indices, sorted); other endpoints of those edges only need to exist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Refutation {
    pub vars: Vec<usize>,
    pub edges: Vec<usize>,
}

enum Prepared {
    Refuted(Option<Refutation>),
    Ready(Vec<Bitset>, Vec<Vec<usize>>),
}

impl Pattern {
    pub fn compile(p: &Program) -> Self {
        let vars: Vec<String> = p.nodes().map(|n| n.var.clone()).collect();
        let index: HashMap<&str, usize> = vars.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
        let node_constraints = p.nodes().map(|n| n.constraints.clone()).collect();
        let edges = p
            .edges()
            .map(|e| (index[e.src.as_str()], index[e.dst.as_str()], e.constraints.clone()))
            .collect();
        Self::build(vars, node_constraints, edges)
    }

    /// Pattern over variables `0..node_constraints.len()` with edges given by
    /// variable position.
    pub(crate) fn from_parts(
        node_constraints: Vec<Option<IntervalVec>>,
        edges: Vec<(usize, usize, Option<IntervalVec>)>,
    ) -> Self {
        let vars = (0..node_constraints.len()).map(|i| format!("v{i}")).collect();
        Self::build(vars, node_constraints, edges)
    }

    fn build(
        vars: Vec<String>,
        node_constraints: Vec<Option<IntervalVec>>,
        raw_edges: Vec<(usize, usize, Option<IntervalVec>)>,
    ) -> Self {
        let k = vars.len();
        let node_constraints = node_constraints
            .into_iter()
            .map(|c| c.filter(|c| !c.is_unbounded()))
            .collect();
        let mut incident = vec![Vec::new(); k];
        let mut out_degree = vec![0; k];
        let mut in_degree = vec![0; k];
        let mut self_loop = vec![None; k];
        let mut edges = Vec::with_capacity(raw_edges.len());
        for (src, dst, constraints) in raw_edges {
            let idx = edges.len();
            out_degree[src] += 1;
            in_degree[dst] += 1;
            if src == dst {
                self_loop[src] = Some(idx);
            } else {
                incident[src].push(idx);
                incident[dst].push(idx);
            }
            edges.push(PatternEdge {
                src,
                dst,
                constraints: constraints.filter(|c| !c.is_unbounded()),
            });
        }
        Pattern {
            vars,
            node_constraints,
            edges,
            incident,
            out_degree,
            in_degree,
            self_loop,
        }
    }

    fn restrict(&self, keep: &[usize]) -> Pattern {
        let mut pos = vec![usize::MAX; self.vars.len()];
        for (i, &v) in keep.iter().enumerate() {
            pos[v] = i;
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| pos[e.src] != usize::MAX && pos[e.dst] != usize::MAX)
            .map(|e| (pos[e.src], pos[e.dst], e.constraints.clone()))
            .collect();
        Self::build(
            keep.iter().map(|&v| self.vars[v].clone()).collect(),
            keep.iter().map(|&v| self.node_constraints[v].clone()).collect(),
            edges,
        )
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn satisfies(&self, g: &Graph, budget: u64) -> Result<bool, MatchError> {
        Ok(self.find(g, budget)?.is_some())
    }

    /// Node assignment (indexed like the program's node descriptions) of
    /// the first match found.
    pub fn find(&self, g: &Graph, budget: u64) -> Result<Option<Vec<usize>>, MatchError> {
        let mut found = None;
        self.search(g, budget, true, &mut |nodes| {
            found = Some(nodes.to_vec());
            false
        })?;
        Ok(found)
    }

    pub fn count(&self, g: &Graph, budget: u64) -> Result<u64, MatchError> {
        let mut count = 0u64;
        self.search(g, budget, false, &mut |_| {
            count += 1;
            true
        })?;
        Ok(count)
    }

    /// Calls `visit` with every match; returning `false` stops the search.
    pub fn for_each(&self, g: &Graph, budget: u64, mut visit: impl FnMut(&[usize]) -> bool) -> Result<(), MatchError> {
        self.search(g, budget, false, &mut visit)
    }

    /// Like [`Pattern::satisfies`], but a negative answer comes with a part
    /// of the pattern that is unsatisfiable on its own.
    pub(crate) fn diagnose(&self, g: &Graph, budget: u64) -> Result<Diagnosis, MatchError> {
        self.check_dims(g)?;
        let mut steps = 0;
        let cands = match self.prepare(g) {
            Prepared::Refuted(w) => return Ok(Diagnosis::Refuted(w)),
            Prepared::Ready(c, l) => (c, l),
        };
        if self.run(g, cands.0, cands.1, budget, &mut steps, true, &mut |_| false)? {
            return Ok(Diagnosis::Match);
        }
        let components = self.components();
        if components.len() > 1 {
            for comp in components.iter().filter(|c| c.len() > 1) {
                let sub = self.restrict(comp);
                let refuted = match sub.prepare(g) {
                    Prepared::Refuted(_) => true,
                    Prepared::Ready(c, l) => !sub.run(g, c, l, budget, &mut steps, true, &mut |_| false)?,
                };
                if refuted {
                    let edges = (0..self.edges.len())
                        .filter(|&pe| comp.binary_search(&self.edges[pe].src).is_ok())
                        .collect();
                    return Ok(Diagnosis::Refuted(Some(Refutation {
                        vars: comp.clone(),
                        edges,
                    })));
                }
            }
        }
        Ok(Diagnosis::Refuted(None))
    }

    fn valuation(&self, nodes: &[usize]) -> Valuation {
        Valuation {
            assignment: self.vars.iter().cloned().zip(nodes.iter().copied()).collect(),
        }
    }

    fn check_dims(&self, g: &Graph) -> Result<(), MatchError> {
        let node_cons = self.node_constraints.iter().flatten().map(|c| (c.len(), g.node_dim()));
        let edge_cons = self.edges.iter().filter_map(|e| e.constraints.as_ref()).map(|c| (c.len(), g.edge_dim()));
        for (found, expected) in node_cons.chain(edge_cons) {
            if found != expected {
                return Err(MatchError::DimensionMismatch { expected, found });
            }
        }
        Ok(())
    }

    // Connected components over pattern edges, in order of first variable.
    fn components(&self) -> Vec<Vec<usize>> {
        let k = self.vars.len();
        let mut comp_of = vec![usize::MAX; k];
        let mut out: Vec<Vec<usize>> = Vec::new();
        for start in 0..k {
            if comp_of[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            comp_of[start] = id;
            let mut members = vec![start];
            let mut i = 0;
            while i < members.len() {
                let v = members[i];
                i += 1;
                for &pe in &self.incident[v] {
                    let e = &self.edges[pe];
                    for w in [e.src, e.dst] {
                        if comp_of[w] == usize::MAX {
                            comp_of[w] = id;
                            members.push(w);
                        }
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    // Also reports whether the degree test rejected any node.
    fn candidates(&self, g: &Graph, var: usize) -> (Bitset, bool) {
        let mut set = Bitset::new(g.node_count());
        let mut degree_mattered = false;
        for node in 0..g.node_count() {
            let features_ok = self.node_constraints[var]
                .as_ref()
                .is_none_or(|c| c.contains(g.node_feature(node)));
            let degree_ok =
                g.out_edges(node).len() >= self.out_degree[var] && g.in_edges(node).len() >= self.in_degree[var];
            let loop_ok = self.self_loop[var]
                .is_none_or(|pe| g.edge_index(node, node).is_some_and(|j| self.edge_ok(pe, g, j)));
            if features_ok && loop_ok {
                if degree_ok {
                    set.insert(node);
                } else {
                    degree_mattered = true;
                }
            }
        }
        (set, degree_mattered)
    }

    #[inline]
    fn edge_ok(&self, pattern_edge: usize, g: &Graph, graph_edge: usize) -> bool {
        self.edges[pattern_edge]
            .constraints
            .as_ref()
            .is_none_or(|c| c.contains(g.edge_feature(graph_edge)))
    }

    /// Candidate sets after per-variable filtering and arc consistency over
    /// pattern edges, or a refutation if some set empties.
    fn prepare(&self, g: &Graph) -> Prepared {
        let k = self.vars.len();
        if k > g.node_count() {
            return Prepared::Refuted(None);
        }
        let mut cands: Vec<Bitset> = Vec::with_capacity(k);
        let mut degree_mattered = vec![false; k];
        // `culprits[v]` are the pattern edges that removed candidates of v
        // during arc consistency; refutations are explained by following them.
        let mut culprits: Vec<Vec<usize>> = vec![Vec::new(); k];
        for var in 0..k {
            // variables with the same filter share their candidate set
            let same_filter = (0..var).find(|&w| {
                self.self_loop[var].is_none()
                    && self.self_loop[w].is_none()
                    && self.out_degree[w] == self.out_degree[var]
                    && self.in_degree[w] == self.in_degree[var]
                    && self.node_constraints[w] == self.node_constraints[var]
            });
            let (set, mattered) = match same_filter {
                Some(w) => (cands[w].clone(), degree_mattered[w]),
                None => self.candidates(g, var),
            };
            degree_mattered[var] = mattered;
            if set.is_empty() {
                return Prepared::Refuted(Some(self.explain(&[var], &culprits, &degree_mattered)));
            }
            cands.push(set);
        }

        // Arc consistency.
        let mut queued = vec![false; self.edges.len()];
        let mut queue = VecDeque::new();
        for (pe, e) in self.edges.iter().enumerate() {
            if e.src != e.dst {
                queued[pe] = true;
                queue.push_back(pe);
            }
        }
        let mut scratch = Vec::new();
        while let Some(pe) = queue.pop_front() {
            queued[pe] = false;
            let (x, y) = (self.edges[pe].src, self.edges[pe].dst);
            for (var, other, outgoing) in [(x, y, true), (y, x, false)] {
                scratch.clear();
                scratch.extend(cands[var].iter());
                let mut removed = false;
                for &u in &scratch {
                    let adj = if outgoing { g.out_edges(u) } else { g.in_edges(u) };
                    let supported = adj.iter().any(|&(w, j)| {
                        let w = w as usize;
                        w != u && cands[other].contains(w) && self.edge_ok(pe, g, j as usize)
                    });
                    if !supported {
                        cands[var].remove(u);
                        removed = true;
                    }
                }
                if !removed {
                    continue;
                }
                if !culprits[var].contains(&pe) {
                    culprits[var].push(pe);
                }
                if cands[var].is_empty() {
                    return Prepared::Refuted(Some(self.explain(&[var], &culprits, &degree_mattered)));
                }
                for &q in &self.incident[var] {
                    if q != pe && !queued[q] {
                        queued[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }

        // Hall's condition: all variables must fit injectively into their
        // candidate sets, ignoring edges. Groups sharing one set are checked
        // by counting first.
        let cand_lists: Vec<Vec<usize>> = cands.iter().map(Bitset::to_vec).collect();
        let mut grouped = vec![false; k];
        for v in 0..k {
            if grouped[v] {
                continue;
            }
            let group: Vec<usize> = (v..k).filter(|&w| !grouped[w] && cands[w] == cands[v]).collect();
            if group.len() > cand_lists[v].len() {
                return Prepared::Refuted(Some(self.explain(&group, &culprits, &degree_mattered)));
            }
            for &w in &group {
                grouped[w] = true;
            }
        }
        let all: Vec<usize> = (0..k).collect();
        let blocked = Bitset::new(g.node_count());
        if let Err(violators) = bipartite_match(&all, &cand_lists, &blocked, g.node_count(), &mut vec![usize::MAX; k]) {
            return Prepared::Refuted(Some(self.explain(&violators, &culprits, &degree_mattered)));
        }
        Prepared::Ready(cands, cand_lists)
    }

    // The given variables plus everything whose pruning fed into theirs,
    // with the edges those prunings relied on.
    fn explain(&self, vars: &[usize], culprits: &[Vec<usize>], degree_mattered: &[bool]) -> Refutation {
        let mut seen = vec![false; self.vars.len()];
        let mut out = Vec::new();
        for &v in vars {
            if !seen[v] {
                seen[v] = true;
                out.push(v);
            }
        }
        let mut edges = Vec::new();
        let mut i = 0;
        while i < out.len() {
            let v = out[i];
            i += 1;
            edges.extend(self.self_loop[v]);
            if degree_mattered[v] {
                edges.extend(&self.incident[v]);
            }
            for &pe in &culprits[v] {
                edges.push(pe);
                for w in [self.edges[pe].src, self.edges[pe].dst] {
                    if !seen[w] {
                        seen[w] = true;
                        out.push(w);
                    }
                }
            }
        }
        out.sort_unstable();
        edges.sort_unstable();
        edges.dedup();
        Refutation { vars: out, edges }
    }

    /// Static search order: start from the variable with the fewest
    /// candidates (ties: most incident edges, then declaration order), then
    /// keep extending along pattern edges with the same key. Variables
    /// without edges to other variables go last.
    fn plan(&self, cand_sizes: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let k = self.vars.len();
        let key = |v: usize| (cand_sizes[v], std::cmp::Reverse(self.incident[v].len()), v);
        let (connected, isolated): (Vec<usize>, Vec<usize>) = (0..k).partition(|&v| !self.incident[v].is_empty());
        let mut placed = vec![false; k];
        let mut frontier = vec![false; k];
        let mut order = Vec::with_capacity(connected.len());
        while order.len() < connected.len() {
            let pick = connected
                .iter()
                .copied()
                .filter(|&v| !placed[v] && frontier[v])
                .min_by_key(|&v| key(v))
                .or_else(|| connected.iter().copied().filter(|&v| !placed[v]).min_by_key(|&v| key(v)))
                .expect("unplaced connected variable");
            placed[pick] = true;
            order.push(pick);
            for &pe in &self.incident[pick] {
                let e = &self.edges[pe];
                frontier[e.src] = true;
                frontier[e.dst] = true;
            }
        }
        let mut isolated = isolated;
        isolated.sort_by_key(|&v| key(v));
        (order, isolated)
    }

    fn search(
        &self,
        g: &Graph,
        budget: u64,
        exists_only: bool,
        visit: &mut dyn FnMut(&[usize]) -> bool,
    ) -> Result<(), MatchError> {
        self.check_dims(g)?;
        match self.prepare(g) {
            Prepared::Refuted(_) => Ok(()),
            Prepared::Ready(cands, lists) => self.run(g, cands, lists, budget, &mut 0, exists_only, visit).map(|_| ()),
        }
    }

    // Backtracking over prepared candidate sets. Returns whether the visitor
    // stopped the search, i.e. whether an exists-query found a match.
    fn run(
        &self,
        g: &Graph,
        cands: Vec<Bitset>,
        cand_lists: Vec<Vec<usize>>,
        budget: u64,
        steps: &mut u64,
        exists_only: bool,
        visit: &mut dyn FnMut(&[usize]) -> bool,
    ) -> Result<bool, MatchError> {
        let k = self.vars.len();
        let sizes: Vec<usize> = cand_lists.iter().map(Vec::len).collect();
        let (mut order, isolated) = self.plan(&sizes);
        let deferred = if exists_only {
            isolated
        } else {
            order.extend(isolated);
            Vec::new()
        };

        let mut position = vec![usize::MAX; k];
        for (i, &v) in order.iter().enumerate() {
            position[v] = i;
        }
        // For each position: the anchoring edge used to generate candidates
        // and the remaining edges to check against earlier variables.
        let mut steps_plan = Vec::with_capacity(order.len());
        for (i, &v) in order.iter().enumerate() {
            let mut anchor = None;
            let mut checks = Vec::new();
            for &pe in &self.incident[v] {
                let e = &self.edges[pe];
                let (other, outgoing) = if e.src == v { (e.dst, true) } else { (e.src, false) };
                if position[other] >= i {
                    continue;
                }
                let link = Link { other, edge: pe, outgoing };
                if anchor.is_none() {
                    anchor = Some(link);
                } else {
                    checks.push(link);
                }
            }
            steps_plan.push(Step { var: v, anchor, checks });
        }

        let mut state = SearchState {
            pattern: self,
            g,
            cands: &cands,
            cand_lists: &cand_lists,
            plan: &steps_plan,
            deferred: &deferred,
            assign: vec![usize::MAX; k],
            used: Bitset::new(g.node_count()),
            steps: *steps,
            budget,
        };
        let result = state.extend(0, visit);
        *steps = state.steps;
        result.map(|completed| !completed)
    }
}

#[derive(Debug, Clone, Copy)]
struct Link {
    other: usize,
    edge: usize,
    // pattern edge goes from the variable being placed to `other`
    outgoing: bool,
}

struct Step {
    var: usize,
    anchor: Option<Link>,
    checks: Vec<Link>,
}

struct SearchState<'a> {
    pattern: &'a Pattern,
    g: &'a Graph,
    cands: &'a [Bitset],
    cand_lists: &'a [Vec<usize>],
    plan: &'a [Step],
    deferred: &'a [usize],
    assign: Vec<usize>,
    used: Bitset,
    steps: u64,
    budget: u64,
}

impl SearchState<'_> {
    #[inline]
    fn tick(&mut self) -> Result<(), MatchError> {
        self.steps += 1;
        if self.steps > self.budget {
            Err(MatchError::BudgetExceeded { budget: self.budget })
        } else {
            Ok(())
        }
    }

    // Returns Ok(false) when the visitor asked to stop.
    fn extend(&mut self, depth: usize, visit: &mut dyn FnMut(&[usize]) -> bool) -> Result<bool, MatchError> {
        if depth == self.plan.len() {
            return self.finish(visit);
        }
        let step = &self.plan[depth];
        let var = step.var;
        match step.anchor {
            Some(anchor) => {
                let base = self.assign[anchor.other];
                // pattern edge var -> other: candidates are in-neighbors of base
                let list = if anchor.outgoing {
                    self.g.in_edges(base)
                } else {
                    self.g.out_edges(base)
                };
                for &(node, edge) in list {
                    let node = node as usize;
                    self.tick()?;
                    if self.used.contains(node)
                        || !self.cands[var].contains(node)
                        || !self.pattern.edge_ok(anchor.edge, self.g, edge as usize)
                        || !self.links_ok(node, &step.checks)
                    {
                        continue;
                    }
                    if !self.descend(depth, var, node, visit)? {
                        return Ok(false);
                    }
                }
            }
            None => {
                for idx in 0..self.cand_lists[var].len() {
                    let node = self.cand_lists[var][idx];
                    self.tick()?;
                    if self.used.contains(node) || !self.links_ok(node, &step.checks) {
                        continue;
                    }
                    if !self.descend(depth, var, node, visit)? {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    #[inline]
    fn descend(
        &mut self,
        depth: usize,
        var: usize,
        node: usize,
        visit: &mut dyn FnMut(&[usize]) -> bool,
    ) -> Result<bool, MatchError> {
        self.assign[var] = node;
        self.used.insert(node);
        let r = self.extend(depth + 1, visit);
        self.used.remove(node);
        self.assign[var] = usize::MAX;
        r
    }

    #[inline]
    fn links_ok(&self, node: usize, checks: &[Link]) -> bool {
        checks.iter().all(|link| {
            let other = self.assign[link.other];
            let (a, b) = if link.outgoing { (node, other) } else { (other, node) };
            self.g
                .edge_index(a, b)
                .is_some_and(|j| self.pattern.edge_ok(link.edge, self.g, j))
        })
    }

    fn finish(&mut self, visit: &mut dyn FnMut(&[usize]) -> bool) -> Result<bool, MatchError> {
        if self.deferred.is_empty() {
            return Ok(visit(&self.assign));
        }
        // Edge-free variables only need distinct unused candidates.
        for _ in 0..self.deferred.len() {
            self.tick()?;
        }
        let mut matched = vec![usize::MAX; self.pattern.var_count()];
        if bipartite_match(self.deferred, self.cand_lists, &self.used, self.g.node_count(), &mut matched).is_err() {
            return Ok(true);
        }
        let mut full = self.assign.clone();
        for &v in self.deferred {
            full[v] = matched[v];
        }
        Ok(visit(&full))
    }
}

/// Kuhn's augmenting-path matching of `vars` into their candidate lists,
/// avoiding `blocked` nodes. Fills `assign[var]` on success; on failure
/// returns a set of variables with fewer available candidates than members.
fn bipartite_match(
    vars: &[usize],
    cand_lists: &[Vec<usize>],
    blocked: &Bitset,
    n_nodes: usize,
    assign: &mut [usize],
) -> Result<(), Vec<usize>> {
    let mut m = Kuhn {
        cand_lists,
        blocked,
        owner: vec![usize::MAX; n_nodes],
        seen: vec![0; n_nodes],
        stamp: 0,
        visited: Vec::new(),
    };
    for &v in vars {
        m.stamp += 1;
        m.visited.clear();
        if !m.augment(v) {
            let mut violators = vec![v];
            violators.extend(m.visited.iter().map(|&node| m.owner[node]));
            violators.sort_unstable();
            violators.dedup();
            return Err(violators);
        }
    }
    for (node, &v) in m.owner.iter().enumerate() {
        if v != usize::MAX {
            assign[v] = node;
        }
    }
    Ok(())
}

struct Kuhn<'a> {
    cand_lists: &'a [Vec<usize>],
    blocked: &'a Bitset,
    owner: Vec<usize>,
    seen: Vec<u32>,
    stamp: u32,
    visited: Vec<usize>,
}

impl Kuhn<'_> {
    fn augment(&mut self, v: usize) -> bool {
        let list = &self.cand_lists[v];
        // a free node ends the path right away
        for &node in list {
            if self.owner[node] == usize::MAX && self.seen[node] != self.stamp && !self.blocked.contains(node) {
                self.seen[node] = self.stamp;
                self.owner[node] = v;
                return true;
            }
        }
        for &node in list {
            if self.seen[node] == self.stamp || self.blocked.contains(node) {
                continue;
            }
            self.seen[node] = self.stamp;
            self.visited.push(node);
            if self.augment(self.owner[node]) {
                self.owner[node] = v;
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Bitset {
    words: Vec<u64>,
}

impl Bitset {
    fn new(n: usize) -> Self {
        Bitset {
            words: vec![0; n.div_ceil(64)],
        }
    }

    #[inline]
    fn contains(&self, i: usize) -> bool {
        self.words[i >> 6] & (1 << (i & 63)) != 0
    }

    #[inline]
    fn insert(&mut self, i: usize) {
        self.words[i >> 6] |= 1 << (i & 63);
    }

    #[inline]
    fn remove(&mut self, i: usize) {
        self.words[i >> 6] &= !(1 << (i & 63));
    }

    fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    fn to_vec(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(self.iter());
        out
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + bit)
            })
        })
    }
}
