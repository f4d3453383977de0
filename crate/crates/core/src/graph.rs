use thiserror::Error;

/// Class label of a graph. TU datasets use arbitrary integers (MUTAG uses
/// `-1`/`1`), so labels are kept as given.
pub type Label = i64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("edge {index} ({src}, {dst}) has an endpoint outside 0..{n}")]
    EndpointOutOfRange {
        index: usize,
        src: usize,
        dst: usize,
        n: usize,
    },
    #[error("duplicate directed edge ({src}, {dst})")]
    DuplicateEdge { src: usize, dst: usize },
    #[error("{what} {index} has {found} features, expected {expected}")]
    FeatureArity {
        what: &'static str,
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("expected {expected} edge feature rows, found {found}")]
    EdgeFeatureRows { expected: usize, found: usize },
    #[error("{what} {index} has a non-finite feature")]
    NonFinite { what: &'static str, index: usize },
}

/// A directed graph with real-valued node features (`n x d`) and edge
/// features (`m x c`). Immutable once built.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    node_dim: usize,
    edge_dim: usize,
    node_features: Vec<f64>,
    edges: Vec<(usize, usize)>,
    edge_features: Vec<f64>,
    label: Option<Label>,
    // (neighbor, edge index), sorted by neighbor
    out_adj: Vec<Vec<(u32, u32)>>,
    in_adj: Vec<Vec<(u32, u32)>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.node_dim == other.node_dim
            && self.edge_dim == other.edge_dim
            && self.node_features == other.node_features
            && self.edges == other.edges
            && self.edge_features == other.edge_features
            && self.label == other.label
    }
}

impl Graph {
    /// Builds a graph from per-node and per-edge feature rows. When
    /// `edge_dim` is zero, `edge_features` may be left empty.
    pub fn new(
        node_dim: usize,
        edge_dim: usize,
        node_features: Vec<Vec<f64>>,
        edges: Vec<(usize, usize)>,
        edge_features: Vec<Vec<f64>>,
    ) -> Result<Self, GraphError> {
        let n = node_features.len();
        let mut flat_nodes = Vec::with_capacity(n * node_dim);
        for (i, row) in node_features.iter().enumerate() {
            check_row("node", i, row, node_dim)?;
            flat_nodes.extend_from_slice(row);
        }
        let m = edges.len();
        let mut flat_edges = Vec::with_capacity(m * edge_dim);
        if !(edge_dim == 0 && edge_features.is_empty()) {
            if edge_features.len() != m {
                return Err(GraphError::EdgeFeatureRows {
                    expected: m,
                    found: edge_features.len(),
                });
            }
            for (j, row) in edge_features.iter().enumerate() {
                check_row("edge", j, row, edge_dim)?;
                flat_edges.extend_from_slice(row);
            }
        }
        Self::from_flat(n, node_dim, edge_dim, flat_nodes, edges, flat_edges)
    }

    pub(crate) fn from_flat(
        n: usize,
        node_dim: usize,
        edge_dim: usize,
        node_features: Vec<f64>,
        edges: Vec<(usize, usize)>,
        edge_features: Vec<f64>,
    ) -> Result<Self, GraphError> {
        debug_assert_eq!(node_features.len(), n * node_dim);
        debug_assert_eq!(edge_features.len(), edges.len() * edge_dim);
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for (index, &(src, dst)) in edges.iter().enumerate() {
            if src >= n || dst >= n {
                return Err(GraphError::EndpointOutOfRange { index, src, dst, n });
            }
            out_adj[src].push((dst as u32, index as u32));
            in_adj[dst].push((src as u32, index as u32));
        }
        for (src, list) in out_adj.iter_mut().enumerate() {
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(GraphError::DuplicateEdge {
                    src,
                    dst: w[0].0 as usize,
                });
            }
        }
        for list in &mut in_adj {
            list.sort_unstable();
        }
        Ok(Graph {
            n,
            node_dim,
            edge_dim,
            node_features,
            edges,
            edge_features,
            label: None,
            out_adj,
            in_adj,
        })
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn label(&self) -> Option<Label> {
        self.label
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn node_feature(&self, i: usize) -> &[f64] {
        &self.node_features[i * self.node_dim..(i + 1) * self.node_dim]
    }

    #[inline]
    pub fn edge_feature(&self, j: usize) -> &[f64] {
        &self.edge_features[j * self.edge_dim..(j + 1) * self.edge_dim]
    }

    /// Out-neighbors of `u` as `(neighbor, edge index)`, sorted by neighbor.
    #[inline]
    pub fn out_edges(&self, u: usize) -> &[(u32, u32)] {
        &self.out_adj[u]
    }

    #[inline]
    pub fn in_edges(&self, u: usize) -> &[(u32, u32)] {
        &self.in_adj[u]
    }

    /// Index of the directed edge `(u, v)`, if present.
    #[inline]
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        let list = &self.out_adj[u];
        list.binary_search_by_key(&(v as u32), |&(w, _)| w)
            .ok()
            .map(|pos| list[pos].1 as usize)
    }

    /// Number of distinct neighbors ignoring direction; a self-loop counts once.
    pub fn undirected_degree(&self, u: usize) -> usize {
        let mut nbrs: Vec<u32> = self.out_adj[u].iter().chain(&self.in_adj[u]).map(|&(w, _)| w).collect();
        nbrs.sort_unstable();
        nbrs.dedup();
        nbrs.len()
    }

    /// Number of unordered node pairs joined by an edge in either direction,
    /// self-loops included. Symmetric edge lists count each pair once.
    pub fn undirected_edge_count(&self) -> usize {
        let mut pairs: Vec<(usize, usize)> = self.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs.len()
    }

    /// The subgraph induced by `keep` (strictly increasing node indices).
    /// Nodes are renumbered in order; surviving edges keep their relative
    /// order and features.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Graph {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let mut remap = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut node_features = Vec::with_capacity(keep.len() * self.node_dim);
        for &old in keep {
            node_features.extend_from_slice(self.node_feature(old));
        }
        let mut edges = Vec::new();
        let mut edge_features = Vec::new();
        for (j, &(a, b)) in self.edges.iter().enumerate() {
            if remap[a] != usize::MAX && remap[b] != usize::MAX {
                edges.push((remap[a], remap[b]));
                edge_features.extend_from_slice(self.edge_feature(j));
            }
        }
        let mut g = Graph::from_flat(keep.len(), self.node_dim, self.edge_dim, node_features, edges, edge_features)
            .expect("induced subgraph of a valid graph is valid");
        g.label = self.label;
        g
    }
}

fn check_row(what: &'static str, index: usize, row: &[f64], expected: usize) -> Result<(), GraphError> {
    if row.len() != expected {
        return Err(GraphError::FeatureArity {
            what,
            index,
            found: row.len(),
            expected,
        });
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(GraphError::NonFinite { what, index });
    }
    Ok(())
}
