//! Datasets: TU text format, a JSON format, splitting, the BA-2Motifs
//! generator, and summary statistics.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, Label};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{0}")]
    Inconsistent(String),
    #[error("graph {index}: {source}")]
    Graph { index: usize, source: GraphError },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("graph {index} has dimensions ({node_dim}, {edge_dim}), dataset has ({d}, {c})")]
    DimensionMismatch {
        index: usize,
        node_dim: usize,
        edge_dim: usize,
        d: usize,
        c: usize,
    },
    #[error("need at least 3 graphs to split, got {0}")]
    TooFewGraphs(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
}

/// Train/validation/test indices into a dataset's graph list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    node_dim: usize,
    edge_dim: usize,
    graphs: Vec<Graph>,
    splits: Option<Splits>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, node_dim: usize, edge_dim: usize, graphs: Vec<Graph>) -> Result<Self, DataError> {
        for (index, g) in graphs.iter().enumerate() {
            if g.node_dim() != node_dim || g.edge_dim() != edge_dim {
                return Err(DataError::DimensionMismatch {
                    index,
                    node_dim: g.node_dim(),
                    edge_dim: g.edge_dim(),
                    d: node_dim,
                    c: edge_dim,
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            node_dim,
            edge_dim,
            graphs,
            splits: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Distinct labels in ascending order.
    pub fn label_set(&self) -> Vec<Label> {
        self.graphs
            .iter()
            .filter_map(Graph::label)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn splits(&self) -> Option<&Splits> {
        self.splits.as_ref()
    }

    /// Clones of the graphs at `indices`.
    pub fn select(&self, indices: &[usize]) -> Vec<Graph> {
        indices.iter().map(|&i| self.graphs[i].clone()).collect()
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_optional(path: &Path) -> Result<Option<String>, DataError> {
    if path.exists() {
        read(path).map(Some)
    } else {
        Ok(None)
    }
}

fn parse_rows<T: std::str::FromStr>(file: &str, text: &str) -> Result<Vec<Vec<T>>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            line.split(',')
                .map(|tok| {
                    tok.trim().parse::<T>().map_err(|_| DataError::Parse {
                        file: file.to_string(),
                        line: i + 1,
                        message: format!("cannot parse `{}`", tok.trim()),
                    })
                })
                .collect()
        })
        .collect()
}

fn parse_column<T: std::str::FromStr>(file: &str, text: &str) -> Result<Vec<T>, DataError> {
    parse_rows::<T>(file, text)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| match <[T; 1]>::try_from(row) {
            Ok([v]) => Ok(v),
            Err(_) => Err(DataError::Parse {
                file: file.to_string(),
                line: i + 1,
                message: "expected one value".to_string(),
            }),
        })
        .collect()
}

// Concatenates optional attribute rows and optional integer labels (as one
// extra coordinate) into one feature row per item.
fn feature_rows(
    what: &str,
    count: usize,
    attributes: Option<Vec<Vec<f64>>>,
    labels: Option<Vec<i64>>,
) -> Result<(usize, Vec<Vec<f64>>), DataError> {
    let mut rows = vec![Vec::new(); count];
    let mut dim = 0;
    if let Some(attrs) = attributes {
        if attrs.len() != count {
            return Err(DataError::Inconsistent(format!(
                "{what} attributes have {} rows, expected {count}",
                attrs.len()
            )));
        }
        dim = attrs.first().map_or(0, Vec::len);
        if let Some(i) = attrs.iter().position(|r| r.len() != dim) {
            return Err(DataError::Inconsistent(format!("{what} attribute row {} has a different width", i + 1)));
        }
        rows = attrs;
    }
    if let Some(labels) = labels {
        if labels.len() != count {
            return Err(DataError::Inconsistent(format!(
                "{what} labels have {} rows, expected {count}",
                labels.len()
            )));
        }
        for (row, l) in rows.iter_mut().zip(labels) {
            row.push(l as f64);
        }
        dim += 1;
    }
    Ok((dim, rows))
}

/// Loads `<dir>/<name>_*.txt` in the TU benchmark format. Integer labels
/// become one real coordinate appended after any attributes; edges are
/// kept as the directed pairs listed in the file.
pub fn load_tu(dir: impl AsRef<Path>, name: &str) -> Result<Dataset, DataError> {
    let dir = dir.as_ref();
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    let fname = |suffix: &str| format!("{name}_{suffix}.txt");

    let indicator: Vec<usize> = parse_column(&fname("graph_indicator"), &read(&file("graph_indicator"))?)?;
    let graph_labels: Vec<Label> = parse_column(&fname("graph_labels"), &read(&file("graph_labels"))?)?;
    let pairs: Vec<Vec<usize>> = parse_rows(&fname("A"), &read(&file("A"))?)?;
    let n_graphs = graph_labels.len();
    let n_nodes = indicator.len();

    let node_labels = read_optional(&file("node_labels"))?
        .map(|t| parse_column::<i64>(&fname("node_labels"), &t))
        .transpose()?;
    let node_attrs = read_optional(&file("node_attributes"))?
        .map(|t| parse_rows::<f64>(&fname("node_attributes"), &t))
        .transpose()?;
    let edge_labels = read_optional(&file("edge_labels"))?
        .map(|t| parse_column::<i64>(&fname("edge_labels"), &t))
        .transpose()?;
    let edge_attrs = read_optional(&file("edge_attributes"))?
        .map(|t| parse_rows::<f64>(&fname("edge_attributes"), &t))
        .transpose()?;
    let (d, node_rows) = feature_rows("node", n_nodes, node_attrs, node_labels)?;
    let (c, edge_rows) = feature_rows("edge", pairs.len(), edge_attrs, edge_labels)?;

    // global node -> (graph, local index)
    let mut local = vec![0usize; n_nodes];
    let mut sizes = vec![0usize; n_graphs];
    for (v, &gid) in indicator.iter().enumerate() {
        if gid == 0 || gid > n_graphs {
            return Err(DataError::Inconsistent(format!(
                "node {} belongs to graph {gid}, but there are {n_graphs} graph labels",
                v + 1
            )));
        }
        local[v] = sizes[gid - 1];
        sizes[gid - 1] += 1;
    }
    let mut nodes: Vec<Vec<Vec<f64>>> = sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
    for (v, row) in node_rows.into_iter().enumerate() {
        nodes[indicator[v] - 1].push(row);
    }
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    let mut efeats: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_graphs];
    for (line, (pair, row)) in pairs.iter().zip(edge_rows).enumerate() {
        let bad = |message: String| DataError::Parse {
            file: fname("A"),
            line: line + 1,
            message,
        };
        let [a, b] = pair[..] else {
            return Err(bad("expected `src, dst`".to_string()));
        };
        if a == 0 || b == 0 || a > n_nodes || b > n_nodes {
            return Err(bad(format!("node id out of range 1..={n_nodes}")));
        }
        let gid = indicator[a - 1];
        if indicator[b - 1] != gid {
            return Err(bad(format!("edge ({a}, {b}) joins two graphs")));
        }
        edges[gid - 1].push((local[a - 1], local[b - 1]));
        efeats[gid - 1].push(row);
    }

    let graphs = nodes
        .into_iter()
        .zip(edges)
        .zip(efeats)
        .zip(graph_labels)
        .enumerate()
        .map(|(index, (((ns, es), efs), y))| {
            Graph::new(d, c, ns, es, efs)
                .map(|g| g.with_label(y))
                .map_err(|source| DataError::Graph { index, source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(name, d, c, graphs)
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    name: String,
    d: usize,
    c: usize,
    graphs: Vec<JsonGraph>,
}

#[derive(Serialize, Deserialize)]
struct JsonGraph {
    nodes: Vec<Vec<f64>>,
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    edge_features: Vec<Vec<f64>>,
    label: Option<Label>,
}

pub fn from_json(text: &str) -> Result<Dataset, DataError> {
    let raw: JsonDataset = serde_json::from_str(text)?;
    let graphs = raw
        .graphs
        .into_iter()
        .enumerate()
        .map(|(index, jg)| {
            let g = Graph::new(
                raw.d,
                raw.c,
                jg.nodes,
                jg.edges.into_iter().map(|[a, b]| (a, b)).collect(),
                jg.edge_features,
            )
            .map_err(|source| DataError::Graph { index, source })?;
            Ok(match jg.label {
                Some(y) => g.with_label(y),
                None => g,
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Dataset::new(raw.name, raw.d, raw.c, graphs)
}

pub fn to_json(ds: &Dataset) -> String {
    let raw = JsonDataset {
        name: ds.name.clone(),
        d: ds.node_dim,
        c: ds.edge_dim,
        graphs: ds
            .graphs
            .iter()
            .map(|g| JsonGraph {
                nodes: (0..g.node_count()).map(|i| g.node_feature(i).to_vec()).collect(),
                edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
                edge_features: if g.edge_dim() == 0 {
                    Vec::new()
                } else {
                    (0..g.edge_count()).map(|j| g.edge_feature(j).to_vec()).collect()
                },
                label: g.label(),
            })
            .collect(),
    };
    serde_json::to_string(&raw).expect("dataset serializes")
}

pub fn load_json(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    from_json(&read(path.as_ref())?)
}

pub fn save_json(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, to_json(ds)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

/// Seeded shuffle, then contiguous cuts at the floors of the cumulative
/// ratios.
pub fn split(mut ds: Dataset, cfg: &SplitConfig) -> Result<Dataset, DataError> {
    let [a, b, c] = cfg.ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios(cfg.ratios));
    }
    let n = ds.len();
    if n < 3 {
        return Err(DataError::TooFewGraphs(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    // the small slack keeps e.g. 0.7 * 10 from flooring to 6
    let cut = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
    let (t, v) = (cut(a), cut(a + b).min(n));
    ds.splits = Some(Splits {
        train: order[..t].to_vec(),
        val: order[t..v].to_vec(),
        test: order[v..].to_vec(),
    });
    Ok(ds)
}

/// Number of nodes in the random base graph of each BA-2Motifs instance.
pub const BA_BASE_NODES: usize = 20;

/// Synthetic two-class dataset: a preferential-attachment tree on 20 nodes
/// with a 5-node motif hung off it by one edge. Label 1 motifs are houses
/// (the two middle nodes are adjacent), label 2 motifs are 5-cycles (they
/// are not). Each node's single feature is its degree. Labels alternate,
/// starting with 1.
pub fn generate_ba2motifs(count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = (0..count)
        .map(|i| {
            let label = if i % 2 == 0 { 1 } else { 2 };
            ba_motif_graph(&mut rng, label == 1).with_label(label)
        })
        .collect();
    Dataset::new("BA-2Motifs", 1, 0, graphs).expect("generated graphs share dimensions")
}

fn ba_motif_graph(rng: &mut impl Rng, house: bool) -> Graph {
    let n = BA_BASE_NODES + 5;
    let mut und: Vec<(usize, usize)> = vec![(0, 1)];
    // every edge endpoint once, so uniform picks are degree-proportional
    let mut ends = vec![0, 1];
    for v in 2..BA_BASE_NODES {
        let t = ends[rng.random_range(0..ends.len())];
        und.push((t, v));
        ends.extend([t, v]);
    }
    // roof, two middles, two bottoms
    let (roof, m1, m2, b1, b2) = (20, 21, 22, 23, 24);
    und.extend([(roof, m1), (roof, m2), (m1, b1), (m2, b2), (b1, b2)]);
    if house {
        und.push((m1, m2));
    }
    let middle = if rng.random_bool(0.5) { m1 } else { m2 };
    und.push((rng.random_range(0..BA_BASE_NODES), middle));

    let mut degree = vec![0usize; n];
    let mut edges = Vec::with_capacity(2 * und.len());
    for &(a, b) in &und {
        degree[a] += 1;
        degree[b] += 1;
        edges.push((a, b));
        edges.push((b, a));
    }
    let features = degree.iter().map(|&d| vec![d as f64]).collect();
    Graph::new(1, 0, features, edges, vec![]).expect("generated graph is valid")
}

/// The summary columns reported for each dataset. Edges are counted as
/// unordered node pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub graphs: usize,
    pub avg_nodes: f64,
    pub avg_edges: f64,
    pub labels: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
}

pub fn stats(ds: &Dataset) -> Stats {
    let n = ds.len();
    let avg = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    Stats {
        graphs: n,
        avg_nodes: avg(ds.graphs.iter().map(Graph::node_count).sum()),
        avg_edges: avg(ds.graphs.iter().map(Graph::undirected_edge_count).sum()),
        labels: ds.label_set().len(),
        node_dim: ds.node_dim,
        edge_dim: ds.edge_dim,
    }
}
