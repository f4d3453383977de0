//! The graph description language: programs are conjunctions of node and
//! edge descriptions, each optionally constraining a feature vector with a
//! vector of closed intervals.
//!
//! The concrete text format is line oriented:
//!
//! ```text
//! // a chain of three nodes
//! node x <[3.0, 4.0]>
//! node y <[2.0, 2.0]>
//! node z
//! edge (x, y)
//! edge (y, z) <[5.0, inf]>
//! ```

mod parse;
mod print;

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

pub use parse::parse_program;
pub use print::print_program;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GdlError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("undeclared variable `{var}` (line {line})")]
    UndeclaredVariable { var: String, line: usize },
    #[error("variable `{var}` is declared more than once (line {line})")]
    DuplicateVariable { var: String, line: usize },
    #[error("edge ({src}, {dst}) is described more than once (line {line})")]
    DuplicateEdge {
        src: String,
        dst: String,
        line: usize,
    },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("`{description}` has {found} intervals, dataset expects {expected}")]
    DimensionMismatch {
        description: String,
        expected: usize,
        found: usize,
    },
}

/// A closed interval over the extended reals. `lo` may be `-inf`, `hi` may be
/// `+inf`; NaN bounds are never constructed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self, GdlError> {
        let ok = !lo.is_nan() && !hi.is_nan() && lo != f64::INFINITY && hi != f64::NEG_INFINITY && lo <= hi;
        if ok {
            Ok(Interval { lo, hi })
        } else {
            Err(GdlError::InvalidInterval { lo, hi })
        }
    }

    /// The degenerate interval `[v, v]`.
    ///
    /// # Panics
    /// If `v` is NaN or infinite.
    pub fn point(v: f64) -> Self {
        assert!(v.is_finite(), "point interval needs a finite value, got {v}");
        Interval { lo: v, hi: v }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_unbounded(&self) -> bool {
        self.lo == f64::NEG_INFINITY && self.hi == f64::INFINITY
    }

    pub(crate) fn with_lo(self, lo: f64) -> Self {
        Interval { lo, ..self }
    }

    pub(crate) fn with_hi(self, hi: f64) -> Self {
        Interval { hi, ..self }
    }
}

/// A feature constraint: one interval per feature coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalVec(Vec<Interval>);

impl IntervalVec {
    pub fn new(intervals: Vec<Interval>) -> Self {
        IntervalVec(intervals)
    }

    /// Degenerate intervals pinning every coordinate to the given values.
    pub fn exact(values: &[f64]) -> Self {
        IntervalVec(values.iter().map(|&v| Interval::point(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.0
    }

    pub fn is_unbounded(&self) -> bool {
        self.0.iter().all(Interval::is_unbounded)
    }

    /// Whether every coordinate of `x` lies in its interval. Callers are
    /// responsible for matching lengths.
    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        debug_assert_eq!(self.0.len(), x.len());
        self.0.iter().zip(x).all(|(itv, &v)| itv.contains(v))
    }
}

impl From<Vec<Interval>> for IntervalVec {
    fn from(v: Vec<Interval>) -> Self {
        IntervalVec(v)
    }
}

/// Absent constraints and a vector of unbounded intervals denote the same set.
fn constraints_equal(a: &Option<IntervalVec>, b: &Option<IntervalVec>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => a == b,
        (Some(v), None) | (None, Some(v)) => v.is_unbounded(),
        (None, None) => true,
    }
}

#[derive(Debug, Clone)]
pub struct NodeDescription {
    pub var: String,
    pub constraints: Option<IntervalVec>,
}

#[derive(Debug, Clone)]
pub struct EdgeDescription {
    pub src: String,
    pub dst: String,
    pub constraints: Option<IntervalVec>,
}

impl PartialEq for NodeDescription {
    fn eq(&self, other: &Self) -> bool {
        self.var == other.var && constraints_equal(&self.constraints, &other.constraints)
    }
}

impl PartialEq for EdgeDescription {
    fn eq(&self, other: &Self) -> bool {
        self.src == other.src
            && self.dst == other.dst
            && constraints_equal(&self.constraints, &other.constraints)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Description {
    Node(NodeDescription),
    Edge(EdgeDescription),
}

impl Description {
    pub fn constraints(&self) -> Option<&IntervalVec> {
        match self {
            Description::Node(n) => n.constraints.as_ref(),
            Description::Edge(e) => e.constraints.as_ref(),
        }
    }

    // Key identifying the description within a program, used for
    // order-insensitive comparison.
    fn key(&self) -> (u8, &str, &str) {
        match self {
            Description::Node(n) => (0, n.var.as_str(), ""),
            Description::Edge(e) => (1, e.src.as_str(), e.dst.as_str()),
        }
    }
}

/// A GDL program. Description order is kept for printing but carries no
/// meaning: equality compares descriptions as a set.
#[derive(Debug, Clone, Default)]
pub struct Program {
    descriptions: Vec<Description>,
}

impl Program {
    /// Builds a program, rejecting duplicate variables, duplicate edges and
    /// edges over undeclared variables. Error positions are 1-based indices
    /// into `descriptions`.
    pub fn new(descriptions: Vec<Description>) -> Result<Self, GdlError> {
        check_invariants(&descriptions, |i| i + 1)?;
        Ok(Program { descriptions })
    }

    pub(crate) fn new_unchecked(descriptions: Vec<Description>) -> Self {
        debug_assert!(check_invariants(&descriptions, |i| i + 1).is_ok());
        Program { descriptions }
    }

    pub fn empty() -> Self {
        Program::default()
    }

    pub fn descriptions(&self) -> &[Description] {
        &self.descriptions
    }

    pub fn into_descriptions(self) -> Vec<Description> {
        self.descriptions
    }

    pub fn len(&self) -> usize {
        self.descriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeDescription> {
        self.descriptions.iter().filter_map(|d| match d {
            Description::Node(n) => Some(n),
            Description::Edge(_) => None,
        })
    }

    pub fn edges(&self) -> impl Iterator<Item = &EdgeDescription> {
        self.descriptions.iter().filter_map(|d| match d {
            Description::Edge(e) => Some(e),
            Description::Node(_) => None,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes().count()
    }

    /// Checks every present constraint vector against the dataset's node
    /// feature dimension `d` and edge feature dimension `c`.
    pub fn validate_against_dataset(&self, d: usize, c: usize) -> Result<(), GdlError> {
        for desc in &self.descriptions {
            let expected = match desc {
                Description::Node(_) => d,
                Description::Edge(_) => c,
            };
            if let Some(cons) = desc.constraints() {
                if cons.len() != expected {
                    return Err(GdlError::DimensionMismatch {
                        description: print::print_description(desc),
                        expected,
                        found: cons.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        if self.descriptions.len() != other.descriptions.len() {
            return false;
        }
        let mut a: Vec<&Description> = self.descriptions.iter().collect();
        let mut b: Vec<&Description> = other.descriptions.iter().collect();
        a.sort_by(|x, y| x.key().cmp(&y.key()));
        b.sort_by(|x, y| x.key().cmp(&y.key()));
        a == b
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_program(self))
    }
}

impl std::str::FromStr for Program {
    type Err = GdlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_program(s)
    }
}

fn check_invariants(descriptions: &[Description], line_of: impl Fn(usize) -> usize) -> Result<(), GdlError> {
    let mut vars = HashSet::new();
    for (i, desc) in descriptions.iter().enumerate() {
        if let Description::Node(n) = desc {
            if !vars.insert(n.var.as_str()) {
                return Err(GdlError::DuplicateVariable {
                    var: n.var.clone(),
                    line: line_of(i),
                });
            }
        }
    }
    let mut pairs = HashSet::new();
    for (i, desc) in descriptions.iter().enumerate() {
        if let Description::Edge(e) = desc {
            for v in [&e.src, &e.dst] {
                if !vars.contains(v.as_str()) {
                    return Err(GdlError::UndeclaredVariable {
                        var: v.clone(),
                        line: line_of(i),
                    });
                }
            }
            if !pairs.insert((e.src.as_str(), e.dst.as_str())) {
                return Err(GdlError::DuplicateEdge {
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                    line: line_of(i),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_program() -> Program {
        parse_program("node x <[3.0, 4.0]>\nnode y <[2.0, 2.0]>\nnode z <[1.0, 1.0]>\nedge (x, y)\nedge (y, z)").unwrap()
    }

    #[test]
    fn interval_rejects_inverted_and_nan_bounds() {
        assert!(Interval::new(1.0, 0.0).is_err());
        assert!(Interval::new(f64::NAN, 0.0).is_err());
        assert!(Interval::new(f64::INFINITY, f64::INFINITY).is_err());
        assert!(Interval::new(f64::NEG_INFINITY, f64::NEG_INFINITY).is_err());
        assert!(Interval::new(2.0, 2.0).is_ok());
    }

    #[test]
    fn validate_dims() {
        let p = chain_program();
        assert!(p.validate_against_dataset(1, 1).is_ok());
        assert!(matches!(
            p.validate_against_dataset(2, 1),
            Err(GdlError::DimensionMismatch { expected: 2, found: 1, .. })
        ));
        assert!(Program::empty().validate_against_dataset(7, 3).is_ok());
    }

    #[test]
    fn equality_ignores_order_and_unbounded_vectors() {
        let a = parse_program("node x\nnode y <[1.0, 2.0]>\nedge (x, y)").unwrap();
        let b = Program::new(vec![
            Description::Edge(EdgeDescription {
                src: "x".into(),
                dst: "y".into(),
                constraints: Some(IntervalVec::new(vec![Interval::UNBOUNDED, Interval::UNBOUNDED])),
            }),
            Description::Node(NodeDescription {
                var: "y".into(),
                constraints: Some(IntervalVec::new(vec![Interval::new(1.0, 2.0).unwrap()])),
            }),
            Description::Node(NodeDescription {
                var: "x".into(),
                constraints: None,
            }),
        ])
        .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, chain_program());
    }

    #[test]
    fn constructor_enforces_invariants() {
        let node = |v: &str| {
            Description::Node(NodeDescription {
                var: v.into(),
                constraints: None,
            })
        };
        let edge = |s: &str, d: &str| {
            Description::Edge(EdgeDescription {
                src: s.into(),
                dst: d.into(),
                constraints: None,
            })
        };
        assert!(matches!(
            Program::new(vec![node("x"), node("x")]),
            Err(GdlError::DuplicateVariable { line: 2, .. })
        ));
        assert!(matches!(
            Program::new(vec![node("x"), edge("x", "y")]),
            Err(GdlError::UndeclaredVariable { .. })
        ));
        assert!(matches!(
            Program::new(vec![node("x"), edge("x", "x"), edge("x", "x")]),
            Err(GdlError::DuplicateEdge { .. })
        ));
        // self-loops are legal patterns
        assert!(Program::new(vec![node("x"), edge("x", "x")]).is_ok());
    }
}
