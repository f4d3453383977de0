use std::fmt::Write;

use super::{Description, Interval, IntervalVec, Program};

/// Canonical text of a program: one description per line in program order,
/// no trailing newline. Vectors made only of unbounded intervals are omitted.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for (i, desc) in p.descriptions().iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_description(&mut out, desc);
    }
    out
}

pub(crate) fn print_description(desc: &Description) -> String {
    let mut out = String::new();
    write_description(&mut out, desc);
    out
}

fn write_description(out: &mut String, desc: &Description) {
    match desc {
        Description::Node(n) => {
            let _ = write!(out, "node {}", n.var);
            write_constraints(out, n.constraints.as_ref());
        }
        Description::Edge(e) => {
            let _ = write!(out, "edge ({}, {})", e.src, e.dst);
            write_constraints(out, e.constraints.as_ref());
        }
    }
}

fn write_constraints(out: &mut String, cons: Option<&IntervalVec>) {
    let Some(cons) = cons.filter(|c| !c.is_unbounded()) else {
        return;
    };
    out.push_str(" <");
    for (i, itv) in cons.intervals().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_interval(out, itv);
    }
    out.push('>');
}

fn write_interval(out: &mut String, itv: &Interval) {
    out.push('[');
    write_bound(out, itv.lo());
    out.push_str(", ");
    write_bound(out, itv.hi());
    out.push(']');
}

// `{:?}` is the shortest representation that parses back to the same f64,
// and keeps the `.0` on integral values.
fn write_bound(out: &mut String, v: f64) {
    if v == f64::INFINITY {
        out.push_str("inf");
    } else if v == f64::NEG_INFINITY {
        out.push_str("-inf");
    } else {
        let _ = write!(out, "{v:?}");
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_program;
    use super::*;

    const P1: &str = "node x <[3.0, 4.0]>\nnode y <[2.0, 2.0]>\nnode z <[1.0, 1.0]>\nedge (x, y)\nedge (y, z)";

    #[test]
    fn prints_chain_program_canonically() {
        let p = parse_program(P1).unwrap();
        assert_eq!(print_program(&p), P1);
    }

    #[test]
    fn normalizes_spacing_and_numbers() {
        let p = parse_program("  node   x<[3,4]>\nedge(x,x)<[ -inf , 1e-7 ]>").unwrap();
        assert_eq!(print_program(&p), "node x <[3.0, 4.0]>\nedge (x, x) <[-inf, 1e-7]>");
    }

    #[test]
    fn empty_program_prints_empty() {
        assert_eq!(print_program(&Program::empty()), "");
    }

    #[test]
    fn unbounded_vectors_are_omitted() {
        let p = parse_program("node x <[-inf, inf], [-inf, inf]>").unwrap();
        assert_eq!(print_program(&p), "node x");
    }
}
