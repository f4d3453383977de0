use std::fs;
use std::path::PathBuf;

use gdlnn::data::{from_json, generate_ba2motifs, load_json, load_tu, save_json, split, stats, to_json, DataError, SplitConfig};

fn mutag_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/MUTAG")
}

#[test]
fn mutag_summary() {
    let ds = load_tu(mutag_dir(), "MUTAG").unwrap();
    let s = stats(&ds);
    assert_eq!(s.graphs, 188);
    assert_eq!((s.labels, s.node_dim, s.edge_dim), (2, 1, 1));
    assert!((s.avg_nodes - 17.93).abs() < 0.01, "{}", s.avg_nodes);
    assert!((s.avg_edges - 19.79).abs() < 0.01, "{}", s.avg_edges);
}

#[test]
fn mutag_split_uses_cumulative_cuts() {
    let ds = split(load_tu(mutag_dir(), "MUTAG").unwrap(), &SplitConfig::default()).unwrap();
    let sp = ds.splits().unwrap();
    let n = 188.0_f64;
    let t = (0.8 * n).floor() as usize;
    let v = (0.9 * n).floor() as usize;
    assert_eq!((sp.train.len(), sp.val.len(), sp.test.len()), (t, v - t, 188 - v));
    let mut all: Vec<usize> = sp.train.iter().chain(&sp.val).chain(&sp.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..188).collect::<Vec<_>>());
}

fn write_tu(dir: &std::path::Path, files: &[(&str, &str)]) {
    for (suffix, body) in files {
        fs::write(dir.join(format!("T_{suffix}.txt")), body).unwrap();
    }
}

#[test]
fn tu_attributes_come_before_labels() {
    let dir = tempfile::tempdir().unwrap();
    write_tu(
        dir.path(),
        &[
            ("A", "1, 2\n2, 1\n3, 4\n"),
            ("graph_indicator", "1\n1\n2\n2\n"),
            ("graph_labels", "0\n1\n"),
            ("node_labels", "5\n6\n7\n8\n"),
            ("node_attributes", "0.5, 1.5\n2.5, 3.5\n4.5, 5.5\n6.5, 7.5\n"),
            ("edge_labels", "1\n1\n2\n"),
        ],
    );
    let ds = load_tu(dir.path(), "T").unwrap();
    assert_eq!((ds.len(), ds.node_dim(), ds.edge_dim()), (2, 3, 1));
    let g = &ds.graphs()[1];
    assert_eq!(g.node_feature(0), &[4.5, 5.5, 7.0]);
    assert_eq!(g.edges(), &[(0, 1)]);
    assert_eq!(g.edge_feature(0), &[2.0]);
    assert_eq!(g.label(), Some(1));
}

#[test]
fn tu_errors_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    write_tu(
        dir.path(),
        &[("A", "1, 3\n"), ("graph_indicator", "1\n1\n2\n"), ("graph_labels", "0\n1\n")],
    );
    assert!(matches!(load_tu(dir.path(), "T"), Err(DataError::Parse { .. })));
    assert!(matches!(load_tu(dir.path(), "missing"), Err(DataError::Io { .. })));
    write_tu(dir.path(), &[("A", "1, x\n")]);
    assert!(matches!(load_tu(dir.path(), "T"), Err(DataError::Parse { line: 1, .. })));
}

#[test]
fn json_round_trips_through_a_file() {
    let ds = generate_ba2motifs(12, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ba.json");
    save_json(&ds, &path).unwrap();
    let back = load_json(&path).unwrap();
    assert_eq!(back.graphs(), ds.graphs());
    assert_eq!(to_json(&back), to_json(&ds));
    assert!(from_json("{\"name\": \"x\"}").is_err());
}

#[test]
fn generated_data_is_seeded() {
    assert_eq!(generate_ba2motifs(30, 9), generate_ba2motifs(30, 9));
    assert_ne!(generate_ba2motifs(30, 9).graphs(), generate_ba2motifs(30, 10).graphs());
}
