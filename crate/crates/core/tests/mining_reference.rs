use gdlnn::data::generate_ba2motifs;
use gdlnn::fixtures::{random_graph, toy_graphs};
use gdlnn::mining::{
    canonicalize, choose, enumerate_mutations, initialize, learn, mine, score, MiningConfig, TrainingSet,
};
use gdlnn::{print_program, Graph, Label, Program, DEFAULT_BUDGET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Plain greedy walk over the public building blocks, scoring every
// candidate against every graph.
fn reference_mine(d: &TrainingSet, g: &Graph, y: Label, eps: f64) -> Program {
    let mut p = initialize(g);
    loop {
        let cands = enumerate_mutations(&p);
        let Some(q) = choose(&cands, d, y, eps, DEFAULT_BUDGET).unwrap() else {
            return p;
        };
        let sp = score(&p, d, y, eps, DEFAULT_BUDGET).unwrap().score;
        let sq = score(&q, d, y, eps, DEFAULT_BUDGET).unwrap().score;
        if sq < sp {
            return p;
        }
        p = q;
    }
}

fn check_dataset(d: &TrainingSet, eps: f64) {
    let cfg = MiningConfig {
        epsilon: eps,
        ..MiningConfig::default()
    };
    for i in 0..d.len() {
        let fast = mine(d, d.graph(i), d.label(i), &cfg).unwrap();
        let slow = reference_mine(d, d.graph(i), d.label(i), eps);
        assert_eq!(
            print_program(&canonicalize(&fast.program)),
            print_program(&canonicalize(&slow)),
            "graph {i}"
        );
        let s = score(&slow, d, d.label(i), eps, DEFAULT_BUDGET).unwrap();
        assert_eq!(fast.score, s.score);
        assert_eq!((fast.matched_same, fast.matched_total), (s.matched_same, s.matched_total));
    }
}

#[test]
fn engine_matches_reference_on_toy_graphs() {
    let d = TrainingSet::from_labeled(toy_graphs().to_vec()).unwrap();
    for eps in [0.1, 1.0, 2.5] {
        check_dataset(&d, eps);
    }
}

#[test]
fn engine_matches_reference_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..6 {
        let items: Vec<(Graph, Label)> = (0..7)
            .map(|_| (random_graph(&mut rng, 5, 1, 1), rng.random_range(1..3)))
            .collect();
        let d = TrainingSet::new(items).unwrap();
        check_dataset(&d, [0.1, 1.0][rng.random_range(0..2)]);
    }
}

#[test]
fn engine_matches_reference_on_small_ba_sample() {
    let ds = generate_ba2motifs(6, 2);
    let d = TrainingSet::from_labeled(ds.graphs().to_vec()).unwrap();
    let cfg = MiningConfig {
        epsilon: 1.0,
        ..MiningConfig::default()
    };
    for i in [0, 1] {
        let fast = mine(&d, d.graph(i), d.label(i), &cfg).unwrap();
        let slow = reference_mine(&d, d.graph(i), d.label(i), 1.0);
        assert_eq!(print_program(&canonicalize(&fast.program)), print_program(&canonicalize(&slow)));
    }
}

#[test]
fn learned_programs_describe_their_own_label() {
    let ds = generate_ba2motifs(40, 5);
    let d = TrainingSet::from_labeled(ds.graphs().to_vec()).unwrap();
    let cfg = MiningConfig {
        epsilon: 1.0,
        k: 4,
        ..MiningConfig::default()
    };
    let layer = learn(&d, &cfg).unwrap();
    assert_eq!(layer.len(), 4);
    for sp in &layer {
        let s = score(&sp.program, &d, sp.label, 1.0, DEFAULT_BUDGET).unwrap();
        assert_eq!(s.score, sp.score);
        assert!(sp.score > 0.9, "{}", sp.score);
    }
    assert!(layer.windows(2).all(|w| w[0].score >= w[1].score));
}
