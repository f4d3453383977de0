use std::sync::OnceLock;

use gdlnn::data::generate_ba2motifs;
use gdlnn::explain::{contract_violations, explain, explain_all, fidelity, refine, sparsity};
use gdlnn::fixtures::{random_graph, random_program, SMALL_BOUNDS};
use gdlnn::model::{accuracy, embed, fit, train_mlp};
use gdlnn::{Activation, ExplainConfig, Graph, Label, MiningConfig, Model, Pattern, TrainConfig, TrainingSet, DEFAULT_BUDGET};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    model: Model,
    test: Vec<(Graph, Label)>,
}

fn ba_fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let graphs = generate_ba2motifs(60, 11).graphs().to_vec();
        let pairs: Vec<(Graph, Label)> = graphs.iter().map(|g| (g.clone(), g.label().unwrap())).collect();
        let train = TrainingSet::new(pairs[..40].to_vec()).unwrap();
        let val = pairs[40..48].to_vec();
        let mining = MiningConfig { epsilon: 0.1, k: 8, ..MiningConfig::default() };
        let cfg = TrainConfig { max_epochs: 200, patience: 50, ..TrainConfig::default() };
        let (model, _) = fit(&train, &val, &mining, &cfg, Activation::Sigma).unwrap();
        Fixture { model, test: pairs[48..].to_vec() }
    })
}

fn permuted(g: &Graph, perm: &[usize]) -> Graph {
    let mut nodes = vec![Vec::new(); g.node_count()];
    for (i, &p) in perm.iter().enumerate() {
        nodes[p] = g.node_feature(i).to_vec();
    }
    let edges = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    let feats = (0..g.edge_count()).map(|j| g.edge_feature(j).to_vec()).collect();
    Graph::new(g.node_dim(), g.edge_dim(), nodes, edges, feats).unwrap()
}

#[test]
fn embeddings_ignore_node_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..40 {
        let programs: Vec<_> = (0..6).map(|_| random_program(&mut rng, 3, 2, 1, &SMALL_BOUNDS)).collect();
        let g = random_graph(&mut rng, 7, 2, 1);
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut rng);
        let h = permuted(&g, &perm);
        for kind in [Activation::Sigma, Activation::SigmaCount] {
            assert_eq!(embed(&g, &programs, kind, DEFAULT_BUDGET).unwrap(), embed(&h, &programs, kind, DEFAULT_BUDGET).unwrap());
        }
    }
}

#[test]
fn early_stopping_keeps_an_epoch_it_ran() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut point = |y: Label| {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0) + if y == 1 { 0.3 } else { 0.0 }).collect();
        (x, y)
    };
    let train: Vec<_> = (0..60).map(|i| point((i % 2) as Label)).collect();
    let val: Vec<_> = (0..20).map(|i| point((i % 2) as Label)).collect();
    let cfg = TrainConfig { max_epochs: 300, patience: 20, ..TrainConfig::default() };
    let t = train_mlp(&train, &val, &cfg).unwrap();
    assert!(t.best_epoch >= 1 && t.best_epoch <= t.epochs_run);
    assert!(t.epochs_run == cfg.max_epochs || t.epochs_run - t.best_epoch == cfg.patience);
    assert_eq!(t.val_accuracy, Some(accuracy(&t.mlp, &t.labels, &val)));
    assert_eq!(t.train_accuracy, accuracy(&t.mlp, &t.labels, &train));
}

#[test]
fn prediction_goes_through_the_representation() {
    let f = ba_fixture();
    for (g, _) in &f.test {
        let x = f.model.embed(g).unwrap();
        assert_eq!(f.model.predict(g).unwrap(), f.model.predict_from_representation(&x));
    }
}

#[test]
fn saved_model_predicts_the_same() {
    let f = ba_fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gdlnn");
    f.model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back, f.model);
    let graphs: Vec<Graph> = f.test.iter().map(|(g, _)| g.clone()).collect();
    assert_eq!(back.predict_all(&graphs).unwrap(), f.model.predict_all(&graphs).unwrap());
}

#[test]
fn refined_subgraphs_keep_the_selected_patterns() {
    let f = ba_fixture();
    let cfg = ExplainConfig { samples: 300, ..ExplainConfig::default() };
    let graphs: Vec<Graph> = f.test.iter().map(|(g, _)| g.clone()).collect();
    let all = explain_all(&graphs, &f.model, &cfg).unwrap();
    let subs: Vec<_> = all.iter().map(|e| e.subgraph.clone()).collect();
    assert_eq!(contract_violations(&graphs, &f.model, &subs).unwrap(), 0);
    for (g, e) in graphs.iter().zip(&all) {
        let required: Vec<&Pattern> = e.subgraph.satisfied.iter().map(|&i| &f.model.patterns()[i]).collect();
        assert_eq!(refine(g, &e.subgraph.kept, &required, DEFAULT_BUDGET).unwrap(), e.subgraph.kept);
        let sub = e.subgraph.subgraph(g);
        assert_eq!(sub.edge_count(), e.subgraph.edges.len());
        for p in required {
            assert!(p.satisfies(&sub, DEFAULT_BUDGET).unwrap());
        }
    }
    let fid = fidelity(&f.model, &f.test, &subs).unwrap();
    let sp = sparsity(&graphs, &subs).unwrap();
    assert!((0.0..=1.0).contains(&fid) && (0.0..=1.0).contains(&sp));
}

#[test]
fn explanations_are_seeded() {
    let f = ba_fixture();
    let cfg = ExplainConfig { samples: 200, seed: 5, ..ExplainConfig::default() };
    let g = &f.test[0].0;
    assert_eq!(explain(g, &f.model, &cfg).unwrap(), explain(g, &f.model, &cfg).unwrap());
}

#[test]
fn masking_selected_features_hurts_more_than_random() {
    let f = ba_fixture();
    let cfg = ExplainConfig { samples: 300, select: 1, ..ExplainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let graphs = generate_ba2motifs(80, 99);
    let (mut selected_drop, mut random_drop, mut trials) = (0.0, 0.0, 0);
    for g in graphs.graphs() {
        let e = explain(g, &f.model, &cfg).unwrap();
        let x = f.model.embed(g).unwrap();
        let class = e.prediction.class;
        let base = e.prediction.scores[class];
        let active: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 0.0).collect();
        let m = e.importance.selected.len();
        if m == 0 || m == active.len() {
            continue;
        }
        let mut masked = x.clone();
        for &i in &e.importance.selected {
            masked[i] = 0.0;
        }
        selected_drop += base - f.model.predict_from_representation(&masked).scores[class];
        let mut masked = x.clone();
        for &i in active.choose_multiple(&mut rng, m) {
            masked[i] = 0.0;
        }
        random_drop += base - f.model.predict_from_representation(&masked).scores[class];
        trials += 1;
    }
    assert!(trials >= 30, "only {trials} usable graphs");
    assert!(selected_drop > random_drop, "{selected_drop} vs {random_drop}");
}
