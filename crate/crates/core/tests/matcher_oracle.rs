use gdlnn::fixtures::{random_graph, random_program, SMALL_BOUNDS};
use gdlnn::matcher::{brute_force_count, brute_force_satisfies, check_valuation, count_valuations, enumerate_valuations, find_valuation, satisfies};
use gdlnn::mining::{enumerate_mutations, initialize};
use gdlnn::{Graph, Program, DEFAULT_BUDGET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instances(seed: u64, programs: usize, graphs: usize, d: usize, c: usize) -> (Vec<Program>, Vec<Graph>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ps = (0..programs).map(|_| random_program(&mut rng, 4, d, c, &SMALL_BOUNDS)).collect();
    let gs = (0..graphs).map(|_| random_graph(&mut rng, 8, d, c)).collect();
    (ps, gs)
}

#[test]
fn satisfies_and_count_agree_with_brute_force() {
    for (seed, d, c) in [(1, 1, 0), (2, 2, 1)] {
        let (ps, gs) = instances(seed, 60, 60, d, c);
        let mut positives = 0;
        for p in &ps {
            for g in &gs {
                let expect = brute_force_count(p, g);
                assert_eq!(count_valuations(p, g, DEFAULT_BUDGET).unwrap(), expect, "{p}");
                assert_eq!(satisfies(p, g, DEFAULT_BUDGET).unwrap(), brute_force_satisfies(p, g));
                positives += usize::from(expect > 0);
            }
        }
        // the suite is only informative if both outcomes occur often
        assert!(positives > 200 && positives < 3400, "{positives}");
    }
}

#[test]
fn found_valuations_check_out() {
    let (ps, gs) = instances(3, 40, 40, 1, 0);
    for p in &ps {
        for g in &gs {
            if let Some(eta) = find_valuation(p, g, DEFAULT_BUDGET).unwrap() {
                assert!(check_valuation(p, g, &eta).unwrap());
            }
            let all = enumerate_valuations(p, g, DEFAULT_BUDGET).unwrap();
            assert_eq!(all.len() as u64, brute_force_count(p, g));
            assert!(all.iter().all(|eta| check_valuation(p, g, eta).unwrap()));
        }
    }
}

#[test]
fn one_step_generalizations_keep_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    while checked < 400 {
        let g = random_graph(&mut rng, 7, 1, 1);
        // half the programs describe a piece of g, so they start out satisfied
        let p = if rng.random_bool(0.5) {
            let keep: Vec<usize> = (0..g.node_count()).filter(|_| rng.random_bool(0.6)).collect();
            initialize(&g.induced_subgraph(&keep))
        } else {
            random_program(&mut rng, 4, 1, 1, &SMALL_BOUNDS)
        };
        let muts = enumerate_mutations(&p);
        if muts.is_empty() {
            continue;
        }
        let q = &muts[rng.random_range(0..muts.len())];
        if satisfies(&p, &g, DEFAULT_BUDGET).unwrap() {
            assert!(satisfies(q, &g, DEFAULT_BUDGET).unwrap(), "{p}\n=>\n{q}");
        }
        checked += 1;
    }
}

#[test]
fn budget_is_enforced() {
    let g = Graph::new(1, 0, vec![vec![0.0]; 8], vec![], vec![]).unwrap();
    let p: Program = "node a\nnode b\nnode c".parse().unwrap();
    assert_eq!(count_valuations(&p, &g, DEFAULT_BUDGET).unwrap(), 8 * 7 * 6);
    assert!(count_valuations(&p, &g, 2).is_err());
}
