//! Brute-force path-enumeration oracles. Every expected value here is
//! computed by listing coin-flip sequences and averaging over the ones that
//! share a prefix, without touching partitions or conditional-expectation
//! code from the library.

use std::collections::HashMap;

use doob_core::classd;
use doob_core::doob;
use doob_core::fixtures;
use doob_core::process::AdaptedProcess;
use doob_core::tree::BinaryTree;

/// All paths of a tree as flip vectors, with their probabilities, indexed
/// like the tree's atoms.
fn paths(tree: &BinaryTree) -> Vec<(Vec<bool>, f64)> {
    (0..tree.atom_count())
        .map(|atom| {
            let flips: Vec<bool> = (1..=tree.steps).map(|i| tree.flip(atom, i) > 0.0).collect();
            let p = flips
                .iter()
                .map(|&up| if up { tree.up_prob } else { 1.0 - tree.up_prob })
                .product();
            (flips, p)
        })
        .collect()
}

/// E(g | first k flips) on every path, by grouping paths on their prefix.
fn prefix_average(paths: &[(Vec<bool>, f64)], k: usize, g: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut acc: HashMap<&[bool], (f64, f64)> = HashMap::new();
    for (i, (flips, p)) in paths.iter().enumerate() {
        let e = acc.entry(&flips[..k]).or_insert((0.0, 0.0));
        e.0 += p * g(i);
        e.1 += p;
    }
    paths
        .iter()
        .map(|(flips, _)| {
            let (s, m) = acc[&flips[..k]];
            s / m
        })
        .collect()
}

/// Compensator by brute force: a[k+1] = a[k] + E(x[k+1] - x[k] | prefix k).
fn brute_compensator(paths: &[(Vec<bool>, f64)], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = paths.len();
    let mut a = vec![vec![0.0; n]];
    for k in 0..x.len() - 1 {
        let drift = prefix_average(paths, k, |i| x[k + 1][i] - x[k][i]);
        let next = (0..n).map(|i| a[k][i] + drift[i]).collect();
        a.push(next);
    }
    a
}

fn max_gap(u: &[Vec<f64>], v: &[Vec<f64>]) -> f64 {
    u.iter()
        .flatten()
        .zip(v.iter().flatten())
        .fold(0.0, |acc: f64, (p, q)| acc.max((p - q).abs()))
}

fn walk_squared(steps: usize) -> (BinaryTree, AdaptedProcess) {
    let tree = BinaryTree::symmetric(steps);
    let x = AdaptedProcess::from_fn(tree.filtration(), |k, i| tree.walk_value(i, k, 1.0).powi(2)).unwrap();
    (tree, x)
}

fn brute_mean(paths: &[(Vec<bool>, f64)], g: impl Fn(usize) -> f64) -> f64 {
    paths.iter().enumerate().map(|(i, (_, p))| p * g(i)).sum()
}

#[test]
fn squared_walk_compensator_is_the_step_count() {
    for steps in 1..=10 {
        let (tree, x) = walk_squared(steps);
        let brute = brute_compensator(&paths(&tree), x.values());
        for (k, row) in brute.iter().enumerate() {
            assert!(row.iter().all(|&v| (v - k as f64).abs() <= 1e-12), "steps {steps}, k {k}");
        }
        let a = doob::doob_decompose(&x).unwrap().into_parts().0;
        assert!(max_gap(a.values(), &brute) <= 1e-10);
    }
}

#[test]
fn compensators_match_brute_force_on_the_suite() {
    for m in fixtures::submartingale_suite() {
        if m.process.last_index() > 9 {
            continue;
        }
        let probs = m.process.filtration().space().probs().to_vec();
        // rebuild the tree from its probabilities: the up probability is the
        // mass of the upper half of the atoms
        let steps = m.process.last_index();
        let up: f64 = probs[probs.len() / 2..].iter().sum();
        let tree = BinaryTree::new(steps, up);
        let brute = brute_compensator(&paths(&tree), m.process.values());
        let a = doob::doob_decompose(&m.process).unwrap().into_parts().0;
        assert!(max_gap(a.values(), &brute) <= 1e-10, "{}", m.name);
        if let Some(known) = &m.known_compensator {
            assert!(max_gap(known.values(), &brute) <= 1e-10, "{}", m.name);
        }
    }
}

#[test]
fn biased_walk_compensator_is_linear() {
    let tree = BinaryTree::new(6, 0.7);
    let x = tree.walk(tree.filtration(), 1.0);
    let brute = brute_compensator(&paths(&tree), x.values());
    let a = doob::doob_decompose(&x).unwrap().into_parts().0;
    for (k, row) in a.values().iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            assert!((v - 0.4 * k as f64).abs() <= 1e-12);
            assert!((v - brute[k][i]).abs() <= 1e-12);
        }
    }
}

/// The five chain terms and the Markov pair from per-path loops.
fn brute_chain(paths: &[(Vec<bool>, f64)], x: &[Vec<f64>], a: &[Vec<f64>], k: f64) -> ([f64; 5], (f64, f64)) {
    let last = x.len() - 1;
    let a1 = |i: usize| a[last][i];
    let tau = |i: usize| (0..=last).filter(|&j| a[j][i] <= k).max().unwrap_or(0);
    let terms = [
        brute_mean(paths, |i| if a1(i) >= 2.0 * k { a1(i) } else { 0.0 }),
        2.0 * brute_mean(paths, |i| if a1(i) >= 2.0 * k { a1(i) - a1(i).min(k) } else { 0.0 }),
        2.0 * brute_mean(paths, |i| a1(i) - a1(i).min(k)),
        2.0 * brute_mean(paths, |i| a1(i) - a[tau(i)][i]),
        2.0 * brute_mean(paths, |i| if a1(i) >= k { x[last][i] - x[tau(i)][i] } else { 0.0 }),
    ];
    let markov = (
        brute_mean(paths, |i| if a1(i) >= k { 1.0 } else { 0.0 }),
        brute_mean(paths, |i| x[last][i] - x[0][i]) / k,
    );
    (terms, markov)
}

#[test]
fn squared_walk_tail_chain_on_ten_steps() {
    let (tree, x) = walk_squared(10);
    let p = paths(&tree);
    let a = brute_compensator(&p, x.values());
    let levels = [1.0, 2.0, 4.0, 8.0, 16.0];
    let report = classd::epsilon_profile(&x, &levels).unwrap();
    for (chain, &k) in report.chains.iter().zip(&levels) {
        let (terms, _) = brute_chain(&p, x.values(), &a, k);
        for (got, want) in chain.terms.iter().zip(terms) {
            assert!((got - want).abs() <= 1e-10, "k {k}: {got} vs {want}");
        }
    }
    // A is the deterministic step count, so ε(k) = 2 (10 - min(k, 10)) when k ≤ 10
    let closed: Vec<f64> = levels.iter().map(|&k: &f64| if k <= 10.0 { 2.0 * (10.0 - k) } else { 0.0 }).collect();
    for (e, c) in report.epsilon.iter().zip(&closed) {
        assert!((e - c).abs() <= 1e-10);
    }
    assert_eq!(closed, vec![18.0, 16.0, 12.0, 4.0, 0.0]);
    assert_eq!(report.chains[0].terms, [10.0, 18.0, 18.0, 18.0, 18.0]);
    assert_eq!(report.chains[3].terms, [0.0, 0.0, 4.0, 4.0, 4.0]);
}

#[test]
fn squared_walk_markov_pair() {
    let (tree, x) = walk_squared(8);
    let p = paths(&tree);
    let a = brute_compensator(&p, x.values());
    let (_, (lhs, rhs)) = brute_chain(&p, x.values(), &a, 4.0);
    assert_eq!((lhs, rhs), (1.0, 2.0));
    let mb = classd::markov_bound(&x, &doob::doob_decompose(&x).unwrap().into_parts().0, 4.0).unwrap();
    assert!((mb.lhs - lhs).abs() <= 1e-12 && (mb.rhs - rhs).abs() <= 1e-12);
}

#[test]
fn tail_chain_matches_brute_force_on_random_drifts() {
    for seed in 0..6 {
        let m = fixtures::drift_plus_martingale(7, 0.5, 100 + seed);
        let tree = BinaryTree::symmetric(7);
        let p = paths(&tree);
        let a = brute_compensator(&p, m.process.values());
        let top = a.last().unwrap().iter().copied().fold(0.0, f64::max);
        let levels: Vec<f64> = [0.1, 0.3, 0.6, 0.9].iter().map(|f| f * top).collect();
        let report = classd::epsilon_profile(&m.process, &levels).unwrap();
        for (chain, &k) in report.chains.iter().zip(&levels) {
            let (terms, (lhs, rhs)) = brute_chain(&p, m.process.values(), &a, k);
            for (got, want) in chain.terms.iter().zip(terms) {
                assert!((got - want).abs() <= 1e-10, "seed {seed}, k {k}");
            }
            assert!(chain.holds(1e-10));
            let mk = classd::markov_bound(&m.process, &AdaptedProcess::new(m.process.filtration().clone(), a.clone()).unwrap(), k).unwrap();
            assert!((mk.lhs - lhs).abs() <= 1e-12 && (mk.rhs - rhs).abs() <= 1e-10);
        }
    }
}

/// Left-endpoint pairing against the indicator martingale of every atom,
/// minus the terminal pairing, all by prefix averaging.
fn brute_naturality(paths: &[(Vec<bool>, f64)], a: &[Vec<f64>]) -> Vec<f64> {
    let n = paths.len();
    let last = a.len() - 1;
    (0..n)
        .map(|omega| {
            let indicator = |i: usize| if i == omega { 1.0 } else { 0.0 };
            let mut pairing = 0.0;
            for k in 0..last {
                let nk = prefix_average(paths, k, indicator);
                pairing += brute_mean(paths, |i| nk[i] * (a[k + 1][i] - a[k][i]));
            }
            let terminal = brute_mean(paths, |i| indicator(i) * a[last][i]);
            (pairing - terminal).abs()
        })
        .collect()
}

#[test]
fn naturality_defects_match_brute_force() {
    let tree = BinaryTree::symmetric(5);
    let p = paths(&tree);
    let f = tree.filtration();
    // cumulative positive parts of the walk increments: increasing, adapted,
    // not predictable
    let s = tree.walk(f.clone(), 1.0);
    let mut rows = vec![vec![0.0; tree.atom_count()]];
    for k in 0..5 {
        let next: Vec<f64> = (0..tree.atom_count())
            .map(|i| rows[k][i] + (s.at(k + 1, i) - s.at(k, i)).max(0.0))
            .collect();
        rows.push(next);
    }
    let up_moves = AdaptedProcess::new(f.clone(), rows.clone()).unwrap();
    let brute = brute_naturality(&p, &rows);
    let fast = doob::naturality_defects(&up_moves).unwrap();
    for (u, v) in brute.iter().zip(&fast) {
        assert!((u - v).abs() <= 1e-12);
    }
    assert!(brute.iter().any(|&d| d > 1e-3));
    assert!(!doob::is_natural(&up_moves, 1e-10).unwrap());
    assert!(!doob::is_predictable(&up_moves, 1e-10));

    let a = fixtures::drift_plus_martingale(5, 0.5, 7).known_compensator.unwrap();
    let brute = brute_naturality(&p, a.values());
    assert!(brute.iter().all(|&d| d <= 1e-12));
    let dense: Vec<f64> = doob::martingale_basis(&f)
        .iter()
        .map(|n| {
            let pairing = doob::natural_pairing(n, &a).unwrap();
            let terminal: f64 = f.space().probs().iter().zip(n.terminal()).zip(a.terminal()).map(|((p, u), v)| p * u * v).sum();
            (pairing - terminal).abs()
        })
        .collect();
    assert!(dense.iter().all(|&d| d <= 1e-12));
}
