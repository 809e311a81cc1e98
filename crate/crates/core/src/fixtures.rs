//! Reference submartingales on binary trees and perturbation attempts
//! against their decompositions. Shared by the test suites and the CLI
//! acceptance run.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::measure::RandomVariable;
use crate::process::{AdaptedProcess, Filtration};
use crate::tree::BinaryTree;

pub struct SuiteMember {
    pub name: String,
    pub process: AdaptedProcess,
    /// The compensator when it is known by construction.
    pub known_compensator: Option<AdaptedProcess>,
}

impl SuiteMember {
    fn new(name: String, process: AdaptedProcess) -> Self {
        Self { name, process, known_compensator: None }
    }
}

fn tree_process(steps: usize, up: f64, f: impl Fn(&BinaryTree, usize, usize) -> f64) -> AdaptedProcess {
    let tree = BinaryTree::new(steps, up);
    AdaptedProcess::from_fn(tree.filtration(), |k, atom| f(&tree, k, atom)).expect("tree processes are adapted")
}

/// Nondecreasing predictable process from 0: the increment into step k+1
/// is |Z| drawn per block of F_k.
pub fn random_predictable_increasing(filtration: &Arc<Filtration>, rng: &mut impl Rng, scale: f64) -> AdaptedProcess {
    let n = filtration.atom_count();
    let mut rows = vec![vec![0.0; n]];
    for k in 0..filtration.last_index() {
        let p = filtration.partition(k);
        let draws: Vec<f64> = (0..p.block_count())
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal).abs())
            .collect();
        let prev = rows.last().expect("non-empty");
        let row = (0..n).map(|i| prev[i] + draws[p.block_of(i)]).collect();
        rows.push(row);
    }
    AdaptedProcess::new(filtration.clone(), rows).expect("predictable by construction")
}

/// The backward closure of a Gaussian terminal variable.
pub fn random_martingale(filtration: &Arc<Filtration>, rng: &mut impl Rng) -> AdaptedProcess {
    let terminal: Vec<f64> = (0..filtration.atom_count())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    AdaptedProcess::closure(filtration.clone(), &RandomVariable::new(terminal).expect("finite"))
        .expect("closure of a finite variable")
}

/// A random drift (known compensator) plus a random martingale.
pub fn drift_plus_martingale(steps: usize, up: f64, seed: u64) -> SuiteMember {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = BinaryTree::new(steps, up).filtration();
    let a = random_predictable_increasing(&f, &mut rng, 1.0);
    let m = random_martingale(&f, &mut rng);
    let x = a.add(&m).expect("same filtration");
    SuiteMember {
        name: format!("drift+martingale/{steps}/seed{seed}"),
        process: x,
        known_compensator: Some(a),
    }
}

/// Twenty-two submartingales on trees of 1 to 12 steps: squared and
/// absolute walks, biased walks, convex functions of walks, deterministic
/// drifts and random predictable drifts plus martingales.
pub fn submartingale_suite() -> Vec<SuiteMember> {
    let mut suite = Vec::new();
    for steps in [1, 2, 3, 5, 8, 12] {
        let mut m = SuiteMember::new(
            format!("walk-squared/{steps}"),
            tree_process(steps, 0.5, |t, k, i| t.walk_value(i, k, 1.0).powi(2)),
        );
        let f = m.process.filtration().clone();
        m.known_compensator = Some(AdaptedProcess::from_fn(f, |k, _| k as f64).expect("deterministic"));
        suite.push(m);
    }
    for steps in [2, 4, 7, 12] {
        suite.push(SuiteMember::new(
            format!("abs-walk/{steps}"),
            tree_process(steps, 0.5, |t, k, i| t.walk_value(i, k, 1.0).abs()),
        ));
    }
    for steps in [4, 10] {
        let h = (1.0 / steps as f64).sqrt();
        suite.push(SuiteMember::new(
            format!("walk-squared-diffusive/{steps}"),
            tree_process(steps, 0.5, move |t, k, i| t.walk_value(i, k, h).powi(2)),
        ));
    }
    for steps in [3, 9] {
        suite.push(SuiteMember::new(
            format!("drift/{steps}"),
            tree_process(steps, 0.5, move |_, k, _| k as f64 / steps as f64),
        ));
    }
    for steps in [4, 11] {
        suite.push(SuiteMember::new(
            format!("biased-walk/{steps}"),
            tree_process(steps, 0.7, |t, k, i| t.walk_value(i, k, 1.0)),
        ));
    }
    for (steps, seed) in [(3, 1), (6, 2), (9, 3), (12, 4)] {
        suite.push(drift_plus_martingale(steps, 0.5, seed));
    }
    suite.push(SuiteMember::new(
        "quadratic-drift/6".into(),
        tree_process(6, 0.5, |_, k, _| (k * k) as f64),
    ));
    suite.push(SuiteMember::new(
        "exp-walk/8".into(),
        tree_process(8, 0.5, |t, k, i| (0.3 * t.walk_value(i, k, 1.0)).exp()),
    ));
    suite
}

/// Candidate replacements δ for a decomposition (a, m) -> (a + δ, m - δ),
/// each with max |δ| at least `magnitude`. Every one keeps a + m = x;
/// the decomposition invariants must reject all of them.
pub fn perturbation_attempts(filtration: &Arc<Filtration>, magnitude: f64, seed: u64) -> Vec<(String, AdaptedProcess)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = filtration.atom_count();
    let last = filtration.last_index();
    let times = filtration.grid().times().to_vec();
    let mut out = Vec::new();

    // deterministic ramp: predictable, increasing, starts at 0
    out.push((
        "ramp".into(),
        AdaptedProcess::from_fn(filtration.clone(), |k, _| magnitude * times[k] / times[last]).expect("deterministic"),
    ));
    // constant shift: breaks the start at 0
    out.push(("constant".into(), AdaptedProcess::from_fn(filtration.clone(), |_, _| magnitude).expect("deterministic")));
    // random predictable increasing drift
    out.push(("predictable-drift".into(), random_predictable_increasing(filtration, &mut rng, magnitude)));
    // bump on one block of F_k, from step k on
    let k = rng.random_range(1..=last);
    let part = filtration.partition(k);
    let block = rng.random_range(0..part.block_count());
    out.push((
        format!("bump/step{k}/block{block}"),
        AdaptedProcess::from_fn(filtration.clone(), |j, i| {
            if j >= k && part.block_of(i) == block {
                magnitude
            } else {
                0.0
            }
        })
        .expect("adapted"),
    ));
    // random adapted noise after time 0
    let noise: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let scale = magnitude / noise.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    let closure = AdaptedProcess::closure(filtration.clone(), &RandomVariable::new(noise).expect("finite"))
        .expect("closure");
    out.push((
        "adapted-noise".into(),
        AdaptedProcess::from_fn(filtration.clone(), |j, i| if j == 0 { 0.0 } else { scale * closure.at(j, i) })
            .expect("adapted"),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::is_submartingale;

    #[test]
    fn suite_members_are_submartingales() {
        let suite = submartingale_suite();
        assert!(suite.len() >= 20);
        for m in &suite {
            assert!(is_submartingale(&m.process, 1e-12), "{}", m.name);
            let steps = m.process.last_index();
            assert!((1..=12).contains(&steps), "{}", m.name);
        }
    }

    #[test]
    fn perturbations_are_large_enough() {
        let f = BinaryTree::symmetric(4).filtration();
        for (name, d) in perturbation_attempts(&f, 1e-6, 9) {
            let size = d.values().iter().flatten().fold(0.0, |acc: f64, v| acc.max(v.abs()));
            assert!(size >= 1e-6 * (1.0 - 1e-12), "{name}: {size}");
        }
    }
}
