use doob_core::doob;
use doob_core::lattice::{lattice_compensator, PoissonLattice, WalkLattice};
use doob_core::model::{KnownCompensator, LatticeProcess, ModelKind, ModelSpec, Scaling, TreeProcess};
use doob_core::process::TimeGrid;
use doob_core::refine::{self, compensator_convergence, dyadic_grids, report_convergence, Engine, Verdict};
use doob_core::tree::BinaryTree;
use doob_core::Error;

fn lattice_model(process: LatticeProcess) -> ModelSpec {
    ModelSpec::new(ModelKind::RecombiningLattice { process }).with_known(KnownCompensator::IdentityTime)
}

#[test]
fn drift_and_scaled_square_agree_on_nested_grids() {
    let grids = dyadic_grids(0, 10).unwrap();
    for process in [LatticeProcess::Drift, LatticeProcess::WalkSquared] {
        let study = compensator_convergence(&lattice_model(process), &grids).unwrap();
        assert_eq!(study.engine, Engine::Lattice);
        assert!(study.l1_deltas.iter().all(|&d| d <= 1e-10), "{process:?}: {:?}", study.l1_deltas);
        for r in &study.results {
            assert!(r.target_deviation.unwrap() <= 1e-10);
        }
        assert_eq!(report_convergence(&study).verdict, Verdict::ConvergedExact);
    }
}

#[test]
fn common_times_by_direct_lookup() {
    // compare every pair of depths, not only neighbours
    let comps: Vec<(TimeGrid, Vec<f64>)> = (0..=10)
        .map(|d| {
            let g = TimeGrid::dyadic(d).unwrap();
            let l = WalkLattice::new(g.clone(), |s| s * s).unwrap();
            (g, lattice_compensator(&l, 1e-10).unwrap().values)
        })
        .collect();
    for (i, (gi, ai)) in comps.iter().enumerate() {
        for (gj, aj) in &comps[i + 1..] {
            for (k, &t) in gi.times().iter().enumerate() {
                let j = gj.index_of(t).unwrap();
                assert!((ai[k] - aj[j]).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn poisson_lattice_is_linear_at_every_depth() {
    let model = ModelSpec::new(ModelKind::PoissonLattice { rate: 3.0 }).with_known(KnownCompensator::Linear(3.0));
    let study = compensator_convergence(&model, &dyadic_grids(0, 9).unwrap()).unwrap();
    assert!(study.results.iter().all(|r| r.target_deviation.unwrap() <= 1e-10));
    assert_eq!(report_convergence(&study).verdict, Verdict::ConvergedExact);
}

#[test]
fn poisson_lattice_budget() {
    let l = PoissonLattice::new(TimeGrid::dyadic(18).unwrap(), 1.0).unwrap();
    assert!(matches!(lattice_compensator(&l, 1e-10), Err(Error::Resource(_))));
}

#[test]
fn walk_cubed_lattice_is_refused() {
    let l = WalkLattice::new(TimeGrid::dyadic(4).unwrap(), |s| s * s * s).unwrap();
    assert!(matches!(lattice_compensator(&l, 1e-10), Err(Error::Model(_))));
}

#[test]
fn path_space_restriction_matches_a_fresh_coarse_tree() {
    // S² with steps √(1/8) on an 8-step tree, seen at times j/2: the coarse
    // filtration knows the walk only at even steps
    let tree = BinaryTree::symmetric(8);
    let h = (1.0f64 / 8.0).sqrt();
    let x = doob_core::process::AdaptedProcess::from_fn(tree.filtration(), |k, i| tree.walk_value(i, k, h).powi(2)).unwrap();
    let coarse = x.restrict(&TimeGrid::dyadic(1).unwrap()).unwrap();
    let a = doob::doob_decompose(&coarse).unwrap().into_parts().0;
    for (row, t) in a.values().iter().zip([0.0, 0.5, 1.0]) {
        assert!(row.iter().all(|&v| (v - t).abs() <= 1e-12));
    }
}

#[test]
fn path_space_study_of_the_squared_walk() {
    let model = ModelSpec::new(ModelKind::BinaryTree {
        steps: 8,
        process: TreeProcess::WalkSquared,
        up_prob: 0.5,
        scaling: Scaling::Diffusive,
    })
    .with_known(KnownCompensator::IdentityTime);
    let study = compensator_convergence(&model, &dyadic_grids(0, 3).unwrap()).unwrap();
    assert_eq!(study.engine, Engine::PathSpace);
    assert!(study.results.iter().all(|r| r.suite_pass == Some(true)));
    assert!(study.grid_checks_pass());
    assert_eq!(report_convergence(&study).verdict, Verdict::ConvergedExact);
}

#[test]
fn abs_walk_deltas_are_reported() {
    // |S| has a path-dependent compensator (local time at 0). Coarse grids
    // see a different compensator, except that the walk never sits at 0
    // after an odd number of steps, so depths 2 and 3 agree exactly
    let model = ModelSpec::new(ModelKind::BinaryTree {
        steps: 8,
        process: TreeProcess::AbsWalk,
        up_prob: 0.5,
        scaling: Scaling::Diffusive,
    });
    let study = compensator_convergence(&model, &dyadic_grids(0, 3).unwrap()).unwrap();
    let d = &study.l1_deltas;
    assert!(d[0] > 1e-3 && d[1] > 1e-3 && d[2] <= 1e-10, "{d:?}");
    assert!(study.results.iter().all(|r| r.suite_pass == Some(true)));
    let report = report_convergence(&study);
    assert_eq!(report.verdict, Verdict::Decreasing);
    assert_eq!(report.rows.len(), 4);
}

#[test]
fn depth_bounds() {
    assert!(matches!(dyadic_grids(0, 25), Err(Error::Domain(_))));
    assert_eq!(refine::MAX_DEPTH, 20);
}
