use std::fs;
use std::path::Path;

use doob_core::classd;
use doob_core::doob::{self, Decomposition};
use doob_core::mc::CondExpEstimator;
use doob_core::model::{FiniteModel, ModelClass, ModelSpec};
use doob_core::process::AdaptedProcess;
use doob_core::refine::{self, McSettings, Verdict};
use doob_core::Error;
use serde_json::{json, Value};

use crate::output::{fmt_f64, opt_bool, opt_f64, OutDir, Summary};
use crate::{AuditArgs, CliError, ConvergeArgs, DecomposeArgs, DumpArgs, Outcome, VerifyArgs};

/// Largest finite space the audit accepts.
pub const AUDIT_MAX_ATOMS: usize = 64;

fn load_model(path: &Path) -> Result<ModelSpec, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read model {}: {e}", path.display())))?;
    let model = ModelSpec::from_json(&text)
        .map_err(|e| CliError::Input(format!("cannot parse model {}: {e}", path.display())))?;
    model.validate()?;
    Ok(model)
}

fn finite(model: &ModelSpec, command: &str) -> Result<FiniteModel, CliError> {
    if model.class() != ModelClass::PathSpace {
        return Err(CliError::Input(format!(
            "{command} needs a path-space model (binary-tree or explicit)"
        )));
    }
    Ok(model.instantiate()?)
}

fn model_value(model: &ModelSpec) -> Value {
    serde_json::to_value(model).expect("model serializes")
}

fn outcome(summary: &Summary) -> Outcome {
    if summary.passed() {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn process_rows(x: &AdaptedProcess) -> impl Iterator<Item = Vec<String>> + '_ {
    let times = x.filtration().grid().times();
    (0..x.time_count()).flat_map(move |k| {
        (0..x.atom_count()).map(move |i| vec![fmt_f64(times[k]), i.to_string(), fmt_f64(x.at(k, i))])
    })
}

const PROCESS_HEADER: [&str; 3] = ["time", "atom", "value"];

pub fn decompose(args: &DecomposeArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    let model = load_model(&c.model)?;
    let x = finite(&model, "decompose")?.process;
    let d = doob::doob_decompose_with_tol(&x, c.tol)?;
    let v = d.violations(&x);
    let out = OutDir::create(&c.out)?;
    out.csv("compensator.csv", &PROCESS_HEADER, process_rows(d.compensator()))?;
    out.csv("martingale.csv", &PROCESS_HEADER, process_rows(d.martingale()))?;
    out.csv(
        "invariants.csv",
        &["invariant", "max_violation", "pass"],
        v.iter().map(|(name, val)| vec![name.to_string(), fmt_f64(val), (val <= c.tol).to_string()]),
    )?;
    let mut s = Summary::new("decompose");
    s.config("model", model_value(&model)).config("tol", c.tol);
    for (name, val) in v.iter() {
        s.verdict(name, val <= c.tol).violation(name, val);
    }
    out.summary(&s)?;
    Ok(outcome(&s))
}

pub fn verify(args: &VerifyArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    let tol = c.tol;
    let model = load_model(&c.model)?;
    let fm = finite(&model, "verify")?;
    let x = &fm.process;
    let levels = &args.levels.0;

    let d = doob::doob_decompose_with_tol(x, tol)?;
    let v = d.violations(x);
    let a = d.compensator();

    // second construction: martingale part first, then a = x - m
    let a2 = doob::compensator_via_martingale_part(x)?;
    let gap = a
        .values()
        .iter()
        .flatten()
        .zip(a2.values().iter().flatten())
        .fold(0.0, |acc: f64, (p, q)| acc.max((p - q).abs()));
    let d2 = Decomposition::new(x, a2.clone(), x.sub(&a2)?, tol);
    let unique = match &d2 {
        Ok(d2) => doob::check_uniqueness(x, &d, d2, tol).unwrap_or(false),
        Err(_) => false,
    };

    let defects = doob::naturality_defects(a)?;
    let natural_violation = defects.iter().copied().fold(0.0, f64::max);
    let tail = classd::profile_with_compensator(x, a, levels)?;

    let out = OutDir::create(&c.out)?;
    out.csv(
        "tail.csv",
        &["k", "chain1", "chain2", "chain3", "chain4", "chain5", "markov_lhs", "markov_rhs"],
        tail.chains.iter().zip(&tail.markov).map(|(ch, mk)| {
            let mut row = vec![fmt_f64(ch.level)];
            row.extend(ch.terms.iter().map(|&t| fmt_f64(t)));
            row.push(fmt_f64(mk.lhs));
            row.push(fmt_f64(mk.rhs));
            row
        }),
    )?;
    out.csv(
        "naturality.csv",
        &["basis_atom", "defect"],
        defects.iter().enumerate().map(|(i, &e)| vec![i.to_string(), fmt_f64(e)]),
    )?;
    out.csv(
        "invariants.csv",
        &["invariant", "max_violation", "pass"],
        v.iter().map(|(name, val)| vec![name.to_string(), fmt_f64(val), (val <= tol).to_string()]),
    )?;

    let mut s = Summary::new("verify");
    s.config("model", model_value(&model)).config("levels", levels.clone()).config("tol", tol);
    s.verdict("decomposition", v.max() <= tol).violation("decomposition", v.max());
    s.verdict("uniqueness", unique).violation("uniqueness", gap);
    s.verdict("compensator_predictable", v.predictable <= tol).violation("compensator_predictable", v.predictable);
    s.verdict("compensator_natural", natural_violation <= tol).violation("compensator_natural", natural_violation);
    let chain_slack = tail.chains.iter().map(|ch| ch.min_slack()).fold(f64::INFINITY, f64::min);
    s.verdict("tail_chain", tail.chains_hold(tol));
    if chain_slack.is_finite() {
        s.violation("tail_chain", (-chain_slack).max(0.0));
    }
    s.verdict("markov", tail.markov_holds(tol));
    s.verdict("epsilon_nonincreasing", tail.epsilon_nonincreasing(tol));
    s.extra("epsilon", tail.epsilon.clone());

    if fm.increasing {
        let pv = doob::predictability_violation(x);
        let defects = doob::naturality_defects(x)?;
        let nv = defects.iter().copied().fold(0.0, f64::max);
        out.csv(
            "process_naturality.csv",
            &["basis_atom", "defect"],
            defects.iter().enumerate().map(|(i, &e)| vec![i.to_string(), fmt_f64(e)]),
        )?;
        s.verdict("process_predictable", pv <= tol).violation("process_predictable", pv);
        s.verdict("process_natural", nv <= tol).violation("process_natural", nv);
    }
    out.summary(&s)?;
    Ok(outcome(&s))
}

pub fn converge(args: &ConvergeArgs) -> Result<Outcome, CliError> {
    let c = &args.common;
    let model = load_model(&c.model)?;
    let grids = refine::dyadic_grids(args.depths.min, args.depths.max)?;
    let settings = match model.class() {
        ModelClass::MonteCarlo => {
            let seed = args
                .seed
                .ok_or_else(|| CliError::Input("--seed is required for Monte Carlo models".into()))?;
            if args.paths < 2 {
                return Err(Error::Domain("--paths must be at least 2".into()).into());
            }
            Some(McSettings { paths: args.paths, seed, estimator: args.estimator, lags: args.lags })
        }
        _ => None,
    };
    let study = refine::study(&model, &grids, settings.as_ref())?;
    let report = refine::report_convergence(&study);

    let out = OutDir::create(&c.out)?;
    let depth_str = |d: Option<u32>| d.map(|d| d.to_string()).unwrap_or_default();
    out.csv(
        "study.csv",
        &[
            "depth",
            "grid_size",
            "mean_terminal",
            "se_terminal",
            "min_terminal",
            "max_terminal",
            "delta_to_previous",
            "delta_se",
            "target_deviation",
            "target_pass",
            "suite_pass",
            "residual_max_abs_t",
            "monotonicity_flags",
        ],
        study.results.iter().enumerate().map(|(i, r)| {
            let prev = i.checked_sub(1);
            let target_pass = if study.is_exact() { r.target_deviation.map(|d| d <= c.tol) } else { r.target_pass };
            vec![
                depth_str(r.depth),
                r.grid_size.to_string(),
                fmt_f64(r.terminal.mean),
                fmt_f64(r.terminal.se),
                fmt_f64(r.terminal.min),
                fmt_f64(r.terminal.max),
                opt_f64(prev.map(|j| study.l1_deltas[j])),
                opt_f64(prev.map(|j| study.delta_se[j])),
                opt_f64(r.target_deviation),
                opt_bool(target_pass),
                opt_bool(r.suite_pass),
                opt_f64(r.residual_max_abs_t),
                if study.is_exact() { String::new() } else { r.monotonicity_flags.len().to_string() },
            ]
        }),
    )?;
    out.csv(
        "compensator.csv",
        &["depth", "time", "mean", "se"],
        study.results.iter().zip(&study.grids).flat_map(|(r, g)| {
            g.times().iter().enumerate().map(move |(k, &t)| {
                vec![depth_str(r.depth), fmt_f64(t), fmt_f64(r.compensator_mean[k]), fmt_f64(r.compensator_se[k])]
            })
        }),
    )?;
    if study.results.iter().any(|r| !r.epsilon.is_empty()) {
        out.csv(
            "epsilon.csv",
            &["depth", "k", "epsilon"],
            study.results.iter().flat_map(|r| {
                r.epsilon.iter().map(move |&(k, e)| vec![depth_str(r.depth), fmt_f64(k), fmt_f64(e)])
            }),
        )?;
    }

    let mut s = Summary::new("converge");
    s.config("model", model_value(&model))
        .config("depths", json!([args.depths.min, args.depths.max]))
        .config("tol", c.tol);
    if let Some(m) = &settings {
        s.config("paths", m.paths)
            .config("seed", m.seed)
            .config("estimator", m.estimator.to_string())
            .config("lags", m.lags);
    }
    let deviations: Vec<f64> = study.results.iter().filter_map(|r| r.target_deviation).collect();
    if !deviations.is_empty() {
        let pass = if study.is_exact() {
            deviations.iter().all(|&d| d <= c.tol)
        } else {
            study.results.iter().all(|r| r.target_pass != Some(false))
        };
        s.verdict("target", pass).violation("target", deviations.iter().copied().fold(0.0, f64::max));
    }
    if study.results.iter().any(|r| r.suite_pass.is_some()) {
        s.verdict("suites", study.results.iter().all(|r| r.suite_pass != Some(false)));
    }
    let residuals: Vec<f64> = study.results.iter().filter_map(|r| r.residual_max_abs_t).collect();
    if !residuals.is_empty() {
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        s.verdict("residual_martingale", worst <= refine::RESIDUAL_T_MAX).violation("residual_martingale", worst);
    }
    if !study.is_exact() {
        let flagged: Vec<_> = study
            .results
            .iter()
            .map(|r| json!({ "depth": r.depth, "steps": r.monotonicity_flags }))
            .filter(|v| v["steps"].as_array().is_some_and(|a| !a.is_empty()))
            .collect();
        s.extra("monotonicity_flags", flagged);
        s.extra("epsilon_note", "sample tail profile of the estimated compensator; not a class D test");
    }
    s.verdict("trend", report.verdict != Verdict::NotDecreasing);
    s.violation("l1_delta", report.deltas.iter().copied().fold(0.0, f64::max));
    s.extra("engine", serde_json::to_value(study.engine).expect("engine serializes"));
    s.extra("trend", report.verdict.label());
    if settings.is_none() && args.estimator != CondExpEstimator::Analytic {
        s.extra("note", "estimator ignored: exact engine");
    }
    out.summary(&s)?;
    Ok(outcome(&s))
}

pub fn audit(args: &AuditArgs) -> Result<Outcome, CliError> {
    let model = load_model(&args.model)?;
    if model.class() != ModelClass::PathSpace {
        return Err(CliError::Input("audit needs a path-space model (binary-tree or explicit)".into()));
    }
    let atoms = model.atom_count().unwrap_or(usize::MAX);
    if atoms > AUDIT_MAX_ATOMS {
        return Err(Error::Resource(format!("audit supports at most {AUDIT_MAX_ATOMS} atoms, model has {atoms}")).into());
    }
    let fm = model.instantiate()?;
    let r = doob::doleans_dade_audit(fm.filtration(), args.trials, args.seed);

    let out = OutDir::create(&args.out)?;
    let cells = [
        (true, true, r.predictable_natural),
        (true, false, r.predictable_not_natural),
        (false, true, r.natural_not_predictable),
        (false, false, r.neither),
    ];
    out.csv(
        "contingency.csv",
        &["predictable", "natural", "count"],
        cells.iter().map(|(p, n, k)| vec![p.to_string(), n.to_string(), k.to_string()]),
    )?;
    let mut s = Summary::new("audit");
    s.config("model", model_value(&model))
        .config("trials", args.trials)
        .config("seed", args.seed);
    s.verdict("off_diagonal_zero", r.off_diagonal_zero());
    s.violation("off_diagonal", (r.predictable_not_natural + r.natural_not_predictable) as f64);
    s.extra("table", serde_json::to_value(r).expect("report serializes"));
    out.summary(&s)?;
    Ok(outcome(&s))
}

pub fn dump_model(args: &DumpArgs) -> Result<Outcome, CliError> {
    let model = load_model(&args.model)?;
    let text = model.to_json() + "\n";
    match &args.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(Outcome::Pass)
}
