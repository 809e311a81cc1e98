//! Monte Carlo layer for models without a finite filtration.
//!
//! Conditional expectations E(· | F_{t_k}) are replaced by estimates
//! conditioned on the Markov state at t_k (for the built-in models, the
//! current value). The estimated compensator of a path accumulates the
//! fitted conditional increment means along that path.
//!
//! Reproducibility: path i is driven by a ChaCha8 generator keyed by the
//! batch seed and positioned on stream i, so a path does not depend on which
//! worker simulates it. All cross-path sums run over fixed chunks of
//! [`CHUNK`] paths combined in index order.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classd::{MarkovBound, TailChain, TailReport};
use crate::error::{Error, Result};
use crate::process::TimeGrid;

/// Paths per summation chunk.
pub const CHUNK: usize = 1024;

pub const MAX_REGRESSION_DEGREE: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum McModel {
    /// Counting process with intensity `rate`.
    Poisson { rate: f64 },
    /// B_t² for a standard Brownian motion B.
    GaussianWalkSquared,
    /// B_t itself (a martingale).
    GaussianWalk,
    /// Euler chain x_{k+1} = x_k + (d0 + d1 x_k) Δt + (v0 + v1 x_k) √Δt Z.
    Markov { x0: f64, drift: [f64; 2], vol: [f64; 2] },
}

impl McModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            McModel::Poisson { rate } if !(rate.is_finite() && *rate > 0.0) => {
                Err(Error::Model(format!("poisson rate must be positive and finite, got {rate}")))
            }
            McModel::Markov { x0, drift, vol } if !(x0.is_finite() && drift.iter().chain(vol).all(|v| v.is_finite())) => {
                Err(Error::Model("markov parameters must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Canonical identifier: the model's JSON encoding.
    pub fn id(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn initial_value(&self) -> f64 {
        match self {
            McModel::Markov { x0, .. } => *x0,
            _ => 0.0,
        }
    }

    /// Closed-form E(x_{k+1} - x_k | x_k = state) over a step of length dt.
    pub fn conditional_increment_mean(&self, state: f64, dt: f64) -> f64 {
        match self {
            McModel::Poisson { rate } => rate * dt,
            McModel::GaussianWalkSquared => dt,
            McModel::GaussianWalk => 0.0,
            McModel::Markov { drift, .. } => (drift[0] + drift[1] * state) * dt,
        }
    }

    fn simulate_path(&self, times: &[f64], rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            McModel::Poisson { rate } => {
                // exact arrival times, then counts at every grid time
                let mut count = 0.0;
                let mut next = rng.sample::<f64, _>(Exp1) / rate;
                for (slot, &t) in out.iter_mut().zip(times) {
                    while next <= t {
                        count += 1.0;
                        next += rng.sample::<f64, _>(Exp1) / rate;
                    }
                    *slot = count;
                }
            }
            McModel::GaussianWalkSquared | McModel::GaussianWalk => {
                let squared = matches!(self, McModel::GaussianWalkSquared);
                let mut b = 0.0;
                out[0] = 0.0;
                for k in 1..times.len() {
                    let dt = times[k] - times[k - 1];
                    b += dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
                    out[k] = if squared { b * b } else { b };
                }
            }
            McModel::Markov { x0, drift, vol } => {
                let mut x = *x0;
                out[0] = x;
                for k in 1..times.len() {
                    let dt = times[k] - times[k - 1];
                    let z: f64 = rng.sample(StandardNormal);
                    x += (drift[0] + drift[1] * x) * dt + (vol[0] + vol[1] * x) * dt.sqrt() * z;
                    out[k] = x;
                }
            }
        }
    }
}

/// Simulated paths stored row-major (path × time).
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    model: McModel,
    grid: TimeGrid,
    seed: u64,
    first_path: u64,
    data: Vec<f64>,
}

impl PathBatch {
    pub fn model(&self) -> &McModel {
        &self.model
    }

    pub fn model_id(&self) -> String {
        self.model.id()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream index of the first path in this batch.
    pub fn first_path(&self) -> u64 {
        self.first_path
    }

    pub fn time_count(&self) -> usize {
        self.grid.len()
    }

    pub fn path_count(&self) -> usize {
        self.data.len() / self.time_count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let w = self.time_count();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.time_count() + k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.path_count()).map(|i| self.value(i, k)).collect()
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Splits into the first `n` paths and the rest. Each half remembers its
    /// stream offset.
    pub fn split_at(&self, n: usize) -> (PathBatch, PathBatch) {
        let n = n.min(self.path_count());
        let cut = n * self.time_count();
        let head = PathBatch { data: self.data[..cut].to_vec(), ..self.shallow() };
        let tail = PathBatch {
            data: self.data[cut..].to_vec(),
            first_path: self.first_path + n as u64,
            ..self.shallow()
        };
        (head, tail)
    }

    /// Training half (first ⌈n/2⌉ paths) and held-out half.
    pub fn split_half(&self) -> (PathBatch, PathBatch) {
        self.split_at(self.path_count().div_ceil(2))
    }

    fn shallow(&self) -> PathBatch {
        PathBatch {
            model: self.model.clone(),
            grid: self.grid.clone(),
            seed: self.seed,
            first_path: self.first_path,
            data: Vec::new(),
        }
    }

    /// Flat binary dump: magic, model id, grid, seed, first path, path
    /// count, then the row-major body. All integers and floats are
    /// little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let id = self.model_id();
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&(id.len() as u64).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        w.write_all(&(self.grid.len() as u64).to_le_bytes())?;
        for t in self.grid.times() {
            w.write_all(&t.to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.first_path.to_le_bytes())?;
        w.write_all(&(self.path_count() as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e: std::io::Error| Error::Model(format!("path dump: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Model("path dump: bad magic".into()));
        }
        let mut u64_buf = [0u8; 8];
        let mut read_u64 = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut u64_buf).map_err(io)?;
            Ok(u64::from_le_bytes(u64_buf))
        };
        let id_len = read_u64(r)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(io)?;
        let model: McModel = serde_json::from_slice(&id).map_err(|e| Error::Model(format!("path dump model id: {e}")))?;
        let grid_len = read_u64(r)? as usize;
        let times = (0..grid_len)
            .map(|_| read_u64(r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        let grid = TimeGrid::new(times)?;
        let seed = read_u64(r)?;
        let first_path = read_u64(r)?;
        let paths = read_u64(r)? as usize;
        let data = (0..paths * grid.len())
            .map(|_| read_u64(r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        Ok(PathBatch { model, grid, seed, first_path, data })
    }
}

const DUMP_MAGIC: &[u8; 8] = b"DOOBPTH1";

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn simulate(model: &McModel, grid: &TimeGrid, path_count: usize, seed: u64) -> Result<PathBatch> {
    model.validate()?;
    let w = grid.len();
    let mut data = vec![0.0; path_count * w];
    data.par_chunks_mut(w).enumerate().for_each(|(i, out)| {
        let mut rng = path_rng(seed, i as u64);
        model.simulate_path(grid.times(), &mut rng, out);
    });
    Ok(PathBatch { model: model.clone(), grid: grid.clone(), seed, first_path: 0, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CondExpEstimator {
    Analytic,
    Binning { bins: usize },
    Regression { degree: usize },
}

impl CondExpEstimator {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CondExpEstimator::Binning { bins: 0 } => Err(Error::Domain("bin count must be at least 1".into())),
            CondExpEstimator::Regression { degree } if degree > MAX_REGRESSION_DEGREE => Err(Error::Domain(format!(
                "regression degree {degree} exceeds {MAX_REGRESSION_DEGREE}"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for CondExpEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CondExpEstimator::Analytic => write!(f, "analytic"),
            CondExpEstimator::Binning { bins } => write!(f, "binning:{bins}"),
            CondExpEstimator::Regression { degree } => write!(f, "regression:{degree}"),
        }
    }
}

impl FromStr for CondExpEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("unknown estimator '{s}' (expected analytic, binning:<bins> or regression:<degree>)"));
        let est = match s.split_once(':') {
            None if s == "analytic" => CondExpEstimator::Analytic,
            Some(("binning", n)) => CondExpEstimator::Binning { bins: n.parse().map_err(|_| bad())? },
            Some(("regression", n)) => CondExpEstimator::Regression { degree: n.parse().map_err(|_| bad())? },
            _ => return Err(bad()),
        };
        est.validate()?;
        Ok(est)
    }
}

/// Fitted conditional increment mean for one step, with enough information
/// to propagate its own estimation variance into linear functionals.
#[derive(Debug, Clone, PartialEq)]
enum StepFit {
    Analytic { dt: f64 },
    Constant { mean: f64, var: f64 },
    Binning { lo: f64, width: f64, means: Vec<f64>, vars: Vec<f64>, global_mean: f64, global_var: f64 },
    Regression { center: f64, scale: f64, coef: DVector<f64>, cov: DMatrix<f64> },
}

fn features(z: f64, p: usize) -> impl Iterator<Item = f64> {
    std::iter::successors(Some(1.0), move |v| Some(v * z)).take(p)
}

impl StepFit {
    fn bin(&self, x: f64) -> Option<usize> {
        match self {
            StepFit::Binning { lo, width, means, .. } => {
                let b = ((x - lo) / width).floor();
                Some(if b < 0.0 { 0 } else { (b as usize).min(means.len() - 1) })
            }
            _ => None,
        }
    }

    fn predict(&self, model: &McModel, x: f64) -> f64 {
        match self {
            StepFit::Analytic { dt } => model.conditional_increment_mean(x, *dt),
            StepFit::Constant { mean, .. } => *mean,
            StepFit::Binning { means, global_mean, .. } => {
                let m = means[self.bin(x).expect("binning")];
                if m.is_nan() {
                    *global_mean
                } else {
                    m
                }
            }
            StepFit::Regression { center, scale, coef, .. } => {
                features((x - center) / scale, coef.len()).zip(coef.iter()).map(|(f, c)| f * c).sum()
            }
        }
    }

    /// Var(Σ_i c_i m̂(x_i)) due to the estimation error of the fit alone.
    fn functional_variance(&self, states: &[f64], coeffs: &[f64]) -> f64 {
        match self {
            StepFit::Analytic { .. } => 0.0,
            StepFit::Constant { var, .. } => coeffs.iter().sum::<f64>().powi(2) * var,
            StepFit::Binning { means, vars, global_var, .. } => {
                let mut weight = vec![0.0; means.len()];
                let mut fallback = 0.0;
                for (&x, &c) in states.iter().zip(coeffs) {
                    let b = self.bin(x).expect("binning");
                    if means[b].is_nan() {
                        fallback += c;
                    } else {
                        weight[b] += c;
                    }
                }
                weight.iter().zip(vars).map(|(w, v)| w * w * v).sum::<f64>() + fallback * fallback * global_var
            }
            StepFit::Regression { center, scale, coef, cov } => {
                let p = coef.len();
                let mut g = DVector::zeros(p);
                for (&x, &c) in states.iter().zip(coeffs) {
                    for (j, f) in features((x - center) / scale, p).enumerate() {
                        g[j] += c * f;
                    }
                }
                (g.transpose() * cov * &g)[(0, 0)].max(0.0)
            }
        }
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, v)
}

fn fit_step(est: CondExpEstimator, dt: f64, states: &[f64], incs: &[f64]) -> (StepFit, bool) {
    if matches!(est, CondExpEstimator::Analytic) {
        return (StepFit::Analytic { dt }, false);
    }
    let (global_mean, global_var) = mean_var(incs);
    let n = incs.len() as f64;
    let constant = StepFit::Constant { mean: global_mean, var: global_var / n };
    let lo = states.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = states.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return (constant, true);
    }
    match est {
        CondExpEstimator::Analytic => unreachable!(),
        CondExpEstimator::Binning { bins } => {
            let width = (hi - lo) / bins as f64;
            let mut groups: Vec<Vec<f64>> = vec![Vec::new(); bins];
            let proto = StepFit::Binning {
                lo,
                width,
                means: vec![0.0; bins],
                vars: Vec::new(),
                global_mean,
                global_var,
            };
            for (&x, &d) in states.iter().zip(incs) {
                groups[proto.bin(x).expect("binning")].push(d);
            }
            let (means, vars) = groups
                .iter()
                .map(|g| match g.len() {
                    0 => (f64::NAN, 0.0),
                    1 => (g[0], global_var),
                    len => {
                        let (m, v) = mean_var(g);
                        (m, v / len as f64)
                    }
                })
                .unzip();
            (StepFit::Binning { lo, width, means, vars, global_mean, global_var }, false)
        }
        CondExpEstimator::Regression { degree } => {
            let mut distinct: Vec<f64> = states.to_vec();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let p = degree.min(distinct.len() - 1) + 1;
            let (center, var) = mean_var(states);
            let scale = var.sqrt();
            let mut xtx = DMatrix::<f64>::zeros(p, p);
            let mut xty = DVector::<f64>::zeros(p);
            let mut row = vec![0.0; p];
            for (&x, &y) in states.iter().zip(incs) {
                for (slot, f) in row.iter_mut().zip(features((x - center) / scale, p)) {
                    *slot = f;
                }
                for a in 0..p {
                    xty[a] += row[a] * y;
                    for b in 0..p {
                        xtx[(a, b)] += row[a] * row[b];
                    }
                }
            }
            let inv = match xtx.clone().pseudo_inverse(1e-12 * xtx.norm()) {
                Ok(m) => m,
                Err(_) => return (constant, true),
            };
            let coef = &inv * xty;
            let mut meat = DMatrix::<f64>::zeros(p, p);
            for (&x, &y) in states.iter().zip(incs) {
                for (slot, f) in row.iter_mut().zip(features((x - center) / scale, p)) {
                    *slot = f;
                }
                let e = y - row.iter().zip(coef.iter()).map(|(f, c)| f * c).sum::<f64>();
                for a in 0..p {
                    for b in 0..p {
                        meat[(a, b)] += e * e * row[a] * row[b];
                    }
                }
            }
            let cov = &inv * meat * &inv;
            (StepFit::Regression { center, scale, coef, cov }, false)
        }
    }
}

/// Per-step conditional increment means, fitted on one batch and usable on
/// any batch of the same model and grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedCompensator {
    model: McModel,
    grid: TimeGrid,
    estimator: Option<CondExpEstimator>,
    steps: Vec<StepFit>,
    degenerate_steps: Vec<usize>,
}

impl FittedCompensator {
    pub fn fit(train: &PathBatch, est: CondExpEstimator) -> Result<Self> {
        est.validate()?;
        let times = train.grid().times();
        let fits: Vec<(StepFit, bool)> = (0..train.grid().steps())
            .into_par_iter()
            .map(|k| {
                let states = train.column(k);
                let incs: Vec<f64> = (0..train.path_count()).map(|i| train.value(i, k + 1) - train.value(i, k)).collect();
                let dt = times[k + 1] - times[k];
                if states.is_empty() && !matches!(est, CondExpEstimator::Analytic) {
                    return (StepFit::Constant { mean: 0.0, var: 0.0 }, true);
                }
                fit_step(est, dt, &states, &incs)
            })
            .collect();
        let degenerate_steps = fits.iter().enumerate().filter(|(_, f)| f.1).map(|(k, _)| k).collect();
        Ok(Self {
            model: train.model().clone(),
            grid: train.grid().clone(),
            estimator: Some(est),
            steps: fits.into_iter().map(|f| f.0).collect(),
            degenerate_steps,
        })
    }

    /// The zero compensator, for testing a process that is claimed to be a
    /// martingale already.
    pub fn zero(model: &McModel, grid: &TimeGrid) -> Self {
        Self {
            model: model.clone(),
            grid: grid.clone(),
            estimator: None,
            steps: vec![StepFit::Constant { mean: 0.0, var: 0.0 }; grid.steps()],
            degenerate_steps: Vec::new(),
        }
    }

    pub fn estimator(&self) -> Option<CondExpEstimator> {
        self.estimator
    }

    /// Steps where every state was identical and the fit fell back to the
    /// global mean increment.
    pub fn degenerate_steps(&self) -> &[usize] {
        &self.degenerate_steps
    }

    pub fn increment(&self, k: usize, state: f64) -> f64 {
        self.steps[k].predict(&self.model, state)
    }

    /// Â along one path.
    pub fn path_compensator(&self, path: &[f64]) -> Vec<f64> {
        let mut a = Vec::with_capacity(path.len());
        a.push(0.0);
        for k in 0..self.steps.len() {
            a.push(a[k] + self.increment(k, path[k]));
        }
        a
    }

    fn check_batch(&self, batch: &PathBatch) -> Result<()> {
        if batch.grid() != &self.grid || batch.model() != &self.model {
            return Err(Error::Model("batch does not match the fitted model and grid".into()));
        }
        Ok(())
    }

    /// Cross-path mean of Â_t and its standard error. The error combines
    /// the path-to-path spread with the fit's own estimation variance.
    pub fn evaluate(&self, batch: &PathBatch) -> Result<CompensatorEstimate> {
        self.check_batch(batch)?;
        let n = batch.path_count();
        let w = batch.time_count();
        if n == 0 {
            return Ok(CompensatorEstimate {
                fitted: self.clone(),
                mean: vec![0.0; w],
                se: vec![0.0; w],
                path_se: vec![0.0; w],
                fit_se: vec![0.0; w],
            });
        }
        let sums = chunked_sums(n, w, |i, acc| {
            for (slot, v) in acc.iter_mut().zip(self.path_compensator(batch.path(i))) {
                *slot += v;
            }
        });
        let mean: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
        let sq = chunked_sums(n, w, |i, acc| {
            for ((slot, v), m) in acc.iter_mut().zip(self.path_compensator(batch.path(i))).zip(&mean) {
                *slot += (v - m) * (v - m);
            }
        });
        let path_var: Vec<f64> = sq
            .iter()
            .map(|s| if n > 1 { s / (n as f64 - 1.0) / n as f64 } else { 0.0 })
            .collect();
        let uniform = vec![1.0 / n as f64; n];
        let step_fit_var: Vec<f64> = (0..self.steps.len())
            .into_par_iter()
            .map(|k| self.steps[k].functional_variance(&batch.column(k), &uniform))
            .collect();
        let mut fit_var = vec![0.0; w];
        for k in 0..self.steps.len() {
            fit_var[k + 1] = fit_var[k] + step_fit_var[k];
        }
        let se = path_var.iter().zip(&fit_var).map(|(p, f)| (p + f).sqrt()).collect();
        Ok(CompensatorEstimate {
            fitted: self.clone(),
            mean,
            se,
            path_se: path_var.iter().map(|v| v.sqrt()).collect(),
            fit_se: fit_var.iter().map(|v| v.sqrt()).collect(),
        })
    }
}

/// Column sums over paths, accumulated chunk by chunk in index order.
fn chunked_sums(n: usize, w: usize, f: impl Fn(usize, &mut [f64]) + Sync) -> Vec<f64> {
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; w];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(i, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; w];
    for c in &chunks {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorEstimate {
    pub fitted: FittedCompensator,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub path_se: Vec<f64>,
    pub fit_se: Vec<f64>,
}

impl CompensatorEstimate {
    pub fn zero(batch: &PathBatch) -> Self {
        FittedCompensator::zero(batch.model(), batch.grid())
            .evaluate(batch)
            .expect("zero compensator matches its own batch")
    }

    pub fn terminal_mean(&self) -> f64 {
        *self.mean.last().expect("non-empty grid")
    }

    pub fn terminal_se(&self) -> f64 {
        *self.se.last().expect("non-empty grid")
    }

    pub fn degenerate_steps(&self) -> &[usize] {
        self.fitted.degenerate_steps()
    }

    /// Steps k whose mean drops from t_k to t_{k+1} by more than three
    /// combined standard errors. Empty for an exact, nondecreasing estimate.
    pub fn monotonicity_flags(&self) -> Vec<usize> {
        (0..self.mean.len().saturating_sub(1))
            .filter(|&k| self.mean[k + 1] < self.mean[k] - 3.0 * self.se[k].hypot(self.se[k + 1]))
            .collect()
    }
}

/// Tail chain and Markov bound with each path weighted 1/n and τ_k the last
/// grid index where the path's Â is at most k. Nothing here tests class D:
/// the numbers describe the sample.
pub fn empirical_tail_profile(batch: &PathBatch, fit: &FittedCompensator, levels: &[f64]) -> Result<TailReport> {
    fit.check_batch(batch)?;
    if levels.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(Error::Domain("levels must be positive and finite".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("levels must be strictly increasing".into()));
    }
    let n = batch.path_count();
    if n == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    // per level: five chain numerators, the unrestricted gap, P(Â_1 ≥ k)
    const W: usize = 7;
    let sums = chunked_sums(n, W * levels.len() + 1, |i, acc| {
        let x = batch.path(i);
        let a = fit.path_compensator(x);
        let a1 = *a.last().expect("non-empty grid");
        let x1 = *x.last().expect("non-empty grid");
        for (l, &k) in levels.iter().enumerate() {
            let tau = a.iter().rposition(|&v| v <= k).unwrap_or(0);
            let excess = a1 - a1.min(k);
            let slot = &mut acc[W * l..W * (l + 1)];
            if a1 >= 2.0 * k {
                slot[0] += a1;
                slot[1] += 2.0 * excess;
            }
            slot[2] += 2.0 * excess;
            slot[3] += 2.0 * (a1 - a[tau]);
            if a1 >= k {
                slot[4] += 2.0 * (x1 - x[tau]);
                slot[6] += 1.0;
            }
            slot[5] += 2.0 * (x1 - x[tau]);
        }
        acc[W * levels.len()] += x1 - x[0];
    });
    let mean = |v: f64| v / n as f64;
    let gain = mean(sums[W * levels.len()]);
    let mut markov = Vec::with_capacity(levels.len());
    let mut chains = Vec::with_capacity(levels.len());
    for (l, &k) in levels.iter().enumerate() {
        let s = &sums[W * l..W * (l + 1)];
        markov.push(MarkovBound { lhs: mean(s[6]), rhs: gain / k });
        chains.push(TailChain {
            level: k,
            terms: [mean(s[0]), mean(s[1]), mean(s[2]), mean(s[3]), mean(s[4])],
            unrestricted: mean(s[5]),
        });
    }
    let epsilon = chains.iter().map(TailChain::rhs).collect();
    Ok(TailReport { levels: levels.to_vec(), markov, chains, epsilon })
}

/// Fits on `batch` and evaluates on the same paths.
pub fn estimate_compensator(batch: &PathBatch, est: CondExpEstimator) -> Result<CompensatorEstimate> {
    FittedCompensator::fit(batch, est)?.evaluate(batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Per step k: t-statistics of the intercept (mean residual) followed by
    /// one slope per lagged state.
    pub t_stats: Vec<Vec<f64>>,
    pub max_abs_t: f64,
    pub max_at_step: Option<usize>,
}

/// Regresses residual increments (x[k+1] - x[k]) - (â[k+1] - â[k]) on the
/// centered states x[k], …, x[k-lags+1] and reports heteroskedasticity-robust
/// t-statistics. When the compensator was fitted on another batch, the
/// fit's estimation variance is added to each coefficient's variance.
pub fn residual_martingale_test(batch: &PathBatch, a: &CompensatorEstimate, lags: usize) -> Result<ResidualReport> {
    a.fitted.check_batch(batch)?;
    if lags == 0 {
        return Err(Error::Domain("at least one lag is required".into()));
    }
    let n = batch.path_count();
    let t_stats: Vec<Vec<f64>> = (0..batch.grid().steps())
        .into_par_iter()
        .map(|k| residual_step(batch, &a.fitted, k, lags, n))
        .collect();
    let mut max_abs_t = 0.0;
    let mut max_at_step = None;
    for (k, ts) in t_stats.iter().enumerate() {
        for t in ts {
            if t.abs() > max_abs_t {
                max_abs_t = t.abs();
                max_at_step = Some(k);
            }
        }
    }
    Ok(ResidualReport { t_stats, max_abs_t, max_at_step })
}

fn residual_step(batch: &PathBatch, fit: &FittedCompensator, k: usize, lags: usize, n: usize) -> Vec<f64> {
    if n < 2 {
        return Vec::new();
    }
    let states = batch.column(k);
    let r: Vec<f64> = (0..n)
        .map(|i| batch.value(i, k + 1) - batch.value(i, k) - fit.increment(k, states[i]))
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for l in 0..lags.min(k + 1) {
        let col = batch.column(k - l);
        let (m, v) = mean_var(&col);
        if v > 0.0 {
            columns.push(col.iter().map(|x| x - m).collect());
        }
    }
    let p = columns.len();
    let z = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
    let ztz = z.transpose() * &z;
    let Ok(g) = ztz.clone().pseudo_inverse(1e-12 * ztz.norm()) else {
        return Vec::new();
    };
    // c_j = row j of (ZᵀZ)⁻¹Zᵀ: coefficient j is Σ_i c_ji r_i
    let c = &g * z.transpose();
    let rv = DVector::from_vec(r);
    let theta = &c * &rv;
    let resid = &rv - &z * &theta;
    (0..p)
        .map(|j| {
            let cj: Vec<f64> = c.row(j).iter().copied().collect();
            let robust: f64 = cj.iter().zip(resid.iter()).map(|(w, e)| w * w * e * e).sum();
            let var = robust + fit.steps[k].functional_variance(&states, &cj);
            match (theta[j], var) {
                (t, v) if v > 0.0 => t / v.sqrt(),
                (0.0, _) => 0.0,
                (t, _) => t.signum() * f64::INFINITY,
            }
        })
        .collect()
}
