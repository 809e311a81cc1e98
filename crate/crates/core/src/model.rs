//! Declarative model descriptions.
//!
//! A model file is one JSON object tagged by `kind`. Path-space kinds
//! (`binary-tree`, `explicit`) describe a finite filtered space and a
//! process on it; lattice kinds are instantiated per time grid; `mc-*` kinds
//! are simulated.
//!
//! ```json
//! { "kind": "binary-tree", "steps": 3, "process": "walk-squared",
//!   "known_compensator": "none" }
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DriftLattice, MarkovLattice, PoissonLattice, WalkLattice};
use crate::mc::McModel;
use crate::measure::{FiniteSpace, Partition};
use crate::process::{AdaptedProcess, Filtration, TimeGrid};
use crate::tree::{BinaryTree, MAX_TREE_STEPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeProcess {
    Walk,
    WalkSquared,
    AbsWalk,
    /// x_t = t, identical on every atom.
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scaling {
    /// Steps of size 1.
    #[default]
    Unit,
    /// Steps of size √Δt, so a squared walk has compensator t.
    Diffusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeProcess {
    Walk,
    WalkSquared,
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnownCompensator {
    #[default]
    None,
    /// A_t = t.
    IdentityTime,
    /// A_t = λ t.
    Linear(f64),
}

impl KnownCompensator {
    pub fn at(&self, t: f64) -> Option<f64> {
        match *self {
            KnownCompensator::None => None,
            KnownCompensator::IdentityTime => Some(t),
            KnownCompensator::Linear(rate) => Some(rate * t),
        }
    }
}

fn half() -> f64 {
    0.5
}

fn is_half(p: &f64) -> bool {
    *p == 0.5
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelKind {
    BinaryTree {
        steps: usize,
        process: TreeProcess,
        #[serde(default = "half", skip_serializing_if = "is_half")]
        up_prob: f64,
        #[serde(default)]
        scaling: Scaling,
    },
    RecombiningLattice {
        process: LatticeProcess,
    },
    PoissonLattice {
        rate: f64,
    },
    McPoisson {
        rate: f64,
    },
    McGaussianWalkSquared,
    McGaussianWalk,
    McMarkov {
        x0: f64,
        drift: [f64; 2],
        vol: [f64; 2],
    },
    Explicit {
        probs: Vec<f64>,
        times: Vec<f64>,
        /// One label vector per time; atoms sharing a label share a block.
        partitions: Vec<Vec<usize>>,
        /// One row per time, one entry per atom.
        values: Vec<Vec<f64>>,
        /// The process is offered as an increasing process in its own right:
        /// `verify` then also audits it for predictability and naturality.
        #[serde(default, skip_serializing_if = "is_false")]
        increasing: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    #[serde(default)]
    pub known_compensator: KnownCompensator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelClass {
    PathSpace,
    Lattice,
    MonteCarlo,
}

/// A path-space model: a process on a finite filtration.
#[derive(Debug, Clone)]
pub struct FiniteModel {
    pub process: AdaptedProcess,
    pub increasing: bool,
}

impl FiniteModel {
    pub fn filtration(&self) -> &Arc<Filtration> {
        self.process.filtration()
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, known_compensator: KnownCompensator::None }
    }

    pub fn with_known(mut self, known: KnownCompensator) -> Self {
        self.known_compensator = known;
        self
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn class(&self) -> ModelClass {
        match self.kind {
            ModelKind::BinaryTree { .. } | ModelKind::Explicit { .. } => ModelClass::PathSpace,
            ModelKind::RecombiningLattice { .. } | ModelKind::PoissonLattice { .. } => ModelClass::Lattice,
            _ => ModelClass::MonteCarlo,
        }
    }

    /// Checks every parameter and, for path-space models, every space,
    /// filtration and adaptedness invariant.
    pub fn validate(&self) -> Result<()> {
        if let KnownCompensator::Linear(rate) = self.known_compensator {
            if !rate.is_finite() {
                return Err(Error::Model(format!("known compensator rate must be finite, got {rate}")));
            }
        }
        match self.class() {
            ModelClass::PathSpace => self.instantiate().map(|_| ()),
            ModelClass::Lattice => self.lattice(&TimeGrid::dyadic(0)?).map(|_| ()),
            ModelClass::MonteCarlo => self.mc_model().expect("mc class").validate(),
        }
    }

    pub fn atom_count(&self) -> Option<usize> {
        match &self.kind {
            ModelKind::BinaryTree { steps, .. } => 1usize.checked_shl(*steps as u32),
            ModelKind::Explicit { probs, .. } => Some(probs.len()),
            _ => None,
        }
    }

    pub fn instantiate(&self) -> Result<FiniteModel> {
        match &self.kind {
            ModelKind::BinaryTree { steps, process, up_prob, scaling } => {
                if *steps == 0 {
                    return Err(Error::Model("steps must be at least 1".into()));
                }
                if *steps > MAX_TREE_STEPS {
                    return Err(Error::Resource(format!(
                        "binary tree with {steps} steps exceeds the path-space bound of {MAX_TREE_STEPS} steps"
                    )));
                }
                if !(*up_prob > 0.0 && *up_prob < 1.0) {
                    return Err(Error::Model(format!("up_prob must lie in (0, 1), got {up_prob}")));
                }
                let tree = BinaryTree::new(*steps, *up_prob);
                let f = tree.filtration();
                let h = match scaling {
                    Scaling::Unit => 1.0,
                    Scaling::Diffusive => (1.0 / *steps as f64).sqrt(),
                };
                let times = f.grid().times().to_vec();
                let process = AdaptedProcess::from_fn(f, |k, atom| {
                    let s = tree.walk_value(atom, k, h);
                    match process {
                        TreeProcess::Walk => s,
                        TreeProcess::WalkSquared => s * s,
                        TreeProcess::AbsWalk => s.abs(),
                        TreeProcess::Drift => times[k],
                    }
                })?;
                Ok(FiniteModel { process, increasing: false })
            }
            ModelKind::Explicit { probs, times, partitions, values, increasing } => {
                let space = FiniteSpace::new(probs.clone())?;
                let grid = TimeGrid::new(times.clone())?;
                let parts = partitions
                    .iter()
                    .map(|labels| {
                        if labels.len() != space.atom_count() {
                            return Err(Error::Dimension(format!(
                                "partition lists {} labels for {} atoms",
                                labels.len(),
                                space.atom_count()
                            )));
                        }
                        Partition::from_labels(labels)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let f = Arc::new(Filtration::new(space, grid, parts)?);
                let process = AdaptedProcess::new(f, values.clone())?;
                Ok(FiniteModel { process, increasing: *increasing })
            }
            _ => Err(Error::Model("not a finite path-space model".into())),
        }
    }

    pub fn lattice(&self, grid: &TimeGrid) -> Result<Box<dyn MarkovLattice>> {
        match &self.kind {
            ModelKind::RecombiningLattice { process } => Ok(match process {
                LatticeProcess::Walk => Box::new(WalkLattice::new(grid.clone(), |s| s)?),
                LatticeProcess::WalkSquared => Box::new(WalkLattice::new(grid.clone(), |s| s * s)?),
                LatticeProcess::Drift => Box::new(DriftLattice::new(grid.clone())),
            }),
            ModelKind::PoissonLattice { rate } => Ok(Box::new(PoissonLattice::new(grid.clone(), *rate)?)),
            _ => Err(Error::Model("not a lattice model".into())),
        }
    }

    pub fn mc_model(&self) -> Option<McModel> {
        match &self.kind {
            ModelKind::McPoisson { rate } => Some(McModel::Poisson { rate: *rate }),
            ModelKind::McGaussianWalkSquared => Some(McModel::GaussianWalkSquared),
            ModelKind::McGaussianWalk => Some(McModel::GaussianWalk),
            ModelKind::McMarkov { x0, drift, vol } => Some(McModel::Markov { x0: *x0, drift: *drift, vol: *vol }),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tagged_kinds() {
        let m = ModelSpec::from_json(r#"{"kind":"binary-tree","steps":3,"process":"walk-squared"}"#).unwrap();
        assert_eq!(
            m.kind,
            ModelKind::BinaryTree { steps: 3, process: TreeProcess::WalkSquared, up_prob: 0.5, scaling: Scaling::Unit }
        );
        assert_eq!(m.known_compensator, KnownCompensator::None);
        let p = ModelSpec::from_json(r#"{"kind":"mc-poisson","rate":1.0,"known_compensator":{"linear":1.0}}"#).unwrap();
        assert_eq!(p.known_compensator, KnownCompensator::Linear(1.0));
        assert_eq!(p.class(), ModelClass::MonteCarlo);
        let g = ModelSpec::from_json(r#"{"kind":"mc-gaussian-walk-squared","known_compensator":"identity-time"}"#).unwrap();
        assert_eq!(g.mc_model(), Some(McModel::GaussianWalkSquared));
    }

    #[test]
    fn explicit_validation_names_the_invariant() {
        let text = r#"{"kind":"explicit","probs":[0.5,0.4],"times":[0,1],
            "partitions":[[0,0],[0,1]],"values":[[0,0],[1,2]]}"#;
        let m = ModelSpec::from_json(text).unwrap();
        assert!(matches!(m.validate(), Err(Error::Normalization { .. })));
    }

    #[test]
    fn tree_bounds() {
        let big = ModelSpec::new(ModelKind::BinaryTree {
            steps: 13,
            process: TreeProcess::Walk,
            up_prob: 0.5,
            scaling: Scaling::Unit,
        });
        assert!(matches!(big.validate(), Err(Error::Resource(_))));
        let bad_p = ModelSpec::new(ModelKind::BinaryTree {
            steps: 2,
            process: TreeProcess::Walk,
            up_prob: 1.0,
            scaling: Scaling::Unit,
        });
        assert!(matches!(bad_p.validate(), Err(Error::Model(_))));
    }

    #[test]
    fn diffusive_squared_walk_has_unit_terminal_mean() {
        let m = ModelSpec::new(ModelKind::BinaryTree {
            steps: 8,
            process: TreeProcess::WalkSquared,
            up_prob: 0.5,
            scaling: Scaling::Diffusive,
        });
        let fm = m.instantiate().unwrap();
        let mean = fm.filtration().space().probs().iter().zip(fm.process.terminal()).map(|(p, v)| p * v).sum::<f64>();
        assert!((mean - 1.0).abs() < 1e-12);
    }
}
