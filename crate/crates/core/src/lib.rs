//! Exact discrete Doob decompositions on finite filtered probability spaces,
//! with the verification machinery around them: predictability, uniqueness,
//! naturality, the predictable/natural equivalence audit, uniform
//! integrability tail bounds, and grid-refinement studies (exact lattices
//! and Monte Carlo) that track how discrete compensators approach known
//! continuous-time compensators.

pub mod classd;
pub mod doob;
pub mod error;
pub mod fixtures;
pub mod lattice;
pub mod mc;
pub mod measure;
pub mod model;
pub mod process;
pub mod refine;
pub mod tree;

pub use error::{Error, Result};
