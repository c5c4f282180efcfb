//! Analytic inverse Ising formulas and the tooling to validate them.
//!
//! The inverse estimators (independent pair, Bethe, Sessak-Monasson and
//! tree-reweighted) live in [`inverse`]. The tree-reweighted forward problem
//! (free energy, fixed point, upper bound on `Φ`) is in [`trw`]. Exact
//! enumeration, Gibbs sampling, Boltzmann learning, benchmark sweeps and
//! spike-train ingestion support end-to-end checks.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for common use.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod exact;
pub mod graph;
pub mod inverse;
pub mod learn;
pub mod linalg;
pub mod model;
pub mod sampler;
pub mod scalar;
pub mod spikes;
pub mod stats;
pub mod trw;

pub use error::{IsingError, Result};
pub use graph::{Edge, EdgeAppearance, Graph, GraphSpec};
pub use inverse::{InferredCouplings, Method};
pub use linalg::Matrix;
pub use model::{IsingModel, Regime, SpinConfiguration};
pub use scalar::Scalar;
pub use stats::{DataStatistics, MomentAccumulator};

pub type Model = IsingModel<f64>;
pub type Model32 = IsingModel<f32>;
pub type Stats = DataStatistics<f64>;
pub type Stats32 = DataStatistics<f32>;
pub type Couplings = InferredCouplings<f64>;
pub type Couplings32 = InferredCouplings<f32>;
pub type Rho = EdgeAppearance<f64>;
pub type Rho32 = EdgeAppearance<f32>;
