//! Numerical laboratory for spectral multipliers `g(√H)` of Schrödinger-type
//! operators `H = (i∇ - A)² + V` on finite grids.
//!
//! The crate discretizes `H`, computes its functional calculus exactly (dense
//! eigendecomposition) or matrix-free (Chebyshev), measures heat-kernel,
//! Kato, multiplier-norm and Muckenhoupt constants, and runs the maximal and
//! good-λ machinery used in weighted estimates. The [`harness`] module ties
//! these together into reproducible experiments.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below name the common `f64` instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod chebyshev;
pub mod czd;
pub mod error;
pub mod grid;
pub mod harness;
pub mod lattice;
pub mod norms;
pub mod scalar;
pub mod sparse;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Real;

pub type GridF64 = grid::Grid<f64>;
pub type GridF32 = grid::Grid<f32>;
pub type FieldSpecF64 = grid::FieldSpec<f64>;
pub type LatticeOperatorF64 = lattice::LatticeOperator<f64>;
pub type LatticeOperatorF32 = lattice::LatticeOperator<f32>;
pub type SpectralDecompositionF64 = calculus::SpectralDecomposition<f64>;
pub type SpectralDecompositionF32 = calculus::SpectralDecomposition<f32>;
pub type MultiplierFnF64 = calculus::MultiplierFn<f64>;
pub type KernelMatrixF64 = calculus::KernelMatrix<f64>;
pub type MuEstimateF64 = norms::MuEstimate<f64>;
pub type WeightF64 = weights::Weight<f64>;
pub type GoodLambdaScenarioF64 = czd::GoodLambdaScenario<f64>;
pub type HeatKernelReportF64 = lattice::HeatKernelReport<f64>;
