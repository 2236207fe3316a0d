//! Cahn–Hilliard system with dynamic boundary conditions of Cahn–Hilliard
//! type on a periodic strip, parametrized by the surface diffusion
//! coefficient `δ ≥ 0`.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`.

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod graphs;
pub mod initdata;
pub mod linalg;
pub mod operators;
pub mod scalar;
pub mod stepping;

pub use error::{Error, Result};
pub use geometry::{CoupledField, StripMesh};
pub use graphs::{MonotoneGraph, Perturbation, PotentialPair};
pub use operators::{CoupledOperator, DualVector, NormKind};
pub use scalar::Scalar;

pub type Mesh = StripMesh<f64>;
pub type Field = CoupledField<f64>;
pub type Operator = CoupledOperator<f64>;
pub type Potential = PotentialPair<f64>;
