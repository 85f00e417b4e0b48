//! Large-deformation diffeomorphic image registration posed as an optimal
//! control problem over a stationary velocity field.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`] / [`field`]: periodic grid descriptor and field containers
//! * [`spectral`]: real 3D transforms and diagonal spectral operators
//! * [`fd`]: 8th-order central finite differences
//! * [`interp`]: trilinear and tricubic Lagrange scattered interpolation
//! * [`engine`]: kernel dispatch (serial or slab-parallel) with call counters
//! * [`transport`]: semi-Lagrangian state/adjoint/incremental solvers
//! * [`optim`]: objective, gradient, Gauss-Newton Hessian, PCG, Newton loop
//! * [`precond`]: `InvA`, `InvH0` and two-level `InvH0` preconditioners
//! * [`parallel`]: slab-decomposed kernels over an in-process mailbox
//! * [`synth`]: the smooth synthetic benchmark problem

pub mod engine;
pub mod error;
pub mod fd;
pub mod field;
pub mod grid;
pub mod interp;
pub mod optim;
pub mod parallel;
pub mod precond;
pub mod spectral;
pub mod synth;
pub mod transport;

pub use engine::{Backend, Engine, KernelCounters};
pub use error::{Error, Result};
pub use field::{Field, ScalarField, TimeSeries, VectorField};
pub use grid::Grid3;

/// Floating point type used for all field data.
#[cfg(not(feature = "single"))]
pub type Real = f64;
/// Floating point type used for all field data.
#[cfg(feature = "single")]
pub type Real = f32;

pub type Complex = num_complex::Complex<Real>;

pub const PI: Real = std::f64::consts::PI as Real;
pub const TWO_PI: Real = (2.0 * std::f64::consts::PI) as Real;
