//! Objective, reduced gradient, Gauss-Newton Hessian, PCG and the outer
//! Gauss-Newton-Krylov iteration with β-continuation.

pub mod config;
pub mod cost;
pub mod newton;
pub mod objective;
pub mod pcg;
pub mod report;

pub use config::{FixedIterations, RegistrationConfig};
pub use cost::{estimate_cost, estimate_memory, CostSettings};
pub use newton::{beta_continuation, forcing_term, gauss_newton_solve};
pub use objective::{Evaluation, Problem};
pub use pcg::{pcg, PcgOutcome};
pub use report::{GnStep, LevelReport, OpTally, PhaseTimes, SolverReport};
