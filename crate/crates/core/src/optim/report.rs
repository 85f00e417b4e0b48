use serde::{Deserialize, Serialize};

use crate::engine::KernelCounters;
use crate::parallel::CommStats;
use crate::precond::{PcKind, PcStats};
use crate::Real;

use super::config::RegistrationConfig;

/// Tally of the solver-level operations; drives the cost-model expansion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTally {
    pub objective_evals: u64,
    /// Objective evaluations at the zero velocity (transport short-circuits).
    pub objective_zero: u64,
    pub gradient_evals: u64,
    pub gradient_zero: u64,
    pub matvecs: u64,
    pub matvec_zero: u64,
    pub inva_applications: u64,
    pub h0_applications: u64,
    pub two_level_applications: u64,
    /// Inner `H₀` matvecs and `(βA)⁻¹` applications on the fine grid.
    pub fine_inner_matvecs: u64,
    pub fine_inner_precond: u64,
    /// The same on the coarse grid of the two-level variant.
    pub coarse_inner_matvecs: u64,
    pub coarse_inner_precond: u64,
    pub h0_refreshes: u64,
    pub two_level_refreshes: u64,
    /// Leray projections of initial guesses.
    pub initial_projections: u64,
}

impl OpTally {
    pub fn add(&mut self, o: &OpTally) {
        self.objective_evals += o.objective_evals;
        self.objective_zero += o.objective_zero;
        self.gradient_evals += o.gradient_evals;
        self.gradient_zero += o.gradient_zero;
        self.matvecs += o.matvecs;
        self.matvec_zero += o.matvec_zero;
        self.inva_applications += o.inva_applications;
        self.h0_applications += o.h0_applications;
        self.two_level_applications += o.two_level_applications;
        self.fine_inner_matvecs += o.fine_inner_matvecs;
        self.fine_inner_precond += o.fine_inner_precond;
        self.coarse_inner_matvecs += o.coarse_inner_matvecs;
        self.coarse_inner_precond += o.coarse_inner_precond;
        self.h0_refreshes += o.h0_refreshes;
        self.two_level_refreshes += o.two_level_refreshes;
        self.initial_projections += o.initial_projections;
    }
}

/// Wall-clock seconds per solver phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub objective: f64,
    pub gradient: f64,
    pub hessian: f64,
    pub preconditioner: f64,
}

impl PhaseTimes {
    pub fn add(&mut self, o: &PhaseTimes) {
        self.objective += o.objective;
        self.gradient += o.gradient;
        self.hessian += o.hessian;
        self.preconditioner += o.preconditioner;
    }
}

/// One Gauss-Newton iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnStep {
    pub iteration: usize,
    pub objective: Real,
    pub mismatch: Real,
    pub grad_rel: Real,
    /// Outer PCG relative tolerance (`min(√‖g‖_rel, 0.5)`, or 0 in fixed mode).
    pub pcg_tolerance: Real,
    /// Forcing term handed to the preconditioner.
    pub eps_k: Real,
    pub pcg_iterations: usize,
    pub pcg_converged: bool,
    pub residuals: Vec<Real>,
    pub precond_residuals: Vec<Real>,
    pub pc_applications: usize,
    pub inner_iterations: usize,
    pub step_length: Real,
    pub line_search_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub beta: Real,
    /// Regularization weight inside the preconditioner (floored for the `H₀` variants).
    pub beta_pc: Real,
    pub preconditioner: PcKind,
    pub gn_iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub max_iterations_reached: bool,
    pub mismatch_initial: Real,
    pub mismatch_final: Real,
    pub objective_final: Real,
    pub grad_rel_final: Real,
    pub steps: Vec<GnStep>,
    pub pc_stats: PcStats,
    pub tally: OpTally,
    pub counters: KernelCounters,
    pub times: PhaseTimes,
}

impl LevelReport {
    pub fn pcg_total(&self) -> usize {
        self.steps.iter().map(|s| s.pcg_iterations).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub grid: [usize; 3],
    pub nt: usize,
    pub workers: usize,
    pub backend: String,
    pub config: RegistrationConfig,
    pub levels: Vec<LevelReport>,
    pub gn_iterations: usize,
    pub pcg_iterations: usize,
    pub inva_applications: u64,
    pub h0_applications: u64,
    pub inner_iterations: usize,
    pub inner_average: Real,
    /// `½‖m0 − m1‖²`.
    pub mismatch_initial: Real,
    /// `½‖m(·,1) − m1‖²` at the returned velocity.
    pub mismatch_final: Real,
    /// `‖m(·,1) − m1‖ / ‖m0 − m1‖`.
    pub mism_rel: Real,
    pub grad_rel_final: Real,
    pub converged: bool,
    pub flags: Vec<String>,
    pub counters: KernelCounters,
    pub tally: OpTally,
    pub times: PhaseTimes,
    pub comm: Option<CommStats>,
    pub memory_estimate_bytes: f64,
    pub wall_seconds: f64,
}

impl SolverReport {
    /// Whether the run ended in a state the caller should treat as a numerical failure.
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// CSV with one row per recorded residual: `level,beta,gn,iteration,rel_residual,precond_residual`.
    pub fn residual_csv(&self) -> String {
        let mut out = String::from(
            "level,beta,preconditioner,gn_iteration,pcg_iteration,rel_residual,precond_residual\n",
        );
        for (l, level) in self.levels.iter().enumerate() {
            for step in &level.steps {
                for (i, r) in step.residuals.iter().enumerate() {
                    let pr = step
                        .precond_residuals
                        .get(i)
                        .map(|x| format!("{x:e}"))
                        .unwrap_or_default();
                    out.push_str(&format!(
                        "{l},{:e},{},{},{i},{r:e},{pr}\n",
                        level.beta, level.preconditioner, step.iteration
                    ));
                }
            }
        }
        out
    }

    /// CSV with one row per Gauss-Newton iteration.
    pub fn iteration_csv(&self) -> String {
        let mut out = String::from(
            "level,beta,preconditioner,gn_iteration,objective,mismatch,grad_rel,eps_k,pcg_iterations,inner_iterations,step_length,line_search_trials\n",
        );
        for (l, level) in self.levels.iter().enumerate() {
            for s in &level.steps {
                out.push_str(&format!(
                    "{l},{:e},{},{},{:e},{:e},{:e},{:e},{},{},{:e},{}\n",
                    level.beta,
                    level.preconditioner,
                    s.iteration,
                    s.objective,
                    s.mismatch,
                    s.grad_rel,
                    s.eps_k,
                    s.pcg_iterations,
                    s.inner_iterations,
                    s.step_length,
                    s.line_search_trials
                ));
            }
        }
        out
    }
}
