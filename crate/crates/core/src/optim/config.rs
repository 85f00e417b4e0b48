use serde::{Deserialize, Serialize};

use crate::interp::Degree;
use crate::precond::PcKind;
use crate::transport::{AdjointScheme, TransportConfig};
use crate::{Error, Real, Result};

/// Regularization weight above which continuation levels use the spectral preconditioner.
pub const INVA_SWITCH_BETA: Real = 5e-1;

/// Solver settings for one registration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub beta_target: Real,
    pub continuation: bool,
    /// First continuation level; levels shrink by `beta_factor` down to `beta_target`.
    pub beta_start: Real,
    pub beta_factor: Real,
    /// Weight of the optional `γ/2 ‖∇·v‖²` penalty.
    pub gamma_div: Real,
    /// Restrict the search to divergence-free velocities via Leray projection.
    pub leray: bool,
    pub eps_n: Real,
    pub max_gn_iter: usize,
    pub max_pcg_iter: usize,
    pub eps_h0: Real,
    pub inner_max_iter: usize,
    pub preconditioner: PcKind,
    pub degree: u32,
    pub cache_gradient: bool,
    pub adjoint: AdjointScheme,
    pub inc_adjoint: AdjointScheme,
    pub nt: usize,
    /// Fixed-work mode: exactly this many Gauss-Newton steps with a fixed PCG count.
    pub fixed_iterations: Option<FixedIterations>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedIterations {
    pub gauss_newton: usize,
    pub pcg: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            beta_target: 5e-4,
            continuation: true,
            beta_start: 1.0,
            beta_factor: 0.1,
            gamma_div: 0.0,
            leray: false,
            eps_n: 5e-2,
            max_gn_iter: 50,
            max_pcg_iter: 500,
            eps_h0: 1e-3,
            inner_max_iter: 100,
            preconditioner: PcKind::TwoLevelInvH0,
            degree: 3,
            cache_gradient: false,
            adjoint: AdjointScheme::Advective,
            inc_adjoint: AdjointScheme::Transpose,
            nt: 4,
            fixed_iterations: None,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.beta_target > 0.0 && self.beta_target.is_finite()) {
            return bad(format!(
                "beta_target must be positive, got {}",
                self.beta_target
            ));
        }
        if !(self.beta_start > 0.0 && self.beta_start.is_finite()) {
            return bad(format!(
                "beta_start must be positive, got {}",
                self.beta_start
            ));
        }
        if !(self.beta_factor > 0.0 && self.beta_factor < 1.0) {
            return bad(format!(
                "beta_factor must lie in (0, 1), got {}",
                self.beta_factor
            ));
        }
        if !(self.gamma_div >= 0.0 && self.gamma_div.is_finite()) {
            return bad(format!(
                "gamma_div must be nonnegative, got {}",
                self.gamma_div
            ));
        }
        for (name, v) in [("eps_n", self.eps_n), ("eps_h0", self.eps_h0)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if self.max_pcg_iter == 0 || self.inner_max_iter == 0 {
            return bad("iteration caps must be positive".into());
        }
        if self.nt == 0 {
            return bad("nt must be at least 1".into());
        }
        if let Some(f) = self.fixed_iterations {
            if f.pcg == 0 {
                return bad("fixed PCG count must be positive".into());
            }
        }
        Degree::from_order(self.degree).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn transport(&self) -> Result<TransportConfig> {
        Ok(TransportConfig {
            degree: Degree::from_order(self.degree).map_err(|e| Error::Config(e.to_string()))?,
            adjoint: self.adjoint,
            inc_adjoint: self.inc_adjoint,
            cache_gradient: self.cache_gradient,
        })
    }

    /// Regularization weights of the continuation levels.
    pub fn beta_schedule(&self) -> Vec<Real> {
        if !self.continuation || self.beta_target >= self.beta_start {
            return vec![self.beta_target];
        }
        // Dividing by the reciprocal keeps factor-10 levels on exact decades.
        let inv = 1.0 / self.beta_factor;
        let mut levels = Vec::new();
        let mut i = 0;
        loop {
            let b = self.beta_start / inv.powi(i);
            // Tolerate rounding in the geometric sequence when it hits the target.
            if b <= self.beta_target * (1.0 + 1e-9) {
                break;
            }
            levels.push(b);
            i += 1;
        }
        levels.push(self.beta_target);
        levels
    }

    /// Preconditioner used at a given level.
    pub fn preconditioner_for(&self, beta: Real) -> PcKind {
        if self.continuation && beta > INVA_SWITCH_BETA {
            PcKind::InvA
        } else {
            self.preconditioner
        }
    }
}
