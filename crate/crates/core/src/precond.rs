//! Preconditioners for the reduced-space Gauss-Newton Hessian: the spectral
//! inverse of the regularization operator, and approximate inverses of the
//! zero-velocity Hessian `H₀ = βA + ∇m ⊗ ∇m` on the fine grid or on a grid of
//! half the resolution.

use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::field::{ScalarField, VectorField};
use crate::optim::pcg::pcg;
use crate::spectral::{
    apply_inv_regop, apply_regop, high_pass_spectrum, prolong_spectrum, regop_symbol,
    restrict_spectrum, SpectralField,
};
use crate::{Error, Real, Result};

/// Lower bound on the regularization weight used inside the `H₀` solves.
pub const BETA_PC_FLOOR: Real = 5e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PcKind {
    #[serde(rename = "InvA")]
    InvA,
    #[serde(rename = "InvH0")]
    InvH0,
    #[serde(rename = "2LInvH0")]
    TwoLevelInvH0,
}

impl PcKind {
    pub fn label(self) -> &'static str {
        match self {
            PcKind::InvA => "InvA",
            PcKind::InvH0 => "InvH0",
            PcKind::TwoLevelInvH0 => "2LInvH0",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inva" => Ok(PcKind::InvA),
            "invh0" => Ok(PcKind::InvH0),
            "2linvh0" | "twolevel" | "two_level" => Ok(PcKind::TwoLevelInvH0),
            _ => Err(Error::Config(format!("unknown preconditioner '{s}'"))),
        }
    }

    pub fn uses_h0(self) -> bool {
        !matches!(self, PcKind::InvA)
    }
}

impl std::fmt::Display for PcKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// `β_pc = max(β, 5e-2)`.
pub fn beta_pc(beta: Real) -> Real {
    beta.max(BETA_PC_FLOOR)
}

/// `(βA)⁻¹ r`.
pub fn inv_a(eng: &Engine, r: &VectorField, beta: Real) -> Result<VectorField> {
    apply_inv_regop(eng, r, beta)
}

/// `β_pc A s + ∇m (∇m · s)`.
pub fn h0_matvec(
    eng: &Engine,
    s: &VectorField,
    grad_ref: &VectorField,
    beta_pc: Real,
) -> Result<VectorField> {
    let mut out = apply_regop(eng, s, beta_pc)?;
    let dot = grad_ref.dot(s)?;
    for d in 0..3 {
        let o = out.comp_mut(d).values_mut();
        for ((o, &gd), &w) in o
            .iter_mut()
            .zip(grad_ref.comp(d).values())
            .zip(dot.values())
        {
            *o += gd * w;
        }
    }
    Ok(out)
}

/// Work counters accumulated over preconditioner applications.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PcStats {
    pub applications: usize,
    pub inner_solves: usize,
    pub inner_iterations: usize,
    pub inner_matvecs: usize,
    pub inner_precond: usize,
    pub inner_cap_hits: usize,
    /// Grid points transformed inside the inner solves (the `H₀`/`(βA)⁻¹` work).
    pub inner_fft_points: u64,
    pub reference_refreshes: usize,
}

impl PcStats {
    pub fn average_inner(&self) -> Real {
        if self.inner_solves == 0 {
            0.0
        } else {
            self.inner_iterations as Real / self.inner_solves as Real
        }
    }
}

pub struct Preconditioner<'e> {
    eng: &'e Engine,
    kind: PcKind,
    beta_pc: Real,
    eps_h0: Real,
    inner_cap: usize,
    tol: Real,
    grad_ref: Option<VectorField>,
    stats: PcStats,
}

impl<'e> Preconditioner<'e> {
    /// `beta` is the level's regularization weight; the `H₀` variants floor it at
    /// [`BETA_PC_FLOOR`].
    pub fn new(eng: &'e Engine, kind: PcKind, beta: Real, eps_h0: Real, inner_cap: usize) -> Self {
        let beta_pc = if kind.uses_h0() { beta_pc(beta) } else { beta };
        Self {
            eng,
            kind,
            beta_pc,
            eps_h0,
            inner_cap,
            tol: eps_h0 * 0.5,
            grad_ref: None,
            stats: PcStats::default(),
        }
    }

    pub fn kind(&self) -> PcKind {
        self.kind
    }

    /// Regularization weight actually used inside the preconditioner.
    pub fn beta_pc(&self) -> Real {
        self.beta_pc
    }

    pub fn stats(&self) -> PcStats {
        self.stats
    }

    /// Inner relative tolerance `ε_H0 · ε_K`.
    pub fn inner_tolerance(&self) -> Real {
        self.tol
    }

    /// Fixes the outer forcing term for the next outer solve.
    pub fn set_forcing(&mut self, eps_k: Real) {
        self.tol = self.eps_h0 * eps_k;
    }

    /// Uses `∇m_ref` (FD gradient of the deformed template) in `H₀`; the two-level
    /// variant keeps its spectral restriction.
    pub fn set_reference(&mut self, m_ref: &ScalarField) -> Result<()> {
        if !self.kind.uses_h0() {
            return Ok(());
        }
        let g = self.eng.gradient(m_ref)?;
        self.set_reference_gradient(g)
    }

    pub fn set_reference_gradient(&mut self, g: VectorField) -> Result<()> {
        self.stats.reference_refreshes += 1;
        self.grad_ref = Some(match self.kind {
            PcKind::TwoLevelInvH0 => {
                let r = |c: &ScalarField| -> Result<ScalarField> {
                    let s = self.eng.fft_forward(c)?;
                    self.eng.fft_inverse(&restrict_spectrum(&s)?)
                };
                VectorField::from_components([r(g.comp(0))?, r(g.comp(1))?, r(g.comp(2))?])?
            }
            _ => g,
        });
        Ok(())
    }

    pub fn reference_gradient(&self) -> Option<&VectorField> {
        self.grad_ref.as_ref()
    }

    pub fn apply(&mut self, r: &VectorField) -> Result<VectorField> {
        self.stats.applications += 1;
        match self.kind {
            PcKind::InvA => inv_a(self.eng, r, self.beta_pc),
            PcKind::InvH0 => self.apply_h0(r),
            PcKind::TwoLevelInvH0 => self.apply_two_level(r),
        }
    }

    fn reference(&self) -> Result<&VectorField> {
        self.grad_ref.as_ref().ok_or_else(|| {
            Error::Parameter("H0 preconditioner used before setting a reference image".into())
        })
    }

    fn inner_solve(&mut self, rhs: &VectorField, x0: VectorField) -> Result<VectorField> {
        let eng = self.eng;
        let beta = self.beta_pc;
        let before = eng.counters().fft_points;
        let grad = self.reference()?.clone();
        let out = pcg(
            |s| h0_matvec(eng, s, &grad, beta),
            rhs,
            |q| inv_a(eng, q, beta),
            Some(x0),
            self.tol,
            self.inner_cap,
        )?;
        self.stats.inner_fft_points += eng.counters().fft_points - before;
        self.stats.inner_solves += 1;
        self.stats.inner_iterations += out.iterations;
        self.stats.inner_matvecs += out.matvecs;
        self.stats.inner_precond += out.precond_applications;
        if !out.converged {
            self.stats.inner_cap_hits += 1;
        }
        Ok(out.x)
    }

    fn apply_h0(&mut self, r: &VectorField) -> Result<VectorField> {
        let s_f = inv_a(self.eng, r, self.beta_pc)?;
        self.inner_solve(r, s_f)
    }

    fn apply_two_level(&mut self, r: &VectorField) -> Result<VectorField> {
        let eng = self.eng;
        let beta = self.beta_pc;
        let fine = *r.grid();
        let mut r_hat: Vec<SpectralField> = Vec::with_capacity(3);
        for c in r.comps() {
            r_hat.push(eng.fft_forward(c)?);
        }
        let s_hat: Vec<SpectralField> = r_hat
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.apply_symbol(|k| 1.0 / (beta * regop_symbol(k)));
                s
            })
            .collect();
        let coarse =
            |s: &SpectralField| -> Result<ScalarField> { eng.fft_inverse(&restrict_spectrum(s)?) };
        let rhs = VectorField::from_components([
            coarse(&r_hat[0])?,
            coarse(&r_hat[1])?,
            coarse(&r_hat[2])?,
        ])?;
        let x0 = VectorField::from_components([
            coarse(&s_hat[0])?,
            coarse(&s_hat[1])?,
            coarse(&s_hat[2])?,
        ])?;
        let s_c = self.inner_solve(&rhs, x0)?;
        let mut out = Vec::with_capacity(3);
        for (c, mut sf) in s_c.comps().iter().zip(s_hat) {
            let low = prolong_spectrum(&eng.fft_forward(c)?, fine)?;
            high_pass_spectrum(&mut sf)?;
            for (a, b) in sf.coeffs_mut().iter_mut().zip(low.coeffs()) {
                *a += b;
            }
            out.push(eng.fft_inverse(&sf)?);
        }
        let [a, b, c]: [ScalarField; 3] = out.try_into().expect("three components");
        VectorField::from_components([a, b, c])
    }
}
