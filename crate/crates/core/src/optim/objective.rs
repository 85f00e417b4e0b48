//! Reduced-space objective, gradient and Gauss-Newton Hessian matvec.

use crate::engine::Engine;
use crate::field::{inner, Field, ScalarField, VectorField};
use crate::spectral::{apply_laplacian, leray_project, reg_seminorm};
use crate::transport::{Characteristics, StateSolution, Transport, TransportConfig};
use crate::{Error, Real, Result};

/// Registration problem at a fixed regularization weight.
pub struct Problem<'a> {
    pub eng: &'a Engine,
    pub m0: &'a ScalarField,
    pub m1: &'a ScalarField,
    pub beta: Real,
    pub gamma_div: Real,
    pub leray: bool,
    pub transport: TransportConfig,
}

/// Everything computed at one velocity that later gradient/Hessian calls reuse.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub v: VectorField,
    pub ch: Characteristics,
    pub state: StateSolution,
    /// Full objective value.
    pub value: Real,
    /// `½‖m(·,1) − m1‖²`.
    pub mismatch: Real,
    /// `reg(v) = Σ_i ⟨∇v_i, ∇v_i⟩`.
    pub reg: Real,
}

impl<'a> Problem<'a> {
    pub fn new(
        eng: &'a Engine,
        m0: &'a ScalarField,
        m1: &'a ScalarField,
        beta: Real,
        transport: TransportConfig,
    ) -> Result<Self> {
        if !m0.grid().same_space(m1.grid()) || m0.grid().nt() != m1.grid().nt() {
            return Err(Error::Dimension(format!(
                "template on {} and reference on {}",
                m0.grid(),
                m1.grid()
            )));
        }
        if !(beta > 0.0) {
            return Err(Error::Parameter(format!(
                "beta must be positive, got {beta}"
            )));
        }
        Ok(Self {
            eng,
            m0,
            m1,
            beta,
            gamma_div: 0.0,
            leray: false,
            transport,
        })
    }

    pub fn with_beta(&self, beta: Real) -> Problem<'a> {
        Problem {
            eng: self.eng,
            m0: self.m0,
            m1: self.m1,
            beta,
            gamma_div: self.gamma_div,
            leray: self.leray,
            transport: self.transport,
        }
    }

    pub fn transport(&self) -> Transport<'a> {
        Transport::new(self.eng, self.transport)
    }

    fn check_velocity(&self, v: &VectorField) -> Result<()> {
        if !v.grid().same_space(self.m0.grid()) || v.grid().nt() != self.m0.grid().nt() {
            return Err(Error::Dimension(format!(
                "velocity on {} for images on {}",
                v.grid(),
                self.m0.grid()
            )));
        }
        Ok(())
    }

    /// `½‖m(·,1) − m1‖² + β/2 reg(v) + γ/2 ‖∇·v‖²`.
    pub fn evaluate(&self, v: &VectorField) -> Result<Evaluation> {
        self.check_velocity(v)?;
        let tr = self.transport();
        let ch = tr.characteristics(v)?;
        let state = tr.solve_state(&ch, self.m0)?;
        let mut diff = state.final_state().clone();
        for (d, r) in diff.values_mut().iter_mut().zip(self.m1.values()) {
            *d -= r;
        }
        let mismatch = 0.5 * inner(&diff, &diff)?;
        let reg = reg_seminorm(self.eng, v)?;
        let mut value = mismatch + 0.5 * self.beta * reg;
        if self.gamma_div > 0.0 {
            let div = self.eng.divergence(v)?;
            value += 0.5 * self.gamma_div * inner(&div, &div)?;
        }
        if !value.is_finite() {
            return Err(Error::Numerical("objective is not finite".into()));
        }
        Ok(Evaluation {
            v: v.clone(),
            ch,
            state,
            value,
            mismatch,
            reg,
        })
    }

    /// Regularization part of gradient and Hessian: `β(−Δ)u − γ∇(∇·u)`.
    fn regularization(&self, u: &VectorField) -> Result<VectorField> {
        let mut out = apply_laplacian(self.eng, u, self.beta)?;
        if self.gamma_div > 0.0 {
            let gd = self.eng.gradient(&self.eng.divergence(u)?)?;
            out.axpy_assign(-self.gamma_div, &gd)?;
        }
        Ok(out)
    }

    fn project(&self, u: VectorField) -> Result<VectorField> {
        if self.leray {
            leray_project(self.eng, &u)
        } else {
            Ok(u)
        }
    }

    /// Reduced gradient `β(−Δ)v + Σ_n w_n λ^n ∇m^n` with `λ(·,1) = m1 − m(·,1)`.
    pub fn gradient(&self, ev: &Evaluation) -> Result<VectorField> {
        let tr = self.transport();
        let mut fin = self.m1.clone();
        for (f, m) in fin
            .values_mut()
            .iter_mut()
            .zip(ev.state.final_state().values())
        {
            *f -= m;
        }
        let lambda = tr.solve_adjoint(&ev.ch, &fin)?;
        let body = tr.body_force(&lambda, &ev.state)?;
        let mut g = self.regularization(&ev.v)?;
        g.axpy_assign(1.0, &body)?;
        self.project(g)
    }

    /// Gauss-Newton matvec `β(−Δ)ṽ + Σ_n w_n λ̃^n ∇m^n` with `λ̃(·,1) = −m̃(·,1)`.
    pub fn hessian_matvec(&self, ev: &Evaluation, vt: &VectorField) -> Result<VectorField> {
        let vt = self.project(vt.clone())?;
        let tr = self.transport();
        let mt = tr.solve_inc_state(&ev.ch, &vt, &ev.state)?;
        let mut fin = mt.last().clone();
        fin.values_mut().iter_mut().for_each(|x| *x = -*x);
        let lt = tr.solve_inc_adjoint(&ev.ch, &fin)?;
        let body = tr.body_force(&lt, &ev.state)?;
        let mut h = self.regularization(&vt)?;
        h.axpy_assign(1.0, &body)?;
        self.project(h)
    }

    /// Characteristics of an evaluation (exposed for diagnostics).
    pub fn characteristics<'e>(&self, ev: &'e Evaluation) -> &'e Characteristics {
        &ev.ch
    }
}
