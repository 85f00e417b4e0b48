//! Matrix-free preconditioned conjugate gradients over any [`Field`].

use crate::field::{inner, norm2, Field};
use crate::{Error, Real, Result};

#[derive(Debug, Clone)]
pub struct PcgOutcome<F> {
    pub x: F,
    pub iterations: usize,
    pub matvecs: usize,
    pub precond_applications: usize,
    pub converged: bool,
    /// `‖r_k‖ / ‖b‖` for `k = 0..=iterations`.
    pub residuals: Vec<Real>,
    /// `sqrt(r_k · M r_k)` for every preconditioned residual formed.
    pub precond_residuals: Vec<Real>,
}

/// Solves `A x = b` with left preconditioner `M ≈ A⁻¹`.
///
/// Stops when `‖r_k‖ ≤ tol·‖b‖` or after `max_it` iterations. With `tol = 0` it
/// runs exactly `max_it` iterations. Non-positive curvature `pᵀAp ≤ 0` aborts
/// with a numerical error.
pub fn pcg<F: Field>(
    mut matvec: impl FnMut(&F) -> Result<F>,
    b: &F,
    mut precond: impl FnMut(&F) -> Result<F>,
    x0: Option<F>,
    tol: Real,
    max_it: usize,
) -> Result<PcgOutcome<F>> {
    let bnorm = norm2(b);
    let mut matvecs = 0;
    let mut applications = 0;
    let (mut x, mut r) = match x0 {
        Some(x0) => {
            let ax = matvec(&x0)?;
            matvecs += 1;
            let mut r = b.clone();
            r.axpy_assign(-1.0, &ax)?;
            (x0, r)
        }
        None => (b.zeros_like(), b.clone()),
    };
    let mut out = PcgOutcome {
        x: b.zeros_like(),
        iterations: 0,
        matvecs,
        precond_applications: 0,
        converged: false,
        residuals: Vec::new(),
        precond_residuals: Vec::new(),
    };
    if bnorm == 0.0 {
        out.converged = true;
        out.residuals.push(0.0);
        return Ok(out);
    }
    let mut rnorm = norm2(&r);
    out.residuals.push(rnorm / bnorm);
    if rnorm <= tol * bnorm {
        out.x = x;
        out.converged = true;
        return Ok(out);
    }
    let mut z = precond(&r)?;
    applications += 1;
    let mut rz = inner(&r, &z)?;
    out.precond_residuals.push(rz.max(0.0).sqrt());
    let mut p = z.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_it {
        let q = matvec(&p)?;
        matvecs += 1;
        iterations += 1;
        let pq = inner(&p, &q)?;
        if pq <= 0.0 || !pq.is_finite() {
            return Err(Error::Numerical(format!(
                "PCG detected non-positive curvature pᵀAp = {pq:e} at iteration {iterations}"
            )));
        }
        let alpha = rz / pq;
        x.axpy_assign(alpha, &p)?;
        r.axpy_assign(-alpha, &q)?;
        rnorm = norm2(&r);
        out.residuals.push(rnorm / bnorm);
        if rnorm <= tol * bnorm {
            converged = true;
            break;
        }
        if iterations == max_it {
            break;
        }
        z = precond(&r)?;
        applications += 1;
        let rz_new = inner(&r, &z)?;
        out.precond_residuals.push(rz_new.max(0.0).sqrt());
        let beta = rz_new / rz;
        rz = rz_new;
        p.xpby_assign(&z, beta)?;
    }
    out.x = x;
    out.iterations = iterations;
    out.matvecs = matvecs;
    out.precond_applications = applications;
    out.converged = converged;
    Ok(out)
}
