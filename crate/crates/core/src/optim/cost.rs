//! Kernel-count expansion of the total-cost model and the per-worker memory model.
//!
//! The aggregate model is
//! `c_total ≈ n_GN (n_CG (2 c_PDE + c_H + c_PC) + 2 c_PDE)`; [`estimate_cost`]
//! expands every term into the FFT, FD, interpolation and transport-solve calls
//! this implementation issues, driven by the operation tally in a report.

use crate::engine::KernelCounters;
use crate::transport::AdjointScheme;
use crate::{Grid3, Real};

use super::config::RegistrationConfig;
use super::report::OpTally;

/// Settings that change per-operation kernel counts.
#[derive(Debug, Clone, Copy)]
pub struct CostSettings {
    pub grid: Grid3,
    pub leray: bool,
    pub gamma_div: bool,
    pub cache_gradient: bool,
    pub advective_adjoint: bool,
    pub advective_inc_adjoint: bool,
}

impl CostSettings {
    pub fn from_config(grid: Grid3, cfg: &RegistrationConfig) -> Self {
        Self {
            grid: grid.with_nt(cfg.nt).unwrap_or(grid),
            leray: cfg.leray,
            gamma_div: cfg.gamma_div > 0.0,
            cache_gradient: cfg.cache_gradient,
            advective_adjoint: cfg.adjoint == AdjointScheme::Advective,
            advective_inc_adjoint: cfg.inc_adjoint == AdjointScheme::Advective,
        }
    }
}

/// Kernel counts for one batch of forward+inverse transform pairs.
#[derive(Default)]
struct Acc {
    c: KernelCounters,
}

impl Acc {
    fn fft(&mut self, fwd: u64, inv: u64, points: u64) {
        self.c.fft_forward += fwd;
        self.c.fft_inverse += inv;
        self.c.fft_points += (fwd + inv) * points;
    }
}

/// Predicted kernel counters for the operations in `t`.
pub fn estimate_cost(t: &OpTally, s: &CostSettings) -> KernelCounters {
    let g = s.grid;
    let nt = g.nt() as u64;
    let n = g.len() as u64;
    let nc = n / 8;
    let mut a = Acc::default();
    let leray = s.leray as u64;

    // Objective: characteristics (3 IP, +3 IP and a divergence when either adjoint
    // is advective), nt IP for the state, 3 forward FFTs for the seminorm.
    let obj_moving = t.objective_evals - t.objective_zero;
    a.c.characteristics += obj_moving;
    a.c.interp += obj_moving * (3 + nt);
    if s.advective_adjoint || s.advective_inc_adjoint {
        a.c.interp += obj_moving * 3;
        a.c.fd_divergence += obj_moving;
    }
    a.c.state_solves += t.objective_evals;
    a.fft(3 * t.objective_evals, 0, n);
    if s.cache_gradient {
        a.c.fd_gradient += t.objective_evals * (nt + 1);
    }
    if s.gamma_div {
        a.c.fd_divergence += t.objective_evals;
    }

    // Gradient: adjoint solve, body force, regularization (+ projection).
    let grad_moving = t.gradient_evals - t.gradient_zero;
    a.c.adjoint_solves += t.gradient_evals;
    if s.advective_adjoint {
        a.c.interp += grad_moving * 2 * nt;
    } else {
        a.c.interp_transpose += grad_moving * nt;
    }
    let body_fd = if s.cache_gradient { 0 } else { nt + 1 };
    a.c.fd_gradient += t.gradient_evals * body_fd;
    a.fft(3 * t.gradient_evals, 3 * t.gradient_evals, n);
    a.fft(
        3 * leray * t.gradient_evals,
        3 * leray * t.gradient_evals,
        n,
    );
    if s.gamma_div {
        a.c.fd_gradient += t.gradient_evals;
        a.c.fd_divergence += t.gradient_evals;
    }

    // Hessian matvec: incremental state + incremental adjoint + body force + regularization.
    let mv_moving = t.matvecs - t.matvec_zero;
    a.c.inc_state_solves += t.matvecs;
    a.c.inc_adjoint_solves += t.matvecs;
    a.c.interp += mv_moving * nt;
    if s.advective_inc_adjoint {
        a.c.interp += mv_moving * 2 * nt;
    } else {
        a.c.interp_transpose += mv_moving * nt;
    }
    a.c.fd_gradient += t.matvecs * 2 * body_fd;
    a.fft(3 * t.matvecs, 3 * t.matvecs, n);
    a.fft(6 * leray * t.matvecs, 6 * leray * t.matvecs, n);
    if s.gamma_div {
        a.c.fd_gradient += t.matvecs;
        a.c.fd_divergence += t.matvecs;
    }

    a.fft(3 * t.initial_projections, 3 * t.initial_projections, n);

    // Preconditioners.
    a.fft(3 * t.inva_applications, 3 * t.inva_applications, n);
    // InvH0: initial (βA)⁻¹ r, then inner H₀ matvecs and (βA)⁻¹ applications.
    a.fft(3 * t.h0_applications, 3 * t.h0_applications, n);
    let fine_inner = t.fine_inner_matvecs + t.fine_inner_precond;
    a.fft(3 * fine_inner, 3 * fine_inner, n);
    // 2LInvH0: 3 fine forward, 6 coarse inverse (rhs and initial guess),
    // inner work on the coarse grid, 3 coarse forward, 3 fine inverse.
    let tl = t.two_level_applications;
    a.fft(3 * tl, 3 * tl, n);
    a.fft(3 * tl, 6 * tl, nc);
    let coarse_inner = t.coarse_inner_matvecs + t.coarse_inner_precond;
    a.fft(3 * coarse_inner, 3 * coarse_inner, nc);
    // Reference refresh: one FD gradient, plus spectral restriction for two levels.
    a.c.fd_gradient += t.h0_refreshes + t.two_level_refreshes;
    a.fft(3 * t.two_level_refreshes, 0, n);
    a.fft(0, 3 * t.two_level_refreshes, nc);

    a.c.interp_points = a.c.interp * n;
    a.c
}

/// Idealized aggregate form: transport solves for `n_gn` iterations with `n_cg`
/// PCG steps each (two incremental solves per matvec, objective + adjoint per iteration).
pub fn eq8_pde_solves(n_gn: u64, n_cg: u64) -> u64 {
    n_gn * (2 * n_cg + 2)
}

/// Per-worker memory in bytes: `(74 + nt) N μ₀ / p + 30 d N2 N3 μ₀`
/// (runtime-API overhead not included).
pub fn estimate_memory(grid: &Grid3, nt: usize, p: usize, word_bytes: usize, degree: usize) -> f64 {
    let n = grid.len() as f64;
    let mu = word_bytes as f64;
    let fields = (74.0 + nt as f64) * n * mu / p as f64;
    let ip = 30.0 * degree as f64 * (grid.n(1) * grid.n(2)) as f64 * mu;
    fields + ip
}

/// Relative deviation `|a − b| / b`.
pub fn relative_deviation(a: Real, b: Real) -> Real {
    (a - b).abs() / b.abs()
}
