//! Kernel dispatch. Every FFT, FD and interpolation call in the solver goes
//! through an [`Engine`], which forwards to a [`Backend`] (serial or slab-parallel)
//! and counts calls so that reports are identical across backends.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::field::{ScalarField, VectorField};
use crate::interp::{self, InterpPlan};
use crate::parallel::CommStats;
use crate::spectral::{PlanCache, SpectralField};
use crate::{fd, Result};

/// Implementation of the three kernel families.
pub trait Backend: Send + Sync {
    fn name(&self) -> String;
    fn workers(&self) -> usize;
    fn fft_forward(&self, f: &ScalarField) -> Result<SpectralField>;
    fn fft_inverse(&self, s: &SpectralField) -> Result<ScalarField>;
    fn gradient(&self, f: &ScalarField) -> Result<VectorField>;
    fn divergence(&self, v: &VectorField) -> Result<ScalarField>;
    fn interpolate(&self, f: &ScalarField, plan: &InterpPlan) -> Result<Vec<crate::Real>>;
    fn interpolate_transpose(
        &self,
        values: &[crate::Real],
        plan: &InterpPlan,
    ) -> Result<ScalarField>;
    fn comm_stats(&self) -> Option<CommStats> {
        None
    }
    fn reset_comm_stats(&self) {}
}

/// Single-threaded reference backend.
#[derive(Default)]
pub struct SerialBackend {
    plans: PlanCache,
}

impl Backend for SerialBackend {
    fn name(&self) -> String {
        "serial".into()
    }

    fn workers(&self) -> usize {
        1
    }

    fn fft_forward(&self, f: &ScalarField) -> Result<SpectralField> {
        Ok(self.plans.get(f.grid().dims()).forward(f))
    }

    fn fft_inverse(&self, s: &SpectralField) -> Result<ScalarField> {
        Ok(self.plans.get(s.grid().dims()).inverse(s))
    }

    fn gradient(&self, f: &ScalarField) -> Result<VectorField> {
        fd::gradient(f)
    }

    fn divergence(&self, v: &VectorField) -> Result<ScalarField> {
        fd::divergence(v)
    }

    fn interpolate(&self, f: &ScalarField, plan: &InterpPlan) -> Result<Vec<crate::Real>> {
        interp::interpolate(f, plan)
    }

    fn interpolate_transpose(
        &self,
        values: &[crate::Real],
        plan: &InterpPlan,
    ) -> Result<ScalarField> {
        interp::interpolate_transpose(values, plan)
    }
}

/// Snapshot of the kernel-call counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCounters {
    pub fft_forward: u64,
    pub fft_inverse: u64,
    /// Sum of grid sizes over all transforms (coarse-grid transforms count `N/8`).
    pub fft_points: u64,
    pub fd_gradient: u64,
    pub fd_divergence: u64,
    /// Scalar interpolation calls (each evaluates one field at a full point set).
    pub interp: u64,
    pub interp_points: u64,
    pub interp_transpose: u64,
    pub characteristics: u64,
    pub state_solves: u64,
    pub adjoint_solves: u64,
    pub inc_state_solves: u64,
    pub inc_adjoint_solves: u64,
}

impl KernelCounters {
    pub fn fft_total(&self) -> u64 {
        self.fft_forward + self.fft_inverse
    }

    pub fn pde_solves(&self) -> u64 {
        self.state_solves + self.adjoint_solves + self.inc_state_solves + self.inc_adjoint_solves
    }

    /// Componentwise `self − earlier`.
    pub fn since(&self, earlier: &KernelCounters) -> KernelCounters {
        KernelCounters {
            fft_forward: self.fft_forward - earlier.fft_forward,
            fft_inverse: self.fft_inverse - earlier.fft_inverse,
            fft_points: self.fft_points - earlier.fft_points,
            fd_gradient: self.fd_gradient - earlier.fd_gradient,
            fd_divergence: self.fd_divergence - earlier.fd_divergence,
            interp: self.interp - earlier.interp,
            interp_points: self.interp_points - earlier.interp_points,
            interp_transpose: self.interp_transpose - earlier.interp_transpose,
            characteristics: self.characteristics - earlier.characteristics,
            state_solves: self.state_solves - earlier.state_solves,
            adjoint_solves: self.adjoint_solves - earlier.adjoint_solves,
            inc_state_solves: self.inc_state_solves - earlier.inc_state_solves,
            inc_adjoint_solves: self.inc_adjoint_solves - earlier.inc_adjoint_solves,
        }
    }
}

/// Transport solves counted by the engine on behalf of the transport module.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solve {
    State,
    Adjoint,
    IncState,
    IncAdjoint,
    Characteristics,
}

#[derive(Default)]
struct Counters {
    fft_forward: AtomicU64,
    fft_inverse: AtomicU64,
    fft_points: AtomicU64,
    fd_gradient: AtomicU64,
    fd_divergence: AtomicU64,
    interp: AtomicU64,
    interp_points: AtomicU64,
    interp_transpose: AtomicU64,
    characteristics: AtomicU64,
    state_solves: AtomicU64,
    adjoint_solves: AtomicU64,
    inc_state_solves: AtomicU64,
    inc_adjoint_solves: AtomicU64,
}

fn bump(c: &AtomicU64, by: u64) {
    c.fetch_add(by, Ordering::Relaxed);
}

pub struct Engine {
    backend: Box<dyn Backend>,
    counters: Counters,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("backend", &self.backend.name())
            .field("counters", &self.counters())
            .finish()
    }
}

impl Engine {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Self {
            backend,
            counters: Counters::default(),
        }
    }

    pub fn serial() -> Self {
        Self::new(Box::<SerialBackend>::default())
    }

    pub fn backend_name(&self) -> String {
        self.backend.name()
    }

    pub fn workers(&self) -> usize {
        self.backend.workers()
    }

    pub fn fft_forward(&self, f: &ScalarField) -> Result<SpectralField> {
        bump(&self.counters.fft_forward, 1);
        bump(&self.counters.fft_points, f.grid().len() as u64);
        self.backend.fft_forward(f)
    }

    pub fn fft_inverse(&self, s: &SpectralField) -> Result<ScalarField> {
        bump(&self.counters.fft_inverse, 1);
        bump(&self.counters.fft_points, s.grid().len() as u64);
        self.backend.fft_inverse(s)
    }

    pub fn gradient(&self, f: &ScalarField) -> Result<VectorField> {
        bump(&self.counters.fd_gradient, 1);
        self.backend.gradient(f)
    }

    pub fn divergence(&self, v: &VectorField) -> Result<ScalarField> {
        bump(&self.counters.fd_divergence, 1);
        self.backend.divergence(v)
    }

    pub fn interpolate(&self, f: &ScalarField, plan: &InterpPlan) -> Result<Vec<crate::Real>> {
        bump(&self.counters.interp, 1);
        bump(&self.counters.interp_points, plan.len() as u64);
        self.backend.interpolate(f, plan)
    }

    /// Interpolates and wraps the result as a field on the plan's grid
    /// (the plan must have one point per node).
    pub fn interpolate_field(&self, f: &ScalarField, plan: &InterpPlan) -> Result<ScalarField> {
        let vals = self.interpolate(f, plan)?;
        ScalarField::from_vec(*f.grid(), vals)
    }

    pub fn interpolate_transpose(
        &self,
        values: &[crate::Real],
        plan: &InterpPlan,
    ) -> Result<ScalarField> {
        bump(&self.counters.interp_transpose, 1);
        self.backend.interpolate_transpose(values, plan)
    }

    pub fn count_solve(&self, kind: Solve) {
        let c = match kind {
            Solve::State => &self.counters.state_solves,
            Solve::Adjoint => &self.counters.adjoint_solves,
            Solve::IncState => &self.counters.inc_state_solves,
            Solve::IncAdjoint => &self.counters.inc_adjoint_solves,
            Solve::Characteristics => &self.counters.characteristics,
        };
        bump(c, 1);
    }

    pub fn counters(&self) -> KernelCounters {
        let c = &self.counters;
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        KernelCounters {
            fft_forward: g(&c.fft_forward),
            fft_inverse: g(&c.fft_inverse),
            fft_points: g(&c.fft_points),
            fd_gradient: g(&c.fd_gradient),
            fd_divergence: g(&c.fd_divergence),
            interp: g(&c.interp),
            interp_points: g(&c.interp_points),
            interp_transpose: g(&c.interp_transpose),
            characteristics: g(&c.characteristics),
            state_solves: g(&c.state_solves),
            adjoint_solves: g(&c.adjoint_solves),
            inc_state_solves: g(&c.inc_state_solves),
            inc_adjoint_solves: g(&c.inc_adjoint_solves),
        }
    }

    pub fn reset_counters(&self) {
        let c = &self.counters;
        for a in [
            &c.fft_forward,
            &c.fft_inverse,
            &c.fft_points,
            &c.fd_gradient,
            &c.fd_divergence,
            &c.interp,
            &c.interp_points,
            &c.interp_transpose,
            &c.characteristics,
            &c.state_solves,
            &c.adjoint_solves,
            &c.inc_state_solves,
            &c.inc_adjoint_solves,
        ] {
            a.store(0, Ordering::Relaxed);
        }
        self.backend.reset_comm_stats();
    }

    pub fn comm_stats(&self) -> Option<CommStats> {
        self.backend.comm_stats()
    }
}
