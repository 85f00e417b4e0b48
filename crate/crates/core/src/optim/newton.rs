//! Armijo-globalized inexact Gauss-Newton-Krylov iteration and β-continuation.

use std::time::Instant;

use crate::engine::Engine;
use crate::field::{axpy, inner, norm2, Field, ScalarField, VectorField};
use crate::precond::{PcKind, Preconditioner};
use crate::spectral::leray_project;
use crate::{Error, Real, Result};

use super::config::RegistrationConfig;
use super::cost::estimate_memory;
use super::objective::{Evaluation, Problem};
use super::pcg::pcg;
use super::report::{GnStep, LevelReport, OpTally, PhaseTimes, SolverReport};

pub const ARMIJO_C: Real = 1e-4;
pub const BACKTRACK: Real = 0.5;
pub const MAX_LINE_SEARCH: usize = 10;
/// Upper bound on the outer forcing term.
pub const MAX_FORCING: Real = 0.5;

/// Outer PCG forcing term `min(√‖g‖_rel, 0.5)`.
pub fn forcing_term(grad_rel: Real) -> Real {
    grad_rel.sqrt().min(MAX_FORCING)
}

struct Timed<'p, 'a> {
    problem: &'p Problem<'a>,
    tally: OpTally,
    times: PhaseTimes,
}

impl Timed<'_, '_> {
    fn evaluate(&mut self, v: &VectorField) -> Result<Evaluation> {
        let t = Instant::now();
        let ev = self.problem.evaluate(v);
        self.times.objective += t.elapsed().as_secs_f64();
        self.tally.objective_evals += 1;
        if let Ok(ev) = &ev {
            if ev.ch.is_zero() {
                self.tally.objective_zero += 1;
            }
        }
        ev
    }

    fn gradient(&mut self, ev: &Evaluation) -> Result<VectorField> {
        let t = Instant::now();
        let g = self.problem.gradient(ev)?;
        self.times.gradient += t.elapsed().as_secs_f64();
        self.tally.gradient_evals += 1;
        if ev.ch.is_zero() {
            self.tally.gradient_zero += 1;
        }
        Ok(g)
    }
}

/// Solves one β level from `v0`; returns the final velocity and the level report.
pub fn gauss_newton_solve(
    problem: &Problem,
    v0: VectorField,
    cfg: &RegistrationConfig,
    kind: PcKind,
) -> Result<(VectorField, LevelReport)> {
    let eng = problem.eng;
    let counters_start = eng.counters();
    let mut timed = Timed {
        problem,
        tally: OpTally::default(),
        times: PhaseTimes::default(),
    };
    let v0 = if problem.leray {
        timed.tally.initial_projections += 1;
        leray_project(eng, &v0)?
    } else {
        v0
    };
    let mut ev = timed.evaluate(&v0)?;
    let mut g = timed.gradient(&ev)?;
    let g0 = norm2(&g);
    let rel_of = |g: &VectorField| if g0 == 0.0 { 0.0 } else { norm2(g) / g0 };
    let mut rel = rel_of(&g);
    let mismatch_initial = ev.mismatch;

    let mut pc = Preconditioner::new(eng, kind, problem.beta, cfg.eps_h0, cfg.inner_max_iter);
    let mut steps = Vec::new();
    let mut converged = false;
    let mut ls_failed = false;
    let mut max_reached = false;
    let mut k = 0;
    loop {
        match cfg.fixed_iterations {
            Some(f) => {
                if k == f.gauss_newton {
                    break;
                }
            }
            None => {
                if rel <= cfg.eps_n {
                    converged = true;
                    break;
                }
                if k == cfg.max_gn_iter {
                    max_reached = true;
                    break;
                }
            }
        }
        if g0 == 0.0 {
            // Zero gradient at the initial guess: nothing to do even in fixed mode.
            converged = true;
            break;
        }
        if kind.uses_h0() {
            pc.set_reference(ev.state.final_state())?;
            match kind {
                PcKind::TwoLevelInvH0 => timed.tally.two_level_refreshes += 1,
                _ => timed.tally.h0_refreshes += 1,
            }
        }
        let eps_k = forcing_term(rel);
        pc.set_forcing(eps_k);
        let (tol, cap) = match cfg.fixed_iterations {
            Some(f) => (0.0, f.pcg),
            None => (eps_k, cfg.max_pcg_iter),
        };
        let mut rhs = g.clone();
        rhs.scale(-1.0);

        let stats_before = pc.stats();
        let zero_v = ev.ch.is_zero();
        let mut h_time = 0.0;
        let mut p_time = 0.0;
        let out = {
            let ev_ref = &ev;
            let pc_ref = &mut pc;
            pcg(
                |x| {
                    let t = Instant::now();
                    let r = problem.hessian_matvec(ev_ref, x);
                    h_time += t.elapsed().as_secs_f64();
                    r
                },
                &rhs,
                |r| {
                    let t = Instant::now();
                    let s = pc_ref.apply(r);
                    p_time += t.elapsed().as_secs_f64();
                    s
                },
                None,
                tol,
                cap,
            )?
        };
        timed.times.hessian += h_time;
        timed.times.preconditioner += p_time;
        timed.tally.matvecs += out.matvecs as u64;
        if zero_v {
            timed.tally.matvec_zero += out.matvecs as u64;
        }
        let stats = pc.stats();
        let applications = stats.applications - stats_before.applications;
        let inner_matvecs = (stats.inner_matvecs - stats_before.inner_matvecs) as u64;
        let inner_precond = (stats.inner_precond - stats_before.inner_precond) as u64;
        match kind {
            PcKind::InvA => timed.tally.inva_applications += applications as u64,
            PcKind::InvH0 => {
                timed.tally.h0_applications += applications as u64;
                timed.tally.fine_inner_matvecs += inner_matvecs;
                timed.tally.fine_inner_precond += inner_precond;
            }
            PcKind::TwoLevelInvH0 => {
                timed.tally.two_level_applications += applications as u64;
                timed.tally.coarse_inner_matvecs += inner_matvecs;
                timed.tally.coarse_inner_precond += inner_precond;
            }
        }

        let dv = out.x;
        let slope = inner(&g, &dv)?;
        let mut step = GnStep {
            iteration: k,
            objective: ev.value,
            mismatch: ev.mismatch,
            grad_rel: rel,
            pcg_tolerance: tol,
            eps_k,
            pcg_iterations: out.iterations,
            pcg_converged: out.converged,
            residuals: out.residuals,
            precond_residuals: out.precond_residuals,
            pc_applications: applications,
            inner_iterations: stats.inner_iterations - stats_before.inner_iterations,
            step_length: 0.0,
            line_search_trials: 0,
        };
        if !(slope < 0.0) {
            steps.push(step);
            ls_failed = true;
            if cfg.fixed_iterations.is_none() {
                break;
            }
            k += 1;
            continue;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for trial in 1..=MAX_LINE_SEARCH {
            step.line_search_trials = trial;
            let vt = axpy(alpha, &dv, &ev.v)?;
            match timed.evaluate(&vt) {
                Ok(ev_t) if ev_t.value <= ev.value + ARMIJO_C * alpha * slope => {
                    accepted = Some(ev_t);
                    break;
                }
                Ok(_) | Err(Error::Numerical(_)) => alpha *= BACKTRACK,
                Err(e) => return Err(e),
            }
        }
        match accepted {
            Some(ev_t) => {
                step.step_length = alpha;
                steps.push(step);
                ev = ev_t;
                g = timed.gradient(&ev)?;
                rel = rel_of(&g);
                k += 1;
            }
            None => {
                steps.push(step);
                ls_failed = true;
                // Fixed-iteration runs keep the iterate and still spend the full budget.
                if cfg.fixed_iterations.is_none() {
                    break;
                }
                k += 1;
            }
        }
    }

    let report = LevelReport {
        beta: problem.beta,
        beta_pc: pc.beta_pc(),
        preconditioner: kind,
        gn_iterations: k,
        converged,
        line_search_failed: ls_failed,
        max_iterations_reached: max_reached,
        mismatch_initial,
        mismatch_final: ev.mismatch,
        objective_final: ev.value,
        grad_rel_final: rel,
        steps,
        pc_stats: pc.stats(),
        tally: timed.tally,
        counters: eng.counters().since(&counters_start),
        times: timed.times,
    };
    Ok((ev.v, report))
}

/// Solves the continuation sequence from the config (a single level when
/// continuation is off), warm-starting every level from the previous one.
pub fn beta_continuation(
    eng: &Engine,
    m0: &ScalarField,
    m1: &ScalarField,
    cfg: &RegistrationConfig,
    v0: Option<VectorField>,
) -> Result<(VectorField, SolverReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let grid = m0.grid().with_nt(cfg.nt)?;
    let m0 = m0.clone().with_grid(grid)?;
    let m1 = m1.clone().with_grid(grid)?;
    let mut v = match v0 {
        Some(v) => VectorField::from_components(
            v.into_components()
                .map(|c| c.with_grid(grid).expect("velocity on the image grid")),
        )?,
        None => VectorField::zeros(grid),
    };
    if !v.grid().same_space(&grid) {
        return Err(Error::Dimension(
            "initial velocity on a different grid".into(),
        ));
    }
    let counters_start = eng.counters();
    let schedule = cfg.beta_schedule();
    let mut base = Problem::new(eng, &m0, &m1, schedule[0], cfg.transport()?)?;
    base.gamma_div = cfg.gamma_div;
    base.leray = cfg.leray;

    let mut levels = Vec::with_capacity(schedule.len());
    let mut flags = Vec::new();
    for &beta in &schedule {
        let problem = base.with_beta(beta);
        let kind = cfg.preconditioner_for(beta);
        let (v_next, level) = gauss_newton_solve(&problem, v, cfg, kind)?;
        v = v_next;
        if level.line_search_failed {
            flags.push(format!("line search failed at beta = {beta:e}"));
        }
        if level.pc_stats.inner_cap_hits > 0 {
            flags.push(format!(
                "inner H0 solve hit its iteration cap {} times at beta = {beta:e}",
                level.pc_stats.inner_cap_hits
            ));
        }
        levels.push(level);
    }

    let mut diff0 = m0.clone();
    for (d, r) in diff0.values_mut().iter_mut().zip(m1.values()) {
        *d -= r;
    }
    let mismatch_initial = 0.5 * inner(&diff0, &diff0)?;
    let last = levels.last().expect("at least one level");
    let mismatch_final = last.mismatch_final;
    let mut tally = OpTally::default();
    let mut times = PhaseTimes::default();
    for l in &levels {
        tally.add(&l.tally);
        times.add(&l.times);
    }
    let inner_iterations: usize = levels.iter().map(|l| l.pc_stats.inner_iterations).sum();
    let inner_solves: usize = levels.iter().map(|l| l.pc_stats.inner_solves).sum();
    let report = SolverReport {
        grid: grid.dims(),
        nt: grid.nt(),
        workers: eng.workers(),
        backend: eng.backend_name(),
        config: cfg.clone(),
        gn_iterations: levels.iter().map(|l| l.gn_iterations).sum(),
        pcg_iterations: levels.iter().map(|l| l.pcg_total()).sum(),
        inva_applications: tally.inva_applications,
        h0_applications: tally.h0_applications + tally.two_level_applications,
        inner_iterations,
        inner_average: if inner_solves == 0 {
            0.0
        } else {
            inner_iterations as Real / inner_solves as Real
        },
        mismatch_initial,
        mismatch_final,
        mism_rel: if mismatch_initial > 0.0 {
            (mismatch_final / mismatch_initial).sqrt()
        } else {
            0.0
        },
        grad_rel_final: last.grad_rel_final,
        converged: last.converged,
        flags,
        counters: eng.counters().since(&counters_start),
        tally,
        times,
        comm: eng.comm_stats(),
        memory_estimate_bytes: estimate_memory(
            &grid,
            grid.nt(),
            eng.workers(),
            std::mem::size_of::<Real>(),
            cfg.degree as usize,
        ),
        wall_seconds: start.elapsed().as_secs_f64(),
        levels,
    };
    Ok((v, report))
}
