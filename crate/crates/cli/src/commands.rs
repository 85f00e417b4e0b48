//! Subcommand implementations. Each writes its outputs under the manifest's
//! `out` directory and returns what it wrote for callers that want to inspect it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use diffreg::engine::KernelCounters;
use diffreg::field::Field;
use diffreg::interp::Degree;
use diffreg::optim::{
    beta_continuation, estimate_cost, estimate_memory, pcg, CostSettings, FixedIterations, Problem,
    SolverReport,
};
use diffreg::parallel::{CommStats, SlabBackend, SlabLayout};
use diffreg::precond::{PcKind, PcStats, Preconditioner};
use diffreg::synth::{syn_problem, SynProblem};
use diffreg::transport::{Transport, TransportConfig};
use diffreg::{Engine, Grid3, Real, ScalarField, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::report::{write_json, write_text, Csv};
use crate::volume::VolumeFile;

pub const M0_FILE: &str = "m0.vrg";
pub const M1_FILE: &str = "m1.vrg";
pub const V_TRUE_FILE: &str = "v_true.vrg";
pub const VELOCITY_FILE: &str = "velocity.vrg";
pub const DEFORMED_FILE: &str = "deformed.vrg";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const CONVERGENCE_SUMMARY_FILE: &str = "convergence_summary.csv";
pub const BENCHMARK_FILE: &str = "benchmark.csv";

/// Serial engine for `p = 1`, slab-parallel otherwise.
pub fn build_engine(m: &RunManifest) -> CliResult<Engine> {
    build_engine_with(m, m.p)
}

fn build_engine_with(m: &RunManifest, p: usize) -> CliResult<Engine> {
    if p <= 1 {
        return Ok(Engine::serial());
    }
    let backend = SlabBackend::new(p)?.with_strategy(m.exchange.strategy());
    Ok(Engine::new(Box::new(backend)))
}

fn out_path(m: &RunManifest, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        m.out.join(p)
    }
}

fn degree(order: u32) -> CliResult<Degree> {
    Degree::from_order(order).map_err(|e| CliError::Config(e.to_string()))
}

fn cubic_grid(n: usize, nt: usize) -> CliResult<Grid3> {
    Ok(Grid3::cubic(n, nt)?)
}

/// The synthetic pair from the `[synth]` settings, with seeded uniform noise of
/// amplitude `noise` added to the reference.
pub fn synth_problem(eng: &Engine, m: &RunManifest) -> CliResult<SynProblem> {
    let [a, b, c] = m.synth.grid;
    let grid = Grid3::new(a, b, c, m.synth.nt)?;
    let mut syn = syn_problem(eng, grid, degree(m.registration.degree)?)?;
    if m.synth.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
        let amp = m.synth.noise;
        for x in syn.m1.values_mut() {
            *x += rng.gen_range(-amp..=amp);
        }
    }
    Ok(syn)
}

/// Writes `m0`, `m1` and `v_true`.
pub fn synth(m: &RunManifest) -> CliResult<SynProblem> {
    let eng = build_engine(m)?;
    let syn = synth_problem(&eng, m)?;
    VolumeFile::from_scalar(&syn.m0, m.scalar).save(&m.out.join(M0_FILE))?;
    VolumeFile::from_scalar(&syn.m1, m.scalar).save(&m.out.join(M1_FILE))?;
    VolumeFile::from_vector(&syn.v_true, m.scalar).save(&m.out.join(V_TRUE_FILE))?;
    Ok(syn)
}

/// Maps both images onto `[0, 1]` with one shared affine transform.
pub fn normalize_jointly(m0: &mut ScalarField, m1: &mut ScalarField) {
    let (a0, b0) = m0.min_max();
    let (a1, b1) = m1.min_max();
    let lo = a0.min(a1);
    let span = b0.max(b1) - lo;
    if !(span > 0.0) {
        return;
    }
    for f in [m0, m1] {
        for x in f.values_mut() {
            *x = (*x - lo) / span;
        }
    }
}

fn load_scalar(path: &Path, nt: usize) -> CliResult<ScalarField> {
    let f = VolumeFile::load(path)?.to_scalar(nt)?;
    if !f.is_finite() {
        return Err(CliError::Config(format!(
            "{}: non-finite values",
            path.display()
        )));
    }
    Ok(f)
}

fn load_vector(path: &Path, nt: usize) -> CliResult<VectorField> {
    let v = VolumeFile::load(path)?.to_vector(nt)?;
    if !v.is_finite() {
        return Err(CliError::Config(format!(
            "{}: non-finite values",
            path.display()
        )));
    }
    Ok(v)
}

/// Template and reference for `register`: loaded from `[input]` or the synthetic pair.
pub fn registration_images(eng: &Engine, m: &RunManifest) -> CliResult<(ScalarField, ScalarField)> {
    let nt = m.registration.nt;
    match (&m.input.template, &m.input.reference) {
        (Some(t), Some(r)) => {
            let mut m0 = load_scalar(t, nt)?;
            let mut m1 = load_scalar(r, nt)?;
            if m0.grid().dims() != m1.grid().dims() {
                return Err(CliError::Config(format!(
                    "template is {:?} but reference is {:?}",
                    m0.grid().dims(),
                    m1.grid().dims()
                )));
            }
            if m.input.normalize {
                normalize_jointly(&mut m0, &mut m1);
            }
            Ok((m0, m1))
        }
        _ => {
            let syn = synth_problem(eng, m)?;
            Ok((syn.m0, syn.m1))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegisterOutput {
    pub velocity: VectorField,
    pub deformed: ScalarField,
    pub report: SolverReport,
}

/// Full registration; writes the velocity, the deformed template, the report and
/// the residual/iteration CSVs. A flagged report is still written.
pub fn register(m: &RunManifest) -> CliResult<RegisterOutput> {
    let eng = build_engine(m)?;
    let (m0, m1) = registration_images(&eng, m)?;
    let v0 = match &m.input.velocity {
        Some(p) => Some(load_vector(p, m.registration.nt)?),
        None => None,
    };
    let (velocity, report) = beta_continuation(&eng, &m0, &m1, &m.registration, v0)?;

    let grid = velocity.grid().to_owned();
    let tr = Transport::new(&eng, m.registration.transport()?);
    let ch = tr.characteristics(&velocity)?;
    let deformed = tr
        .solve_state(&ch, &m0.with_grid(grid)?)?
        .final_state()
        .clone();

    VolumeFile::from_vector(&velocity, m.scalar).save(&m.out.join(VELOCITY_FILE))?;
    VolumeFile::from_scalar(&deformed, m.scalar).save(&m.out.join(DEFORMED_FILE))?;
    write_json(&m.report_path(), &report)?;
    write_text(&m.out.join(RESIDUALS_FILE), &report.residual_csv())?;
    write_text(&m.out.join(ITERATIONS_FILE), &report.iteration_csv())?;
    Ok(RegisterOutput {
        velocity,
        deformed,
        report,
    })
}

/// Forward transport of `[transport] image` by `[transport] velocity`.
pub fn transport(m: &RunManifest) -> CliResult<ScalarField> {
    let s = &m.transport;
    let (Some(vp), Some(ip)) = (&s.velocity, &s.image) else {
        return Err(CliError::Config(
            "transport needs both a velocity and an image".into(),
        ));
    };
    let v = load_vector(vp, s.nt)?;
    let img = load_scalar(ip, s.nt)?;
    if v.grid().dims() != img.grid().dims() {
        return Err(CliError::Config(format!(
            "velocity is {:?} but image is {:?}",
            v.grid().dims(),
            img.grid().dims()
        )));
    }
    let eng = build_engine(m)?;
    let tr = Transport::new(
        &eng,
        TransportConfig {
            degree: degree(s.degree)?,
            ..Default::default()
        },
    );
    let ch = tr.characteristics(&v)?;
    let out = tr.solve_state(&ch, &img)?.final_state().clone();
    VolumeFile::from_scalar(&out, m.scalar).save(&out_path(m, &s.output))?;
    Ok(out)
}

/// One PCG solve of the convergence study.
#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub n: usize,
    pub beta: Real,
    pub preconditioner: PcKind,
    pub iterations: usize,
    pub converged: bool,
    pub residuals: Vec<Real>,
    pub precond_residuals: Vec<Real>,
    pub pc: PcStats,
    pub beta_pc: Real,
    pub seconds: f64,
}

impl ConvergenceRun {
    /// Grid points transformed inside the inner solves per preconditioner application.
    pub fn inner_points_per_application(&self) -> f64 {
        self.pc.inner_fft_points as f64 / self.pc.applications.max(1) as f64
    }
}

/// PCG residual histories of the Newton system at the synthetic problem's true
/// velocity, for every `(grid, β, preconditioner)` combination.
pub fn convergence(m: &RunManifest) -> CliResult<Vec<ConvergenceRun>> {
    let c = &m.convergence;
    let eng = build_engine(m)?;
    let tcfg = m.registration.transport()?;
    let mut runs = Vec::new();
    for &n in &c.grids {
        let grid = cubic_grid(n, m.registration.nt)?;
        let syn = syn_problem(&eng, grid, tcfg.degree)?;
        for &beta in &c.betas {
            let problem = Problem::new(&eng, &syn.m0, &syn.m1, beta, tcfg)?;
            let ev = problem.evaluate(&syn.v_true)?;
            let mut rhs = problem.gradient(&ev)?;
            rhs.scale(-1.0);
            for &kind in &c.preconditioners {
                let start = Instant::now();
                let mut pc = Preconditioner::new(
                    &eng,
                    kind,
                    beta,
                    m.registration.eps_h0,
                    m.registration.inner_max_iter,
                );
                pc.set_reference(ev.state.final_state())?;
                pc.set_forcing(c.forcing);
                let out = pcg(
                    |x| problem.hessian_matvec(&ev, x),
                    &rhs,
                    |r| pc.apply(r),
                    None,
                    c.tolerance,
                    c.max_iter,
                )?;
                runs.push(ConvergenceRun {
                    n,
                    beta,
                    preconditioner: kind,
                    iterations: out.iterations,
                    converged: out.converged,
                    residuals: out.residuals,
                    precond_residuals: out.precond_residuals,
                    pc: pc.stats(),
                    beta_pc: pc.beta_pc(),
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
    }

    let mut curves = Csv::new(&[
        "n",
        "beta",
        "preconditioner",
        "iteration",
        "rel_residual",
        "precond_residual",
    ]);
    let mut summary = Csv::new(&[
        "n",
        "beta",
        "beta_pc",
        "preconditioner",
        "iterations",
        "converged",
        "pc_applications",
        "inner_solves",
        "inner_iterations",
        "inner_average",
        "inner_fft_points_per_application",
        "seconds",
    ]);
    for r in &runs {
        for (i, res) in r.residuals.iter().enumerate() {
            let pres = r
                .precond_residuals
                .get(i)
                .map(|x| format!("{x:e}"))
                .unwrap_or_default();
            curves.row(&[
                r.n.to_string(),
                format!("{:e}", r.beta),
                r.preconditioner.to_string(),
                i.to_string(),
                format!("{res:e}"),
                pres,
            ]);
        }
        summary.row(&[
            r.n.to_string(),
            format!("{:e}", r.beta),
            format!("{:e}", r.beta_pc),
            r.preconditioner.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.pc.applications.to_string(),
            r.pc.inner_solves.to_string(),
            r.pc.inner_iterations.to_string(),
            format!("{:.4}", r.pc.average_inner()),
            format!("{:.6e}", r.inner_points_per_application()),
            format!("{:.3}", r.seconds),
        ]);
    }
    curves.save(&m.out.join(CONVERGENCE_FILE))?;
    summary.save(&m.out.join(CONVERGENCE_SUMMARY_FILE))?;
    Ok(runs)
}

/// Bytes of FD ghost traffic predicted for `calls` exchanges over `p` slabs:
/// every worker sends `HALF_WIDTH` planes to each neighbour.
pub fn fd_ghost_model(grid: &Grid3, p: usize, calls: u64) -> u64 {
    if p <= 1 {
        return 0;
    }
    let plane = (grid.n(1) * grid.n(2) * std::mem::size_of::<Real>()) as u64;
    calls * p as u64 * 2 * diffreg::fd::HALF_WIDTH as u64 * plane
}

fn transpose_bytes_per_call(grid: &Grid3, p: usize) -> CliResult<u64> {
    let layout = SlabLayout::new(grid, p)?;
    let nk = (grid.n(2) / 2 + 1) as u64;
    let local: usize = (0..p)
        .map(|r| layout.slab(r).len() * layout.block(r).len())
        .sum();
    let remote = (grid.n(0) * grid.n(1) - local) as u64;
    Ok(2 * std::mem::size_of::<Real>() as u64 * nk * remote)
}

/// Bytes moved by spectral transposes: every complex coefficient whose `x1`
/// slab and `x2` block belong to different workers. `calls` transforms touching
/// `points` grid points in total are split between `grid` and its half-resolution
/// grid (the only other size the solver transforms on).
pub fn fft_transpose_model(grid: &Grid3, p: usize, calls: u64, points: u64) -> CliResult<u64> {
    if p <= 1 || calls == 0 {
        return Ok(0);
    }
    let fine_len = grid.len() as u64;
    let fine_bytes = transpose_bytes_per_call(grid, p)?;
    if points == calls * fine_len {
        return Ok(calls * fine_bytes);
    }
    let coarse = grid.coarse()?;
    let coarse_len = coarse.len() as u64;
    let fine_calls = points
        .checked_sub(calls * coarse_len)
        .map(|x| x / (fine_len - coarse_len))
        .ok_or_else(|| {
            CliError::Numerical("transform point count below the coarse-grid minimum".into())
        })?;
    Ok(fine_calls * fine_bytes + (calls - fine_calls) * transpose_bytes_per_call(&coarse, p)?)
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub n: usize,
    pub p: usize,
    pub report: SolverReport,
    pub predicted: KernelCounters,
    pub comm: CommStats,
    pub fd_ghost_model: u64,
    pub fft_transpose_model: u64,
    pub memory_bytes: f64,
    /// Kernel counters differ from the first worker count on the same grid.
    pub counters_mismatch: bool,
    /// Measured communication volume differs from the slab formulas.
    pub model_mismatch: bool,
}

/// Fixed-work runs (`gauss_newton` steps of `pcg` iterations, no continuation)
/// for every grid and worker count.
pub fn benchmark(m: &RunManifest) -> CliResult<Vec<BenchmarkRun>> {
    let b = &m.benchmark;
    let mut cfg = m.registration.clone();
    cfg.continuation = false;
    cfg.beta_target = b.beta;
    cfg.fixed_iterations = Some(FixedIterations {
        gauss_newton: b.gauss_newton,
        pcg: b.pcg,
    });
    let word = std::mem::size_of::<Real>();
    let mut runs: Vec<BenchmarkRun> = Vec::new();
    for &n in &b.grids {
        let grid = cubic_grid(n, cfg.nt)?;
        let syn = syn_problem(&Engine::serial(), grid, degree(cfg.degree)?)?;
        let first = runs.len();
        for &p in &b.workers {
            let eng = build_engine_with(m, p)?;
            eng.reset_counters();
            let (_, report) = beta_continuation(&eng, &syn.m0, &syn.m1, &cfg, None)?;
            let predicted = estimate_cost(&report.tally, &CostSettings::from_config(grid, &cfg));
            let comm = eng.comm_stats().unwrap_or_default();
            let c = &report.counters;
            let fd_model = fd_ghost_model(&grid, p, c.fd_gradient + c.fd_divergence);
            let fft_model =
                fft_transpose_model(&grid, p, c.fft_forward + c.fft_inverse, c.fft_points)?;
            let counters_mismatch = runs
                .get(first)
                .is_some_and(|r| r.report.counters != report.counters);
            let model_mismatch =
                comm.fd_ghost_bytes != fd_model || comm.fft_transpose_bytes != fft_model;
            runs.push(BenchmarkRun {
                n,
                p,
                predicted,
                comm,
                fd_ghost_model: fd_model,
                fft_transpose_model: fft_model,
                memory_bytes: estimate_memory(&grid, cfg.nt, p, word, cfg.degree as usize),
                counters_mismatch,
                model_mismatch,
                report,
            });
        }
    }

    let mut csv = Csv::new(&[
        "n",
        "p",
        "gn_iterations",
        "pcg_iterations",
        "wall_seconds",
        "objective_seconds",
        "gradient_seconds",
        "hessian_seconds",
        "preconditioner_seconds",
        "fft_forward",
        "fft_inverse",
        "fd_gradient",
        "fd_divergence",
        "interp",
        "interp_transpose",
        "pde_solves",
        "counters_match_model",
        "fd_ghost_bytes",
        "fd_ghost_model_bytes",
        "fd_ghost_seconds",
        "fft_transpose_bytes",
        "fft_transpose_model_bytes",
        "fft_transpose_seconds",
        "ghost_comm_bytes",
        "scatter_comm_bytes",
        "interp_comm_bytes",
        "interp_comm_seconds",
        "interp_kernel_seconds",
        "memory_model_bytes",
        "counters_mismatch",
        "model_mismatch",
    ]);
    for r in &runs {
        let c = &r.report.counters;
        let t = &r.report.times;
        let pde = c.state_solves + c.adjoint_solves + c.inc_state_solves + c.inc_adjoint_solves;
        csv.row(&[
            r.n.to_string(),
            r.p.to_string(),
            r.report.gn_iterations.to_string(),
            r.report.pcg_iterations.to_string(),
            format!("{:.4}", r.report.wall_seconds),
            format!("{:.4}", t.objective),
            format!("{:.4}", t.gradient),
            format!("{:.4}", t.hessian),
            format!("{:.4}", t.preconditioner),
            c.fft_forward.to_string(),
            c.fft_inverse.to_string(),
            c.fd_gradient.to_string(),
            c.fd_divergence.to_string(),
            c.interp.to_string(),
            c.interp_transpose.to_string(),
            pde.to_string(),
            (r.predicted == *c).to_string(),
            r.comm.fd_ghost_bytes.to_string(),
            r.fd_ghost_model.to_string(),
            format!("{:.4}", r.comm.fd_ghost_seconds),
            r.comm.fft_transpose_bytes.to_string(),
            r.fft_transpose_model.to_string(),
            format!("{:.4}", r.comm.fft_transpose_seconds),
            r.comm.ghost_comm_bytes.to_string(),
            r.comm.scatter_comm_bytes.to_string(),
            r.comm.interp_comm_bytes.to_string(),
            format!("{:.4}", r.comm.interp_comm_seconds),
            format!("{:.4}", r.comm.interp_kernel_seconds),
            format!("{:.0}", r.memory_bytes),
            r.counters_mismatch.to_string(),
            r.model_mismatch.to_string(),
        ]);
    }
    csv.save(&m.out.join(BENCHMARK_FILE))?;
    Ok(runs)
}
