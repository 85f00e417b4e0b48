use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffreg::precond::PcKind;
use diffreg::Real;
use diffreg_cli::error::{CliError, CliResult, EXIT_NUMERICAL};
use diffreg_cli::volume::ScalarKind;
use diffreg_cli::{commands, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "diffreg", version, about = "Diffeomorphic image registration")]
struct Cli {
    /// TOML run manifest; defaults apply to every key it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker count (1 runs serially).
    #[arg(long, global = true)]
    p: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Precision of written volumes.
    #[arg(long, global = true, value_parser = parse_scalar)]
    scalar: Option<ScalarKind>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic template, reference and true velocity.
    Synth(SynthArgs),
    /// Register a template to a reference.
    Register(RegisterArgs),
    /// Transport an image with a velocity.
    Transport(TransportArgs),
    /// PCG residual histories at the synthetic true velocity.
    Convergence(ConvergenceArgs),
    /// Fixed-work scaling runs.
    Benchmark(BenchmarkArgs),
    /// Print the effective manifest.
    Manifest,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Cubic grid size.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    noise: Option<Real>,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Initial velocity.
    #[arg(long)]
    velocity: Option<PathBuf>,
    /// Cubic grid of the synthetic pair used without input images.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    beta_target: Option<Real>,
    #[arg(long)]
    no_continuation: bool,
    #[arg(long, value_parser = parse_pc)]
    preconditioner: Option<PcKind>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    eps_n: Option<Real>,
    #[arg(long)]
    max_gn_iter: Option<usize>,
    /// Report file name inside the output directory.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TransportArgs {
    #[arg(long)]
    velocity: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    nt: Option<usize>,
    #[arg(long)]
    degree: Option<u32>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<Real>>,
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_pc)]
    preconditioners: Option<Vec<PcKind>>,
    #[arg(long)]
    tolerance: Option<Real>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long, value_delimiter = ',')]
    workers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    grids: Option<Vec<usize>>,
    #[arg(long)]
    gauss_newton: Option<usize>,
    #[arg(long)]
    pcg: Option<usize>,
    #[arg(long)]
    beta: Option<Real>,
}

fn parse_pc(s: &str) -> Result<PcKind, String> {
    PcKind::parse(s).map_err(|e| e.to_string())
}

fn parse_scalar(s: &str) -> Result<ScalarKind, String> {
    match s {
        "f32" => Ok(ScalarKind::F32),
        "f64" => Ok(ScalarKind::F64),
        _ => Err(format!("expected f32 or f64, got '{s}'")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn manifest(cli: &mut Cli) -> CliResult<RunManifest> {
    let mut m = match &cli.config {
        Some(path) => RunManifest::load(path)?,
        None => RunManifest::default(),
    };
    set(&mut m.p, cli.p);
    set(&mut m.seed, cli.seed);
    set(&mut m.out, cli.out.take());
    set(&mut m.scalar, cli.scalar);
    match &mut cli.cmd {
        Command::Synth(a) => {
            set(&mut m.synth.grid, a.grid.map(|n| [n; 3]));
            set(&mut m.synth.nt, a.nt);
            set(&mut m.synth.noise, a.noise);
        }
        Command::Register(a) => {
            if a.template.is_some() || a.reference.is_some() {
                m.input.template = a.template.take();
                m.input.reference = a.reference.take();
            }
            if a.velocity.is_some() {
                m.input.velocity = a.velocity.take();
            }
            set(&mut m.synth.grid, a.grid.map(|n| [n; 3]));
            let r = &mut m.registration;
            set(&mut r.beta_target, a.beta_target);
            if a.no_continuation {
                r.continuation = false;
            }
            set(&mut r.preconditioner, a.preconditioner);
            set(&mut r.nt, a.nt);
            set(&mut r.eps_n, a.eps_n);
            set(&mut r.max_gn_iter, a.max_gn_iter);
            set(&mut m.report, a.report.take());
        }
        Command::Transport(a) => {
            let t = &mut m.transport;
            if a.velocity.is_some() {
                t.velocity = a.velocity.take();
            }
            if a.image.is_some() {
                t.image = a.image.take();
            }
            set(&mut t.nt, a.nt);
            set(&mut t.degree, a.degree);
            set(&mut t.output, a.output.take());
        }
        Command::Convergence(a) => {
            let c = &mut m.convergence;
            set(&mut c.betas, a.betas.take());
            set(&mut c.grids, a.grids.take());
            set(&mut c.preconditioners, a.preconditioners.take());
            set(&mut c.tolerance, a.tolerance);
        }
        Command::Benchmark(a) => {
            let b = &mut m.benchmark;
            set(&mut b.workers, a.workers.take());
            set(&mut b.grids, a.grids.take());
            set(&mut b.gauss_newton, a.gauss_newton);
            set(&mut b.pcg, a.pcg);
            set(&mut b.beta, a.beta);
        }
        Command::Manifest => {}
    }
    m.validate()?;
    Ok(m)
}

fn run(mut cli: Cli) -> CliResult<()> {
    let m = manifest(&mut cli)?;
    match cli.cmd {
        Command::Synth(_) => {
            let syn = commands::synth(&m)?;
            println!(
                "wrote synthetic pair on {} to {}",
                syn.m0.grid(),
                m.out.display()
            );
        }
        Command::Register(_) => {
            let out = commands::register(&m)?;
            let r = &out.report;
            println!(
                "gn {} pcg {} mism_rel {:.4e} grad_rel {:.3e} converged {} ({:.1} s)",
                r.gn_iterations,
                r.pcg_iterations,
                r.mism_rel,
                r.grad_rel_final,
                r.converged,
                r.wall_seconds
            );
            if r.is_flagged() {
                return Err(CliError::Numerical(r.flags.join("; ")));
            }
        }
        Command::Transport(_) => {
            let f = commands::transport(&m)?;
            println!("transported image on {}", f.grid());
        }
        Command::Convergence(_) => {
            for r in commands::convergence(&m)? {
                println!(
                    "n {:4} beta {:.1e} {:8} iterations {:4} converged {} inner avg {:.2}",
                    r.n,
                    r.beta,
                    r.preconditioner.to_string(),
                    r.iterations,
                    r.converged,
                    r.pc.average_inner()
                );
            }
        }
        Command::Benchmark(_) => {
            let runs = commands::benchmark(&m)?;
            for r in &runs {
                println!(
                    "n {:4} p {:2} wall {:.2} s fd bytes {} fft bytes {}",
                    r.n,
                    r.p,
                    r.report.wall_seconds,
                    r.comm.fd_ghost_bytes,
                    r.comm.fft_transpose_bytes
                );
            }
            if runs.iter().any(|r| r.counters_mismatch || r.model_mismatch) {
                return Err(CliError::Numerical(
                    "benchmark counters disagree across p or with the slab model".into(),
                ));
            }
        }
        Command::Manifest => print!("{}", m.render()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("diffreg: {e}");
            let code = e.exit_code();
            debug_assert!(code == EXIT_NUMERICAL || code != 0);
            ExitCode::from(code as u8)
        }
    }
}
