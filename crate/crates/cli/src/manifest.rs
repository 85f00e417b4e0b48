//! TOML run manifest. Every key has a default and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use diffreg::optim::RegistrationConfig;
use diffreg::parallel::{ExchangeStrategy, DEFAULT_ALLTOALL_THRESHOLD};
use diffreg::precond::PcKind;
use diffreg::Real;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::volume::ScalarKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    /// Worker count; `1` runs the serial kernels.
    pub p: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Report file name, relative to `out` unless absolute.
    pub report: PathBuf,
    /// Precision of volumes written by the CLI.
    pub scalar: ScalarKind,
    pub exchange: ExchangeSettings,
    pub input: InputSettings,
    pub synth: SynthSettings,
    pub registration: RegistrationConfig,
    pub transport: TransportSettings,
    pub convergence: ConvergenceSettings,
    pub benchmark: BenchmarkSettings,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            p: 1,
            seed: 0,
            out: PathBuf::from("out"),
            report: PathBuf::from("report.json"),
            scalar: ScalarKind::F64,
            exchange: ExchangeSettings::default(),
            input: InputSettings::default(),
            synth: SynthSettings::default(),
            registration: RegistrationConfig::default(),
            transport: TransportSettings::default(),
            convergence: ConvergenceSettings::default(),
            benchmark: BenchmarkSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Auto,
    AllToAll,
    PointToPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExchangeSettings {
    pub strategy: StrategyName,
    /// Per-worker message volume above which `auto` uses the collective path.
    pub threshold_bytes: usize,
}

impl Default for ExchangeSettings {
    fn default() -> Self {
        Self {
            strategy: StrategyName::Auto,
            threshold_bytes: DEFAULT_ALLTOALL_THRESHOLD,
        }
    }
}

impl ExchangeSettings {
    pub fn strategy(&self) -> ExchangeStrategy {
        match self.strategy {
            StrategyName::Auto => ExchangeStrategy::Auto {
                threshold_bytes: self.threshold_bytes,
            },
            StrategyName::AllToAll => ExchangeStrategy::AllToAll,
            StrategyName::PointToPoint => ExchangeStrategy::PointToPoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSettings {
    /// Template volume; the synthetic pair is used when both images are unset.
    pub template: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    /// Optional initial velocity.
    pub velocity: Option<PathBuf>,
    /// Map both loaded images jointly onto `[0, 1]`.
    pub normalize: bool,
}

impl Default for InputSettings {
    fn default() -> Self {
        Self {
            template: None,
            reference: None,
            velocity: None,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub grid: [usize; 3],
    pub nt: usize,
    /// Amplitude of seeded uniform noise added to the reference.
    pub noise: Real,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            grid: [64, 64, 64],
            nt: 4,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportSettings {
    pub velocity: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub nt: usize,
    pub degree: u32,
    pub output: PathBuf,
}

impl Default for TransportSettings {
    fn default() -> Self {
        Self {
            velocity: None,
            image: None,
            nt: 4,
            degree: 3,
            output: PathBuf::from("transported.vrg"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSettings {
    pub betas: Vec<Real>,
    pub grids: Vec<usize>,
    pub preconditioners: Vec<PcKind>,
    /// Outer relative residual target.
    pub tolerance: Real,
    pub max_iter: usize,
    /// Forcing term fixing the inner `H₀` tolerance `ε_H0 · forcing`.
    pub forcing: Real,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            betas: vec![5e-1, 1e-1, 5e-2],
            grids: vec![32, 64],
            preconditioners: vec![PcKind::InvA, PcKind::InvH0, PcKind::TwoLevelInvH0],
            tolerance: 1e-6,
            max_iter: 500,
            forcing: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSettings {
    pub workers: Vec<usize>,
    pub grids: Vec<usize>,
    pub gauss_newton: usize,
    pub pcg: usize,
    pub beta: Real,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            workers: vec![1, 2, 4],
            grids: vec![32],
            gauss_newton: 5,
            pcg: 10,
            beta: 1e-2,
        }
    }
}

impl RunManifest {
    pub fn parse(text: &str) -> CliResult<Self> {
        let m: Self =
            toml::from_str(text).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn render(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.p == 0 {
            return Err(CliError::Config("p must be at least 1".into()));
        }
        self.registration.validate()?;
        if self.input.template.is_some() != self.input.reference.is_some() {
            return Err(CliError::Config(
                "template and reference must be given together".into(),
            ));
        }
        if self.synth.nt == 0 || self.transport.nt == 0 {
            return Err(CliError::Config("nt must be at least 1".into()));
        }
        if !(self.synth.noise >= 0.0) {
            return Err(CliError::Config(
                "noise amplitude must be non-negative".into(),
            ));
        }
        let c = &self.convergence;
        if c.betas.iter().any(|&b| !(b > 0.0)) || !(c.tolerance > 0.0 && c.tolerance < 1.0) {
            return Err(CliError::Config(
                "convergence betas must be positive and tolerance in (0, 1)".into(),
            ));
        }
        if self.benchmark.workers.contains(&0) || !(self.benchmark.beta > 0.0) {
            return Err(CliError::Config(
                "benchmark workers must be positive and beta > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn report_path(&self) -> PathBuf {
        self.out.join(&self.report)
    }
}
