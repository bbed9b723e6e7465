//! Run configuration: a TOML document with one section per module.
//!
//! ```toml
//! command = "homogenize"       # optional; must match the CLI command
//! seed = 0
//! threads = 1
//! F = [[1.0, 0.5], [0.0, 1.0]]
//!
//! [spec]
//! model = "neo-hookean"
//! [spec.phase]
//! kind = "laminate"
//! axis = 1
//! theta = 0.5
//! mu_low = 1.0
//! mu_high = 10.0
//!
//! [schedule]
//! n_values = [1.0, 4.0, 16.0]
//! k_values = [1, 2]
//! m_values = [8]
//! ```
//!
//! Every section and key is optional except where a command needs it
//! (`spec` and `F` for everything but the acceptance suite). Unknown keys are
//! rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cell::{Boundary, Split, SIGMA_TOLERANCE};
use crate::density::EnergySpec;
use crate::error::{Error, Result};
use crate::homog::{ProbeCell, Schedule};
use crate::recovery::{MacroDeformation, RecoverySettings, Slack};
use crate::solve::SolverConfig;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Cell,
    Homogenize,
    Recover,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Cell => "cell",
            Command::Homogenize => "homogenize",
            Command::Recover => "recover",
            Command::Check => "check",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cell" => Ok(Command::Cell),
            "homogenize" => Ok(Command::Homogenize),
            "recover" => Ok(Command::Recover),
            "check" => Ok(Command::Check),
            other => Err(Error::Config(format!("unknown command `{other}`"))),
        }
    }
}

fn default_threads() -> usize {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Accept `det F ≠ 1` (penalty solves only).
    #[serde(default, skip_serializing_if = "is_false")]
    pub allow_off_sigma: bool,
    /// Exit with status 2 when any solve misses its tolerances.
    #[serde(default, skip_serializing_if = "is_false")]
    pub strict: bool,
    /// Report directory (default `out`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Mat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<EnergySpec>,
    #[serde(default)]
    pub cell: CellSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub recovery: RecoverySection,
    #[serde(default)]
    pub check: CheckSection,
}

/// Single cell solve for `cellhom cell`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSection {
    pub k: usize,
    pub m: usize,
    /// `"penalty"` (truncated density at level `n`) or `"constrained"`.
    pub mode: CellMode,
    pub n: f64,
    pub starts: usize,
    pub perturbation: f64,
    pub split: Split,
    pub boundary: Boundary,
    /// Also write the minimizing field as CSV.
    pub write_field: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellMode {
    #[default]
    Penalty,
    Constrained,
}

impl Default for CellSection {
    fn default() -> Self {
        CellSection {
            k: 1,
            m: 16,
            mode: CellMode::Penalty,
            n: 64.0,
            starts: 1,
            perturbation: 0.1,
            split: Split::Crossed,
            boundary: Boundary::Dirichlet,
            write_field: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub n_values: Vec<f64>,
    pub k_values: Vec<usize>,
    pub m_values: Vec<usize>,
    pub starts: usize,
    pub perturbation: f64,
    pub split: Split,
    pub boundary: Boundary,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = Schedule::default();
        ScheduleSection {
            n_values: s.n_values,
            k_values: s.k_values,
            m_values: s.m_values,
            starts: s.starts,
            perturbation: s.perturbation,
            split: s.split,
            boundary: s.boundary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacroKind {
    #[default]
    Affine,
    /// `F` below an axis-aligned interface, `F + a⊗ν` above it.
    TwoPiece,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoverySection {
    pub u: MacroKind,
    /// Interface normal axis (1 or 2) for `two-piece`.
    pub axis: usize,
    /// Interface position `x·ν = interface`.
    pub interface: f64,
    /// Length of the jump vector `a`.
    pub amplitude: f64,
    /// Corrector slack relative to the best estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_relative: Option<f64>,
    /// Absolute corrector slack; excludes `eta_relative`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub eps_values: Vec<f64>,
    pub k_values: Vec<usize>,
    pub m: usize,
    /// Midpoint-rule points per side (default: the finest required).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points_per_side: Option<usize>,
    pub projection_tolerance: f64,
}

impl Default for RecoverySection {
    fn default() -> Self {
        let s = RecoverySettings::default();
        RecoverySection {
            u: MacroKind::Affine,
            axis: 1,
            interface: 0.5,
            amplitude: 0.2,
            eta_relative: None,
            eta: None,
            eps_values: vec![0.25, 0.125, 0.0625],
            k_values: s.k_values,
            m: s.m,
            points_per_side: None,
            projection_tolerance: s.projection_tolerance,
        }
    }
}

/// Default relative corrector slack.
pub const DEFAULT_ETA_RELATIVE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    /// Property checks on the configured `spec` and `F`.
    #[default]
    Properties,
    /// The fixed acceptance criteria.
    Acceptance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub suite: Suite,
    /// Cell used by the probes.
    pub k: usize,
    pub m: usize,
    pub null_lagrangian_fields: usize,
    pub gradient_instances: usize,
    pub growth_samples: usize,
    pub rank_one_samples: usize,
    pub quasiconvexity_fields: usize,
    /// Truncation levels of the commutation check.
    pub commutation_n: Vec<f64>,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            suite: Suite::Properties,
            k: 1,
            m: 8,
            null_lagrangian_fields: 100,
            gradient_instances: 20,
            growth_samples: 20,
            rank_one_samples: 10,
            quasiconvexity_fields: 3,
            commutation_n: vec![64.0, 4096.0],
        }
    }
}

impl RunConfig {
    /// A configuration with defaults everywhere.
    pub fn new(spec: Option<EnergySpec>, f: Option<Mat>) -> Self {
        RunConfig {
            command: None,
            seed: 0,
            threads: default_threads(),
            allow_off_sigma: false,
            strict: false,
            output: None,
            f,
            spec,
            cell: CellSection::default(),
            schedule: ScheduleSection::default(),
            solver: SolverConfig::default(),
            recovery: RecoverySection::default(),
            check: CheckSection::default(),
        }
    }

    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self> {
        let config = Self::from_toml(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Deserializes without the semantic checks of [`RunConfig::validate`],
    /// so callers can apply overrides first.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads [`RunConfig::from_toml`] from a file; errors name the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(spec) = &self.spec {
            spec.validate()?;
        }
        if let Some(f) = &self.f {
            if !f.is_finite() {
                return Err(Error::invalid("F", "entries must be finite"));
            }
            if (f.det() - 1.0).abs() > SIGMA_TOLERANCE && !self.allow_off_sigma {
                return Err(Error::invalid(
                    "F",
                    format!("det F ≠ 1 (det F = {}); set allow_off_sigma to run off the constraint set", f.det()),
                ));
            }
        }
        self.solver.validate()?;
        let c = &self.cell;
        if c.k == 0 || c.m == 0 || c.starts == 0 {
            return Err(Error::invalid("cell", "k, m and starts must be positive"));
        }
        if !(c.n > 0.0 && c.n.is_finite()) {
            return Err(Error::invalid("cell.n", "must be finite and > 0"));
        }
        if !(c.perturbation >= 0.0) {
            return Err(Error::invalid("cell.perturbation", "must be >= 0"));
        }
        self.schedule()?.validate()?;
        self.recovery_settings()?.validate()?;
        self.slack()?;
        let r = &self.recovery;
        if r.u == MacroKind::TwoPiece && !(r.interface > 0.0 && r.interface < 1.0 && r.amplitude.is_finite()) {
            return Err(Error::invalid("recovery", "two-piece needs 0 < interface < 1 and a finite amplitude"));
        }
        if r.eps_values.is_empty() || !r.eps_values.windows(2).all(|w| w[1] < w[0]) || !r.eps_values.iter().all(|e| *e > 0.0)
        {
            return Err(Error::invalid("recovery.eps_values", "need positive, decreasing values"));
        }
        let k = &self.check;
        if k.k == 0 || k.m == 0 {
            return Err(Error::invalid("check", "k and m must be positive"));
        }
        if k.commutation_n.is_empty() || !k.commutation_n.windows(2).all(|w| w[0] < w[1]) || !(k.commutation_n[0] > 0.0) {
            return Err(Error::invalid("check.commutation_n", "need positive, increasing values"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let s = &self.schedule;
        Ok(Schedule {
            n_values: s.n_values.clone(),
            k_values: s.k_values.clone(),
            m_values: s.m_values.clone(),
            starts: s.starts,
            perturbation: s.perturbation,
            seed: self.seed,
            split: s.split,
            boundary: s.boundary,
            solver: self.solver,
        })
    }

    pub fn recovery_settings(&self) -> Result<RecoverySettings> {
        Ok(RecoverySettings {
            k_values: self.recovery.k_values.clone(),
            m: self.recovery.m,
            solver: self.solver,
            projection_tolerance: self.recovery.projection_tolerance,
            ..RecoverySettings::default()
        })
    }

    pub fn slack(&self) -> Result<Slack> {
        let slack = match (self.recovery.eta, self.recovery.eta_relative) {
            (Some(_), Some(_)) => return Err(Error::invalid("recovery.eta", "set either eta or eta_relative")),
            (Some(eta), None) => Slack::Absolute(eta),
            (None, Some(r)) => Slack::Relative(r),
            (None, None) => Slack::Relative(DEFAULT_ETA_RELATIVE),
        };
        match slack {
            Slack::Absolute(v) | Slack::Relative(v) if v > 0.0 && v.is_finite() => Ok(slack),
            _ => Err(Error::invalid("recovery.eta", "slack must be positive")),
        }
    }

    pub fn macro_deformation(&self) -> Result<MacroDeformation> {
        let f = self.require_f()?;
        match self.recovery.u {
            MacroKind::Affine => Ok(MacroDeformation::affine(f)),
            MacroKind::TwoPiece => MacroDeformation::two_piece_laminate(
                f,
                self.recovery.axis,
                self.recovery.interface,
                self.recovery.amplitude,
            ),
        }
    }

    pub fn probe_cell(&self) -> ProbeCell {
        ProbeCell {
            k: self.check.k,
            m: self.check.m,
            split: self.schedule.split,
            boundary: self.schedule.boundary,
            solver: self.solver,
        }
    }

    pub fn require_spec(&self) -> Result<EnergySpec> {
        self.spec.ok_or_else(|| Error::Config("missing [spec] section".into()))
    }

    pub fn require_f(&self) -> Result<Mat> {
        self.f.ok_or_else(|| Error::Config("missing `F`".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
F = [[2.0, 0.0], [0.0, 0.5]]
[spec]
model = "neo-hookean"
[spec.phase]
kind = "constant"
mu_low = 1.0
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.threads, 1);
        assert_eq!(c.schedule, ScheduleSection::default());
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.require_f().unwrap(), Mat::diag(2.0, 0.5));
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.command = Some(Command::Recover);
        c.recovery.eta = Some(0.01);
        c.recovery.u = MacroKind::TwoPiece;
        c.check.suite = Suite::Acceptance;
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn rejects_off_sigma_and_unknown_keys() {
        let off = MINIMAL.replace("0.5]]", "1.0]]");
        let err = RunConfig::parse(&off).unwrap_err();
        assert!(err.to_string().contains("det F ≠ 1"), "{err}");
        let allowed = format!("allow_off_sigma = true\n{off}");
        assert!(RunConfig::parse(&allowed).is_ok());
        let unknown = format!("colour = 1\n{MINIMAL}");
        assert!(RunConfig::parse(&unknown).unwrap_err().to_string().contains("colour"));
        let nested = MINIMAL.replace("mu_low = 1.0", "mu_low = 1.0\nshade = 2");
        assert!(RunConfig::parse(&nested).is_err());
        let solver = format!("{MINIMAL}\n[solver]\nmax_iters = 3\n");
        assert!(RunConfig::parse(&solver).is_err());
    }

    #[test]
    fn rejects_bad_sections() {
        let both = format!("{MINIMAL}\n[recovery]\neta = 0.1\neta_relative = 0.1\n");
        assert!(RunConfig::parse(&both).is_err());
        let sched = format!("{MINIMAL}\n[schedule]\nk_values = [2, 1]\n");
        assert!(RunConfig::parse(&sched).is_err());
        assert!(RunConfig::parse("F = [[1.0, 0.0]]").is_err());
    }
}
