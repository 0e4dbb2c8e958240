//! Scenario files: TOML with fixed sections, unknown keys rejected.
//!
//! ```toml
//! name = "reference_1d"
//!
//! [grid]
//! dim = 1
//! points_per_dim = 256
//! box_length = 8.0
//!
//! [system]
//! n_particles = 16        # epsilon defaults to N^(-1/d)
//!
//! [potential]
//! trap = 1.0              # periodized harmonic well, used by the preparation
//! [potential.kernel]
//! kind = "gaussian"       # V̂(p) = strength · exp(-width² p² / 2)
//! strength = 0.5
//! width = 1.0
//!
//! [dispersion]
//! kind = "relativistic"
//! m0 = 1.0
//!
//! [preparation]
//! state = "scf"
//!
//! [evolution]
//! dt = 1e-3
//! t_final = 2.0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rhfs_core::dynamics::{EvolutionConfig, Scheme};
use rhfs_core::hf::ScfConfig;
use rhfs_core::spectral::periodized_trap;
use rhfs_core::{make_grid, DispersionKind, Grid, PotentialSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{field, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Where artifacts go; not part of the configuration hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub grid: GridSection,
    pub system: SystemSection,
    pub potential: PotentialSection,
    pub dispersion: DispersionKind,
    pub preparation: Preparation,
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub points_per_dim: usize,
    pub box_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_particles: usize,
    /// Explicit ε; when absent ε = N^{-1/d}.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    /// Strength `w` of the periodized harmonic trap; 0 disables it.
    #[serde(default)]
    pub trap: f64,
    pub kernel: Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    Gaussian {
        strength: f64,
        width: f64,
    },
    /// `V̂` on the dual grid in FFT order (length `n^d`), scaled by `strength`.
    Table {
        #[serde(default = "one")]
        strength: f64,
        vhat: Vec<f64>,
    },
    None,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Scf,
    FermiSea,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preparation {
    pub state: InitialState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scf: Option<ScfConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "yes")]
    pub exchange_on: bool,
    #[serde(default = "default_reortho")]
    pub reortho_every: usize,
    #[serde(default)]
    pub keep_trap: bool,
}

fn default_scheme() -> Scheme {
    Scheme::ExponentialMidpoint
}

fn yes() -> bool {
    true
}

fn default_reortho() -> usize {
    10
}

/// Second leg evolved in lockstep for a distance series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Companion {
    #[default]
    None,
    /// Same dynamics without the exchange term.
    Hartree,
    /// Non-relativistic dispersion with the same `m0`.
    Nonrelativistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Steps between rows of `diagnostics.csv`.
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    /// Steps between proof-chain inequality checks; 0 disables them.
    #[serde(default = "default_checks_every")]
    pub checks_every: usize,
    #[serde(default = "default_p_samples")]
    pub p_samples: usize,
    /// Steps between checkpoints; 0 disables them.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub companion: Companion,
    #[serde(default)]
    pub vlasov: bool,
    /// Vlasov step; defaults to the evolution step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vlasov_dt: Option<f64>,
    /// Relative energy drift allowed per unit time.
    #[serde(default = "default_energy_tol")]
    pub energy_drift_tolerance: f64,
    /// Relative deviation of `tr ω` from `N` allowed at any sample.
    #[serde(default = "default_trace_tol")]
    pub trace_tolerance: f64,
    #[serde(default = "default_projection_tol")]
    pub projection_tolerance: f64,
    #[serde(default = "default_kinetic_limit")]
    pub kinetic_ratio_limit: f64,
}

fn default_sample_every() -> usize {
    10
}

fn default_checks_every() -> usize {
    100
}

fn default_p_samples() -> usize {
    16
}

fn default_checkpoint_every() -> usize {
    1000
}

fn default_energy_tol() -> f64 {
    1e-6
}

fn default_trace_tol() -> f64 {
    1e-9
}

fn default_projection_tol() -> f64 {
    1e-8
}

fn default_kinetic_limit() -> f64 {
    10.0
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            sample_every: default_sample_every(),
            checks_every: default_checks_every(),
            p_samples: default_p_samples(),
            checkpoint_every: default_checkpoint_every(),
            companion: Companion::None,
            vlasov: false,
            vlasov_dt: None,
            energy_drift_tolerance: default_energy_tol(),
            trace_tolerance: default_trace_tol(),
            projection_tolerance: default_projection_tol(),
            kinetic_ratio_limit: default_kinetic_limit(),
        }
    }
}

/// Sweepable scenario parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Axis {
    #[serde(rename = "N")]
    #[value(name = "N", alias = "n")]
    N,
    #[serde(rename = "m0")]
    #[value(name = "m0")]
    M0,
    #[serde(rename = "dt")]
    #[value(name = "dt")]
    Dt,
    #[serde(rename = "coupling")]
    #[value(name = "coupling")]
    Coupling,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::N => "N",
            Axis::M0 => "m0",
            Axis::Dt => "dt",
            Axis::Coupling => "coupling",
        })
    }
}

impl FromStr for Scenario {
    type Err = toml::de::Error;

    fn from_str(text: &str) -> std::result::Result<Self, Self::Err> {
        toml::from_str(text)
    }
}

impl Scenario {
    /// Parses and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(crate::error::io(path))?;
        let scenario: Scenario = text.parse().map_err(|e: toml::de::Error| CliError::Parse {
            path: path.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn epsilon(&self) -> f64 {
        self.system
            .epsilon
            .unwrap_or_else(|| (self.system.n_particles as f64).powf(-1.0 / self.grid.dim as f64))
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(make_grid(self.grid.dim, self.grid.points_per_dim, self.grid.box_length, self.epsilon())?)
    }

    /// Pair interaction plus the external trap.
    pub fn potential(&self, grid: &Grid) -> Result<PotentialSpec> {
        let spec = match &self.potential.kernel {
            Kernel::Gaussian { strength, width } => PotentialSpec::gaussian(grid, *strength, *width)?,
            Kernel::Table { strength, vhat } => {
                if vhat.len() != grid.len() {
                    return Err(field(
                        "potential.kernel.vhat",
                        format!("expected {} entries (n^d), found {}", grid.len(), vhat.len()),
                    ));
                }
                PotentialSpec::new(grid, vhat.clone(), vec![0.0; grid.len()], *strength)?
            }
            Kernel::None => PotentialSpec::zero(grid),
        };
        if self.potential.trap != 0.0 {
            Ok(spec.with_vext(grid, periodized_trap(grid, self.potential.trap))?)
        } else {
            Ok(spec)
        }
    }

    pub fn evolution_config(&self) -> EvolutionConfig {
        let e = &self.evolution;
        EvolutionConfig {
            dt: e.dt,
            scheme: e.scheme,
            exchange_on: e.exchange_on,
            dispersion: self.dispersion,
            reortho_every: e.reortho_every,
            t_final: e.t_final,
            keep_trap: e.keep_trap,
        }
    }

    pub fn scf_config(&self) -> ScfConfig {
        self.preparation.scf.unwrap_or_default()
    }

    pub fn coupling(&self) -> f64 {
        match &self.potential.kernel {
            Kernel::Gaussian { strength, .. } | Kernel::Table { strength, .. } => *strength,
            Kernel::None => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(field("name", "must be non-empty and use only [A-Za-z0-9_.-]"));
        }
        let n = self.system.n_particles;
        let modes = self.grid.points_per_dim.checked_pow(self.grid.dim as u32).unwrap_or(usize::MAX);
        if n == 0 || n > modes {
            return Err(field("system.n_particles", format!("{n} not in 1..={modes}")));
        }
        let grid = self.grid()?;
        if let Some(eps) = self.system.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(field("system.epsilon", "must be positive"));
            }
        }
        if !(self.potential.trap >= 0.0 && self.potential.trap.is_finite()) {
            return Err(field("potential.trap", "must be finite and nonnegative"));
        }
        if !self.coupling().is_finite() {
            return Err(field("potential.kernel.strength", "must be finite"));
        }
        self.potential(&grid)?;
        self.dispersion.validate()?;
        if !(self.evolution.t_final > 0.0) {
            return Err(field("evolution.t_final", "must be positive"));
        }
        self.evolution_config().validate()?;
        match self.preparation.state {
            InitialState::Scf => self.scf_config().validate()?,
            InitialState::FermiSea if self.preparation.scf.is_some() => {
                return Err(field("preparation.scf", "only meaningful with state = \"scf\""));
            }
            InitialState::FermiSea => {}
        }
        let d = &self.diagnostics;
        if d.sample_every == 0 {
            return Err(field("diagnostics.sample_every", "must be at least 1"));
        }
        if d.checks_every > 0 && (d.p_samples == 0 || d.p_samples >= grid.points_per_dim() / 2) {
            return Err(field(
                "diagnostics.p_samples",
                format!("must be in 1..{}", grid.points_per_dim() / 2),
            ));
        }
        for (name, v) in [
            ("diagnostics.energy_drift_tolerance", d.energy_drift_tolerance),
            ("diagnostics.trace_tolerance", d.trace_tolerance),
            ("diagnostics.projection_tolerance", d.projection_tolerance),
            ("diagnostics.kinetic_ratio_limit", d.kinetic_ratio_limit),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(field(name, "must be positive"));
            }
        }
        if d.companion == Companion::Nonrelativistic && !matches!(self.dispersion, DispersionKind::Relativistic { .. }) {
            return Err(field("diagnostics.companion", "nonrelativistic companion needs a relativistic dispersion"));
        }
        if d.vlasov {
            if self.grid.dim != 1 {
                return Err(field("diagnostics.vlasov", "phase-space comparison is one-dimensional"));
            }
            if !matches!(self.dispersion, DispersionKind::Relativistic { .. }) {
                return Err(field("diagnostics.vlasov", "needs a relativistic dispersion"));
            }
        }
        if let Some(dt) = d.vlasov_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(field("diagnostics.vlasov_dt", "must be positive"));
            }
        }
        Ok(())
    }

    /// Canonical TOML of every configuration field except `output_dir`.
    pub fn canonical_toml(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        toml::to_string(&c).expect("scenario serializes")
    }

    /// SHA-256 of the canonical TOML, hex encoded.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_toml().as_bytes()))
    }

    /// Copy with one parameter replaced. Sweeping `N` re-derives ε.
    pub fn with_axis(&self, axis: Axis, value: f64) -> Result<Self> {
        let mut s = self.clone();
        match axis {
            Axis::N => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(field("system.n_particles", format!("sweep value {value} is not a positive integer")));
                }
                s.system.n_particles = value as usize;
                s.system.epsilon = None;
            }
            Axis::M0 => {
                s.dispersion = match s.dispersion {
                    DispersionKind::Relativistic { .. } => DispersionKind::Relativistic { m0: value },
                    DispersionKind::NonRelativistic { .. } => DispersionKind::NonRelativistic { m0: value },
                    DispersionKind::Massless => return Err(field("dispersion.m0", "massless dispersion has no m0")),
                }
            }
            Axis::Dt => s.evolution.dt = value,
            Axis::Coupling => match &mut s.potential.kernel {
                Kernel::Gaussian { strength, .. } | Kernel::Table { strength, .. } => *strength = value,
                Kernel::None => return Err(field("potential.kernel", "no kernel strength to sweep")),
            },
        }
        s.validate()?;
        Ok(s)
    }
}
