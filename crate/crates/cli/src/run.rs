//! Single scenario runs and their artifact set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rhfs_core::container::{save_orbitals, save_phase_space, ContainerKind, FORMAT_VERSION};
use rhfs_core::dynamics::{evolve, pair_evolve, Comparator, Observer, SimState};
use rhfs_core::hf::scf_minimize;
use rhfs_core::semiclassics::{
    default_p_samples, exchange_double_commutator_check, exp_bound_check, growth_fit, integrated_audit,
    kinetic_double_commutator_check, wigner_transform, CheckReport, DiagnosticsSeries, GrowthFit, IntegratedAudit,
    VelocityGrid, CHECK_TOLERANCE,
};
use rhfs_core::vlasov::{compare_to_wigner, vlasov_evolve, MASS_TOLERANCE};
use rhfs_core::{DispersionKind, OrbitalSet};
use serde::{Deserialize, Serialize};

use crate::error::{io, CliError, Result};
use crate::output::{csv, to_json, write_json, write_text};
use crate::scenario::{Companion, InitialState, Scenario};

/// Files a run may produce; stale copies are removed before a rerun.
const ARTIFACTS: &[&str] = &[
    "manifest.json",
    "scenario.toml",
    "scf_trace.csv",
    "initial.rhfs",
    "diagnostics.csv",
    "final.rhfs",
    "checks.json",
    "growth_fit.json",
    "companion_distance.csv",
    "vlasov.csv",
    "wigner_final.rhfs",
    "vlasov_final.rhfs",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    DiagnosticsFailed,
    Aborted,
}

impl RunStatus {
    pub fn exit_code(self) -> u8 {
        match self {
            Self::Ok => 0,
            Self::DiagnosticsFailed => 1,
            Self::Aborted => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardCheck {
    pub name: String,
    pub value: f64,
    /// `"<="` or `">="`: how `value` must compare to `limit`.
    pub relation: String,
    pub limit: f64,
    pub pass: bool,
}

impl HardCheck {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<=".into(),
            limit,
            pass: value <= limit,
        }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: ">=".into(),
            limit,
            pass: value >= limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub rhfs_cli: String,
    pub rhfs_core: String,
    pub container_format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            rhfs_cli: env!("CARGO_PKG_VERSION").into(),
            rhfs_core: rhfs_core::VERSION.into(),
            container_format: FORMAT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub status: RunStatus,
    pub config_hash: String,
    pub versions: Versions,
    pub steps: usize,
    pub hard_checks: Vec<HardCheck>,
    /// End-of-run scalars; these become the columns of sweep tables.
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
    pub last_checkpoint: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub status: RunStatus,
    pub manifest: Manifest,
}

#[derive(Debug, Serialize)]
struct ChecksFile<'a> {
    config_hash: &'a str,
    hard_checks: &'a [HardCheck],
    reports: &'a [CheckReport],
    integrated_audit: Option<&'a IntegratedAudit>,
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum GrowthReport {
    Fit {
        fit: GrowthFit,
        n_particles: usize,
        epsilon: f64,
        samples: usize,
    },
    Skipped {
        skipped: String,
    },
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    time: f64,
    steps: usize,
    config_hash: &'a str,
}

struct Checkpointer<'a> {
    dir: &'a Path,
    every: usize,
    hash: &'a str,
    written: Vec<String>,
}

impl Observer for Checkpointer<'_> {
    fn every(&self) -> usize {
        self.every
    }

    fn observe(&mut self, state: &SimState) -> rhfs_core::Result<()> {
        if state.steps == 0 || state.steps % self.every != 0 {
            return Ok(());
        }
        let stem = format!("checkpoints/step_{:09}", state.steps);
        save_orbitals(&self.dir.join(format!("{stem}.rhfs")), &state.orbitals)?;
        let sidecar = Sidecar {
            time: state.time,
            steps: state.steps,
            config_hash: self.hash,
        };
        let text = to_json(&sidecar).expect("sidecar serializes");
        std::fs::write(self.dir.join(format!("{stem}.json")), text)?;
        self.written.push(format!("{stem}.rhfs"));
        self.written.push(format!("{stem}.json"));
        Ok(())
    }
}

struct ProofChecks {
    every: usize,
    p_samples: Vec<usize>,
    m0: Option<f64>,
    reports: Vec<CheckReport>,
}

impl Observer for ProofChecks {
    fn every(&self) -> usize {
        self.every
    }

    fn observe(&mut self, state: &SimState) -> rhfs_core::Result<()> {
        let t = state.time;
        self.reports.push(exp_bound_check(&state.orbitals, &self.p_samples)?.at(t));
        self.reports
            .push(exchange_double_commutator_check(&state.orbitals, &state.potential)?.at(t));
        if let Some(m0) = self.m0 {
            self.reports.push(kinetic_double_commutator_check(&state.orbitals, m0)?.at(t));
        }
        Ok(())
    }
}

struct Ctx<'a> {
    dir: &'a Path,
    artifacts: Vec<String>,
    hard: Vec<HardCheck>,
    metrics: BTreeMap<String, f64>,
    last_checkpoint: Option<String>,
    steps: usize,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(&self.dir.join(name), text)?;
        self.artifacts.push(name.into());
        Ok(())
    }

    fn orbitals(&mut self, name: &str, orbitals: &OrbitalSet) -> Result<()> {
        save_orbitals(&self.dir.join(name), orbitals)?;
        self.artifacts.push(name.into());
        Ok(())
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.into(), value);
    }
}

fn clean(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for name in ARTIFACTS {
        let path = dir.join(name);
        if path.exists() {
            std::fs::remove_file(&path).map_err(io(&path))?;
        }
    }
    let checkpoints = dir.join("checkpoints");
    if checkpoints.exists() {
        std::fs::remove_dir_all(&checkpoints).map_err(io(&checkpoints))?;
    }
    Ok(())
}

/// Runs a scenario, writing every artifact under `dir`. Validation and I/O
/// problems before the run starts are returned as errors; failures after
/// that produce an `Aborted` manifest.
pub fn run(scenario: &Scenario, dir: &Path) -> Result<RunOutcome> {
    scenario.validate()?;
    clean(dir)?;
    let hash = scenario.config_hash();
    let mut ctx = Ctx {
        dir,
        artifacts: Vec::new(),
        hard: Vec::new(),
        metrics: BTreeMap::new(),
        last_checkpoint: None,
        steps: 0,
    };
    info!("running `{}` into {}", scenario.name, dir.display());
    let error = execute(scenario, &hash, &mut ctx).err().map(|e| e.to_string());
    let status = if error.is_some() {
        RunStatus::Aborted
    } else if ctx.hard.iter().any(|c| !c.pass) {
        RunStatus::DiagnosticsFailed
    } else {
        RunStatus::Ok
    };
    if let Some(e) = &error {
        warn!("run `{}` aborted: {e}", scenario.name);
    }
    ctx.artifacts.push("manifest.json".into());
    ctx.artifacts.sort();
    let manifest = Manifest {
        name: scenario.name.clone(),
        status,
        config_hash: hash,
        versions: Versions::current(),
        steps: ctx.steps,
        hard_checks: ctx.hard,
        metrics: ctx.metrics,
        artifacts: ctx.artifacts,
        last_checkpoint: ctx.last_checkpoint,
        error,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        status,
        manifest,
    })
}

fn relativistic_mass(d: &DispersionKind) -> Option<f64> {
    match *d {
        DispersionKind::Relativistic { m0 } => Some(m0),
        _ => None,
    }
}

fn max_relative_deviation(values: &[f64], reference: f64) -> f64 {
    let scale = reference.abs().max(f64::MIN_POSITIVE);
    values.iter().map(|v| (v - reference).abs() / scale).fold(0.0, f64::max)
}

fn execute(sc: &Scenario, hash: &str, ctx: &mut Ctx) -> Result<()> {
    ctx.write("scenario.toml", &sc.canonical_toml())?;
    let grid = sc.grid()?;
    let potential = sc.potential(&grid)?;
    let n = sc.system.n_particles;
    let eps = grid.epsilon();
    let d = &sc.diagnostics;
    ctx.metric("n_particles", n as f64);
    ctx.metric("epsilon", eps);
    ctx.metric("dt", sc.evolution.dt);
    ctx.metric("coupling", sc.coupling());
    if let Some(m0) = sc.dispersion.mass() {
        ctx.metric("m0", m0);
    }

    let initial = match sc.preparation.state {
        InitialState::Scf => {
            let cfg = sc.scf_config();
            let outcome = scf_minimize(&grid, &potential, n, &sc.dispersion, &cfg)?;
            ctx.write("scf_trace.csv", &outcome.energy_trace_csv())?;
            let mut check = HardCheck::at_most("scf_stationarity", outcome.residual(), cfg.stationarity_threshold());
            check.pass = outcome.converged;
            ctx.hard.push(check);
            ctx.metric("scf_energy", outcome.energy());
            ctx.metric("scf_iterations", outcome.iterations as f64);
            outcome.orbitals
        }
        InitialState::FermiSea => OrbitalSet::fermi_sea(&grid, n, &sc.dispersion)?,
    };
    ctx.orbitals("initial.rhfs", &initial)?;

    let cfg = sc.evolution_config();
    let state = SimState::new(initial.clone(), &potential, cfg.clone())?;
    let m0 = relativistic_mass(&sc.dispersion);
    std::fs::create_dir_all(ctx.dir.join("checkpoints")).map_err(io(ctx.dir.join("checkpoints")))?;
    let mut checkpointer = Checkpointer {
        dir: ctx.dir,
        every: d.checkpoint_every,
        hash,
        written: Vec::new(),
    };
    let mut checks = ProofChecks {
        every: d.checks_every,
        p_samples: default_p_samples(&grid, d.p_samples),
        m0,
        reports: Vec::new(),
    };
    let mut observers: Vec<&mut dyn Observer> = Vec::new();
    if d.checkpoint_every > 0 {
        observers.push(&mut checkpointer);
    }
    if d.checks_every > 0 {
        observers.push(&mut checks);
    }
    let result = evolve(state, d.sample_every, &mut observers);
    drop(observers);
    ctx.last_checkpoint = checkpointer.written.iter().rev().find(|p| p.ends_with(".rhfs")).cloned();
    ctx.artifacts.extend(checkpointer.written);
    let (end, series) = match result {
        Ok(v) => v,
        Err(aborted) => {
            ctx.steps = aborted.last_good.steps;
            ctx.write("diagnostics.csv", &aborted.series.to_csv())?;
            return Err(CliError::Evolution(aborted.to_string()));
        }
    };
    ctx.steps = end.steps;
    ctx.write("diagnostics.csv", &series.to_csv())?;
    ctx.orbitals("final.rhfs", &end.orbitals)?;

    conservation_checks(sc, &series, ctx);
    let audit = proof_chain_checks(sc, &series, &checks.reports, m0, &end, ctx)?;
    growth_report(&series, n, eps, ctx)?;

    let cx = series.comm_x_total();
    let cg = series.comm_grad_total();
    ctx.metric("time_final", end.time);
    ctx.metric("energy_final", end.energy()?);
    ctx.metric("comm_x_final", *cx.last().expect("series has samples"));
    ctx.metric("comm_grad_final", *cg.last().expect("series has samples"));
    ctx.metric("comm_x_scaled_max", cx.iter().fold(0.0, |a: f64, b| a.max(*b)) / (n as f64 * eps));
    ctx.metric("comm_grad_scaled_max", cg.iter().fold(0.0, |a: f64, b| a.max(*b)) / (n as f64 * eps));
    ctx.metric("comm_x_variation", max_relative_deviation(&cx, cx[0]));
    ctx.metric("comm_grad_variation", max_relative_deviation(&cg, cg[0]));

    if d.companion != Companion::None {
        let mut other = cfg.clone();
        let comparator = match d.companion {
            Companion::Hartree => {
                other.exchange_on = false;
                Comparator::Exchange
            }
            _ => {
                other.dispersion = DispersionKind::NonRelativistic {
                    m0: m0.expect("validated relativistic"),
                };
                Comparator::Dispersion
            }
        };
        let a = SimState::new(initial.clone(), &potential, cfg.clone())?;
        let b = SimState::new(initial.clone(), &potential, other)?;
        let distance = pair_evolve(a, b, comparator, d.sample_every)?;
        ctx.write("companion_distance.csv", &distance.to_csv())?;
        let last = *distance.distances.last().expect("distance series has samples");
        ctx.metric("companion_hs_final", last);
        ctx.metric("companion_hs_per_n", last / n as f64);
    }

    if d.vlasov {
        let m0 = m0.expect("validated relativistic");
        if cfg.keep_trap {
            warn!("Vlasov comparison ignores the trap kept in the quantum evolution");
        }
        let v_grid = VelocityGrid::for_grid(&grid);
        let w0 = wigner_transform(&initial, v_grid)?;
        let w_end = wigner_transform(&end.orbitals, v_grid)?;
        let vlasov = vlasov_evolve(w0, &end.potential, m0, d.vlasov_dt.unwrap_or(cfg.dt), cfg.t_final, d.sample_every)?;
        let rows = (0..vlasov.times.len()).map(|i| vec![vlasov.times[i], vlasov.mass[i], vlasov.energy[i]]);
        ctx.write("vlasov.csv", &csv(&["time", "mass", "energy"], rows))?;
        save_phase_space(&ctx.dir.join("wigner_final.rhfs"), ContainerKind::Wigner, &w_end, n)?;
        save_phase_space(&ctx.dir.join("vlasov_final.rhfs"), ContainerKind::Vlasov, &vlasov.field, n)?;
        ctx.artifacts.push("wigner_final.rhfs".into());
        ctx.artifacts.push("vlasov_final.rhfs".into());
        let distance = compare_to_wigner(&vlasov.field, &w_end)?;
        ctx.hard.push(HardCheck::at_most("vlasov_mass_step", vlasov.max_mass_step, MASS_TOLERANCE));
        ctx.metric("vlasov_l2", distance.l2);
        ctx.metric("vlasov_marginal_l2", distance.position_marginal);
        ctx.metric("vlasov_max_mass_step", vlasov.max_mass_step);
    }

    let file = ChecksFile {
        config_hash: hash,
        hard_checks: &ctx.hard,
        reports: &checks.reports,
        integrated_audit: audit.as_ref(),
    };
    let text = to_json(&file)?;
    ctx.write("checks.json", &text)?;
    Ok(())
}

fn conservation_checks(sc: &Scenario, series: &DiagnosticsSeries, ctx: &mut Ctx) {
    let n = sc.system.n_particles as f64;
    let d = &sc.diagnostics;
    let trace = max_relative_deviation(&series.extra["trace"], n);
    ctx.hard.push(HardCheck::at_most("trace", trace, d.trace_tolerance));
    let projection = series.extra["projection_residual"].iter().copied().fold(0.0, f64::max);
    ctx.hard.push(HardCheck::at_most("projection_residual", projection, d.projection_tolerance));
    let drift = max_relative_deviation(&series.energy, series.energy[0]);
    let allowed = d.energy_drift_tolerance * sc.evolution.t_final.max(1.0);
    ctx.hard.push(HardCheck::at_most("energy_drift", drift, allowed));
    ctx.metric("energy_initial", series.energy[0]);
    ctx.metric("energy_drift_max", drift);
    ctx.metric("projection_residual_max", projection);
}

fn proof_chain_checks(
    sc: &Scenario,
    series: &DiagnosticsSeries,
    reports: &[CheckReport],
    m0: Option<f64>,
    end: &SimState,
    ctx: &mut Ctx,
) -> Result<Option<IntegratedAudit>> {
    if reports.is_empty() {
        return Ok(None);
    }
    for name in ["exp_bound", "exchange_double_commutator"] {
        let of_kind: Vec<&CheckReport> = reports.iter().filter(|r| r.check == name).collect();
        let worst = of_kind.iter().map(|r| r.worst_margin()).fold(f64::INFINITY, f64::min);
        let mut check = HardCheck::at_least(name, worst, -CHECK_TOLERANCE);
        check.pass = of_kind.iter().all(|r| r.pass);
        ctx.hard.push(check);
    }
    let Some(m0) = m0 else {
        return Ok(None);
    };
    let ratio = reports
        .iter()
        .filter(|r| r.check == "kinetic_double_commutator")
        .map(|r| r.max_ratio())
        .fold(0.0, f64::max);
    ctx.hard.push(HardCheck::at_most("kinetic_double_commutator_ratio", ratio, sc.diagnostics.kinetic_ratio_limit));
    if series.len() < 2 {
        return Ok(None);
    }
    let audit = integrated_audit(series, ratio, &end.potential, end.orbitals.grid(), sc.system.n_particles, m0)?;
    let worst = audit.margins_x.iter().chain(&audit.margins_grad).copied().fold(f64::INFINITY, f64::min);
    let mut check = HardCheck::at_least("integrated_audit", worst, 0.0);
    check.pass = audit.pass;
    ctx.hard.push(check);
    Ok(Some(audit))
}

fn growth_report(series: &DiagnosticsSeries, n: usize, eps: f64, ctx: &mut Ctx) -> Result<()> {
    let report = match growth_fit(&series.times, &series.comm_x_total(), n, eps) {
        Ok(fit) => {
            ctx.metric("growth_C", fit.big_c);
            ctx.metric("growth_c", fit.c);
            ctx.metric("growth_residual", fit.residual);
            GrowthReport::Fit {
                fit,
                n_particles: n,
                epsilon: eps,
                samples: series.len(),
            }
        }
        Err(e) => GrowthReport::Skipped { skipped: e.to_string() },
    };
    let text = to_json(&report)?;
    ctx.write("growth_fit.json", &text)
}
