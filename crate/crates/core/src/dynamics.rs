//! Time evolution of orbital sets under the mean-field equation
//! `iε ∂_t f_j = h(t) f_j`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::{hs_distance_squared, OrbitalSet};
use crate::error::{invalid, Error, Result};
use crate::krylov::{expm_hermitian, KrylovOptions};
use crate::meanfield::{energy_breakdown, MeanField, MeanFieldTerms};
use crate::semiclassics::{commutator_channels, DiagnosticsSeries};
use crate::spectral::{DispersionKind, Field, PotentialSpec};

/// Post-step Gram deviation above which a step is rejected.
pub const GRAM_REJECT: f64 = 1e-6;

/// Fixed-point iterations of the mean field at the half step.
pub const MIDPOINT_ITERATIONS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Rk4FrozenField,
    ExponentialMidpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_true")]
    pub exchange_on: bool,
    pub dispersion: DispersionKind,
    #[serde(default = "default_reortho")]
    pub reortho_every: usize,
    pub t_final: f64,
    /// Carry the external trap into the evolution.
    #[serde(default)]
    pub keep_trap: bool,
}

fn default_scheme() -> Scheme {
    Scheme::ExponentialMidpoint
}

fn default_true() -> bool {
    true
}

fn default_reortho() -> usize {
    10
}

impl EvolutionConfig {
    pub fn new(dt: f64, t_final: f64, dispersion: DispersionKind) -> Self {
        Self {
            dt,
            scheme: default_scheme(),
            exchange_on: true,
            dispersion,
            reortho_every: default_reortho(),
            t_final,
            keep_trap: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        if self.reortho_every == 0 {
            return Err(invalid("reortho_every", "must be at least 1"));
        }
        if !self.t_final.is_finite() {
            return Err(invalid("t_final", "must be finite"));
        }
        self.dispersion.validate()
    }

    fn terms(&self) -> MeanFieldTerms {
        MeanFieldTerms {
            external: self.keep_trap,
            exchange: self.exchange_on,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub time: f64,
    pub orbitals: OrbitalSet,
    pub potential: PotentialSpec,
    pub config: EvolutionConfig,
    pub steps: usize,
    kinetic: Vec<f64>,
}

impl SimState {
    /// Starts an evolution at `t = 0`. The trap is removed unless the
    /// configuration keeps it.
    pub fn new(orbitals: OrbitalSet, potential: &PotentialSpec, config: EvolutionConfig) -> Result<Self> {
        config.validate()?;
        let grid = orbitals.grid();
        grid.check_len(potential.vhat().len())?;
        let kinetic = grid.symbol_table(&config.dispersion);
        let max_symbol = kinetic.iter().copied().fold(0.0, f64::max);
        let suggested = 0.1 * grid.epsilon() / max_symbol;
        if config.dt > suggested {
            log::warn!("dt = {} exceeds the suggested 0.1·ε/max symbol = {suggested:.3e}", config.dt);
        }
        let potential = if config.keep_trap {
            potential.clone()
        } else {
            potential.without_trap()
        };
        Ok(Self {
            time: 0.0,
            orbitals,
            potential,
            config,
            steps: 0,
            kinetic,
        })
    }

    pub fn mean_field_of(&self, orbitals: &OrbitalSet) -> Result<MeanField> {
        MeanField::with_kinetic(orbitals, &self.potential, self.kinetic.clone(), self.config.terms())
    }

    pub fn mean_field(&self) -> Result<MeanField> {
        self.mean_field_of(&self.orbitals)
    }

    /// The energy functional conserved by the configured flow.
    pub fn energy(&self) -> Result<f64> {
        Ok(energy_breakdown(&self.orbitals, &self.potential, &self.config.dispersion, self.config.terms())?.total())
    }

    /// Moves the end of the evolution to `t_final`.
    pub fn extend_to(mut self, t_final: f64) -> Self {
        self.config.t_final = t_final;
        self
    }

    fn with_orbitals(&self, orbitals: OrbitalSet, dt: f64) -> Self {
        Self {
            time: self.time + dt,
            orbitals,
            potential: self.potential.clone(),
            config: self.config.clone(),
            steps: self.steps + 1,
            kinetic: self.kinetic.clone(),
        }
    }
}

fn krylov_options() -> KrylovOptions {
    KrylovOptions {
        tol: 1e-12,
        ..Default::default()
    }
}

fn propagate(h: &MeanField, orbitals: &OrbitalSet, tau: f64) -> Result<OrbitalSet> {
    let opts = krylov_options();
    let out = orbitals
        .orbitals()
        .iter()
        .map(|f| expm_hermitian(|v| h.apply(v), f, tau, &opts).map(|(g, _)| g))
        .collect::<Result<Vec<Field>>>()?;
    OrbitalSet::new_unchecked(orbitals.grid().clone(), out)
}

fn exponential_midpoint(state: &SimState, dt: f64) -> Result<OrbitalSet> {
    let tau = dt / state.orbitals.grid().epsilon();
    let mut h = state.mean_field()?;
    for _ in 0..MIDPOINT_ITERATIONS {
        let half = propagate(&h, &state.orbitals, tau / 2.0)?;
        h = state.mean_field_of(&half)?;
    }
    propagate(&h, &state.orbitals, tau)
}

fn rk4(state: &SimState, dt: f64) -> Result<OrbitalSet> {
    let grid = state.orbitals.grid();
    let factor = Complex64::new(0.0, -1.0 / grid.epsilon());
    let rhs = |set: &OrbitalSet| -> Result<Vec<Field>> {
        let h = state.mean_field_of(set)?;
        Ok(set
            .orbitals()
            .iter()
            .map(|f| h.apply(f).into_iter().map(|v| v * factor).collect())
            .collect())
    };
    let shifted = |k: &[Field], s: f64| -> Result<OrbitalSet> {
        let orbs = state
            .orbitals
            .orbitals()
            .iter()
            .zip(k)
            .map(|(f, d)| f.iter().zip(d).map(|(a, b)| a + b * s).collect())
            .collect();
        OrbitalSet::new_unchecked(grid.clone(), orbs)
    };
    let k1 = rhs(&state.orbitals)?;
    let k2 = rhs(&shifted(&k1, dt / 2.0)?)?;
    let k3 = rhs(&shifted(&k2, dt / 2.0)?)?;
    let k4 = rhs(&shifted(&k3, dt)?)?;
    let orbs = state
        .orbitals
        .orbitals()
        .iter()
        .enumerate()
        .map(|(j, f)| {
            f.iter()
                .enumerate()
                .map(|(i, v)| v + (k1[j][i] + (k2[j][i] + k3[j][i]) * 2.0 + k4[j][i]) * (dt / 6.0))
                .collect()
        })
        .collect();
    OrbitalSet::new_unchecked(grid.clone(), orbs)
}

/// Advances by `dt` (which may be shorter than the configured step).
pub fn step_by(state: &SimState, dt: f64) -> Result<SimState> {
    let next = match state.config.scheme {
        Scheme::ExponentialMidpoint => exponential_midpoint(state, dt)?,
        Scheme::Rk4FrozenField => rk4(state, dt)?,
    };
    let deviation = next.gram_deviation();
    if !deviation.is_finite() {
        return Err(Error::NonFinite("orbital step"));
    }
    if deviation > GRAM_REJECT {
        return Err(Error::StepRejected {
            time: state.time,
            deviation,
            limit: GRAM_REJECT,
        });
    }
    let mut out = state.with_orbitals(next, dt);
    if out.steps % state.config.reortho_every == 0 {
        out.orbitals = out.orbitals.reorthonormalize()?;
    }
    Ok(out)
}

pub fn step(state: &SimState) -> Result<SimState> {
    step_by(state, state.config.dt)
}

/// Hook invoked on emitted states every `every()` steps (and on the final state).
pub trait Observer {
    fn every(&self) -> usize {
        1
    }

    fn observe(&mut self, state: &SimState) -> Result<()>;
}

#[derive(Debug, thiserror::Error)]
#[error("evolution aborted at t = {time}: {source}")]
pub struct Aborted {
    pub source: Error,
    pub time: f64,
    pub last_good: Box<SimState>,
    pub series: DiagnosticsSeries,
}

/// Records the built-in channels: commutator trace norms, the conserved
/// energy, `trace` (= tr ω), `projection_residual` (‖ω² − ω‖_HS) and
/// `gram_deviation`.
pub fn record_sample(series: &mut DiagnosticsSeries, state: &SimState) -> Result<()> {
    let channels = commutator_channels(&state.orbitals)?;
    let gram = state.orbitals.gram();
    let trace: f64 = (0..gram.nrows()).map(|i| gram[(i, i)].re).sum();
    series.push(
        state.time,
        &channels,
        state.energy()?,
        &[
            ("gram_deviation", state.orbitals.gram_deviation()),
            ("projection_residual", state.orbitals.projection_residual()),
            ("trace", trace),
        ],
    )
}

fn remaining_steps(state: &SimState) -> usize {
    let span = state.config.t_final - state.time;
    if span <= 1e-12 * state.config.dt {
        0
    } else {
        (span / state.config.dt - 1e-9).ceil() as usize
    }
}

/// Steps to `config.t_final`, sampling the series every `sample_every`
/// steps (always including the first and last state).
pub fn evolve(
    state: SimState,
    sample_every: usize,
    observers: &mut [&mut dyn Observer],
) -> std::result::Result<(SimState, DiagnosticsSeries), Box<Aborted>> {
    let sample_every = sample_every.max(1);
    let mut series = DiagnosticsSeries::new(state.orbitals.grid().dim());
    let abort = |source: Error, state: &SimState, series: &DiagnosticsSeries| {
        Box::new(Aborted {
            source,
            time: state.time,
            last_good: Box::new(state.clone()),
            series: series.clone(),
        })
    };
    if let Err(e) = record_sample(&mut series, &state) {
        return Err(abort(e, &state, &series));
    }
    for obs in observers.iter_mut() {
        if let Err(e) = obs.observe(&state) {
            return Err(abort(e, &state, &series));
        }
    }
    let total = remaining_steps(&state);
    let t_final = state.config.t_final;
    let mut current = state;
    for k in 1..=total {
        let dt = if k == total { t_final - current.time } else { current.config.dt };
        let next = match step_by(&current, dt) {
            Ok(s) => s,
            Err(e) => return Err(abort(e, &current, &series)),
        };
        current = next;
        if k == total {
            current.time = t_final;
        }
        if k % sample_every == 0 || k == total {
            if let Err(e) = record_sample(&mut series, &current) {
                return Err(abort(e, &current, &series));
            }
        }
        for obs in observers.iter_mut() {
            if k % obs.every().max(1) == 0 || k == total {
                if let Err(e) = obs.observe(&current) {
                    return Err(abort(e, &current, &series));
                }
            }
        }
    }
    Ok((current, series))
}

/// The single configuration axis along which two legs of a pair run may differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Identical,
    Exchange,
    Dispersion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceSeries {
    pub times: Vec<f64>,
    /// `tr|ω_a − ω_b|²`.
    pub distances: Vec<f64>,
}

impl DistanceSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,hs_distance_squared\n");
        for (t, d) in self.times.iter().zip(&self.distances) {
            out.push_str(&format!("{t:.16e},{d:.16e}\n"));
        }
        out
    }
}

fn check_pair(a: &SimState, b: &SimState, comparator: Comparator) -> Result<()> {
    let mismatch = |what: &str| Err(Error::ConfigMismatch(what.to_string()));
    if a.orbitals.grid() != b.orbitals.grid() {
        return Err(Error::GridMismatch);
    }
    if a.orbitals.orbitals() != b.orbitals.orbitals() || a.time != b.time {
        return mismatch("initial orbitals differ");
    }
    if a.potential != b.potential {
        return mismatch("potentials differ");
    }
    let (ca, cb) = (&a.config, &b.config);
    if ca.dt != cb.dt || ca.scheme != cb.scheme || ca.reortho_every != cb.reortho_every || ca.t_final != cb.t_final || ca.keep_trap != cb.keep_trap {
        return mismatch("time stepping differs");
    }
    if ca.exchange_on != cb.exchange_on && comparator != Comparator::Exchange {
        return mismatch("exchange flag differs");
    }
    if ca.dispersion != cb.dispersion && comparator != Comparator::Dispersion {
        return mismatch("dispersion differs");
    }
    Ok(())
}

/// Evolves two legs from identical data in lockstep and records
/// `tr|ω_a − ω_b|²` every `sample_every` steps.
pub fn pair_evolve(a: SimState, b: SimState, comparator: Comparator, sample_every: usize) -> Result<DistanceSeries> {
    check_pair(&a, &b, comparator)?;
    let sample_every = sample_every.max(1);
    let mut series = DistanceSeries {
        times: vec![a.time],
        distances: vec![hs_distance_squared(&a.orbitals, &b.orbitals)?],
    };
    let total = remaining_steps(&a);
    let t_final = a.config.t_final;
    let (mut a, mut b) = (a, b);
    for k in 1..=total {
        let dt = if k == total { t_final - a.time } else { a.config.dt };
        a = step_by(&a, dt)?;
        b = step_by(&b, dt)?;
        if k == total {
            a.time = t_final;
            b.time = t_final;
        }
        if k % sample_every == 0 || k == total {
            series.times.push(a.time);
            series.distances.push(hs_distance_squared(&a.orbitals, &b.orbitals)?);
        }
    }
    Ok(series)
}
