//! Ground states of the Hartree-Fock functional by damped self-consistent
//! iteration.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::density::{fermi_sea_modes, OrbitalSet};
use crate::eigs::{dense_eigen, lobpcg, LobpcgOptions};
use crate::error::{invalid, Error, Result};
use crate::linalg::CMatrix;
use crate::meanfield::{energy_breakdown, MeanField, MeanFieldTerms};
use crate::spectral::{DispersionKind, Field, Grid, PotentialSpec};

/// Grids up to this many nodes are diagonalized densely.
pub const DENSE_LIMIT: usize = 2048;

/// Slack allowed when comparing consecutive energies.
pub const ENERGY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScfConfig {
    pub max_iterations: usize,
    pub mixing: f64,
    pub convergence_tol: f64,
    #[serde(default = "default_true")]
    pub aufbau: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ScfConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            mixing: 0.5,
            convergence_tol: 1e-11,
            aufbau: true,
        }
    }
}

impl ScfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mixing > 0.0 && self.mixing <= 1.0) {
            return Err(invalid("mixing", format!("{} not in (0, 1]", self.mixing)));
        }
        if !(self.convergence_tol > 0.0 && self.convergence_tol.is_finite()) {
            return Err(invalid("convergence_tol", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations", "must be at least 1"));
        }
        Ok(())
    }

    /// Bound on `‖[h, ω]‖_HS` required for convergence. The energy is
    /// quadratic in the distance to a stationary point, so the commutator
    /// scales like the square root of the energy tolerance.
    pub fn stationarity_threshold(&self) -> f64 {
        10.0 * self.convergence_tol.sqrt()
    }
}

/// `tr|[x_a, ω]|/(Nε)` and `tr|[ε∂_a, ω]|/(Nε)` per axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommutatorDiagnostics {
    pub position: Vec<f64>,
    pub gradient: Vec<f64>,
}

impl CommutatorDiagnostics {
    pub fn compute(orbitals: &OrbitalSet) -> Result<Self> {
        let grid = orbitals.grid();
        let scale = orbitals.n_particles() as f64 * grid.epsilon();
        let mut position = Vec::with_capacity(grid.dim());
        let mut gradient = Vec::with_capacity(grid.dim());
        for axis in 0..grid.dim() {
            position.push(orbitals.commutator_with_position(axis).trace_norm()? / scale);
            gradient.push(orbitals.commutator_with_momentum(axis).trace_norm()? / scale);
        }
        Ok(Self { position, gradient })
    }

    pub fn max(&self) -> f64 {
        self.position.iter().chain(&self.gradient).copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct ScfOutcome {
    pub orbitals: OrbitalSet,
    /// Energy of the starting guess followed by one entry per accepted iterate.
    pub energies: Vec<f64>,
    /// `‖[h(ω), ω]‖_HS` aligned with `energies`.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the energy rose even after the mixing was halved.
    pub oscillation: bool,
    pub mixing: f64,
    pub diagnostics: CommutatorDiagnostics,
}

impl ScfOutcome {
    pub fn energy(&self) -> f64 {
        *self.energies.last().expect("at least the initial energy")
    }

    pub fn residual(&self) -> f64 {
        *self.residuals.last().expect("at least the initial residual")
    }

    /// Columns `iteration,energy,residual`.
    pub fn energy_trace_csv(&self) -> String {
        let mut out = String::from("iteration,energy,residual\n");
        for (i, (e, r)) in self.energies.iter().zip(&self.residuals).enumerate() {
            out.push_str(&format!("{i},{e:.16e},{r:.16e}\n"));
        }
        out
    }
}

/// Eigenvectors (as L²-normalized fields) of a mean-field operator, ascending.
struct Spectrum {
    values: Vec<f64>,
    vectors: Vec<Field>,
}

struct Diagonalizer {
    grid: Grid,
    block: usize,
    warm: Option<Vec<Field>>,
}

impl Diagonalizer {
    fn new(grid: &Grid, n: usize) -> Self {
        Self {
            grid: grid.clone(),
            block: (n + 8 + n / 4).min(grid.len()),
            warm: None,
        }
    }

    fn dense(&self) -> bool {
        self.grid.len() <= DENSE_LIMIT
    }

    fn spectrum(&mut self, h: &MeanField) -> Result<Spectrum> {
        let grid = &self.grid;
        let norm = 1.0 / grid.cell_volume().sqrt();
        if self.dense() {
            let (values, vecs) = dense_eigen(h.dense_matrix());
            let vectors = (0..vecs.ncols())
                .map(|c| vecs.column(c).iter().map(|v| v * norm).collect())
                .collect();
            return Ok(Spectrum { values, vectors });
        }
        let start = match self.warm.take() {
            Some(w) => w,
            None => plane_wave_block(grid, self.block),
        };
        let symbol = h.kinetic_symbol();
        let shift = 1e-3 * symbol.iter().copied().fold(0.0, f64::max) + 1e-12;
        let precond = |v: &[Complex64]| -> Vec<Complex64> {
            let mut c = grid.forward(v);
            c.iter_mut().zip(symbol).for_each(|(x, s)| *x /= s + shift);
            grid.inverse(&c)
        };
        let (values, vecs) = lobpcg(|v| h.apply(v), precond, start, &LobpcgOptions::default())?;
        self.warm = Some(vecs.clone());
        let vectors = vecs.into_iter().map(|v| v.into_iter().map(|x| x * norm).collect()).collect();
        Ok(Spectrum { values, vectors })
    }
}

fn plane_wave_block(grid: &Grid, k: usize) -> Vec<Field> {
    let mut modes: Vec<usize> = (0..grid.len()).collect();
    let norms = grid.momentum_norm_table();
    modes.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(grid.lexicographic_rank(a).cmp(&grid.lexicographic_rank(b))));
    modes.truncate(k);
    let set = OrbitalSet::plane_waves(grid, &modes).expect("distinct modes");
    let scale = grid.cell_volume().sqrt();
    set.into_orbitals()
        .into_iter()
        .enumerate()
        .map(|(j, f)| {
            // a little position dependence so that trapped states are reachable
            let pos = grid.position_field(0);
            f.into_iter()
                .zip(&pos)
                .map(|(v, x)| v * scale * (1.0 + 1e-3 * (j as f64 + 1.0) * x.cos()))
                .collect()
        })
        .collect()
}

/// Rotate a degenerate cluster by the lexicographic-rank multiplier so
/// that the occupied part is fixed deterministically.
fn resolve_cluster(grid: &Grid, vectors: &[Field]) -> Vec<Field> {
    let ranks: Vec<f64> = (0..grid.len()).map(|k| grid.lexicographic_rank(k) as f64).collect();
    let images: Vec<Field> = vectors.iter().map(|v| grid.apply_multiplier(v, &ranks)).collect();
    let m = vectors.len();
    let mat = CMatrix::from_fn(m, m, |i, j| grid.inner(&vectors[i], &images[j]));
    let (_, rot) = crate::linalg::hermitian_eigen((&mat + mat.adjoint()) * Complex64::new(0.5, 0.0));
    (0..m)
        .map(|c| crate::linalg::combine(vectors, (0..m).map(|r| rot[(r, c)])))
        .collect()
}

fn aufbau(grid: &Grid, spec: &Spectrum, n: usize) -> Vec<Field> {
    if n == 0 {
        return Vec::new();
    }
    let fermi = spec.values[n - 1];
    let tol = 1e-9 * fermi.abs().max(1.0);
    let lo = (0..n).find(|&i| (spec.values[i] - fermi).abs() <= tol).unwrap_or(n - 1);
    let hi = (n..spec.values.len()).find(|&i| (spec.values[i] - fermi).abs() > tol).unwrap_or(spec.values.len());
    let mut out: Vec<Field> = spec.vectors[..lo].to_vec();
    if hi > n {
        let resolved = resolve_cluster(grid, &spec.vectors[lo..hi]);
        out.extend(resolved.into_iter().take(n - lo));
    } else {
        out.extend(spec.vectors[lo..n].iter().cloned());
    }
    out
}

/// Occupy the eigenvectors with the largest overlap with the current state.
fn maximum_overlap(current: &OrbitalSet, spec: &Spectrum) -> Vec<Field> {
    let grid = current.grid();
    let mut scored: Vec<(usize, f64)> = spec
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w: f64 = current.orbitals().iter().map(|f| grid.inner(f, v).norm_sqr()).sum();
            (i, w)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = scored.iter().take(current.n_particles()).map(|s| s.0).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| spec.vectors[i].clone()).collect()
}

/// Rotate `target` within its span to best match `current` (orthogonal
/// Procrustes), so that interpolating between the two is meaningful.
fn align(current: &OrbitalSet, target: Vec<Field>) -> Vec<Field> {
    let grid = current.grid();
    let n = target.len();
    let m = CMatrix::from_fn(n, n, |i, j| grid.inner(&target[i], &current.orbitals()[j]));
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let q = u * v_t;
    (0..n)
        .map(|c| crate::linalg::combine(&target, (0..n).map(|r| q[(r, c)])))
        .collect()
}

fn interpolate(current: &OrbitalSet, target: &[Field], s: f64) -> Result<OrbitalSet> {
    let mixed = current
        .orbitals()
        .iter()
        .zip(target)
        .map(|(f, g)| f.iter().zip(g).map(|(a, b)| a + (b - a) * s).collect())
        .collect();
    OrbitalSet::new_unchecked(current.grid().clone(), mixed)?.reorthonormalize()
}

struct Evaluated {
    orbitals: OrbitalSet,
    energy: f64,
    field: MeanField,
}

fn evaluate(orbitals: OrbitalSet, potential: &PotentialSpec, dispersion: &DispersionKind, kinetic: &[f64]) -> Result<Evaluated> {
    let energy = energy_breakdown(&orbitals, potential, dispersion, MeanFieldTerms::default())?.total();
    let field = MeanField::with_kinetic(&orbitals, potential, kinetic.to_vec(), MeanFieldTerms::default())?;
    Ok(Evaluated { orbitals, energy, field })
}

/// Damped self-consistent iteration. Each step moves from the current
/// orbitals towards the (Procrustes-aligned) occupied eigenvectors of the
/// current mean field, backtracking until the energy does not increase.
pub fn scf_minimize(
    grid: &Grid,
    potential: &PotentialSpec,
    n_particles: usize,
    dispersion: &DispersionKind,
    config: &ScfConfig,
) -> Result<ScfOutcome> {
    config.validate()?;
    dispersion.validate()?;
    grid.check_len(potential.vhat().len())?;
    if n_particles == 0 || n_particles > grid.len() {
        return Err(invalid("n_particles", format!("{n_particles} not in 1..={}", grid.len())));
    }
    let kinetic = grid.symbol_table(dispersion);
    let mut diag = Diagonalizer::new(grid, n_particles);

    let one_body = MeanField::one_body(grid, potential, dispersion, true)?;
    let spec = diag.spectrum(&one_body)?;
    let start = if potential.has_trap() {
        OrbitalSet::new_unchecked(grid.clone(), aufbau(grid, &spec, n_particles))?.reorthonormalize()?
    } else {
        // free one-body operator: plane waves are exact eigenvectors
        OrbitalSet::plane_waves(grid, &fermi_sea_modes(grid, n_particles, dispersion)?)?
    };
    let mut state = evaluate(start, potential, dispersion, &kinetic)?;
    let mut energies = vec![state.energy];
    let mut residuals = vec![state.field.commutator_residual(&state.orbitals)];
    let mut mixing = config.mixing;
    let mut halved = false;
    let mut oscillation = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let spec = diag.spectrum(&state.field)?;
        let target = if config.aufbau {
            aufbau(grid, &spec, n_particles)
        } else {
            maximum_overlap(&state.orbitals, &spec)
        };
        let target = align(&state.orbitals, target);
        let mut s = mixing;
        let accepted = loop {
            let candidate = evaluate(interpolate(&state.orbitals, &target, s)?, potential, dispersion, &kinetic)?;
            if candidate.energy <= state.energy + ENERGY_SLACK {
                break Some(candidate);
            }
            if !halved {
                halved = true;
                mixing *= 0.5;
                log::warn!("SCF energy increased at iteration {iterations}; mixing halved to {mixing}");
            } else {
                if !oscillation {
                    log::warn!("SCF energy still increasing at iteration {iterations}; flagged");
                }
                oscillation = true;
            }
            s *= 0.5;
            if s < 1e-8 {
                break None;
            }
        };
        let Some(next) = accepted else {
            break;
        };
        let change = (next.energy - state.energy).abs();
        state = next;
        let residual = state.field.commutator_residual(&state.orbitals);
        energies.push(state.energy);
        residuals.push(residual);
        if change <= config.convergence_tol && residual <= config.stationarity_threshold() {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("SCF did not converge in {iterations} iterations (residual {:e})", residuals.last().unwrap());
    }
    let diagnostics = CommutatorDiagnostics::compute(&state.orbitals)?;
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("SCF energy"));
    }
    Ok(ScfOutcome {
        orbitals: state.orbitals,
        energies,
        residuals,
        iterations,
        converged,
        oscillation,
        mixing,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::hs_distance_squared;
    use crate::spectral::{make_grid, periodized_trap};
    use std::f64::consts::PI;

    const REL: DispersionKind = DispersionKind::Relativistic { m0: 1.0 };

    #[test]
    fn free_case_is_fermi_sea_in_one_iteration() {
        let grid = make_grid(1, 64, 2.0 * PI, 1.0 / 8.0).unwrap();
        let out = scf_minimize(&grid, &PotentialSpec::zero(&grid), 8, &REL, &ScfConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        let expected: f64 = fermi_sea_modes(&grid, 8, &REL)
            .unwrap()
            .iter()
            .map(|&k| (grid.momentum_norm(k) / 8.0).hypot(1.0))
            .sum();
        assert!((out.energy() - expected).abs() < 1e-12);
        let sea = OrbitalSet::fermi_sea(&grid, 8, &REL).unwrap();
        assert!(hs_distance_squared(&out.orbitals, &sea).unwrap() < 1e-20);
    }

    #[test]
    fn trapped_noninteracting_matches_dense_one_body() {
        let grid = make_grid(1, 64, 6.0, 0.25).unwrap();
        let pot = PotentialSpec::zero(&grid).with_vext(&grid, periodized_trap(&grid, 1.0)).unwrap();
        let out = scf_minimize(&grid, &pot, 4, &REL, &ScfConfig::default()).unwrap();
        assert!(out.converged);
        // independent oracle: real one-body matrix from cosine sums
        let n = grid.len();
        let xs = grid.axis_positions();
        let ks = grid.axis_momenta();
        let h = nalgebra::DMatrix::<f64>::from_fn(n, n, |a, b| {
            let t: f64 = (0..n).map(|k| (0.25 * ks[k]).hypot(1.0) * (ks[k] * (xs[a] - xs[b])).cos()).sum::<f64>() / n as f64;
            t + if a == b { pot.vext()[a] } else { 0.0 }
        });
        let mut vals: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        let expected: f64 = vals[..4].iter().sum();
        assert!((out.energy() - expected).abs() < 1e-8 * expected);
        assert!(out.orbitals.gram_deviation() < 1e-12);
    }

    #[test]
    fn weakly_interacting_energy_is_monotone() {
        let grid = make_grid(1, 64, 8.0, 1.0 / 8.0).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 0.1, 1.0)
            .unwrap()
            .with_vext(&grid, periodized_trap(&grid, 1.0))
            .unwrap();
        let out = scf_minimize(&grid, &pot, 8, &REL, &ScfConfig::default()).unwrap();
        assert!(out.converged, "residuals {:?}", out.residuals);
        for w in out.energies[1..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(out.residual() <= ScfConfig::default().stationarity_threshold());
        assert!(out.energy() >= 8.0);
    }

    #[test]
    fn every_iterate_is_a_projection() {
        let grid = make_grid(1, 32, 6.0, 0.25).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 1.0, 0.8)
            .unwrap()
            .with_vext(&grid, periodized_trap(&grid, 2.0))
            .unwrap();
        let cfg = ScfConfig {
            max_iterations: 5,
            ..Default::default()
        };
        let out = scf_minimize(&grid, &pot, 3, &REL, &cfg).unwrap();
        assert!(out.orbitals.gram_deviation() < 1e-12);
        assert_eq!(out.energies.len(), out.residuals.len());
    }

    #[test]
    fn maximum_overlap_occupation_converges_from_aufbau_start() {
        let grid = make_grid(1, 64, 6.0, 0.25).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 0.2, 1.0)
            .unwrap()
            .with_vext(&grid, periodized_trap(&grid, 1.0))
            .unwrap();
        let a = scf_minimize(&grid, &pot, 4, &REL, &ScfConfig::default()).unwrap();
        let b = scf_minimize(&grid, &pot, 4, &REL, &ScfConfig { aufbau: false, ..Default::default() }).unwrap();
        assert!((a.energy() - b.energy()).abs() < 1e-9);
    }

    #[test]
    fn fermi_level_ties_follow_lexicographic_order() {
        // N = 2 on a free grid: the second orbital is picked from the ±1 pair
        let grid = make_grid(1, 16, 2.0 * PI, 0.5).unwrap();
        let out = scf_minimize(&grid, &PotentialSpec::zero(&grid), 2, &REL, &ScfConfig::default()).unwrap();
        let expected = OrbitalSet::plane_waves(&grid, &[0, grid.flat_from_dual([-1, 0, 0])]).unwrap();
        assert!(hs_distance_squared(&out.orbitals, &expected).unwrap() < 1e-20);

        // same with a dense-path trap-free interacting run
        let pot = PotentialSpec::gaussian(&grid, 0.3, 1.0).unwrap();
        let out = scf_minimize(&grid, &pot, 2, &REL, &ScfConfig::default()).unwrap();
        assert!(hs_distance_squared(&out.orbitals, &expected).unwrap() < 1e-16);
    }

    #[test]
    fn lobpcg_path_agrees_with_dense_path() {
        let grid = make_grid(2, 32, 6.0, 0.25).unwrap();
        let pot = PotentialSpec::zero(&grid).with_vext(&grid, periodized_trap(&grid, 1.0)).unwrap();
        let h = MeanField::one_body(&grid, &pot, &REL, true).unwrap();
        let dense = Diagonalizer::new(&grid, 3).spectrum(&h).unwrap();
        let symbol = h.kinetic_symbol().to_vec();
        let precond = |v: &[Complex64]| -> Vec<Complex64> {
            let mut c = grid.forward(v);
            c.iter_mut().zip(&symbol).for_each(|(x, s)| *x /= s + 1e-3);
            grid.inverse(&c)
        };
        let start = plane_wave_block(&grid, 6);
        let (vals, _) = lobpcg(|v| h.apply(v), precond, start, &LobpcgOptions::default()).unwrap();
        for j in 0..6 {
            assert!((vals[j] - dense.values[j]).abs() < 1e-8, "{} vs {}", vals[j], dense.values[j]);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let grid = make_grid(1, 16, 2.0 * PI, 0.5).unwrap();
        let bad = ScfConfig { mixing: 0.0, ..Default::default() };
        assert!(scf_minimize(&grid, &PotentialSpec::zero(&grid), 2, &REL, &bad).is_err());
        assert!(scf_minimize(&grid, &PotentialSpec::zero(&grid), 17, &REL, &ScfConfig::default()).is_err());
    }
}
