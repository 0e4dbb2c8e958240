//! Periodic grids, Fourier multipliers and the interaction potential.
//!
//! Fields are stored as flat row-major arrays of `n^d` complex values sampled
//! at the position nodes `x = -L/2 + a·L/n`, axis 0 slowest. The dual grid
//! is kept in FFT order; the unmatched Nyquist mode `k = n/2` is assigned to
//! the negative side, `p = -π n / L`, and every symbol is evaluated there.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Field = Vec<Complex64>;

/// Periodic grid of `points_per_dim^dim` nodes on a torus of side `box_length`,
/// together with its Fourier dual and the semiclassical parameter.
#[derive(Clone)]
pub struct Grid {
    dim: usize,
    n: usize,
    box_length: f64,
    epsilon: f64,
    axis_momenta: Vec<f64>,
    axis_positions: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("points_per_dim", &self.n)
            .field("box_length", &self.box_length)
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.n == other.n
            && self.box_length == other.box_length
            && self.epsilon == other.epsilon
    }
}

pub fn make_grid(dim: usize, points_per_dim: usize, box_length: f64, epsilon: f64) -> Result<Grid> {
    Grid::new(dim, points_per_dim, box_length, epsilon)
}

impl Grid {
    pub fn new(dim: usize, points_per_dim: usize, box_length: f64, epsilon: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if points_per_dim < 2 || !points_per_dim.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points_per_dim {points_per_dim} is not a power of two >= 2"
            )));
        }
        if !(box_length > 0.0) || !box_length.is_finite() {
            return Err(Error::InvalidGrid(format!("box_length {box_length} must be positive")));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidGrid(format!("epsilon {epsilon} must be positive")));
        }
        let n = points_per_dim;
        let axis_momenta = (0..n)
            .map(|i| 2.0 * PI * signed_index(i, n) as f64 / box_length)
            .collect();
        let dx = box_length / n as f64;
        let axis_positions = (0..n).map(|a| -0.5 * box_length + a as f64 * dx).collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            dim,
            n,
            box_length,
            epsilon,
            axis_momenta,
            axis_positions,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    /// Same geometry, different semiclassical parameter.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.dim, self.n, self.box_length, epsilon)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_dim(&self) -> usize {
        self.n
    }

    /// Total number of nodes, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn box_length(&self) -> f64 {
        self.box_length
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn spacing(&self) -> f64 {
        self.box_length / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn dual_cell_volume(&self) -> f64 {
        (2.0 * PI / self.box_length).powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.box_length.powi(self.dim as i32)
    }

    /// Largest representable momentum magnitude along one axis.
    pub fn nyquist_momentum(&self) -> f64 {
        PI * self.n as f64 / self.box_length
    }

    /// Dual momenta along one axis, FFT order.
    pub fn axis_momenta(&self) -> &[f64] {
        &self.axis_momenta
    }

    /// Centered position nodes along one axis, in `[-L/2, L/2)`.
    pub fn axis_positions(&self) -> &[f64] {
        &self.axis_positions
    }

    /// Per-axis indices of a flat node index.
    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    pub fn momentum(&self, flat: usize, axis: usize) -> f64 {
        self.axis_momenta[self.multi_index(flat)[axis]]
    }

    pub fn momentum_norm(&self, flat: usize) -> f64 {
        let idx = self.multi_index(flat);
        (0..self.dim)
            .map(|a| self.axis_momenta[idx[a]].powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Signed integer dual index per axis, `-n/2 ..= n/2 - 1`.
    pub fn dual_index(&self, flat: usize) -> [i64; 3] {
        let idx = self.multi_index(flat);
        let mut out = [0; 3];
        for a in 0..self.dim {
            out[a] = signed_index(idx[a], self.n);
        }
        out
    }

    /// Flat FFT-order position of a signed dual index (wrapped modulo `n`).
    pub fn flat_from_dual(&self, dual: [i64; 3]) -> usize {
        let n = self.n as i64;
        (0..self.dim).fold(0usize, |acc, a| acc * self.n + dual[a].rem_euclid(n) as usize)
    }

    /// Rank of a mode in lexicographic order of signed dual indices.
    pub fn lexicographic_rank(&self, flat: usize) -> usize {
        let k = self.dual_index(flat);
        let half = (self.n / 2) as i64;
        (0..self.dim).fold(0usize, |acc, a| acc * self.n + (k[a] + half) as usize)
    }

    pub fn position(&self, flat: usize, axis: usize) -> f64 {
        self.axis_positions[self.multi_index(flat)[axis]]
    }

    /// Centered (sawtooth) coordinate along `axis` at every node.
    pub fn position_field(&self, axis: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.position(i, axis)).collect()
    }

    pub fn momentum_table(&self, axis: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.momentum(i, axis)).collect()
    }

    pub fn momentum_norm_table(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.momentum_norm(i)).collect()
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                found: len,
            });
        }
        Ok(())
    }

    pub fn zeros(&self) -> Field {
        vec![Complex64::new(0.0, 0.0); self.len()]
    }

    /// Unnormalized forward DFT along every axis, in place.
    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        self.transform_axes(data, &self.forward);
    }

    /// Inverse DFT along every axis, in place, normalized so that
    /// `inverse(forward(f)) == f`.
    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        self.transform_axes(data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward(&self, field: &[Complex64]) -> Field {
        let mut out = field.to_vec();
        self.forward_in_place(&mut out);
        out
    }

    pub fn inverse(&self, coeffs: &[Complex64]) -> Field {
        let mut out = coeffs.to_vec();
        self.inverse_in_place(&mut out);
        out
    }

    fn transform_axes(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // last axis is contiguous
        plan.process_with_scratch(data, &mut scratch);
        if self.dim == 1 {
            return;
        }
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..self.dim - 1 {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = data[start + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, v) in line.iter().enumerate() {
                        data[start + j * stride] = *v;
                    }
                }
            }
        }
    }

    /// `inverse(symbol · forward(field))` for a real symbol in FFT order.
    pub fn apply_multiplier(&self, field: &[Complex64], symbol: &[f64]) -> Field {
        let mut out = self.forward(field);
        for (v, s) in out.iter_mut().zip(symbol) {
            *v *= *s;
        }
        self.inverse_in_place(&mut out);
        out
    }

    pub fn apply_complex_multiplier(&self, field: &[Complex64], symbol: &[Complex64]) -> Field {
        let mut out = self.forward(field);
        for (v, s) in out.iter_mut().zip(symbol) {
            *v *= *s;
        }
        self.inverse_in_place(&mut out);
        out
    }

    /// Spectral partial derivative along `axis` (multiplier `i p`).
    pub fn derivative(&self, field: &[Complex64], axis: usize) -> Field {
        let symbol: Vec<Complex64> = self
            .momentum_table(axis)
            .into_iter()
            .map(|p| Complex64::new(0.0, p))
            .collect();
        self.apply_complex_multiplier(field, &symbol)
    }

    /// L² inner product `∫ conj(a) b`.
    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        let s: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        s * self.cell_volume()
    }

    pub fn norm(&self, a: &[Complex64]) -> f64 {
        (a.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.cell_volume()).sqrt()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn symbol_table(&self, dispersion: &DispersionKind) -> Vec<f64> {
        let eps = self.epsilon;
        (0..self.len())
            .map(|i| dispersion.symbol(eps * self.momentum_norm(i)))
            .collect()
    }
}

fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Kinetic energy law as a function of the scaled momentum `ε|p|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DispersionKind {
    /// `sqrt(ε²|p|² + m0²)`
    Relativistic { m0: f64 },
    /// `m0 + ε²|p|²/(2 m0)`; the rest energy is kept so both massive laws share a phase.
    NonRelativistic { m0: f64 },
    /// `ε|p|`
    Massless,
}

impl DispersionKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Relativistic { m0 } | Self::NonRelativistic { m0 } if !(m0 > 0.0) => {
                Err(invalid("m0", format!("must be positive, got {m0}")))
            }
            _ => Ok(()),
        }
    }

    pub fn mass(&self) -> Option<f64> {
        match *self {
            Self::Relativistic { m0 } | Self::NonRelativistic { m0 } => Some(m0),
            Self::Massless => None,
        }
    }

    pub fn symbol(&self, scaled_momentum: f64) -> f64 {
        let q = scaled_momentum.abs();
        match *self {
            Self::Relativistic { m0 } => q.hypot(m0),
            Self::NonRelativistic { m0 } => m0 + q * q / (2.0 * m0),
            Self::Massless => q,
        }
    }

    /// Group velocity `dE/dq` at scaled momentum `q`.
    pub fn velocity(&self, q: f64) -> f64 {
        match *self {
            Self::Relativistic { m0 } => q / q.hypot(m0),
            Self::NonRelativistic { m0 } => q / m0,
            Self::Massless => q.signum(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Relativistic { .. } => "relativistic",
            Self::NonRelativistic { .. } => "nonrelativistic",
            Self::Massless => "massless",
        }
    }
}

pub fn apply_kinetic(field: &[Complex64], grid: &Grid, dispersion: &DispersionKind) -> Result<Field> {
    grid.check_len(field.len())?;
    dispersion.validate()?;
    Ok(grid.apply_multiplier(field, &grid.symbol_table(dispersion)))
}

/// `(-ε²Δ + m0²)^{-1/2}` as a Fourier multiplier.
pub fn apply_inverse_sqrt_kinetic(field: &[Complex64], grid: &Grid, m0: f64) -> Result<Field> {
    grid.check_len(field.len())?;
    if !(m0 > 0.0) {
        return Err(invalid("m0", format!("must be positive, got {m0}")));
    }
    let symbol = inverse_sqrt_symbol(grid, m0);
    Ok(grid.apply_multiplier(field, &symbol))
}

pub(crate) fn inverse_sqrt_symbol(grid: &Grid, m0: f64) -> Vec<f64> {
    let eps = grid.epsilon();
    (0..grid.len())
        .map(|i| 1.0 / (eps * grid.momentum_norm(i)).hypot(m0))
        .collect()
}

/// Two-body interaction through its Fourier coefficients `coupling · vhat(p)`,
/// plus an external potential sampled on the position grid.
///
/// The convention is `V(x) = L^{-d} Σ_p V̂(p) e^{ip·x}`, so `V̂` is the
/// continuum transform `∫ V(x) e^{-ip·x} dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    vhat: Vec<f64>,
    vext: Vec<f64>,
    coupling: f64,
    moment: f64,
}

impl PotentialSpec {
    pub fn new(grid: &Grid, vhat: Vec<f64>, vext: Vec<f64>, coupling: f64) -> Result<Self> {
        grid.check_len(vhat.len())?;
        grid.check_len(vext.len())?;
        if !coupling.is_finite() {
            return Err(invalid("coupling", "must be finite"));
        }
        if vhat.iter().chain(&vext).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential"));
        }
        for i in 0..grid.len() {
            let k = grid.dual_index(i);
            let half = (grid.points_per_dim() / 2) as i64;
            // the Nyquist mode has no partner
            if (0..grid.dim()).any(|a| k[a] == -half) {
                continue;
            }
            let j = grid.flat_from_dual([-k[0], -k[1], -k[2]]);
            if (vhat[i] - vhat[j]).abs() > 1e-12 * (1.0 + vhat[i].abs()) {
                return Err(invalid("vhat", format!("not even at mode {k:?}")));
            }
        }
        let mut spec = Self {
            vhat,
            vext,
            coupling,
            moment: 0.0,
        };
        spec.moment = potential_moment(&spec, grid);
        Ok(spec)
    }

    pub fn zero(grid: &Grid) -> Self {
        Self {
            vhat: vec![0.0; grid.len()],
            vext: vec![0.0; grid.len()],
            coupling: 0.0,
            moment: 0.0,
        }
    }

    /// `vhat` sampled from a function of `|p|`.
    pub fn from_fn(grid: &Grid, coupling: f64, kernel: impl Fn(f64) -> f64) -> Result<Self> {
        let vhat = (0..grid.len()).map(|i| kernel(grid.momentum_norm(i))).collect();
        Self::new(grid, vhat, vec![0.0; grid.len()], coupling)
    }

    /// `V̂(p) = g · exp(-s² |p|² / 2)`.
    pub fn gaussian(grid: &Grid, strength: f64, width: f64) -> Result<Self> {
        if !(width >= 0.0) {
            return Err(invalid("width", "must be nonnegative"));
        }
        Self::from_fn(grid, strength, |p| (-0.5 * width * width * p * p).exp())
    }

    pub fn with_vext(mut self, grid: &Grid, vext: Vec<f64>) -> Result<Self> {
        grid.check_len(vext.len())?;
        if vext.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vext"));
        }
        self.vext = vext;
        Ok(self)
    }

    pub fn without_trap(&self) -> Self {
        let mut out = self.clone();
        out.vext.iter_mut().for_each(|v| *v = 0.0);
        out
    }

    pub fn vhat(&self) -> &[f64] {
        &self.vhat
    }

    pub fn vext(&self) -> &[f64] {
        &self.vext
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn moment(&self) -> f64 {
        self.moment
    }

    pub fn has_trap(&self) -> bool {
        self.vext.iter().any(|&v| v != 0.0)
    }

    pub fn is_interacting(&self) -> bool {
        self.coupling != 0.0 && self.vhat.iter().any(|&v| v != 0.0)
    }

    /// Effective coefficient `coupling · vhat` at a flat dual index.
    pub fn coefficient(&self, flat: usize) -> f64 {
        self.coupling * self.vhat[flat]
    }

    pub fn scaled_vhat(&self) -> Vec<f64> {
        self.vhat.iter().map(|v| self.coupling * v).collect()
    }

    /// Discrete `∫ |V̂(q)| dq` in the `(2π)^{-d}`-absorbed normalization,
    /// i.e. `L^{-d} Σ_q |coupling · vhat(q)|`.
    pub fn vhat_l1(&self, grid: &Grid) -> f64 {
        self.vhat.iter().map(|v| (self.coupling * v).abs()).sum::<f64>() / grid.volume()
    }

    /// `V * g` for a complex field (periodic convolution on the grid).
    pub fn convolve(&self, grid: &Grid, field: &[Complex64]) -> Field {
        let mut out = grid.forward(field);
        for (v, s) in out.iter_mut().zip(&self.vhat) {
            *v *= self.coupling * s;
        }
        grid.inverse_in_place(&mut out);
        out
    }

    pub fn convolve_real(&self, grid: &Grid, density: &[f64]) -> Vec<f64> {
        let field: Field = density.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        self.convolve(grid, &field).into_iter().map(|v| v.re).collect()
    }

    /// Pair potential `V(x)` at grid displacements `x = m·Δx`, flat index over `m`.
    pub fn pair_potential_on_grid(&self, grid: &Grid) -> Vec<f64> {
        let coeffs: Field = self
            .vhat
            .iter()
            .map(|v| Complex64::new(self.coupling * v, 0.0))
            .collect();
        // inverse FFT includes 1/n^d; V(x) carries 1/L^d
        let scale = grid.len() as f64 / grid.volume();
        grid.inverse(&coeffs).into_iter().map(|v| v.re * scale).collect()
    }
}

/// Periodized harmonic well `w Σ_a (1 - cos(2π x_a / L)) (L/2π)²`.
pub fn periodized_trap(grid: &Grid, strength: f64) -> Vec<f64> {
    let l = grid.box_length();
    let scale = strength * (l / (2.0 * PI)).powi(2);
    (0..grid.len())
        .map(|i| {
            (0..grid.dim())
                .map(|a| 1.0 - (2.0 * PI * grid.position(i, a) / l).cos())
                .sum::<f64>()
                * scale
        })
        .collect()
}

pub fn convolve_potential(density: &[Complex64], grid: &Grid, potential: &PotentialSpec) -> Result<Vec<f64>> {
    grid.check_len(density.len())?;
    let max_imag = density.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    let scale = density.iter().map(|v| v.re.abs()).fold(0.0, f64::max).max(1.0);
    if max_imag > 1e-12 * scale {
        return Err(Error::ComplexDensity(max_imag));
    }
    let real: Field = density.iter().map(|v| Complex64::new(v.re, 0.0)).collect();
    Ok(potential.convolve(grid, &real).into_iter().map(|v| v.re).collect())
}

/// `Σ_p |V̂(p)| (1 + |p|)² · (2π/L)^d`.
pub fn potential_moment(potential: &PotentialSpec, grid: &Grid) -> f64 {
    (0..grid.len())
        .map(|i| {
            let p = grid.momentum_norm(i);
            potential.coefficient(i).abs() * (1.0 + p).powi(2)
        })
        .sum::<f64>()
        * grid.dual_cell_volume()
}

/// Moment of a radial kernel at a grid and at its refinement (`2n` points, same box).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentRefinement {
    pub coarse: f64,
    pub fine: f64,
    pub relative_change: f64,
    pub stable: bool,
}

pub fn moment_refinement(
    grid: &Grid,
    coupling: f64,
    kernel: impl Fn(f64) -> f64 + Copy,
    tolerance: f64,
) -> Result<MomentRefinement> {
    let fine_grid = Grid::new(grid.dim(), 2 * grid.points_per_dim(), grid.box_length(), grid.epsilon())?;
    let coarse = PotentialSpec::from_fn(grid, coupling, kernel)?.moment();
    let fine = PotentialSpec::from_fn(&fine_grid, coupling, kernel)?.moment();
    let relative_change = (fine - coarse).abs() / coarse.abs().max(f64::MIN_POSITIVE);
    let stable = relative_change <= tolerance;
    if !stable {
        log::warn!(
            "interaction moment not stable under refinement: {coarse} -> {fine} (relative change {relative_change:.3e})"
        );
    }
    Ok(MomentRefinement {
        coarse,
        fine,
        relative_change,
        stable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &Grid, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..grid.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn plane_wave(grid: &Grid, k: f64) -> Field {
        grid.axis_positions()
            .iter()
            .map(|&x| Complex64::from_polar(1.0, k * x))
            .collect()
    }

    fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn integer_momenta_for_two_pi_box() {
        let grid = make_grid(1, 64, 2.0 * PI, 0.1).unwrap();
        let mut ks: Vec<i64> = grid.axis_momenta().iter().map(|p| p.round() as i64).collect();
        for (p, k) in grid.axis_momenta().iter().zip(&ks) {
            assert!((p - *k as f64).abs() < 1e-12);
        }
        ks.sort();
        assert_eq!(ks, (-32..32).collect::<Vec<_>>());
    }

    #[test]
    fn smallest_grid_puts_nyquist_on_negative_side() {
        let grid = make_grid(1, 2, 1.0, 1.0).unwrap();
        assert_eq!(grid.axis_momenta()[0], 0.0);
        assert!((grid.axis_momenta()[1] + 2.0 * PI).abs() < 1e-15);
        assert_eq!(grid.axis_positions(), &[-0.5, 0.0]);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(make_grid(1, 48, 1.0, 0.1).is_err());
        assert!(make_grid(1, 1, 1.0, 0.1).is_err());
        assert!(make_grid(1, 16, 0.0, 0.1).is_err());
        assert!(make_grid(1, 16, 1.0, -0.1).is_err());
        assert!(make_grid(4, 16, 1.0, 0.1).is_err());
    }

    #[test]
    fn three_dimensional_round_trip() {
        let grid = make_grid(3, 16, 10.0, 0.25).unwrap();
        assert_eq!(grid.len(), 4096);
        let f = random_field(&grid, 7);
        let back = grid.inverse(&grid.forward(&f));
        let err = max_diff(&f, &back);
        let scale = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err <= 1e-12 * scale, "round trip error {err}");
    }

    #[test]
    fn parseval_identity() {
        let grid = make_grid(2, 16, 3.0, 0.5).unwrap();
        let f = random_field(&grid, 3);
        let fhat = grid.forward(&f);
        let lhs: f64 = f.iter().map(|v| v.norm_sqr()).sum();
        let rhs: f64 = fhat.iter().map(|v| v.norm_sqr()).sum::<f64>() / grid.len() as f64;
        assert!((lhs - rhs).abs() < 1e-10 * lhs);
    }

    #[test]
    fn multi_axis_transform_diagonalizes_plane_waves() {
        let grid = make_grid(2, 8, 2.0 * PI, 1.0).unwrap();
        let f: Field = (0..grid.len())
            .map(|i| Complex64::from_polar(1.0, 2.0 * grid.position(i, 0) - 3.0 * grid.position(i, 1)))
            .collect();
        let d1 = grid.derivative(&f, 1);
        for (a, b) in d1.iter().zip(&f) {
            assert!((a - Complex64::new(0.0, -3.0) * b).norm() < 1e-12);
        }
    }

    #[test]
    fn kinetic_plane_wave_eigenvalue() {
        let grid = make_grid(1, 64, 2.0 * PI, 0.1).unwrap();
        let f = plane_wave(&grid, 5.0);
        let out = apply_kinetic(&f, &grid, &DispersionKind::Relativistic { m0: 1.0 }).unwrap();
        let expected = 1.25f64.sqrt();
        assert!((expected - 1.118034).abs() < 1e-6);
        for (a, b) in out.iter().zip(&f) {
            assert!((a - b * expected).norm() <= 1e-12 * expected);
        }
    }

    #[test]
    fn kinetic_on_constant_is_rest_mass() {
        let grid = make_grid(1, 32, 5.0, 0.3).unwrap();
        let f = vec![Complex64::new(0.7, -0.2); grid.len()];
        let out = apply_kinetic(&f, &grid, &DispersionKind::Relativistic { m0: 3.0 }).unwrap();
        assert!(max_diff(&out, &f.iter().map(|v| v * 3.0).collect::<Vec<_>>()) < 1e-13);
    }

    #[test]
    fn relativistic_and_nonrelativistic_symbols_at_unit_scaled_momentum() {
        let rel = DispersionKind::Relativistic { m0: 10.0 }.symbol(1.0);
        let non = DispersionKind::NonRelativistic { m0: 10.0 }.symbol(1.0);
        assert!((rel - 10.0498756).abs() < 1e-7);
        assert!((non - 10.05).abs() < 1e-14);
        let diff = non - rel;
        assert!((diff - 1.243e-4).abs() < 1e-6);
        assert!((diff - 1.0 / 8000.0).abs() < 2e-6);
    }

    #[test]
    fn kinetic_rejects_shape_mismatch() {
        let grid = make_grid(1, 16, 1.0, 0.1).unwrap();
        let f = vec![Complex64::new(1.0, 0.0); 8];
        assert!(matches!(
            apply_kinetic(&f, &grid, &DispersionKind::Massless),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn kinetic_is_self_adjoint() {
        let grid = make_grid(2, 16, 4.0, 0.2).unwrap();
        for kind in [
            DispersionKind::Relativistic { m0: 1.3 },
            DispersionKind::NonRelativistic { m0: 0.7 },
            DispersionKind::Massless,
        ] {
            for seed in 0..5 {
                let f = random_field(&grid, seed);
                let g = random_field(&grid, 100 + seed);
                let kf = apply_kinetic(&f, &grid, &kind).unwrap();
                let kg = apply_kinetic(&g, &grid, &kind).unwrap();
                let lhs = grid.inner(&f, &kg);
                let rhs = grid.inner(&kf, &g);
                assert!((lhs - rhs).norm() <= 1e-10 * grid.norm(&f) * grid.norm(&g));
            }
        }
    }

    #[test]
    fn symbol_bounds_on_every_dual_node() {
        let grid = make_grid(1, 128, 9.0, 0.07).unwrap();
        let m0 = 0.8;
        let rel = grid.symbol_table(&DispersionKind::Relativistic { m0 });
        let non = grid.symbol_table(&DispersionKind::NonRelativistic { m0 });
        for i in 0..grid.len() {
            let q = grid.epsilon() * grid.momentum_norm(i);
            assert!(rel[i] >= m0.max(q));
            let d = non[i] - rel[i];
            assert!(d >= -1e-15);
            assert!(d <= q.powi(4) / (8.0 * m0.powi(3)) * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn inverse_sqrt_examples() {
        let grid = make_grid(1, 64, 2.0 * PI, 0.1).unwrap();
        let f = plane_wave(&grid, 5.0);
        let out = apply_inverse_sqrt_kinetic(&f, &grid, 1.0).unwrap();
        let expected = 1.0 / 1.25f64.sqrt();
        assert!(max_diff(&out, &f.iter().map(|v| v * expected).collect::<Vec<_>>()) < 1e-13);

        let c = vec![Complex64::new(1.0, 1.0); grid.len()];
        let out = apply_inverse_sqrt_kinetic(&c, &grid, 2.0).unwrap();
        assert!(max_diff(&out, &c.iter().map(|v| v * 0.5).collect::<Vec<_>>()) < 1e-14);

        assert!(apply_inverse_sqrt_kinetic(&c, &grid, 0.0).is_err());
    }

    #[test]
    fn inverse_sqrt_norm_bound_on_random_fields() {
        let grid = make_grid(1, 64, 3.0, 0.1).unwrap();
        let m0 = 1.7;
        for seed in 0..100 {
            let f = random_field(&grid, seed);
            let out = apply_inverse_sqrt_kinetic(&f, &grid, m0).unwrap();
            assert!(grid.norm(&out) <= grid.norm(&f) / m0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn convolution_with_uniform_density() {
        let grid = make_grid(1, 32, 4.0, 0.1).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 0.8, 0.6).unwrap();
        let rho = vec![Complex64::new(0.25, 0.0); grid.len()];
        let out = convolve_potential(&rho, &grid, &pot).unwrap();
        for v in out {
            assert!((v - pot.coefficient(0) / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn convolution_of_single_mode() {
        let grid = make_grid(1, 32, 4.0, 0.1).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 1.5, 0.4).unwrap();
        let k = 2.0 * PI / 4.0;
        let rho: Field = grid
            .axis_positions()
            .iter()
            .map(|&x| Complex64::new((k * x).cos() / 4.0, 0.0))
            .collect();
        let out = convolve_potential(&rho, &grid, &pot).unwrap();
        let vk = 1.5 * (-0.5 * 0.16 * k * k).exp();
        for (o, r) in out.iter().zip(&rho) {
            assert!((o - vk * r.re).abs() < 1e-14);
        }
    }

    #[test]
    fn convolution_matches_direct_quadrature() {
        let grid = make_grid(1, 64, 6.0, 0.1).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 1.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let rho_c: Field = rho.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        let fast = convolve_potential(&rho_c, &grid, &pot).unwrap();
        // independent kernel: V(x) = L^{-1} Σ_p V̂(p) cos(p x), summed directly
        let kernel = |x: f64| -> f64 {
            (0..grid.len())
                .map(|i| pot.coefficient(i) * (grid.momentum(i, 0) * x).cos())
                .sum::<f64>()
                / grid.box_length()
        };
        let xs = grid.axis_positions();
        let dx = grid.spacing();
        let scale = fast.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for a in 0..grid.len() {
            let direct: f64 = (0..grid.len()).map(|b| kernel(xs[a] - xs[b]) * rho[b] * dx).sum();
            assert!((direct - fast[a]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn convolution_rejects_complex_density() {
        let grid = make_grid(1, 16, 1.0, 0.1).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 1.0, 0.1).unwrap();
        let mut rho = vec![Complex64::new(1.0, 0.0); grid.len()];
        rho[3].im = 1e-6;
        assert!(matches!(convolve_potential(&rho, &grid, &pot), Err(Error::ComplexDensity(_))));
    }

    #[test]
    fn convolution_of_real_input_is_real() {
        let grid = make_grid(2, 16, 5.0, 0.1).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 2.0, 0.7).unwrap();
        let f = random_field(&grid, 5);
        let rho: Field = f.iter().map(|v| Complex64::new(v.re, 0.0)).collect();
        let out = pot.convolve(&grid, &rho);
        assert!(out.iter().all(|v| v.im.abs() < 1e-12));
    }

    #[test]
    fn pair_potential_reproduces_convolution() {
        let grid = make_grid(1, 16, 3.0, 0.1).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 1.0, 0.4).unwrap();
        let vx = pot.pair_potential_on_grid(&grid);
        let f = random_field(&grid, 9);
        let conv = pot.convolve(&grid, &f);
        let n = grid.len();
        for a in 0..n {
            let direct: Complex64 = (0..n).map(|b| f[b] * vx[(a + n - b) % n] * grid.spacing()).sum();
            assert!((direct - conv[a]).norm() < 1e-12);
        }
    }

    #[test]
    fn moment_examples() {
        let grid = make_grid(1, 4096, 400.0, 0.1).unwrap();
        assert_eq!(PotentialSpec::zero(&grid).moment(), 0.0);
        let gauss = PotentialSpec::from_fn(&grid, 1.0, |p| (-0.5 * p * p).exp()).unwrap();
        let exact = 2.0 * (2.0 * PI).sqrt() + 4.0;
        assert!((exact - 9.0133).abs() < 1e-4);
        assert!((gauss.moment() - exact).abs() < 2e-4, "{}", gauss.moment());
        let check = moment_refinement(&grid, 1.0, |p| (-0.5 * p * p).exp(), 1e-6).unwrap();
        assert!(check.stable);
    }

    #[test]
    fn lorentzian_moment_fails_to_stabilize() {
        let grid = make_grid(1, 64, 10.0, 0.1).unwrap();
        let check = moment_refinement(&grid, 1.0, |p| 1.0 / (1.0 + p * p), 1e-3).unwrap();
        assert!(!check.stable);
        assert!(check.fine > 1.5 * check.coarse);
    }

    #[test]
    fn odd_vhat_is_rejected() {
        let grid = make_grid(1, 8, 1.0, 0.1).unwrap();
        let mut vhat = vec![0.0; 8];
        vhat[1] = 1.0;
        assert!(PotentialSpec::new(&grid, vhat, vec![0.0; 8], 1.0).is_err());
    }

    #[test]
    fn trap_is_quadratic_near_origin() {
        let grid = make_grid(1, 256, 8.0, 0.1).unwrap();
        let trap = periodized_trap(&grid, 2.0);
        let center = grid.len() / 2;
        assert!(trap[center].abs() < 1e-15);
        let x = grid.axis_positions()[center + 1];
        assert!((trap[center + 1] - x * x).abs() < 1e-6);
        assert!(trap.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn lexicographic_rank_orders_signed_indices() {
        let grid = make_grid(2, 4, 1.0, 0.1).unwrap();
        let mut ranks: Vec<(usize, [i64; 3])> =
            (0..grid.len()).map(|i| (grid.lexicographic_rank(i), grid.dual_index(i))).collect();
        ranks.sort();
        assert_eq!(ranks[0].1, [-2, -2, 0]);
        assert_eq!(ranks[1].1, [-2, -1, 0]);
        assert_eq!(ranks[15].1, [1, 1, 0]);
        for i in 0..grid.len() {
            assert_eq!(grid.flat_from_dual(grid.dual_index(i)), i);
        }
    }
}
