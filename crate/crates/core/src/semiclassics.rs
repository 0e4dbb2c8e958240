//! Commutator diagnostics, the inequality chain of the propagation
//! estimate as runtime checks, growth fits and the Wigner transform.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::density::OrbitalSet;
use crate::error::{invalid, Error, Result};
use crate::spectral::{inverse_sqrt_symbol, Field, Grid, PotentialSpec};

/// Margins below this count as violations.
pub const CHECK_TOLERANCE: f64 = 1e-9;

/// Floor applied before taking logarithms in growth fits.
pub const LOG_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsSeries {
    pub times: Vec<f64>,
    /// `comm_x[axis][sample] = tr|[x_axis, ω_t]|`.
    pub comm_x: Vec<Vec<f64>>,
    /// `comm_grad[axis][sample] = tr|[ε∂_axis, ω_t]|`.
    pub comm_grad: Vec<Vec<f64>>,
    pub energy: Vec<f64>,
    pub extra: BTreeMap<String, Vec<f64>>,
}

impl DiagnosticsSeries {
    pub fn new(dim: usize) -> Self {
        Self {
            times: Vec::new(),
            comm_x: vec![Vec::new(); dim],
            comm_grad: vec![Vec::new(); dim],
            energy: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.comm_x.len()
    }

    /// Appends one sample. `extra` channels must be supplied consistently
    /// from the first sample on.
    pub fn push(&mut self, time: f64, channels: &[(f64, f64)], energy: f64, extra: &[(&str, f64)]) -> Result<()> {
        if channels.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                found: channels.len(),
            });
        }
        if self.times.last().is_some_and(|&t| time <= t) {
            return Err(Error::NonMonotoneTime);
        }
        for (name, _) in extra {
            if !self.extra.contains_key(*name) && !self.is_empty() {
                return Err(invalid("extra", format!("channel `{name}` introduced after the first sample")));
            }
        }
        if extra.len() != self.extra.len() && !self.is_empty() {
            return Err(invalid("extra", "channel set changed between samples"));
        }
        self.times.push(time);
        for (axis, (x, g)) in channels.iter().enumerate() {
            self.comm_x[axis].push(*x);
            self.comm_grad[axis].push(*g);
        }
        self.energy.push(energy);
        for (name, v) in extra {
            self.extra.entry((*name).to_string()).or_default().push(*v);
        }
        Ok(())
    }

    /// `Σ_axis tr|[x_axis, ω]|` per sample.
    pub fn comm_x_total(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.comm_x.iter().map(|c| c[i]).sum()).collect()
    }

    pub fn comm_grad_total(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.comm_grad.iter().map(|c| c[i]).sum()).collect()
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["time".to_string()];
        cols.extend((0..self.dim()).map(|a| format!("comm_x_{a}")));
        cols.extend((0..self.dim()).map(|a| format!("comm_grad_{a}")));
        cols.push("energy".into());
        cols.extend(self.extra.keys().cloned());
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for i in 0..self.len() {
            let mut row = vec![fmt(self.times[i])];
            row.extend(self.comm_x.iter().map(|c| fmt(c[i])));
            row.extend(self.comm_grad.iter().map(|c| fmt(c[i])));
            row.push(fmt(self.energy[i]));
            row.extend(self.extra.values().map(|c| fmt(c[i])));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn seam_mass(orbitals: &OrbitalSet) -> f64 {
    let grid = orbitals.grid();
    let n = grid.points_per_dim();
    let mut mass = 0.0;
    for f in orbitals.orbitals() {
        for (i, v) in f.iter().enumerate() {
            let idx = grid.multi_index(i);
            if (0..grid.dim()).any(|a| idx[a] == 0 || idx[a] == n - 1) {
                mass += v.norm_sqr() * grid.cell_volume();
            }
        }
    }
    mass
}

/// `(tr|[x_a, ω]|, tr|[ε∂_a, ω]|)` for each axis. Warns when the state has
/// appreciable mass at the seam of the sawtooth coordinate.
pub fn commutator_channels(orbitals: &OrbitalSet) -> Result<Vec<(f64, f64)>> {
    let seam = seam_mass(orbitals);
    if seam > 1e-8 * orbitals.n_particles().max(1) as f64 {
        log::warn!("orbital mass {seam:.3e} near the periodic seam; position commutators are not meaningful");
    }
    (0..orbitals.grid().dim())
        .map(|axis| {
            Ok((
                orbitals.commutator_with_position(axis).trace_norm()?,
                orbitals.commutator_with_momentum(axis).trace_norm()?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSample {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub ratio: f64,
}

impl CheckSample {
    fn new(label: String, lhs: f64, rhs: f64) -> Self {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        Self {
            label,
            lhs,
            rhs,
            margin: rhs - lhs,
            ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub time: Option<f64>,
    pub tolerance: f64,
    pub samples: Vec<CheckSample>,
    pub pass: bool,
}

impl CheckReport {
    fn margins(check: &str, samples: Vec<CheckSample>) -> Self {
        let pass = samples.iter().all(|s| s.margin >= -CHECK_TOLERANCE && s.lhs.is_finite());
        Self {
            check: check.into(),
            time: None,
            tolerance: CHECK_TOLERANCE,
            samples,
            pass,
        }
    }

    pub fn at(mut self, time: f64) -> Self {
        self.time = Some(time);
        self
    }

    pub fn worst_margin(&self) -> f64 {
        self.samples.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn max_ratio(&self) -> f64 {
        self.samples.iter().map(|s| s.ratio).fold(0.0, f64::max)
    }
}

/// Flat indices of the dual modes `k = 1..=count` along axis 0.
pub fn default_p_samples(grid: &Grid, count: usize) -> Vec<usize> {
    let half = grid.points_per_dim() as i64 / 2;
    (1..=count as i64)
        .map(|k| {
            let k = if k < half { k } else { -(k % half) };
            grid.flat_from_dual([k, 0, 0])
        })
        .collect()
}

/// `tr|[e^{ip·x}, ω]| ≤ (1 + |p|) Σ_a tr|[x_a, ω]|` for dual-grid momenta.
pub fn exp_bound_check(orbitals: &OrbitalSet, p_samples: &[usize]) -> Result<CheckReport> {
    let grid = orbitals.grid();
    let comm_x: f64 = (0..grid.dim())
        .map(|a| orbitals.commutator_with_position(a).trace_norm())
        .sum::<Result<f64>>()?;
    let mut samples = Vec::with_capacity(p_samples.len());
    for &k in p_samples {
        if k >= grid.len() {
            return Err(invalid("p_samples", format!("mode {k} outside the dual grid")));
        }
        let phase: Field = (0..grid.len())
            .map(|i| {
                let arg: f64 = (0..grid.dim()).map(|a| grid.momentum(k, a) * grid.position(i, a)).sum();
                Complex64::from_polar(1.0, arg)
            })
            .collect();
        let lhs = orbitals.commutator_with_multiplication(&phase).trace_norm()?;
        let p = grid.momentum_norm(k);
        let dual = grid.dual_index(k);
        samples.push(CheckSample::new(format!("{:?}", &dual[..grid.dim()]), lhs, (1.0 + p) * comm_x));
    }
    Ok(CheckReport::margins("exp_bound", samples))
}

/// `tr|[ω, [X, x_a]]| ≤ (2‖V̂‖₁/N) tr|[ω, x_a]|` per axis.
pub fn exchange_double_commutator_check(orbitals: &OrbitalSet, potential: &PotentialSpec) -> Result<CheckReport> {
    let grid = orbitals.grid();
    grid.check_len(potential.vhat().len())?;
    let n = orbitals.n_particles().max(1) as f64;
    let bound = 2.0 * potential.vhat_l1(grid) / n;
    let mut samples = Vec::with_capacity(grid.dim());
    for axis in 0..grid.dim() {
        let x = grid.position_field(axis);
        // A = [X, x] is anti-self-adjoint
        let a = |g: &[Complex64]| -> Field {
            let xg: Field = g.iter().zip(&x).map(|(v, xi)| v * xi).collect();
            let x_xg = orbitals.exchange_unchecked(potential, &xg);
            let xg2 = orbitals.exchange_unchecked(potential, g);
            x_xg.iter().zip(&xg2).zip(&x).map(|((p, q), xi)| p - q * xi).collect()
        };
        let a_adj = |g: &[Complex64]| -> Field { a(g).into_iter().map(|v| -v).collect() };
        let lhs = if potential.is_interacting() {
            orbitals.commutator_with(a, a_adj).trace_norm()?
        } else {
            0.0
        };
        let rhs = bound * orbitals.commutator_with_position(axis).trace_norm()?;
        samples.push(CheckSample::new(format!("axis {axis}"), lhs, rhs));
    }
    Ok(CheckReport::margins("exchange_double_commutator", samples))
}

/// Ratio `tr|[ω, [T, x_a]]| / (ε m0^{-1} tr|[ε∂_a, ω]|)` per axis, with
/// `[T, x_a] = -ε (ε∂_a) T^{-1}` applied as a Fourier multiplier. The report
/// passes when every ratio is finite; `margin` is not meaningful here.
pub fn kinetic_double_commutator_check(orbitals: &OrbitalSet, m0: f64) -> Result<CheckReport> {
    if !(m0 > 0.0 && m0.is_finite()) {
        return Err(invalid("m0", "must be positive"));
    }
    let grid = orbitals.grid();
    let eps = grid.epsilon();
    let inv = inverse_sqrt_symbol(grid, m0);
    let mut samples = Vec::with_capacity(grid.dim());
    for axis in 0..grid.dim() {
        // symbol of [T, x_a]: -i ε² p_a / sqrt(ε²p² + m0²)
        let symbol: Vec<Complex64> = (0..grid.len())
            .map(|k| Complex64::new(0.0, -eps * eps * grid.momentum(k, axis) * inv[k]))
            .collect();
        let adj: Vec<Complex64> = symbol.iter().map(|s| s.conj()).collect();
        let b = |g: &[Complex64]| grid.apply_complex_multiplier(g, &symbol);
        let b_adj = |g: &[Complex64]| grid.apply_complex_multiplier(g, &adj);
        let lhs = orbitals.commutator_with(b, b_adj).trace_norm()?;
        let rhs = eps / m0 * orbitals.commutator_with_momentum(axis).trace_norm()?;
        let mut s = CheckSample::new(format!("axis {axis}"), lhs, rhs);
        s.margin = f64::NAN;
        samples.push(s);
    }
    let pass = samples.iter().all(|s| s.ratio.is_finite());
    Ok(CheckReport {
        check: "kinetic_double_commutator".into(),
        time: None,
        tolerance: CHECK_TOLERANCE,
        samples,
        pass,
    })
}

/// Integrated forms of the two differential inequalities behind the
/// propagation estimate, evaluated by trapezoid quadrature on a series.
///
/// `comm_x(t) ≤ comm_x(0) + (K1/m0)∫comm_grad + K2/(εN) ∫comm_x`
/// `comm_grad(t) ≤ comm_grad(0) + K3 ∫comm_x + K4/(εN) ∫comm_grad`
///
/// with K1 the largest observed kinetic ratio, K2 = K4 = 2‖V̂‖₁ and K3 the
/// second moment `L^{-d} Σ|V̂|(1+|q|)²`. Channels are summed over axes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratedAudit {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub margins_x: Vec<f64>,
    pub margins_grad: Vec<f64>,
    pub pass: bool,
}

pub fn integrated_audit(
    series: &DiagnosticsSeries,
    kinetic_ratio: f64,
    potential: &PotentialSpec,
    grid: &Grid,
    n_particles: usize,
    m0: f64,
) -> Result<IntegratedAudit> {
    check_times(&series.times, 2)?;
    let k1 = kinetic_ratio;
    let k2 = 2.0 * potential.vhat_l1(grid);
    let k3 = (0..grid.len())
        .map(|i| potential.coefficient(i).abs() * (1.0 + grid.momentum_norm(i)).powi(2))
        .sum::<f64>()
        / grid.volume();
    let k4 = k2;
    let scale = 1.0 / (grid.epsilon() * n_particles as f64);
    let cx = series.comm_x_total();
    let cg = series.comm_grad_total();
    let ix = cumulative_trapezoid(&series.times, &cx);
    let ig = cumulative_trapezoid(&series.times, &cg);
    let mut margins_x = Vec::with_capacity(cx.len());
    let mut margins_grad = Vec::with_capacity(cx.len());
    for i in 0..cx.len() {
        margins_x.push(cx[0] + k1 / m0 * ig[i] + k2 * scale * ix[i] - cx[i]);
        margins_grad.push(cg[0] + k3 * ix[i] + k4 * scale * ig[i] - cg[i]);
    }
    let tol = |v: &[f64]| CHECK_TOLERANCE * v.iter().copied().fold(1.0, f64::max);
    let pass = margins_x.iter().all(|m| *m >= -tol(&cx)) && margins_grad.iter().all(|m| *m >= -tol(&cg));
    Ok(IntegratedAudit {
        k1,
        k2,
        k3,
        k4,
        margins_x,
        margins_grad,
        pass,
    })
}

fn cumulative_trapezoid(t: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for i in 1..t.len() {
        out[i] = out[i - 1] + 0.5 * (t[i] - t[i - 1]) * (v[i] + v[i - 1]);
    }
    out
}

fn check_times(times: &[f64], needed: usize) -> Result<()> {
    if times.len() < needed {
        return Err(Error::SeriesTooShort {
            needed,
            found: times.len(),
        });
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotoneTime);
    }
    Ok(())
}

/// Envelope `C·N·ε·e^{c|t|}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthFit {
    #[serde(rename = "C")]
    pub big_c: f64,
    pub c: f64,
    pub residual: f64,
}

impl GrowthFit {
    pub fn envelope(&self, t: f64, n_particles: usize, epsilon: f64) -> f64 {
        self.big_c * n_particles as f64 * epsilon * (self.c * t.abs()).exp()
    }
}

/// Least-squares fit of `log(max(v, floor)/(Nε))` against `|t|`. The
/// prefactor is then raised, if needed, until `v ≤ 1.1·C·N·ε·e^{c|t|}` on
/// every sample; `residual` is the largest relative deviation of the
/// least-squares curve.
pub fn growth_fit(times: &[f64], values: &[f64], n_particles: usize, epsilon: f64) -> Result<GrowthFit> {
    check_times(times, 8)?;
    if values.len() != times.len() {
        return Err(Error::ShapeMismatch {
            expected: times.len(),
            found: values.len(),
        });
    }
    let scale = n_particles as f64 * epsilon;
    let xs: Vec<f64> = times.iter().map(|t| t.abs()).collect();
    let ys: Vec<f64> = values.iter().map(|v| (v.max(LOG_FLOOR) / scale).ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let c = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - c * mx;
    let fitted = a.exp();
    let residual = xs
        .iter()
        .zip(values)
        .map(|(x, v)| {
            let f = fitted * scale * (c * x).exp();
            (v.max(LOG_FLOOR) - f).abs() / v.max(LOG_FLOOR)
        })
        .fold(0.0, f64::max);
    let needed = xs
        .iter()
        .zip(values)
        .map(|(x, v)| v / (1.1 * scale * (c * x).exp()))
        .fold(0.0, f64::max);
    if !(c.is_finite() && fitted.is_finite()) {
        return Err(Error::NonFinite("growth_fit"));
    }
    Ok(GrowthFit {
        big_c: fitted.max(needed),
        c,
        residual,
    })
}

/// Velocity grid matching a 1D position grid: `2n` nodes `v_m = m·Δv`,
/// `m ∈ [-n, n)`, with `Δv = επ/L` (half the ε-scaled dual spacing).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VelocityGrid {
    pub n_v: usize,
    pub dv: f64,
}

impl VelocityGrid {
    pub fn for_grid(grid: &Grid) -> Self {
        Self {
            n_v: 2 * grid.points_per_dim(),
            dv: grid.epsilon() * std::f64::consts::PI / grid.box_length(),
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        let half = (self.n_v / 2) as i64;
        (-half..half).map(|m| m as f64 * self.dv).collect()
    }

    pub fn compatible_with(&self, grid: &Grid) -> bool {
        let expected = Self::for_grid(grid);
        grid.dim() == 1 && self.n_v == expected.n_v && (self.dv - expected.dv).abs() <= 1e-12 * expected.dv
    }
}

/// Phase-space field on a 1D position grid times a [`VelocityGrid`];
/// `values[a * n_v + m]` with `m` counted from `-n_v/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerField {
    pub grid: Grid,
    pub v_grid: VelocityGrid,
    pub values: Vec<f64>,
}

impl WignerField {
    pub fn zeros(grid: &Grid, v_grid: VelocityGrid) -> Result<Self> {
        if !v_grid.compatible_with(grid) {
            return Err(invalid("v_grid", "incompatible with the position grid"));
        }
        Ok(Self {
            grid: grid.clone(),
            v_grid,
            values: vec![0.0; grid.len() * v_grid.n_v],
        })
    }

    pub fn at(&self, a: usize, m: usize) -> f64 {
        self.values[a * self.v_grid.n_v + m]
    }

    /// `∫∫ W dx dv`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.spacing() * self.v_grid.dv
    }

    /// `∫ W dv` at each position node.
    pub fn position_marginal(&self) -> Vec<f64> {
        let nv = self.v_grid.n_v;
        self.values.chunks(nv).map(|row| row.iter().sum::<f64>() * self.v_grid.dv).collect()
    }

    /// `∫ W dx` at each velocity node.
    pub fn velocity_marginal(&self) -> Vec<f64> {
        let nv = self.v_grid.n_v;
        let mut out = vec![0.0; nv];
        for row in self.values.chunks(nv) {
            out.iter_mut().zip(row).for_each(|(o, w)| *o += w);
        }
        out.iter_mut().for_each(|o| *o *= self.grid.spacing());
        out
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `W(x, v) = N^{-1}(2π)^{-1} ∫ ω(x + εy/2, x − εy/2) e^{-ivy} dy`.
///
/// Both arguments of the kernel are kept inside the box `[-L/2, L/2)`
/// rather than wrapped periodically, which removes the mirror image of the
/// state at distance `L/2` that the periodic kernel carries. Half-node
/// values come from the trigonometric interpolant. The position marginal
/// is exact; the velocity marginal equals [`momentum_density`] for states
/// localized away from the seam.
pub fn wigner_transform(orbitals: &OrbitalSet, v_grid: VelocityGrid) -> Result<WignerField> {
    let grid = orbitals.grid();
    let mut field = WignerField::zeros(grid, v_grid)?;
    let n = grid.points_per_dim();
    let nv = v_grid.n_v;
    // shift by half a cell: multiplier e^{ip Δx/2}
    let half_shift: Vec<Complex64> = grid
        .axis_momenta()
        .iter()
        .map(|&p| Complex64::from_polar(1.0, p * grid.spacing() / 2.0))
        .collect();
    let fine: Vec<Vec<Complex64>> = orbitals
        .orbitals()
        .iter()
        .map(|f| {
            let shifted = grid.apply_complex_multiplier(f, &half_shift);
            let mut u = vec![Complex64::new(0.0, 0.0); nv];
            for a in 0..n {
                u[2 * a] = f[a];
                u[2 * a + 1] = shifted[a];
            }
            u
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nv);
    let scale = grid.spacing() / (2.0 * std::f64::consts::PI * orbitals.n_particles() as f64 * grid.epsilon());
    let half = nv as i64 / 2;
    let mut kernel = vec![Complex64::new(0.0, 0.0); nv];
    for a in 0..n {
        let centre = 2 * a as i64;
        kernel.iter_mut().for_each(|k| *k = Complex64::new(0.0, 0.0));
        let reach = centre.min(nv as i64 - 1 - centre);
        for j in -reach..=reach {
            let (plus, minus) = ((centre + j) as usize, (centre - j) as usize);
            let value: Complex64 = fine.iter().map(|u| u[plus] * u[minus].conj()).sum();
            kernel[j.rem_euclid(nv as i64) as usize] = value;
        }
        fwd.process(&mut kernel);
        // FFT bin r holds frequency r; velocity slot m + nv/2 holds m
        let row = &mut field.values[a * nv..(a + 1) * nv];
        for (slot, value) in row.iter_mut().enumerate() {
            let m = slot as i64 - half;
            *value = kernel[m.rem_euclid(nv as i64) as usize].re * scale;
        }
    }
    if field.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("wigner_transform"));
    }
    Ok(field)
}

/// Momentum density `(2πεN)^{-1} Σ_j |∫ f_j(x) e^{-ivx/ε} dx|²` at the
/// velocity nodes, with the integral taken as a Riemann sum over the box.
pub fn momentum_density(orbitals: &OrbitalSet, v_grid: VelocityGrid) -> Result<Vec<f64>> {
    let grid = orbitals.grid();
    if !v_grid.compatible_with(grid) {
        return Err(invalid("v_grid", "incompatible with the position grid"));
    }
    let n = grid.points_per_dim();
    let nv = v_grid.n_v;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nv);
    let mut out = vec![0.0; nv];
    let half = nv as i64 / 2;
    for f in orbitals.orbitals() {
        let mut buf = vec![Complex64::new(0.0, 0.0); nv];
        buf[..n].copy_from_slice(f);
        fwd.process(&mut buf);
        // x_a = -L/2 + aΔx and v_m/ε = mπ/L give e^{-ivx/ε} = e^{imπ/2} e^{-2πi ma/nv}
        for (slot, o) in out.iter_mut().enumerate() {
            let m = slot as i64 - half;
            let c = buf[m.rem_euclid(nv as i64) as usize] * grid.spacing();
            *o += c.norm_sqr();
        }
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI * grid.epsilon() * orbitals.n_particles() as f64);
    out.iter_mut().for_each(|v| *v *= norm);
    Ok(out)
}
