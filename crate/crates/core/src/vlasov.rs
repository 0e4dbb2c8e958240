//! Relativistic Vlasov equation
//! `∂_t W + v/sqrt(v²+m0²) ∂_x W − ∂_v W ∂_x(V*ρ) = 0`
//! on the Wigner phase-space grid, by spectral Strang splitting.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::semiclassics::{VelocityGrid, WignerField};
use crate::spectral::{Grid, PotentialSpec};

/// Phase-space density sharing the Wigner grid and layout.
pub type PhaseSpaceField = WignerField;

/// Relative mass change tolerated in a single step.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Precomputed plans and transport phases for repeated steps with a fixed `dt`.
pub struct VlasovStepper {
    grid: Grid,
    v_grid: VelocityGrid,
    potential: PotentialSpec,
    dt: f64,
    x_fwd: Arc<dyn Fft<f64>>,
    x_inv: Arc<dyn Fft<f64>>,
    v_fwd: Arc<dyn Fft<f64>>,
    v_inv: Arc<dyn Fft<f64>>,
    /// Half-step x-shift multipliers, one row per velocity node.
    x_phase: Vec<Vec<Complex64>>,
    /// Angular frequencies conjugate to the periodic velocity axis.
    v_freq: Vec<f64>,
    warned: bool,
}

impl VlasovStepper {
    pub fn new(grid: &Grid, v_grid: VelocityGrid, potential: &PotentialSpec, m0: f64, dt: f64) -> Result<Self> {
        if grid.dim() != 1 || !v_grid.compatible_with(grid) {
            return Err(invalid("v_grid", "phase space is 1D × the matching velocity grid"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        if !(m0 > 0.0) {
            return Err(invalid("m0", "must be positive"));
        }
        grid.check_len(potential.vhat().len())?;
        let n = grid.points_per_dim();
        let nv = v_grid.n_v;
        let mut planner = FftPlanner::new();
        let speed = |v: f64| v / v.hypot(m0);
        let max_speed = v_grid.nodes().iter().map(|v| speed(*v).abs()).fold(0.0, f64::max);
        if dt * max_speed > grid.spacing() {
            log::warn!("Vlasov step {dt} exceeds the transport CFL bound {:.3e}", grid.spacing() / max_speed);
        }
        let x_phase = v_grid
            .nodes()
            .iter()
            .map(|&v| {
                let shift = 0.5 * dt * speed(v);
                grid.axis_momenta().iter().map(|&p| Complex64::from_polar(1.0, -p * shift)).collect()
            })
            .collect();
        let period = nv as f64 * v_grid.dv;
        let v_freq = (0..nv)
            .map(|k| {
                let k = if k < nv / 2 { k as f64 } else { k as f64 - nv as f64 };
                2.0 * std::f64::consts::PI * k / period
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            v_grid,
            potential: potential.clone(),
            dt,
            x_fwd: planner.plan_fft_forward(n),
            x_inv: planner.plan_fft_inverse(n),
            v_fwd: planner.plan_fft_forward(nv),
            v_inv: planner.plan_fft_inverse(nv),
            x_phase,
            v_freq,
            warned: false,
        })
    }

    fn transport_half(&self, values: &mut [f64]) {
        let n = self.grid.points_per_dim();
        let nv = self.v_grid.n_v;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (m, phase) in self.x_phase.iter().enumerate() {
            for a in 0..n {
                buf[a] = Complex64::new(values[a * nv + m], 0.0);
            }
            self.x_fwd.process(&mut buf);
            buf.iter_mut().zip(phase).for_each(|(b, e)| *b *= e);
            self.x_inv.process(&mut buf);
            for a in 0..n {
                values[a * nv + m] = buf[a].re / n as f64;
            }
        }
    }

    /// `∂_x(V*ρ)` with `ρ = ∫ W dv`.
    pub fn force_potential_gradient(&self, field: &PhaseSpaceField) -> Vec<f64> {
        let rho = field.position_marginal();
        let phi: Vec<Complex64> = self
            .potential
            .convolve_real(&self.grid, &rho)
            .into_iter()
            .map(|v| Complex64::new(v, 0.0))
            .collect();
        self.grid.derivative(&phi, 0).into_iter().map(|v| v.re).collect()
    }

    fn accelerate(&mut self, field: &mut PhaseSpaceField) {
        let grad = self.force_potential_gradient(field);
        let nv = self.v_grid.n_v;
        let max_grad = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        if !self.warned && self.dt * max_grad > self.v_grid.dv {
            log::warn!("Vlasov step {} exceeds the force CFL bound {:.3e}", self.dt, self.v_grid.dv / max_grad);
            self.warned = true;
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); nv];
        for (row, g) in field.values.chunks_mut(nv).zip(&grad) {
            if *g == 0.0 {
                continue;
            }
            // W(v) ← W(v + dt·∂_xΦ)
            let shift = self.dt * g;
            buf.iter_mut().zip(row.iter()).for_each(|(b, w)| *b = Complex64::new(*w, 0.0));
            self.v_fwd.process(&mut buf);
            buf.iter_mut().zip(&self.v_freq).for_each(|(b, k)| *b *= Complex64::from_polar(1.0, k * shift));
            self.v_inv.process(&mut buf);
            row.iter_mut().zip(&buf).for_each(|(w, b)| *w = b.re / nv as f64);
        }
    }

    pub fn step(&mut self, field: &PhaseSpaceField) -> Result<PhaseSpaceField> {
        if field.grid != self.grid || field.v_grid != self.v_grid {
            return Err(Error::GridMismatch);
        }
        let mut out = field.clone();
        self.transport_half(&mut out.values);
        self.accelerate(&mut out);
        self.transport_half(&mut out.values);
        if out.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vlasov_step"));
        }
        Ok(out)
    }
}

pub fn vlasov_step(field: &PhaseSpaceField, potential: &PotentialSpec, m0: f64, dt: f64) -> Result<PhaseSpaceField> {
    VlasovStepper::new(&field.grid, field.v_grid, potential, m0, dt)?.step(field)
}

/// `∫∫ sqrt(v²+m0²) W + ½ ∫ ρ V*ρ`.
pub fn vlasov_energy(field: &PhaseSpaceField, potential: &PotentialSpec, m0: f64) -> f64 {
    let nv = field.v_grid.n_v;
    let dx = field.grid.spacing();
    let speeds: Vec<f64> = field.v_grid.nodes().iter().map(|v| v.hypot(m0)).collect();
    let kinetic: f64 = field
        .values
        .chunks(nv)
        .map(|row| row.iter().zip(&speeds).map(|(w, s)| w * s).sum::<f64>())
        .sum::<f64>()
        * dx
        * field.v_grid.dv;
    let rho = field.position_marginal();
    let phi = potential.convolve_real(&field.grid, &rho);
    kinetic + 0.5 * rho.iter().zip(&phi).map(|(r, p)| r * p).sum::<f64>() * dx
}

#[derive(Debug, Clone)]
pub struct VlasovRun {
    pub field: PhaseSpaceField,
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    /// Largest relative single-step mass change.
    pub max_mass_step: f64,
}

/// Steps to `t_final` (the last step is shortened to land on it) and samples
/// mass and energy every `sample_every` steps.
pub fn vlasov_evolve(field: PhaseSpaceField, potential: &PotentialSpec, m0: f64, dt: f64, t_final: f64, sample_every: usize) -> Result<VlasovRun> {
    let mut stepper = VlasovStepper::new(&field.grid, field.v_grid, potential, m0, dt)?;
    let sample_every = sample_every.max(1);
    let steps = if t_final <= 0.0 { 0 } else { (t_final / dt - 1e-9).ceil() as usize };
    let mut run = VlasovRun {
        times: vec![0.0],
        mass: vec![field.mass()],
        energy: vec![vlasov_energy(&field, potential, m0)],
        field,
        max_mass_step: 0.0,
    };
    let mut time = 0.0;
    for k in 1..=steps {
        let next = if k == steps && t_final - time < dt * (1.0 - 1e-12) {
            VlasovStepper::new(&run.field.grid, run.field.v_grid, potential, m0, t_final - time)?.step(&run.field)?
        } else {
            stepper.step(&run.field)?
        };
        let (before, after) = (run.field.mass(), next.mass());
        let change = (after - before).abs() / before.abs().max(1e-300);
        run.max_mass_step = run.max_mass_step.max(change);
        time = if k == steps { t_final } else { time + dt };
        run.field = next;
        if k % sample_every == 0 || k == steps {
            run.times.push(time);
            run.mass.push(after);
            run.energy.push(vlasov_energy(&run.field, potential, m0));
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseSpaceDistance {
    /// `(∫∫ |W_a − W_b|²)^{1/2}`.
    pub l2: f64,
    /// `(∫ |ρ_a − ρ_b|²)^{1/2}`.
    pub position_marginal: f64,
}

pub fn compare_to_wigner(vlasov: &PhaseSpaceField, wigner: &WignerField) -> Result<PhaseSpaceDistance> {
    if vlasov.grid != wigner.grid || vlasov.v_grid != wigner.v_grid {
        return Err(Error::GridMismatch);
    }
    let dx = vlasov.grid.spacing();
    let l2 = vlasov.values.iter().zip(&wigner.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * dx * vlasov.v_grid.dv;
    let (ra, rb) = (vlasov.position_marginal(), wigner.position_marginal());
    let marginal = ra.iter().zip(&rb).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * dx;
    Ok(PhaseSpaceDistance {
        l2: l2.sqrt(),
        position_marginal: marginal.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::OrbitalSet;
    use crate::semiclassics::wigner_transform;
    use crate::spectral::make_grid;

    fn gaussian_field(grid: &Grid, sx: f64, sv: f64, v0: f64) -> PhaseSpaceField {
        let vg = VelocityGrid::for_grid(grid);
        let mut f = WignerField::zeros(grid, vg).unwrap();
        let nodes = vg.nodes();
        let norm = 1.0 / (2.0 * std::f64::consts::PI * sx * sv);
        for (a, x) in grid.axis_positions().iter().enumerate() {
            for (m, v) in nodes.iter().enumerate() {
                f.values[a * vg.n_v + m] = norm * (-x * x / (2.0 * sx * sx) - (v - v0).powi(2) / (2.0 * sv * sv)).exp();
            }
        }
        f
    }

    #[test]
    fn free_transport_follows_characteristics() {
        let grid = make_grid(1, 128, 16.0, 0.25).unwrap();
        let start = gaussian_field(&grid, 1.0, 0.5, 0.3);
        let run = vlasov_evolve(start.clone(), &PotentialSpec::zero(&grid), 1.0, 0.1, 1.0, 1).unwrap();
        let nodes = start.v_grid.nodes();
        let peak = start.max_value();
        let norm = 1.0 / (2.0 * std::f64::consts::PI * 0.5);
        let mut worst = 0.0_f64;
        for (a, x) in grid.axis_positions().iter().enumerate() {
            for (m, v) in nodes.iter().enumerate() {
                let y = x - v / v.hypot(1.0);
                let exact = norm * (-y * y / 2.0 - (v - 0.3).powi(2) / 0.5).exp();
                worst = worst.max((run.field.at(a, m) - exact).abs());
            }
        }
        assert!(worst <= 1e-8 * peak, "{worst}");
    }

    #[test]
    fn mass_is_conserved_per_step() {
        let grid = make_grid(1, 64, 8.0, 0.25).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 0.5, 1.0).unwrap();
        let start = gaussian_field(&grid, 0.7, 0.4, 0.0);
        let run = vlasov_evolve(start, &pot, 1.0, 0.01, 0.5, 10).unwrap();
        assert!(run.max_mass_step <= MASS_TOLERANCE, "{}", run.max_mass_step);
        assert!((run.mass[0] - 1.0).abs() < 1e-6, "{}", run.mass[0]);
        let e0 = run.energy[0];
        assert!(run.energy.iter().all(|e| (e - e0).abs() <= 1e-4 * e0.abs()));
    }

    #[test]
    fn uniform_density_is_stationary() {
        let grid = make_grid(1, 32, 8.0, 0.25).unwrap();
        let vg = VelocityGrid::for_grid(&grid);
        let mut f = WignerField::zeros(&grid, vg).unwrap();
        let profile: Vec<f64> = vg.nodes().iter().map(|v| (-v * v / 0.18).exp()).collect();
        let total: f64 = profile.iter().sum::<f64>() * vg.dv * grid.box_length();
        for row in f.values.chunks_mut(vg.n_v) {
            row.iter_mut().zip(&profile).for_each(|(w, p)| *w = p / total);
        }
        let pot = PotentialSpec::gaussian(&grid, 0.5, 1.0).unwrap();
        let out = vlasov_step(&f, &pot, 1.0, 0.05).unwrap();
        let worst = out.values.iter().zip(&f.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-13, "{worst}");
    }

    #[test]
    fn distance_to_own_wigner_transform_vanishes() {
        let grid = make_grid(1, 64, 16.0, 0.25).unwrap();
        let f: Vec<Complex64> = grid.axis_positions().iter().map(|x| Complex64::new((-x * x).exp(), 0.0)).collect();
        let norm = grid.norm(&f);
        let orbs = OrbitalSet::new(grid.clone(), vec![f.iter().map(|v| v / norm).collect()]).unwrap();
        let w = wigner_transform(&orbs, VelocityGrid::for_grid(&grid)).unwrap();
        let d = compare_to_wigner(&w.clone(), &w).unwrap();
        assert_eq!(d.l2, 0.0);
        assert_eq!(d.position_marginal, 0.0);
        let other = make_grid(1, 32, 16.0, 0.25).unwrap();
        let bad = WignerField::zeros(&other, VelocityGrid::for_grid(&other)).unwrap();
        assert!(matches!(compare_to_wigner(&bad, &w), Err(Error::GridMismatch)));
    }
}
