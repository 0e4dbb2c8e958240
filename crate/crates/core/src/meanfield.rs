//! The Hartree-Fock mean-field operator `h = T + V_ext + V*ρ - X` and the
//! energy functional it derives from.

use num_complex::Complex64;
use serde::Serialize;

use crate::density::OrbitalSet;
use crate::error::{Error, Result};
use crate::spectral::{DispersionKind, Field, Grid, PotentialSpec};

/// Which pieces of the mean field act.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeanFieldTerms {
    pub external: bool,
    pub exchange: bool,
}

impl Default for MeanFieldTerms {
    fn default() -> Self {
        Self {
            external: true,
            exchange: true,
        }
    }
}

/// Mean-field operator frozen at a given set of orbitals.
#[derive(Debug, Clone)]
pub struct MeanField {
    grid: Grid,
    kinetic: Vec<f64>,
    local: Vec<f64>,
    potential: PotentialSpec,
    source: Option<OrbitalSet>,
    exchange: bool,
}

impl MeanField {
    pub fn new(
        source: &OrbitalSet,
        potential: &PotentialSpec,
        dispersion: &DispersionKind,
        terms: MeanFieldTerms,
    ) -> Result<Self> {
        let grid = source.grid();
        Self::with_kinetic(source, potential, grid.symbol_table(dispersion), terms)
    }

    /// Same as [`MeanField::new`] with a precomputed kinetic symbol table.
    pub fn with_kinetic(
        source: &OrbitalSet,
        potential: &PotentialSpec,
        kinetic: Vec<f64>,
        terms: MeanFieldTerms,
    ) -> Result<Self> {
        let grid = source.grid().clone();
        grid.check_len(potential.vhat().len())?;
        grid.check_len(kinetic.len())?;
        let mut local = if terms.external {
            potential.vext().to_vec()
        } else {
            vec![0.0; grid.len()]
        };
        let interacting = potential.is_interacting() && source.n_particles() > 0;
        if interacting {
            let direct = potential.convolve_real(&grid, &source.reduced_density());
            local.iter_mut().zip(&direct).for_each(|(l, d)| *l += d);
        }
        Ok(Self {
            grid,
            kinetic,
            local,
            potential: potential.clone(),
            source: interacting.then(|| source.clone()),
            exchange: terms.exchange && interacting,
        })
    }

    /// One-body part only (`T` plus optionally `V_ext`), no self-consistent field.
    pub fn one_body(grid: &Grid, potential: &PotentialSpec, dispersion: &DispersionKind, external: bool) -> Result<Self> {
        grid.check_len(potential.vext().len())?;
        Ok(Self {
            grid: grid.clone(),
            kinetic: grid.symbol_table(dispersion),
            local: if external {
                potential.vext().to_vec()
            } else {
                vec![0.0; grid.len()]
            },
            potential: potential.clone(),
            source: None,
            exchange: false,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kinetic_symbol(&self) -> &[f64] {
        &self.kinetic
    }

    /// `V_ext + V*ρ` on the grid.
    pub fn local_potential(&self) -> &[f64] {
        &self.local
    }

    pub fn exchange_source(&self) -> Option<&OrbitalSet> {
        self.source.as_ref().filter(|_| self.exchange)
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    pub fn apply(&self, field: &[Complex64]) -> Field {
        let mut out = self.grid.apply_multiplier(field, &self.kinetic);
        for ((o, v), l) in out.iter_mut().zip(field).zip(&self.local) {
            *o += v * l;
        }
        if let Some(src) = self.exchange_source() {
            let x = src.exchange_unchecked(&self.potential, field);
            out.iter_mut().zip(&x).for_each(|(o, xv)| *o -= xv);
        }
        out
    }

    pub fn apply_checked(&self, field: &[Complex64]) -> Result<Field> {
        self.grid.check_len(field.len())?;
        Ok(self.apply(field))
    }

    /// `‖[h, ω]‖_HS = sqrt(2 Σ_j ‖(1-ω) h f_j‖²)` for orthonormal orbitals.
    pub fn commutator_residual(&self, orbitals: &OrbitalSet) -> f64 {
        let mut total = 0.0;
        for f in orbitals.orbitals() {
            let hf = self.apply(f);
            let proj = orbitals.apply_density_matrix(&hf).expect("same grid");
            let r: Field = hf.iter().zip(&proj).map(|(a, b)| a - b).collect();
            total += self.grid.norm(&r).powi(2);
        }
        (2.0 * total).sqrt()
    }

    /// Dense matrix of `h` acting on grid values. Intended for grids of at
    /// most a few thousand nodes.
    pub fn dense_matrix(&self) -> crate::linalg::CMatrix {
        let grid = &self.grid;
        let len = grid.len();
        let kin_coeffs: Vec<Complex64> = self.kinetic.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        let kin_row = grid.inverse(&kin_coeffs);
        let exchange = self.exchange_source().map(|src| {
            let vx = self.potential.pair_potential_on_grid(grid);
            let scale = grid.cell_volume() / src.n_particles() as f64;
            (src, vx, scale)
        });
        let mut m = crate::linalg::CMatrix::zeros(len, len);
        for a in 0..len {
            let ia = grid.multi_index(a);
            for b in 0..len {
                let ib = grid.multi_index(b);
                let n = grid.points_per_dim();
                let diff = (0..grid.dim()).fold(0usize, |acc, ax| acc * n + (ia[ax] + n - ib[ax]) % n);
                let mut v = kin_row[diff];
                if let Some((src, vx, scale)) = &exchange {
                    let omega: Complex64 = src.orbitals().iter().map(|f| f[a] * f[b].conj()).sum();
                    v -= omega * vx[diff] * *scale;
                }
                m[(a, b)] = v;
            }
            m[(a, a)] += self.local[a];
        }
        m
    }
}

pub fn mean_field_operator_apply(
    orbitals: &OrbitalSet,
    potential: &PotentialSpec,
    dispersion: &DispersionKind,
    field: &[Complex64],
) -> Result<Field> {
    MeanField::new(orbitals, potential, dispersion, MeanFieldTerms::default())?.apply_checked(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub external: f64,
    pub direct: f64,
    pub exchange: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.kinetic + self.external + self.direct - self.exchange
    }
}

/// Terms of the Hartree-Fock functional. `exchange` is reported as a
/// nonnegative-for-positive-`V̂` quantity that enters with a minus sign.
pub fn energy_breakdown(
    orbitals: &OrbitalSet,
    potential: &PotentialSpec,
    dispersion: &DispersionKind,
    terms: MeanFieldTerms,
) -> Result<EnergyBreakdown> {
    let grid = orbitals.grid();
    grid.check_len(potential.vhat().len())?;
    let symbol = grid.symbol_table(dispersion);
    let dv = grid.cell_volume();
    let norm = 1.0 / grid.len() as f64;
    let mut kinetic = 0.0;
    for f in orbitals.orbitals() {
        let fhat = grid.forward(f);
        // Parseval: ∫ conj(f) T f = ΔV n^{-d} Σ_k s_k |f̂_k|²
        kinetic += fhat.iter().zip(&symbol).map(|(c, s)| c.norm_sqr() * s).sum::<f64>() * dv * norm;
    }
    let rho = orbitals.reduced_density();
    let n = orbitals.n_particles() as f64;
    let external = if terms.external {
        n * grid.integrate(&rho.iter().zip(potential.vext()).map(|(r, v)| r * v).collect::<Vec<_>>())
    } else {
        0.0
    };
    let (mut direct, mut exchange) = (0.0, 0.0);
    if potential.is_interacting() && n > 0.0 {
        let vhat = potential.scaled_vhat();
        let quad = |g: &[Complex64]| -> f64 {
            let ghat = grid.forward(g);
            ghat.iter().zip(&vhat).map(|(c, v)| c.norm_sqr() * v).sum::<f64>() * dv * norm
        };
        let rho_c: Field = rho.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        direct = 0.5 * n * quad(&rho_c);
        if terms.exchange {
            let orbs = orbitals.orbitals();
            let mut sum = 0.0;
            for j in 0..orbs.len() {
                for k in j..orbs.len() {
                    let g: Field = orbs[j].iter().zip(&orbs[k]).map(|(a, b)| a.conj() * b).collect();
                    let w = if j == k { 1.0 } else { 2.0 };
                    sum += w * quad(&g);
                }
            }
            exchange = 0.5 * sum / n;
        }
    }
    if !(kinetic + external + direct - exchange).is_finite() {
        return Err(Error::NonFinite("hf_energy"));
    }
    Ok(EnergyBreakdown {
        kinetic,
        external,
        direct,
        exchange,
    })
}

/// Hartree-Fock energy `tr[(T + V_ext) ω] + (2N)^{-1} ∫∫ V(x-y)(ω(x,x)ω(y,y) - |ω(x,y)|²)`.
pub fn hf_energy(orbitals: &OrbitalSet, potential: &PotentialSpec, dispersion: &DispersionKind) -> Result<f64> {
    Ok(energy_breakdown(orbitals, potential, dispersion, MeanFieldTerms::default())?.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{make_grid, periodized_trap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_set(grid: &Grid, n: usize, seed: u64) -> OrbitalSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = (0..n)
            .map(|_| {
                (0..grid.len())
                    .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        OrbitalSet::new_unchecked(grid.clone(), raw).unwrap().reorthonormalize().unwrap()
    }

    const REL: DispersionKind = DispersionKind::Relativistic { m0: 1.0 };

    #[test]
    fn free_fermi_sea_energy_is_sum_of_symbols() {
        let grid = make_grid(1, 64, 2.0 * PI, 0.125).unwrap();
        let sea = OrbitalSet::fermi_sea(&grid, 9, &REL).unwrap();
        let e = hf_energy(&sea, &PotentialSpec::zero(&grid), &REL).unwrap();
        let expected: f64 = (-4..=4).map(|k: i32| (0.125f64 * k as f64).hypot(1.0)).sum();
        assert!((e - expected).abs() < 1e-12);
    }

    #[test]
    fn single_orbital_has_no_self_interaction() {
        let grid = make_grid(1, 32, 4.0, 0.2).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 2.0, 0.5).unwrap();
        let set = random_set(&grid, 1, 1);
        let b = energy_breakdown(&set, &pot, &REL, MeanFieldTerms::default()).unwrap();
        assert!((b.direct - b.exchange).abs() < 1e-13 * b.direct.abs().max(1.0));
        assert!(b.direct > 0.0);
    }

    #[test]
    fn energy_matches_dense_quadrature() {
        let grid = make_grid(1, 16, 3.0, 0.3).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 1.1, 0.4)
            .unwrap()
            .with_vext(&grid, periodized_trap(&grid, 0.7))
            .unwrap();
        let set = random_set(&grid, 2, 2);
        let e = hf_energy(&set, &pot, &REL).unwrap();

        // independent evaluation: kinetic from the dense circulant, interaction by double quadrature
        let n = grid.len();
        let dx = grid.spacing();
        let xs = grid.axis_positions();
        let ks = grid.axis_momenta();
        let tkernel = |a: usize, b: usize| -> f64 {
            (0..n).map(|k| (0.3 * ks[k]).hypot(1.0) * (ks[k] * (xs[a] - xs[b])).cos()).sum::<f64>() / n as f64
        };
        let vkernel = |x: f64| -> f64 { (0..n).map(|k| pot.coefficient(k) * (ks[k] * x).cos()).sum::<f64>() / grid.box_length() };
        let omega = |a: usize, b: usize| -> Complex64 { set.orbitals().iter().map(|f| f[a] * f[b].conj()).sum() };
        let mut one_body = 0.0;
        for a in 0..n {
            for b in 0..n {
                one_body += (omega(b, a) * tkernel(a, b)).re * dx;
            }
            one_body += omega(a, a).re * pot.vext()[a] * dx;
        }
        let mut two_body = 0.0;
        for a in 0..n {
            for b in 0..n {
                let w = omega(a, a).re * omega(b, b).re - omega(a, b).norm_sqr();
                two_body += vkernel(xs[a] - xs[b]) * w * dx * dx;
            }
        }
        let reference = one_body + two_body / (2.0 * 2.0);
        assert!((e - reference).abs() <= 1e-8 * reference.abs(), "{e} vs {reference}");
    }

    #[test]
    fn energy_bounded_below_by_rest_mass_for_repulsive_kernel() {
        let grid = make_grid(1, 32, 4.0, 0.2).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 3.0, 0.3).unwrap();
        for seed in 0..10 {
            let set = random_set(&grid, 4, seed);
            let b = energy_breakdown(&set, &pot, &REL, MeanFieldTerms::default()).unwrap();
            assert!(b.exchange <= b.direct + 1e-12);
            assert!(b.total() >= 4.0);
        }
    }

    #[test]
    fn mean_field_without_interaction_is_kinetic() {
        let grid = make_grid(1, 32, 4.0, 0.2).unwrap();
        let set = random_set(&grid, 3, 4);
        let g = random_set(&grid, 1, 5).orbitals()[0].clone();
        let h = mean_field_operator_apply(&set, &PotentialSpec::zero(&grid), &REL, &g).unwrap();
        let t = crate::spectral::apply_kinetic(&g, &grid, &REL).unwrap();
        assert!(h.iter().zip(&t).all(|(a, b)| (a - b).norm() < 1e-14));
    }

    #[test]
    fn mean_field_is_self_adjoint() {
        let grid = make_grid(1, 32, 4.0, 0.2).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 1.0, 0.5)
            .unwrap()
            .with_vext(&grid, periodized_trap(&grid, 1.0))
            .unwrap();
        let set = random_set(&grid, 3, 6);
        let mf = MeanField::new(&set, &pot, &REL, MeanFieldTerms::default()).unwrap();
        for seed in 0..5 {
            let pair = random_set(&grid, 2, 100 + seed);
            let (f, g) = (&pair.orbitals()[0], &pair.orbitals()[1]);
            let lhs = grid.inner(f, &mf.apply(g));
            let rhs = grid.inner(&mf.apply(f), g);
            assert!((lhs - rhs).norm() <= 1e-10);
        }
    }

    #[test]
    fn plane_waves_are_eigenvectors_in_fermi_sea() {
        let grid = make_grid(1, 64, 2.0 * PI, 1.0 / 8.0).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 0.5, 1.0).unwrap();
        let sea = OrbitalSet::fermi_sea(&grid, 8, &REL).unwrap();
        let mf = MeanField::new(&sea, &pot, &REL, MeanFieldTerms::default()).unwrap();
        for mode in [0usize, 3, 17, 40, 63] {
            let pw = OrbitalSet::plane_waves(&grid, &[mode]).unwrap();
            let f = &pw.orbitals()[0];
            let hf = mf.apply(f);
            let lambda = grid.inner(f, &hf);
            let res: Field = hf.iter().zip(f).map(|(a, b)| a - lambda * b).collect();
            assert!(grid.norm(&res) <= 1e-10, "mode {mode}");
        }
        assert!(mf.commutator_residual(&sea) < 1e-10);
    }

    #[test]
    fn dense_matrix_matches_matrix_free_action() {
        let grid = make_grid(1, 16, 3.0, 0.3).unwrap();
        let pot = PotentialSpec::gaussian(&grid, 1.0, 0.4)
            .unwrap()
            .with_vext(&grid, periodized_trap(&grid, 0.5))
            .unwrap();
        let set = random_set(&grid, 2, 7);
        let mf = MeanField::new(&set, &pot, &REL, MeanFieldTerms::default()).unwrap();
        let dense = mf.dense_matrix();
        let g = random_set(&grid, 1, 8).orbitals()[0].clone();
        let fast = mf.apply(&g);
        let slow = &dense * nalgebra::DVector::from_column_slice(&g);
        assert!(fast.iter().zip(slow.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
        let herm = &dense - dense.adjoint();
        assert!(herm.iter().all(|v| v.norm() < 1e-12));
    }
}
