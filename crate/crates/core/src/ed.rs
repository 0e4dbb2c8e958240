//! Exact diagonalization oracle: a few fermions on `M` plane-wave modes
//! `p_i = 2π(i − M/2)/L`, together with a Hartree-Fock propagator on the
//! same modes for comparison.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::krylov::{expm_hermitian, KrylovOptions};
use crate::linalg::{frobenius_sq, hermitian_eigen, CMatrix};
use crate::spectral::DispersionKind;

/// Largest Fock basis that will be built.
pub const MAX_BASIS: u128 = 1_000_000;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Interacting fermions on `modes` plane waves in a box of length `box_length`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeModel {
    pub modes: usize,
    pub box_length: f64,
    pub epsilon: f64,
    pub dispersion: DispersionKind,
    /// `coupling · V̂(p_q)` for `q` in mode order (`q − M/2` is the signed index).
    vhat: Vec<f64>,
}

impl ModeModel {
    pub fn new(modes: usize, box_length: f64, epsilon: f64, dispersion: DispersionKind, vhat: Vec<f64>) -> Result<Self> {
        if modes < 2 || modes % 2 != 0 || modes > 64 {
            return Err(invalid("modes", "must be even and between 2 and 64"));
        }
        if !(box_length > 0.0 && box_length.is_finite()) {
            return Err(invalid("box_length", "must be positive"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(invalid("epsilon", "must be positive"));
        }
        dispersion.validate()?;
        if vhat.len() != modes {
            return Err(Error::ShapeMismatch {
                expected: modes,
                found: vhat.len(),
            });
        }
        let model = Self {
            modes,
            box_length,
            epsilon,
            dispersion,
            vhat,
        };
        let half = (modes / 2) as i64;
        for q in 1 - half..half {
            if (model.vq(q) - model.vq(-q)).abs() > 1e-12 * (1.0 + model.vq(q).abs()) {
                return Err(invalid("vhat", format!("not even at mode {q}")));
            }
        }
        Ok(model)
    }

    /// `V̂(p) = coupling · exp(−s²p²/2)`.
    pub fn gaussian(modes: usize, box_length: f64, epsilon: f64, dispersion: DispersionKind, coupling: f64, width: f64) -> Result<Self> {
        let half = modes as f64 / 2.0;
        let vhat = (0..modes)
            .map(|i| {
                let p = 2.0 * std::f64::consts::PI * (i as f64 - half) / box_length;
                coupling * (-0.5 * width * width * p * p).exp()
            })
            .collect();
        Self::new(modes, box_length, epsilon, dispersion, vhat)
    }

    pub fn without_interaction(&self) -> Self {
        Self {
            vhat: vec![0.0; self.modes],
            ..self.clone()
        }
    }

    pub fn momentum(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * (i as f64 - (self.modes / 2) as f64) / self.box_length
    }

    pub fn kinetic(&self, i: usize) -> f64 {
        self.dispersion.symbol(self.epsilon * self.momentum(i))
    }

    /// Mode index of `i + q`, wrapping modulo `M`.
    fn shift(&self, i: usize, q: i64) -> usize {
        (i as i64 + q).rem_euclid(self.modes as i64) as usize
    }

    /// Coupled `V̂` at the signed (wrapped) momentum index `q`.
    pub fn vq(&self, q: i64) -> f64 {
        let half = (self.modes / 2) as i64;
        self.vhat[(q + half).rem_euclid(self.modes as i64) as usize]
    }

    /// The `n` lowest modes, ties broken by mode index.
    pub fn fermi_sea(&self, n: usize) -> Result<Vec<usize>> {
        if n == 0 || n > self.modes {
            return Err(invalid("n_particles", format!("must be between 1 and {}", self.modes)));
        }
        let mut modes: Vec<usize> = (0..self.modes).collect();
        modes.sort_by(|&a, &b| self.kinetic(a).total_cmp(&self.kinetic(b)).then(a.cmp(&b)));
        modes.truncate(n);
        modes.sort_unstable();
        Ok(modes)
    }
}

fn binomial(m: usize, n: usize) -> u128 {
    let n = n.min(m - n.min(m));
    (0..n).fold(1u128, |acc, k| acc * (m - k) as u128 / (k + 1) as u128)
}

/// Fermionic sign of acting with `a_p` or `a†_p` on `mask`.
fn sign(mask: u64, p: usize) -> f64 {
    if (mask & ((1u64 << p) - 1)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Occupation-number basis of one particle-number sector.
#[derive(Debug, Clone)]
pub struct FockBasis {
    n_modes: usize,
    n_particles: usize,
    states: Vec<u64>,
    index: HashMap<u64, usize>,
}

impl FockBasis {
    pub fn new(n_modes: usize, n_particles: usize) -> Result<Self> {
        if n_modes == 0 || n_modes > 64 || n_particles == 0 || n_particles > n_modes {
            return Err(invalid("n_particles", format!("{n_particles} fermions on {n_modes} modes")));
        }
        let count = binomial(n_modes, n_particles);
        if count > MAX_BASIS {
            return Err(Error::BasisOverflow(count));
        }
        let mut states = Vec::with_capacity(count as usize);
        let mut subset: Vec<usize> = (0..n_particles).collect();
        loop {
            states.push(subset.iter().fold(0u64, |m, &i| m | 1 << i));
            // next subset in lexicographic order
            let Some(k) = (0..n_particles).rev().find(|&k| subset[k] < n_modes - n_particles + k) else {
                break;
            };
            subset[k] += 1;
            for j in k + 1..n_particles {
                subset[j] = subset[j - 1] + 1;
            }
        }
        let index = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        Ok(Self {
            n_modes,
            n_particles,
            states,
            index,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> u64 {
        self.states[i]
    }

    pub fn occupied(&self, i: usize) -> Vec<usize> {
        (0..self.n_modes).filter(|&p| self.states[i] >> p & 1 == 1).collect()
    }

    pub fn index_of(&self, mask: u64) -> Option<usize> {
        self.index.get(&mask).copied()
    }

    /// Total momentum index modulo `M`.
    pub fn momentum(&self, i: usize) -> usize {
        let half = self.n_modes / 2;
        self.occupied(i).iter().map(|&p| p + self.n_modes - half).sum::<usize>() % self.n_modes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    pub amplitudes: Vec<Complex64>,
}

impl FockVector {
    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid("vector", "cannot normalize"));
        }
        self.amplitudes.iter_mut().for_each(|a| *a /= n);
        Ok(self)
    }

    pub fn overlap(&self, other: &Self) -> Complex64 {
        self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum()
    }
}

/// Real sparse Hamiltonian in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHamiltonian {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseHamiltonian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k])))
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| v[self.cols[k]] * self.vals[k]).sum())
            .collect()
    }

    pub fn expectation(&self, v: &FockVector) -> f64 {
        let hv = self.apply(&v.amplitudes);
        v.amplitudes.iter().zip(&hv).map(|(a, b)| a.conj() * b).sum::<Complex64>().re
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.entries() {
            m[(r, c)] += Complex64::new(v, 0.0);
        }
        m
    }

    /// `max |H_ij − H_ji|`.
    pub fn hermiticity_residual(&self) -> f64 {
        let lookup: HashMap<(usize, usize), f64> = self.entries().map(|(r, c, v)| ((r, c), v)).collect();
        lookup
            .iter()
            .map(|(&(r, c), v)| (v - lookup.get(&(c, r)).copied().unwrap_or(0.0)).abs())
            .fold(0.0, f64::max)
    }

    /// `max |[T, H]_ij|` for the lattice translation `T = e^{2πi P/M}`.
    pub fn momentum_commutator(&self, basis: &FockBasis) -> f64 {
        let m = basis.n_modes() as f64;
        let phase = |i: usize| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * basis.momentum(i) as f64 / m);
        self.entries().map(|(r, c, v)| ((phase(r) - phase(c)) * v).norm()).fold(0.0, f64::max)
    }
}

/// `H = Σ_k s(εp_k) n_k + (2NL)^{-1} Σ V̂(q) a†_{p+q} a†_{p'−q} a_{p'} a_p`,
/// with momentum indices wrapped modulo `M`.
pub fn build_hamiltonian(basis: &FockBasis, model: &ModeModel) -> Result<SparseHamiltonian> {
    if basis.n_modes() != model.modes {
        return Err(Error::ShapeMismatch {
            expected: model.modes,
            found: basis.n_modes(),
        });
    }
    let m = model.modes;
    let half = (m / 2) as i64;
    let prefactor = 1.0 / (2.0 * basis.n_particles() as f64 * model.box_length);
    let kinetic: Vec<f64> = (0..m).map(|i| model.kinetic(i)).collect();
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for (r, &state) in basis.states.iter().enumerate() {
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        let diag: f64 = basis.occupied(r).iter().map(|&p| kinetic[p]).sum();
        row.insert(r, diag);
        let occ = basis.occupied(r);
        for &p in &occ {
            let s1 = sign(state, p);
            let after_p = state & !(1 << p);
            for &pp in &occ {
                if pp == p {
                    continue;
                }
                let s2 = sign(after_p, pp);
                let empty = after_p & !(1 << pp);
                for q in -half..half {
                    let v = model.vq(q);
                    if v == 0.0 {
                        continue;
                    }
                    let b = model.shift(pp, -q);
                    if empty >> b & 1 == 1 {
                        continue;
                    }
                    let s3 = sign(empty, b);
                    let with_b = empty | 1 << b;
                    let a = model.shift(p, q);
                    if with_b >> a & 1 == 1 {
                        continue;
                    }
                    let s4 = sign(with_b, a);
                    let target = basis.index_of(with_b | 1 << a).ok_or(Error::Eigensolver("Fock index".into()))?;
                    // ⟨target|H|state⟩ sits in row `target`; H is real symmetric so store transposed
                    *row.entry(target).or_insert(0.0) += prefactor * v * s1 * s2 * s3 * s4;
                }
            }
        }
        for (c, v) in row {
            if v != 0.0 {
                cols.push(c);
                vals.push(v);
            }
        }
        row_ptr.push(cols.len());
    }
    let h = SparseHamiltonian {
        dim: basis.len(),
        row_ptr,
        cols,
        vals,
    };
    Ok(h)
}

/// Basis vector occupying `modes`.
pub fn slater_vector(basis: &FockBasis, modes: &[usize]) -> Result<FockVector> {
    if modes.len() != basis.n_particles() {
        return Err(invalid("modes", format!("expected {} modes, got {}", basis.n_particles(), modes.len())));
    }
    let mask = modes.iter().fold(0u64, |m, &i| m | 1 << i);
    let idx = basis
        .index_of(mask)
        .ok_or_else(|| invalid("modes", "repeated or out-of-range mode"))?;
    let mut amplitudes = vec![ZERO; basis.len()];
    amplitudes[idx] = Complex64::new(1.0, 0.0);
    Ok(FockVector { amplitudes })
}

/// `e^{−iHt/ε} ψ`.
pub fn evolve_exact(vector: &FockVector, hamiltonian: &SparseHamiltonian, t: f64, epsilon: f64) -> Result<FockVector> {
    if vector.amplitudes.len() != hamiltonian.dim() {
        return Err(Error::ShapeMismatch {
            expected: hamiltonian.dim(),
            found: vector.amplitudes.len(),
        });
    }
    let opts = KrylovOptions {
        tol: 1e-12,
        ..Default::default()
    };
    let (amplitudes, _) = expm_hermitian(|v| hamiltonian.apply(v), &vector.amplitudes, t / epsilon, &opts)?;
    Ok(FockVector { amplitudes })
}

/// `γ_pq = ⟨ψ, a†_q a_p ψ⟩`.
pub fn reduced_density_1(vector: &FockVector, basis: &FockBasis) -> CMatrix {
    let m = basis.n_modes();
    let mut gamma = CMatrix::zeros(m, m);
    for (s, &state) in basis.states.iter().enumerate() {
        let c = vector.amplitudes[s];
        if c == ZERO {
            continue;
        }
        for p in basis.occupied(s) {
            let removed = state & !(1 << p);
            let s1 = sign(state, p);
            for q in 0..m {
                if removed >> q & 1 == 1 {
                    continue;
                }
                let target = removed | 1 << q;
                let t = basis.index_of(target).expect("particle number is conserved");
                gamma[(p, q)] += vector.amplitudes[t].conj() * c * (s1 * sign(removed, q));
            }
        }
    }
    gamma
}

/// `tr|γ_t − ω_t|²` at each common sample.
pub fn theorem_gap(gammas: &[CMatrix], omegas: &[CMatrix]) -> Result<Vec<f64>> {
    if gammas.len() != omegas.len() {
        return Err(Error::ShapeMismatch {
            expected: gammas.len(),
            found: omegas.len(),
        });
    }
    gammas
        .iter()
        .zip(omegas)
        .map(|(g, w)| {
            if g.shape() != w.shape() {
                return Err(Error::ShapeMismatch {
                    expected: g.nrows(),
                    found: w.nrows(),
                });
            }
            Ok(frobenius_sq(&(g - w)))
        })
        .collect()
}

/// Hartree-Fock on the mode space of a [`ModeModel`]; orbitals are columns
/// of plane-wave coefficients.
#[derive(Debug, Clone)]
pub struct ModeHartreeFock {
    model: ModeModel,
    pub orbitals: CMatrix,
    pub exchange: bool,
}

impl ModeHartreeFock {
    pub fn from_modes(model: &ModeModel, modes: &[usize]) -> Result<Self> {
        if modes.iter().any(|&i| i >= model.modes) {
            return Err(invalid("modes", "out of range"));
        }
        let orbitals = CMatrix::from_fn(model.modes, modes.len(), |r, c| {
            if r == modes[c] {
                Complex64::new(1.0, 0.0)
            } else {
                ZERO
            }
        });
        Ok(Self {
            model: model.clone(),
            orbitals,
            exchange: true,
        })
    }

    pub fn n_particles(&self) -> usize {
        self.orbitals.ncols()
    }

    /// `ω̂ = Σ_j f̂_j f̂_j^*`, trace `N`.
    pub fn density_matrix(&self) -> CMatrix {
        &self.orbitals * self.orbitals.adjoint()
    }

    /// Direct minus exchange part of the mean field for a given `ω̂`.
    fn interaction(&self, omega: &CMatrix) -> CMatrix {
        let m = self.model.modes;
        let n = self.n_particles() as f64;
        let l = self.model.box_length;
        let half = (m / 2) as i64;
        let wrap = |i: i64| i.rem_euclid(m as i64) as usize;
        // ρ̂(q) = N^{-1} Σ_k ω̂_{k,k−q}
        let rho: Vec<Complex64> = (0..m as i64)
            .map(|q| (0..m as i64).map(|k| omega[(k as usize, wrap(k - q))]).sum::<Complex64>() / n)
            .collect();
        CMatrix::from_fn(m, m, |a, b| {
            let d = a as i64 - b as i64;
            let direct = rho[wrap(d)] * (self.model.vq(d) / l);
            if !self.exchange {
                return direct;
            }
            let exchange: Complex64 = (-half..half)
                .map(|q| omega[(wrap(a as i64 - q), wrap(b as i64 - q))] * self.model.vq(q))
                .sum::<Complex64>()
                / (n * l);
            direct - exchange
        })
    }

    pub fn mean_field(&self, omega: &CMatrix) -> CMatrix {
        let mut h = self.interaction(omega);
        for i in 0..self.model.modes {
            h[(i, i)] += self.model.kinetic(i);
        }
        h
    }

    /// `Σ⟨f_j, T f_j⟩ + ½ tr((D − X)ω̂)`.
    pub fn energy(&self) -> f64 {
        let omega = self.density_matrix();
        let kinetic: f64 = (0..self.model.modes).map(|i| self.model.kinetic(i) * omega[(i, i)].re).sum();
        kinetic + 0.5 * (self.interaction(&omega) * &omega).trace().re
    }

    fn propagator(h: &CMatrix, tau: f64) -> CMatrix {
        let (vals, vecs) = hermitian_eigen((h + h.adjoint()) * Complex64::new(0.5, 0.0));
        let phases = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            vals.len(),
            vals.iter().map(|l| Complex64::from_polar(1.0, -tau * l)),
        ));
        &vecs * phases * vecs.adjoint()
    }

    /// One exponential-midpoint step of `iε∂_t f = h f`.
    pub fn step(&mut self, dt: f64) {
        let tau = dt / self.model.epsilon;
        let mut h = self.mean_field(&self.density_matrix());
        for _ in 0..2 {
            let half = Self::propagator(&h, tau / 2.0) * &self.orbitals;
            h = self.mean_field(&(&half * half.adjoint()));
        }
        self.orbitals = Self::propagator(&h, tau) * &self.orbitals;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRun {
    pub times: Vec<f64>,
    /// `tr|γ_t − ω_t|²`.
    pub gap: Vec<f64>,
    /// `tr ω_t²`.
    pub omega_sq_trace: Vec<f64>,
    pub max_norm_drift: f64,
    pub max_energy_drift: f64,
    /// Extreme eigenvalues of `γ_t` over all samples.
    pub gamma_eig_min: f64,
    pub gamma_eig_max: f64,
}

impl OracleRun {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,gap,omega_sq_trace\n");
        for i in 0..self.times.len() {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", self.times[i], self.gap[i], self.omega_sq_trace[i]));
        }
        out
    }
}

/// Exact and Hartree-Fock evolution of the `n_particles` Fermi sea up to
/// `t_final` in `steps` equal steps, compared at every `sample_every`-th step.
pub fn oracle_run(model: &ModeModel, n_particles: usize, t_final: f64, steps: usize, sample_every: usize) -> Result<OracleRun> {
    if steps == 0 {
        return Err(invalid("steps", "must be positive"));
    }
    let basis = FockBasis::new(model.modes, n_particles)?;
    let h = build_hamiltonian(&basis, model)?;
    let modes = model.fermi_sea(n_particles)?;
    let psi0 = slater_vector(&basis, &modes)?;
    let mut hf = ModeHartreeFock::from_modes(model, &modes)?;
    let e0 = h.expectation(&psi0);
    let dt = t_final / steps as f64;
    let sample_every = sample_every.max(1);
    let mut run = OracleRun {
        times: Vec::new(),
        gap: Vec::new(),
        omega_sq_trace: Vec::new(),
        max_norm_drift: 0.0,
        max_energy_drift: 0.0,
        gamma_eig_min: f64::INFINITY,
        gamma_eig_max: f64::NEG_INFINITY,
    };
    let mut psi = psi0;
    let record = |t: f64, psi: &FockVector, hf: &ModeHartreeFock, run: &mut OracleRun| {
        let gamma = reduced_density_1(psi, &basis);
        let omega = hf.density_matrix();
        let (eigs, _) = hermitian_eigen(gamma.clone());
        run.gamma_eig_min = run.gamma_eig_min.min(eigs[0]);
        run.gamma_eig_max = run.gamma_eig_max.max(*eigs.last().unwrap_or(&0.0));
        run.times.push(t);
        run.gap.push(frobenius_sq(&(&gamma - &omega)));
        run.omega_sq_trace.push((&omega * &omega).trace().re);
        run.max_norm_drift = run.max_norm_drift.max((psi.norm() - 1.0).abs());
        run.max_energy_drift = run.max_energy_drift.max((h.expectation(psi) - e0).abs() / e0.abs().max(1e-300));
    };
    record(0.0, &psi, &hf, &mut run);
    for k in 1..=steps {
        psi = evolve_exact(&psi, &h, dt, model.epsilon)?;
        hf.step(dt);
        if k % sample_every == 0 || k == steps {
            record(k as f64 * dt, &psi, &hf, &mut run);
        }
    }
    Ok(run)
}
