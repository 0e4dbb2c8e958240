//! Orbital representation of rank-N projections `ω = Σ_j |f_j⟩⟨f_j|` and
//! the low-rank commutator algebra built on it.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::spectral::{DispersionKind, Field, Grid, PotentialSpec};

/// Orthonormality tolerance for checked construction.
pub const ORTHONORMAL_TOL: f64 = 1e-10;
/// Gram condition number above which a set cannot be repaired.
pub const MAX_GRAM_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct OrbitalSet {
    grid: Grid,
    orbitals: Vec<Field>,
}

impl OrbitalSet {
    /// Checked constructor: every orbital must live on `grid` and the set
    /// must be orthonormal to [`ORTHONORMAL_TOL`].
    pub fn new(grid: Grid, orbitals: Vec<Field>) -> Result<Self> {
        let set = Self::new_unchecked(grid, orbitals)?;
        let dev = set.gram_deviation();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidParameter {
                name: "orbitals",
                reason: format!("not orthonormal (Gram deviation {dev:e})"),
            });
        }
        Ok(set)
    }

    /// Shape-checked only; used for integrator intermediates whose Gram
    /// matrix is audited separately.
    pub fn new_unchecked(grid: Grid, orbitals: Vec<Field>) -> Result<Self> {
        for f in &orbitals {
            grid.check_len(f.len())?;
        }
        Ok(Self { grid, orbitals })
    }

    /// Plane waves `L^{-d/2} e^{ip·x}` at the given flat dual indices.
    pub fn plane_waves(grid: &Grid, modes: &[usize]) -> Result<Self> {
        let amp = grid.volume().sqrt().recip();
        let orbitals = modes
            .iter()
            .map(|&m| {
                (0..grid.len())
                    .map(|i| {
                        let phase: f64 = (0..grid.dim())
                            .map(|a| grid.momentum(m, a) * grid.position(i, a))
                            .sum();
                        Complex64::from_polar(amp, phase)
                    })
                    .collect()
            })
            .collect();
        Self::new(grid.clone(), orbitals)
    }

    /// The `n` lowest plane-wave modes of `dispersion`; ties are broken by
    /// lexicographic order of the signed dual index.
    pub fn fermi_sea(grid: &Grid, n: usize, dispersion: &DispersionKind) -> Result<Self> {
        Self::plane_waves(grid, &fermi_sea_modes(grid, n, dispersion)?)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn orbitals(&self) -> &[Field] {
        &self.orbitals
    }

    pub fn into_orbitals(self) -> Vec<Field> {
        self.orbitals
    }

    pub fn n_particles(&self) -> usize {
        self.orbitals.len()
    }

    pub fn gram(&self) -> CMatrix {
        let n = self.orbitals.len();
        let mut g = CMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.grid.inner(&self.orbitals[i], &self.orbitals[j]);
                g[(i, j)] = v;
                g[(j, i)] = v.conj();
            }
        }
        g
    }

    pub fn gram_deviation(&self) -> f64 {
        linalg::identity_deviation(&self.gram())
    }

    /// `‖ω² - ω‖_HS` for `ω = F F*` built from possibly non-orthonormal orbitals.
    pub fn projection_residual(&self) -> f64 {
        let s = self.gram();
        let n = s.nrows();
        let d = &s - CMatrix::identity(n, n);
        // ω² - ω = F (S - I) F*, so ‖·‖²_HS = tr((S-I) S (S-I) S)
        let m = &d * &s;
        (m.clone() * m).trace().re.max(0.0).sqrt()
    }

    /// Multiplies orbital `j` by `phases[j]` (unit modulus leaves `ω` unchanged).
    pub fn with_phases(&self, phases: &[Complex64]) -> Self {
        let orbitals = self
            .orbitals
            .iter()
            .zip(phases)
            .map(|(f, p)| f.iter().map(|v| v * p).collect())
            .collect();
        Self {
            grid: self.grid.clone(),
            orbitals,
        }
    }

    fn check_grid(&self, other: &Grid) -> Result<()> {
        if &self.grid != other {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `ρ(x) = N^{-1} Σ_j |f_j(x)|²`.
    pub fn reduced_density(&self) -> Vec<f64> {
        let n = self.orbitals.len().max(1) as f64;
        let mut rho = vec![0.0; self.grid.len()];
        for f in &self.orbitals {
            for (r, v) in rho.iter_mut().zip(f) {
                *r += v.norm_sqr();
            }
        }
        rho.iter_mut().for_each(|r| *r /= n);
        rho
    }

    /// `ω g = Σ_j ⟨f_j, g⟩ f_j`.
    pub fn apply_density_matrix(&self, field: &[Complex64]) -> Result<Field> {
        self.grid.check_len(field.len())?;
        let coeffs: Vec<Complex64> = self.orbitals.iter().map(|f| self.grid.inner(f, field)).collect();
        Ok(linalg::combine(&self.orbitals, coeffs.into_iter()))
    }

    /// Exchange operator with kernel `N^{-1} V(x-y) ω(x,y)`:
    /// `(X g)(x) = N^{-1} Σ_j f_j(x) (V * (conj(f_j) g))(x)`.
    pub fn apply_exchange(&self, potential: &PotentialSpec, field: &[Complex64]) -> Result<Field> {
        self.grid.check_len(field.len())?;
        Ok(self.exchange_unchecked(potential, field))
    }

    pub(crate) fn exchange_unchecked(&self, potential: &PotentialSpec, field: &[Complex64]) -> Field {
        let mut out = self.grid.zeros();
        if self.orbitals.is_empty() || !potential.is_interacting() {
            return out;
        }
        let inv_n = 1.0 / self.orbitals.len() as f64;
        let mut work = self.grid.zeros();
        for f in &self.orbitals {
            for ((w, a), b) in work.iter_mut().zip(f).zip(field) {
                *w = a.conj() * b;
            }
            let conv = potential.convolve(&self.grid, &work);
            for ((o, a), c) in out.iter_mut().zip(f).zip(&conv) {
                *o += a * c * inv_n;
            }
        }
        out
    }

    /// Exchange operator through its momentum average
    /// `X = (N L^d)^{-1} Σ_q V̂(q) e^{iq·x} ω e^{-iq·x}`, summed mode by mode.
    pub fn apply_exchange_mode_sum(&self, potential: &PotentialSpec, field: &[Complex64]) -> Result<Field> {
        self.grid.check_len(field.len())?;
        let grid = &self.grid;
        let mut out = grid.zeros();
        if self.orbitals.is_empty() {
            return Ok(out);
        }
        let scale = 1.0 / (self.orbitals.len() as f64 * grid.volume());
        let mut shifted = grid.zeros();
        for q in 0..grid.len() {
            let vq = potential.coefficient(q);
            if vq == 0.0 {
                continue;
            }
            let phase: Vec<Complex64> = (0..grid.len())
                .map(|i| {
                    let arg: f64 = (0..grid.dim()).map(|a| grid.momentum(q, a) * grid.position(i, a)).sum();
                    Complex64::from_polar(1.0, arg)
                })
                .collect();
            // e^{-iqx} g
            for ((s, g), ph) in shifted.iter_mut().zip(field).zip(&phase) {
                *s = g * ph.conj();
            }
            for f in &self.orbitals {
                let c = grid.inner(f, &shifted) * (vq * scale);
                for ((o, v), ph) in out.iter_mut().zip(f).zip(&phase) {
                    *o += c * v * ph;
                }
            }
        }
        Ok(out)
    }

    /// `[A, ω] = Σ_j |A f_j⟩⟨f_j| - |f_j⟩⟨A* f_j|` given the actions of `A` and `A*`.
    pub fn commutator_with(
        &self,
        apply: impl Fn(&[Complex64]) -> Field,
        apply_adjoint: impl Fn(&[Complex64]) -> Field,
    ) -> LowRankOperator {
        let n = self.orbitals.len();
        let mut left = Vec::with_capacity(2 * n);
        let mut right = Vec::with_capacity(2 * n);
        for f in &self.orbitals {
            left.push(apply(f));
            right.push(f.clone());
        }
        for f in &self.orbitals {
            left.push(f.iter().map(|v| -v).collect());
            right.push(apply_adjoint(f));
        }
        LowRankOperator::with_cap(self.grid.cell_volume(), left, right, 2 * n)
    }

    /// `[x_axis, ω]` with the centered sawtooth coordinate.
    pub fn commutator_with_position(&self, axis: usize) -> LowRankOperator {
        let x = self.grid.position_field(axis);
        let mul = |f: &[Complex64]| -> Field { f.iter().zip(&x).map(|(v, xi)| v * xi).collect() };
        self.commutator_with(mul, mul)
    }

    /// `[ε ∂_axis, ω]`; `ε∂` is anti-self-adjoint.
    pub fn commutator_with_momentum(&self, axis: usize) -> LowRankOperator {
        let eps = self.grid.epsilon();
        let grid = &self.grid;
        let d = |f: &[Complex64]| -> Field { grid.derivative(f, axis).into_iter().map(|v| v * eps).collect() };
        let d_adj = |f: &[Complex64]| -> Field { grid.derivative(f, axis).into_iter().map(|v| -v * eps).collect() };
        self.commutator_with(d, d_adj)
    }

    /// `[m(x), ω]` for a complex multiplication operator.
    pub fn commutator_with_multiplication(&self, m: &[Complex64]) -> LowRankOperator {
        let mul = |f: &[Complex64]| -> Field { f.iter().zip(m).map(|(v, w)| v * w).collect() };
        let mul_adj = |f: &[Complex64]| -> Field { f.iter().zip(m).map(|(v, w)| v * w.conj()).collect() };
        self.commutator_with(mul, mul_adj)
    }

    /// Symmetric (Löwdin) orthonormalization `F S^{-1/2}`.
    pub fn reorthonormalize(&self) -> Result<Self> {
        let n = self.orbitals.len();
        if n == 0 {
            return Ok(self.clone());
        }
        let (values, vectors) = linalg::hermitian_eigen(self.gram());
        let min = values[0];
        let max = values[n - 1];
        if !(min > 0.0) || max / min > MAX_GRAM_CONDITION {
            return Err(Error::SingularGram(if min > 0.0 { max / min } else { f64::INFINITY }));
        }
        let mut inv_sqrt = CMatrix::zeros(n, n);
        for k in 0..n {
            let w = 1.0 / values[k].sqrt();
            for r in 0..n {
                for c in 0..n {
                    inv_sqrt[(r, c)] += vectors[(r, k)] * w * vectors[(c, k)].conj();
                }
            }
        }
        let orbitals = (0..n)
            .map(|k| linalg::combine(&self.orbitals, (0..n).map(|j| inv_sqrt[(j, k)])))
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            orbitals,
        })
    }

    /// Overlap matrix `⟨f_i^a, f_j^b⟩`.
    pub fn overlap(&self, other: &Self) -> CMatrix {
        CMatrix::from_fn(self.orbitals.len(), other.orbitals.len(), |i, j| {
            self.grid.inner(&self.orbitals[i], &other.orbitals[j])
        })
    }

    /// `‖(1 - ω_other) f_j‖²` summed over this set's orbitals.
    fn leakage(&self, other: &Self) -> f64 {
        let c = other.overlap(self);
        let mut total = 0.0;
        for (j, f) in self.orbitals.iter().enumerate() {
            let proj = linalg::combine(&other.orbitals, (0..other.orbitals.len()).map(|i| c[(i, j)]));
            let r: Field = f.iter().zip(&proj).map(|(a, b)| a - b).collect();
            total += self.grid.norm(&r).powi(2);
        }
        total
    }
}

/// Flat dual indices of the `n` lowest modes of `dispersion`, ties broken
/// lexicographically.
pub fn fermi_sea_modes(grid: &Grid, n: usize, dispersion: &DispersionKind) -> Result<Vec<usize>> {
    if n > grid.len() {
        return Err(Error::InvalidParameter {
            name: "n_particles",
            reason: format!("{n} exceeds the {} available modes", grid.len()),
        });
    }
    dispersion.validate()?;
    let symbols = grid.symbol_table(dispersion);
    let mut modes: Vec<usize> = (0..grid.len()).collect();
    modes.sort_by(|&a, &b| {
        symbols[a]
            .total_cmp(&symbols[b])
            .then(grid.lexicographic_rank(a).cmp(&grid.lexicographic_rank(b)))
    });
    modes.truncate(n);
    Ok(modes)
}

/// `tr |ω_a - ω_b|²` for two projections given by orthonormal orbitals.
pub fn hs_distance_squared(a: &OrbitalSet, b: &OrbitalSet) -> Result<f64> {
    a.check_grid(b.grid())?;
    // tr(P-Q)² = ‖(1-Q)F_a‖² + ‖(1-P)F_b‖², free of the 2N - 2Σ|S|² cancellation
    Ok(a.leakage(b) + b.leakage(a))
}

/// Finite-rank operator `Σ_k |left_k⟩⟨right_k|` on the grid's L² space.
#[derive(Debug, Clone)]
pub struct LowRankOperator {
    cell_volume: f64,
    left: Vec<Field>,
    right: Vec<Field>,
    rank_cap: usize,
}

impl LowRankOperator {
    pub fn new(cell_volume: f64, left: Vec<Field>, right: Vec<Field>) -> Self {
        let cap = left.len();
        Self::with_cap(cell_volume, left, right, cap)
    }

    pub fn with_cap(cell_volume: f64, left: Vec<Field>, right: Vec<Field>, rank_cap: usize) -> Self {
        assert_eq!(left.len(), right.len(), "left and right factor counts differ");
        Self {
            cell_volume,
            left,
            right,
            rank_cap,
        }
    }

    pub fn zero(cell_volume: f64) -> Self {
        Self::new(cell_volume, Vec::new(), Vec::new())
    }

    pub fn rank(&self) -> usize {
        self.left.len()
    }

    pub fn rank_cap(&self) -> usize {
        self.rank_cap
    }

    pub fn left(&self) -> &[Field] {
        &self.left
    }

    pub fn right(&self) -> &[Field] {
        &self.right
    }

    pub fn set_rank_cap(&mut self, cap: usize) {
        self.rank_cap = cap;
    }

    pub fn sum(&self, other: &Self) -> Self {
        let mut left = self.left.clone();
        left.extend(other.left.iter().cloned());
        let mut right = self.right.clone();
        right.extend(other.right.iter().cloned());
        let cap = self.rank_cap + other.rank_cap;
        Self::with_cap(self.cell_volume, left, right, cap)
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        let left = self.left.iter().map(|f| f.iter().map(|v| v * s).collect()).collect();
        Self::with_cap(self.cell_volume, left, self.right.clone(), self.rank_cap)
    }

    /// `U A U*` for a unitary multiplication operator `U = u(x)`.
    pub fn conjugated_by_multiplication(&self, u: &[Complex64]) -> Self {
        let apply = |f: &Field| -> Field { f.iter().zip(u).map(|(v, w)| v * w).collect() };
        Self::with_cap(
            self.cell_volume,
            self.left.iter().map(apply).collect(),
            self.right.iter().map(apply).collect(),
            self.rank_cap,
        )
    }

    /// `A g`.
    pub fn apply(&self, field: &[Complex64]) -> Field {
        let len = field.len();
        let mut out = vec![Complex64::new(0.0, 0.0); len];
        for (l, r) in self.left.iter().zip(&self.right) {
            let c: Complex64 = r.iter().zip(field).map(|(a, b)| a.conj() * b).sum::<Complex64>() * self.cell_volume;
            linalg::axpy(&mut out, c, l);
        }
        out
    }

    /// Matrix of the operator on grid values (acting on ℓ² coefficient
    /// vectors with the quadrature weight folded in). Small grids only.
    pub fn to_dense(&self, len: usize) -> CMatrix {
        let mut m = CMatrix::zeros(len, len);
        for (l, r) in self.left.iter().zip(&self.right) {
            for a in 0..len {
                for b in 0..len {
                    m[(a, b)] += l[a] * r[b].conj() * self.cell_volume;
                }
            }
        }
        m
    }

    /// Sum of singular values, from a QR factorization of the stacked
    /// factors `[L R]` (size `len × 2r`) followed by an SVD of the `2r × 2r`
    /// core `R_L R_R*`.
    pub fn trace_norm(&self) -> Result<f64> {
        if self.rank() > self.rank_cap {
            return Err(Error::RankOverflow {
                rank: self.rank(),
                cap: self.rank_cap,
            });
        }
        let r = self.rank();
        if r == 0 {
            return Ok(0.0);
        }
        let len = self.left[0].len();
        let w = self.cell_volume.sqrt();
        let stacked = CMatrix::from_fn(len, 2 * r, |i, k| {
            if k < r {
                self.left[k][i] * w
            } else {
                self.right[k - r][i] * w
            }
        });
        let rmat = stacked.qr().r();
        let rows = rmat.nrows();
        let rl = rmat.columns(0, r).into_owned();
        let rr = rmat.columns(r, r).into_owned();
        let core = rl * rr.adjoint();
        debug_assert_eq!(core.nrows(), rows);
        let sv = linalg::singular_values(core);
        Ok(sv.iter().sum())
    }
}

pub fn trace_norm(op: &LowRankOperator) -> Result<f64> {
    op.trace_norm()
}
