//! Lanczos approximation of `exp(-iτA) v` for Hermitian `A` given as a
//! matrix-free action.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOptions {
    /// Largest subspace dimension tried before a step is split.
    pub max_dim: usize,
    /// Bound on the a-posteriori residual, relative to `‖v‖`.
    pub tol: f64,
    /// Maximum number of halvings of the requested time.
    pub max_splits: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            max_dim: 30,
            tol: 1e-12,
            max_splits: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KrylovStats {
    pub substeps: usize,
    pub matvecs: usize,
    pub max_residual: f64,
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `exp(-iτA) v`. Steps that do not reach `tol` within `max_dim` Lanczos
/// vectors are split in half, recursively.
pub fn expm_hermitian<F>(mut apply: F, v: &[Complex64], tau: f64, opts: &KrylovOptions) -> Result<(Vec<Complex64>, KrylovStats)>
where
    F: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    let mut stats = KrylovStats::default();
    let mut remaining = tau;
    let mut step = tau;
    let mut current = v.to_vec();
    let mut splits = 0;
    let floor = tau.abs() * 1e-14;
    while remaining.abs() > floor {
        if step.abs() > remaining.abs() {
            step = remaining;
        }
        match lanczos_step(&mut apply, &current, step, opts, &mut stats)? {
            Some(next) => {
                current = next;
                remaining -= step;
                stats.substeps += 1;
            }
            None => {
                splits += 1;
                if splits > opts.max_splits {
                    return Err(Error::KrylovBreakdown(format!(
                        "no convergence after {} step halvings",
                        opts.max_splits
                    )));
                }
                step *= 0.5;
            }
        }
    }
    Ok((current, stats))
}

fn lanczos_step<F>(
    apply: &mut F,
    v: &[Complex64],
    tau: f64,
    opts: &KrylovOptions,
    stats: &mut KrylovStats,
) -> Result<Option<Vec<Complex64>>>
where
    F: FnMut(&[Complex64]) -> Vec<Complex64>,
{
    let beta0 = norm(v);
    if beta0 == 0.0 {
        return Ok(Some(v.to_vec()));
    }
    let len = v.len();
    let max_dim = opts.max_dim.min(len).max(1);
    let mut basis: Vec<Vec<Complex64>> = vec![v.iter().map(|x| x / beta0).collect()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    loop {
        let j = basis.len() - 1;
        let mut w = apply(&basis[j]);
        stats.matvecs += 1;
        if w.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(Error::NonFinite("Krylov matvec"));
        }
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let b = norm(&w);
        let m = alpha.len();
        let scale = alpha.iter().map(|x| x.abs()).fold(0.0, f64::max).max(beta.iter().copied().fold(0.0, f64::max));
        let breakdown = b <= 1e-14 * scale.max(1e-300) || m == len;
        let coeffs = small_exp(&alpha, &beta, tau);
        let residual = if breakdown { 0.0 } else { b * coeffs[m - 1].norm() };
        if breakdown || residual <= opts.tol {
            stats.max_residual = stats.max_residual.max(residual);
            let mut out = vec![Complex64::new(0.0, 0.0); len];
            for (q, c) in basis.iter().zip(&coeffs) {
                let c = c * beta0;
                for (o, qi) in out.iter_mut().zip(q) {
                    *o += c * qi;
                }
            }
            return Ok(Some(out));
        }
        if m >= max_dim {
            return Ok(None);
        }
        beta.push(b);
        basis.push(w.into_iter().map(|x| x / b).collect());
    }
}

/// First column of `exp(-iτT)` for the symmetric tridiagonal `T`.
fn small_exp(alpha: &[f64], beta: &[f64], tau: f64) -> Vec<Complex64> {
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = t.symmetric_eigen();
    (0..m)
        .map(|r| {
            (0..m)
                .map(|k| {
                    let phase = Complex64::from_polar(1.0, -tau * eig.eigenvalues[k]);
                    phase * eig.eigenvectors[(r, k)] * eig.eigenvectors[(0, k)]
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_eigen, CMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = CMatrix::from_fn(n, n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
    }

    fn exact(h: &CMatrix, v: &[Complex64], tau: f64) -> Vec<Complex64> {
        let (vals, vecs) = hermitian_eigen(h.clone());
        let n = v.len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..n {
            let c: Complex64 = (0..n).map(|i| vecs[(i, k)].conj() * v[i]).sum();
            let c = c * Complex64::from_polar(1.0, -tau * vals[k]);
            for i in 0..n {
                out[i] += c * vecs[(i, k)];
            }
        }
        out
    }

    #[test]
    fn matches_dense_exponential() {
        let n = 60;
        let h = random_hermitian(n, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.0)).collect();
        for tau in [0.01, 0.5, 3.0] {
            let apply = |x: &[Complex64]| -> Vec<Complex64> { (&h * nalgebra::DVector::from_column_slice(x)).iter().copied().collect() };
            let (out, stats) = expm_hermitian(apply, &v, tau, &KrylovOptions { max_dim: 12, ..Default::default() }).unwrap();
            let reference = exact(&h, &v, tau);
            let err = out.iter().zip(&reference).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "tau {tau}: err {err}, stats {stats:?}");
            assert!((norm(&out) - norm(&v)).abs() < 1e-11);
        }
    }

    #[test]
    fn small_spaces_terminate_exactly() {
        let h = random_hermitian(3, 4);
        let v = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(0.5, 0.5)];
        let apply = |x: &[Complex64]| -> Vec<Complex64> { (&h * nalgebra::DVector::from_column_slice(x)).iter().copied().collect() };
        let (out, _) = expm_hermitian(apply, &v, 10.0, &KrylovOptions::default()).unwrap();
        let reference = exact(&h, &v, 10.0);
        assert!(out.iter().zip(&reference).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn zero_vector_and_zero_time() {
        let h = random_hermitian(4, 5);
        let apply = |x: &[Complex64]| -> Vec<Complex64> { (&h * nalgebra::DVector::from_column_slice(x)).iter().copied().collect() };
        let zero = vec![Complex64::new(0.0, 0.0); 4];
        let (out, _) = expm_hermitian(apply, &zero, 1.0, &KrylovOptions::default()).unwrap();
        assert!(out.iter().all(|v| v.norm() == 0.0));
    }
}
