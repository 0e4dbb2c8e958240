//! Lowest eigenpairs of a Hermitian operator: dense for small grids, block
//! LOBPCG for the rest.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, real_symmetric_eigen, CMatrix};

/// Dense eigenpairs, using the real solver when the matrix is real up to
/// rounding.
pub fn dense_eigen(matrix: CMatrix) -> (Vec<f64>, CMatrix) {
    let scale = matrix.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let imag = matrix.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if imag <= 1e-14 * scale {
        let real = matrix.map(|v| v.re);
        let sym = (&real + real.transpose()) * 0.5;
        real_symmetric_eigen(sym)
    } else {
        let herm = (&matrix + matrix.adjoint()) * Complex64::new(0.5, 0.0);
        hermitian_eigen(herm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LobpcgOptions {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for LobpcgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 500,
        }
    }
}

/// Orthonormalize columns in place (Gram-Schmidt, twice), dropping columns
/// that are numerically dependent on earlier ones.
fn orthonormalize(cols: Vec<Vec<Complex64>>) -> Vec<Vec<Complex64>> {
    let mut out: Vec<Vec<Complex64>> = Vec::with_capacity(cols.len());
    for mut v in cols {
        let original = norm(&v);
        if original == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &out {
                let c = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
            }
        }
        let nv = norm(&v);
        if nv > 1e-10 * original {
            v.iter_mut().for_each(|x| *x /= nv);
            out.push(v);
        }
    }
    out
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn project(s: &[Vec<Complex64>], a_s: &[Vec<Complex64>]) -> CMatrix {
    let m = s.len();
    let mut h = CMatrix::from_fn(m, m, |i, j| dot(&s[i], &a_s[j]));
    let ht = h.adjoint();
    h = (&h + ht) * Complex64::new(0.5, 0.0);
    h
}

fn rotate(basis: &[Vec<Complex64>], coeffs: &CMatrix, cols: std::ops::Range<usize>, rows: std::ops::Range<usize>) -> Vec<Vec<Complex64>> {
    let len = basis.first().map_or(0, Vec::len);
    cols.map(|c| {
        let mut out = vec![Complex64::new(0.0, 0.0); len];
        for r in rows.clone() {
            let w = coeffs[(r, c)];
            out.iter_mut().zip(&basis[r]).for_each(|(o, b)| *o += w * b);
        }
        out
    })
    .collect()
}

/// Lowest `start.len()` eigenpairs of the Hermitian operator `apply`, with
/// vectors orthonormal in the plain ℓ² inner product. `precondition` should
/// approximate a shifted inverse.
pub fn lobpcg<A, P>(apply: A, precondition: P, start: Vec<Vec<Complex64>>, opts: &LobpcgOptions) -> Result<(Vec<f64>, Vec<Vec<Complex64>>)>
where
    A: Fn(&[Complex64]) -> Vec<Complex64>,
    P: Fn(&[Complex64]) -> Vec<Complex64>,
{
    let k = start.len();
    let mut x = orthonormalize(start);
    if x.len() != k {
        return Err(Error::Eigensolver("starting block is rank deficient".into()));
    }
    let mut ax: Vec<_> = x.iter().map(|v| apply(v)).collect();
    let (mut lambda, c) = hermitian_eigen(project(&x, &ax));
    x = rotate(&x, &c, 0..k, 0..k);
    ax = rotate(&ax, &c, 0..k, 0..k);
    let mut p: Vec<Vec<Complex64>> = Vec::new();
    for _ in 0..opts.max_iterations {
        let residuals: Vec<Vec<Complex64>> = (0..k)
            .map(|j| ax[j].iter().zip(&x[j]).map(|(a, b)| a - lambda[j] * b).collect())
            .collect();
        let worst = residuals
            .iter()
            .zip(&lambda)
            .map(|(r, l)| norm(r) / l.abs().max(1.0))
            .fold(0.0, f64::max);
        if !worst.is_finite() {
            return Err(Error::NonFinite("LOBPCG"));
        }
        if worst <= opts.tol {
            return Ok((lambda, x));
        }
        let mut cols: Vec<Vec<Complex64>> = x.clone();
        cols.extend(residuals.iter().map(|r| precondition(r)));
        cols.extend(p.iter().cloned());
        let s = orthonormalize(cols);
        let a_s: Vec<_> = s.iter().map(|v| apply(v)).collect();
        let (vals, c) = hermitian_eigen(project(&s, &a_s));
        let m = s.len();
        let new_x = rotate(&s, &c, 0..k, 0..m);
        let new_ax = rotate(&a_s, &c, 0..k, 0..m);
        // search direction: the part of the update outside the old block
        p = rotate(&s, &c, 0..k, k..m);
        x = new_x;
        ax = new_ax;
        lambda = vals[..k].to_vec();
    }
    Err(Error::Eigensolver(format!("LOBPCG not converged after {} iterations", opts.max_iterations)))
}
