//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in ascending
/// order; eigenvectors are the matching columns.
pub fn hermitian_eigen(matrix: CMatrix) -> (Vec<f64>, CMatrix) {
    let n = matrix.nrows();
    if n == 0 {
        return (Vec::new(), matrix);
    }
    let eig = matrix.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Real symmetric variant, returned as complex vectors.
pub fn real_symmetric_eigen(matrix: DMatrix<f64>) -> (Vec<f64>, CMatrix) {
    let n = matrix.nrows();
    let eig = matrix.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| Complex64::new(eig.eigenvectors[(r, order[c])], 0.0));
    (values, vectors)
}

pub fn singular_values(matrix: CMatrix) -> Vec<f64> {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return Vec::new();
    }
    matrix.singular_values().iter().copied().collect()
}

/// Largest absolute entry of `m - I`.
pub fn identity_deviation(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let target = if r == c { 1.0 } else { 0.0 };
            worst = worst.max((m[(r, c)] - target).norm());
        }
    }
    worst
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum()
}

/// Sum of `coeffs[j] * vectors[j]`.
pub fn combine(vectors: &[Vec<Complex64>], coeffs: impl Iterator<Item = Complex64>) -> Vec<Complex64> {
    let len = vectors.first().map_or(0, Vec::len);
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (v, c) in vectors.iter().zip(coeffs) {
        if c == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (o, x) in out.iter_mut().zip(v) {
            *o += c * x;
        }
    }
    out
}

pub fn axpy(out: &mut [Complex64], alpha: Complex64, x: &[Complex64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}
