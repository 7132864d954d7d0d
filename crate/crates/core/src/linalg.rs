//! Thin wrappers over the dense backend: Hermitian eigendecomposition with
//! descending eigenvalues, HPD solves, and small utilities shared by the
//! numeric modules.

use crate::error::{Error, Result};
use crate::CMat;
use faer::linalg::solvers::Solve;
use faer::{c64, Mat, Side};

/// Hermitian eigendecomposition; returns eigenvalues sorted descending and the
/// matching eigenvector columns.
pub(crate) fn hermitian_eigen(m: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimMismatch { left: n, right: m.ncols() });
    }
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("hermitian eigendecomposition failed: {e:?}")))?;
    let s = eig.S();
    let u = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].re.total_cmp(&s[a].re));
    let values: Vec<f64> = order.iter().map(|&i| s[i].re).collect();
    let vectors = Mat::from_fn(n, n, |r, c| u[(r, order[c])]);
    Ok((values, vectors))
}

/// Symmetric tridiagonal eigendecomposition (real); used by the quadrature
/// node builder. Returns (eigenvalues ascending, first row of eigenvectors).
pub(crate) fn tridiag_eigen(diag: &[f64], offdiag: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    let m = Mat::<f64>::from_fn(n, n, |r, c| {
        if r == c {
            diag[r]
        } else if r + 1 == c || c + 1 == r {
            offdiag[r.min(c)]
        } else {
            0.0
        }
    });
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("tridiagonal eigendecomposition failed: {e:?}")))?;
    let s = eig.S();
    let u = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let values: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let first_row: Vec<f64> = order.iter().map(|&i| u[(0, i)]).collect();
    Ok((values, first_row))
}

/// Solves `A X = B` for Hermitian positive definite `A`.
pub(crate) fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimMismatch { left: a.nrows(), right: b.nrows() });
    }
    let llt = a
        .llt(Side::Lower)
        .map_err(|_| Error::Numerical("Cholesky solve: matrix not positive definite".into()))?;
    Ok(llt.solve(b))
}

pub(crate) fn frobenius_norm(m: &CMat) -> f64 {
    let mut acc = 0.0;
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            acc += m[(r, c)].norm_sqr();
        }
    }
    acc.sqrt()
}

pub(crate) fn trace_re(m: &CMat) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)].re).sum()
}

/// `tr(A B)` for same-size square matrices, as a real number (valid when the
/// product has real trace, e.g. both factors Hermitian).
pub(crate) fn trace_product_re(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut acc = c64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc.re
}

/// FNV-1a over the matrix bits; stable content fingerprint for provenance.
pub(crate) fn content_hash(m: &CMat) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    let mut eat = |bits: u64| {
        for byte in bits.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(m.nrows() as u64);
    eat(m.ncols() as u64);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            eat(m[(r, c)].re.to_bits());
            eat(m[(r, c)].im.to_bits());
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending_and_reconstructs() {
        let n = 5;
        let b = Mat::from_fn(n, n, |i, j| c64::new((i * 3 + j) as f64, (i as f64) - (j as f64)));
        let m = &b * b.adjoint();
        let (vals, vecs) = hermitian_eigen(&m).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        // U diag(vals) U^H == m
        let lam = Mat::from_fn(n, n, |i, j| {
            if i == j { c64::new(vals[i], 0.0) } else { c64::new(0.0, 0.0) }
        });
        let rec = &vecs * &lam * vecs.adjoint();
        let err = frobenius_norm(&(&rec - &m)) / frobenius_norm(&m);
        assert!(err < 1e-12, "reconstruction error {err}");
    }

    #[test]
    fn hpd_solve_roundtrip() {
        let n = 4;
        let b = Mat::from_fn(n, n, |i, j| c64::new(1.0 + (i + 2 * j) as f64, (j as f64) * 0.3));
        let mut a = &b * b.adjoint();
        for i in 0..n {
            a[(i, i)] += c64::new(1.0, 0.0);
        }
        let x = Mat::from_fn(n, 1, |i, _| c64::new(i as f64, -1.0));
        let rhs = &a * &x;
        let got = solve_hpd(&a, &rhs).unwrap();
        let err = frobenius_norm(&(&got - &x));
        assert!(err < 1e-10, "solve error {err}");
    }

    #[test]
    fn hash_distinguishes_matrices() {
        let a = Mat::from_fn(2, 2, |i, j| c64::new((i + j) as f64, 0.0));
        let mut b = a.clone();
        assert_eq!(content_hash(&a), content_hash(&b));
        b[(0, 0)] += c64::new(1e-12, 0.0);
        assert_ne!(content_hash(&a), content_hash(&b));
    }
}
