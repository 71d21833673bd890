//! Symmetric-matrix helpers built on nalgebra: symmetrization, definiteness
//! probes, and positive-definite solves.

use crate::error::{LqmkvError, Result};
use crate::{Col, Mat};

/// Replace `m` by its symmetric part `(m + m^T) / 2`.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute entry of `m - m^T`.
pub fn max_asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(m: &Mat) -> f64 {
    let es = m.clone().symmetric_eigen();
    es.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig_sym(m: &Mat) -> f64 {
    let es = m.clone().symmetric_eigen();
    es.eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
}

/// Spectral (operator 2-) norm.
pub fn op_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = m.transpose() * m;
    max_eig_sym(&gram).max(0.0).sqrt()
}

/// Largest absolute entry.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

const PIVOT_TOL: f64 = 1e-12;

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// Fails when the factorization breaks down or any pivot falls below the
/// tolerance, which is how degenerate control gains surface.
pub fn spd_cholesky(m: &Mat, t: f64, what: &'static str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or(LqmkvError::DegenerateGain { t, what })?;
    let l = chol.l_dirty();
    for i in 0..m.nrows() {
        if !(l[(i, i)] * l[(i, i)] > PIVOT_TOL) {
            return Err(LqmkvError::DegenerateGain { t, what });
        }
    }
    Ok(chol)
}

/// Solve `S x = b` for each column of `b`, with `S` symmetric positive definite.
pub fn spd_solve(s: &Mat, b: &Mat, t: f64, what: &'static str) -> Result<Mat> {
    let chol = spd_cholesky(s, t, what)?;
    let mut x = b.clone();
    chol.solve_mut(&mut x);
    Ok(x)
}

/// Solve `S x = b` for a single right-hand-side vector.
pub fn spd_solve_vec(s: &Mat, b: &Col, t: f64, what: &'static str) -> Result<Col> {
    let chol = spd_cholesky(s, t, what)?;
    let mut x = b.clone();
    chol.solve_mut(&mut x);
    Ok(x)
}

/// Quadratic form `x^T M x`.
pub fn quad_form(m: &Mat, x: &Col) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_and_asymmetry() {
        let mut m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        assert_eq!(max_asymmetry(&m), 2.0);
        symmetrize(&mut m);
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(max_asymmetry(&m), 0.0);
    }

    #[test]
    fn spd_solve_round_trips() {
        let s = Mat::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = Mat::from_row_slice(2, 1, &[1.0, 2.0]);
        let x = spd_solve(&s, &b, 0.0, "S").unwrap();
        let r = &s * &x - &b;
        assert!(max_abs(&r) < 1e-12);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let s = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let b = Mat::identity(2, 2);
        assert!(matches!(
            spd_solve(&s, &b, 0.5, "S"),
            Err(LqmkvError::DegenerateGain { .. })
        ));
    }

    #[test]
    fn operator_norm_of_diagonal() {
        let m = Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -5.0]);
        assert!((op_norm(&m) - 5.0).abs() < 1e-12);
    }
}
