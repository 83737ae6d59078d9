use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::Singular)?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = m.clone().cholesky().ok_or(Error::Singular)?;
    Ok(chol.solve(rhs))
}

/// Inverse of a symmetric matrix after raising every eigenvalue to at least
/// `floor`. Returns the inverse and whether any eigenvalue was clipped.
pub fn clipped_inverse(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let mut clipped = false;
    let inv_vals = eig.eigenvalues.map(|v| {
        if v < floor {
            clipped = true;
            1.0 / floor
        } else {
            1.0 / v
        }
    });
    let q = &eig.eigenvectors;
    let mut inv = q * DMatrix::from_diagonal(&inv_vals) * q.transpose();
    symmetrize(&mut inv);
    (inv, clipped)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    sym.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Draw from N(mean, cov). `cov` must be positive definite.
pub fn mvn_draw(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut Rng) -> Result<DVector<f64>> {
    let chol = cov.clone().cholesky().ok_or(Error::Singular)?;
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    Ok(mean + chol.l() * z)
}

pub(crate) fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// Relative Frobenius distance ‖a − b‖ / max(‖b‖, tiny).
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipped_inverse_matches_exact_on_pd() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (inv, clipped) = clipped_inverse(&m, 1e-10);
        assert!(!clipped);
        let exact = spd_inverse(&m).unwrap();
        assert!(rel_frobenius(&inv, &exact) < 1e-12);
    }

    #[test]
    fn clipped_inverse_flags_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (_, clipped) = clipped_inverse(&m, 1e-10);
        assert!(clipped);
        assert!(spd_inverse(&m).is_err());
    }
}
