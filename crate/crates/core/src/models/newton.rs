use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::max_abs;

pub(crate) const MAX_ITER: usize = 100;
pub(crate) const MAX_HALVINGS: usize = 20;
pub(crate) const REL_LOGLIK_TOL: f64 = 1e-10;
pub(crate) const SCORE_TOL: f64 = 1e-6;
pub(crate) const COEF_BOUND: f64 = 1e3;

pub(crate) trait Objective {
    fn loglik(&self, beta: &DVector<f64>) -> f64;
    /// Log-likelihood, score, and information (negative Hessian).
    fn evaluate(&self, beta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>);
}

pub(crate) struct NewtonOutcome {
    pub coef: DVector<f64>,
    pub loglik: f64,
    pub information: DMatrix<f64>,
    pub iterations: usize,
}

/// Cholesky factor that also rejects numerically rank-deficient matrices.
pub(crate) fn checked_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularDesign);
    }
    let chol = m.clone().cholesky().ok_or(Error::SingularDesign)?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..m.nrows() {
        let d = l[(i, i)] * l[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(lo > 1e-13 * hi) {
        return Err(Error::SingularDesign);
    }
    Ok(chol)
}

/// Newton–Raphson with step halving. Converged when the relative
/// log-likelihood change is below `REL_LOGLIK_TOL` and the score max-norm is
/// below `score_tol`.
pub(crate) fn newton_raphson<O: Objective>(
    obj: &O,
    start: DVector<f64>,
    score_tol: f64,
) -> Result<NewtonOutcome> {
    let mut beta = start;
    let (mut ll, mut grad, mut info) = obj.evaluate(&beta);
    if !ll.is_finite() {
        return Err(Error::NonConvergence(0));
    }
    for iter in 1..=MAX_ITER {
        let chol = checked_cholesky(&info)?;
        let delta = chol.solve(&grad);
        let mut step = 1.0;
        let mut cand = &beta + &delta;
        let mut cand_ll = obj.loglik(&cand);
        let mut halvings = 0;
        while !(cand_ll >= ll - 1e-12 * ll.abs().max(1.0)) && halvings < MAX_HALVINGS {
            step *= 0.5;
            cand = &beta + &delta * step;
            cand_ll = obj.loglik(&cand);
            halvings += 1;
        }
        if !cand_ll.is_finite() {
            return Err(Error::NonConvergence(iter));
        }
        beta = cand;
        let norm = beta.norm();
        if norm > COEF_BOUND {
            return Err(Error::Separation(norm));
        }
        let (new_ll, new_grad, new_info) = obj.evaluate(&beta);
        let rel = (new_ll - ll).abs() / (ll.abs() + 1.0);
        ll = new_ll;
        grad = new_grad;
        info = new_info;
        if rel < REL_LOGLIK_TOL && max_abs(&grad) < score_tol {
            checked_cholesky(&info)?;
            return Ok(NewtonOutcome {
                coef: beta,
                loglik: ll,
                information: info,
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence(MAX_ITER))
}
