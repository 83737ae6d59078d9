use nalgebra::{DMatrix, DVector};

use super::newton::{checked_cholesky, newton_raphson, Objective, SCORE_TOL};
use super::{FitResult, ModelFrame};
use crate::error::{Error, Result};

/// `Σ_r c_r x_r x_rᵀ`.
fn weighted_crossprod(x: &DMatrix<f64>, c: &[f64]) -> DMatrix<f64> {
    let q = x.ncols();
    let mut m = DMatrix::zeros(q, q);
    for (r, &cr) in c.iter().enumerate() {
        if cr == 0.0 {
            continue;
        }
        for j in 0..q {
            let a = cr * x[(r, j)];
            for k in 0..=j {
                m[(j, k)] += a * x[(r, k)];
            }
        }
    }
    for j in 0..q {
        for k in 0..j {
            m[(k, j)] = m[(j, k)];
        }
    }
    m
}

fn rank_one_blocks(x: &DMatrix<f64>, c: &[f64]) -> Vec<f64> {
    let (n, q) = x.shape();
    let mut out = vec![0.0; n * q * q];
    for r in 0..n {
        let block = &mut out[r * q * q..(r + 1) * q * q];
        for j in 0..q {
            for k in 0..q {
                block[j * q + k] = c[r] * x[(r, j)] * x[(r, k)];
            }
        }
    }
    out
}

pub(super) fn gaussian_loglik(f: &ModelFrame, w: &[f64], coef: &DVector<f64>, s2: f64) -> f64 {
    let eta = &f.x * coef;
    let c = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
    w.iter()
        .zip(eta.iter().zip(&f.y))
        .map(|(wr, (e, y))| wr * (c - (y - e).powi(2) / (2.0 * s2)))
        .sum()
}

pub(super) fn gaussian_derivs(
    f: &ModelFrame,
    w: &[f64],
    coef: &DVector<f64>,
    s2: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let eta = &f.x * coef;
    let resid: Vec<f64> = w
        .iter()
        .zip(eta.iter().zip(&f.y))
        .map(|(wr, (e, y))| wr * (y - e) / s2)
        .collect();
    let g = f.x.transpose() * DVector::from_vec(resid);
    let c: Vec<f64> = w.iter().map(|wr| wr / s2).collect();
    (g, weighted_crossprod(&f.x, &c))
}

pub(super) fn gaussian_contributions(f: &ModelFrame, coef: &DVector<f64>, s2: f64) -> (DMatrix<f64>, Vec<f64>) {
    let eta = &f.x * coef;
    let (n, q) = f.x.shape();
    let scores = DMatrix::from_fn(n, q, |r, j| f.x[(r, j)] * (f.y[r] - eta[r]) / s2);
    let c = vec![1.0 / s2; n];
    (scores, rank_one_blocks(&f.x, &c))
}

/// Closed-form weighted least squares.
pub(super) fn fit_gaussian(f: &ModelFrame, w: &[f64]) -> Result<FitResult> {
    let xtwx = weighted_crossprod(&f.x, w);
    let wy: Vec<f64> = w.iter().zip(&f.y).map(|(a, b)| a * b).collect();
    let xtwy = f.x.transpose() * DVector::from_vec(wy);
    let chol = checked_cholesky(&xtwx)?;
    let coef = chol.solve(&xtwy);
    let eta = &f.x * &coef;
    let sw: f64 = w.iter().sum();
    let rss: f64 = w
        .iter()
        .zip(eta.iter().zip(&f.y))
        .map(|(wr, (e, y))| wr * (y - e).powi(2))
        .sum();
    let s2 = rss / sw;
    if !(s2 > 1e-300) {
        return Err(Error::SingularDesign);
    }
    let (scores, info) = gaussian_contributions(f, &coef, s2);
    Ok(FitResult {
        family: f.family,
        names: f.names.clone(),
        loglik: gaussian_loglik(f, w, &coef, s2),
        information: xtwx / s2,
        coef,
        dispersion: Some(s2),
        scores,
        info,
        iterations: 1,
        converged: true,
    })
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(super) fn bernoulli_eval(
    f: &ModelFrame,
    w: &[f64],
    coef: &DVector<f64>,
    derivs: bool,
) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
    let eta = &f.x * coef;
    let mut ll = 0.0;
    let mut resid = Vec::with_capacity(w.len());
    let mut curv = Vec::with_capacity(w.len());
    for ((&wr, &e), &y) in w.iter().zip(eta.iter()).zip(&f.y) {
        ll += wr * (y * e - log1p_exp(e));
        if derivs {
            let p = expit(e);
            resid.push(wr * (y - p));
            curv.push(wr * p * (1.0 - p));
        }
    }
    if !derivs {
        return (ll, DVector::zeros(0), None);
    }
    let g = f.x.transpose() * DVector::from_vec(resid);
    (ll, g, Some(weighted_crossprod(&f.x, &curv)))
}

pub(super) fn bernoulli_contributions(f: &ModelFrame, coef: &DVector<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let eta = &f.x * coef;
    let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let (n, q) = f.x.shape();
    let scores = DMatrix::from_fn(n, q, |r, j| f.x[(r, j)] * (f.y[r] - p[r]));
    let c: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
    (scores, rank_one_blocks(&f.x, &c))
}

struct Bernoulli<'a> {
    frame: &'a ModelFrame,
    w: &'a [f64],
}

impl Objective for Bernoulli<'_> {
    fn loglik(&self, beta: &DVector<f64>) -> f64 {
        bernoulli_eval(self.frame, self.w, beta, false).0
    }

    fn evaluate(&self, beta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (ll, g, h) = bernoulli_eval(self.frame, self.w, beta, true);
        (ll, g, h.expect("requested"))
    }
}

pub(super) fn fit_bernoulli(f: &ModelFrame, w: &[f64]) -> Result<FitResult> {
    let obj = Bernoulli { frame: f, w };
    let out = newton_raphson(&obj, DVector::zeros(f.n_coef()), SCORE_TOL)?;
    let (scores, info) = bernoulli_contributions(f, &out.coef);
    Ok(FitResult {
        family: f.family,
        names: f.names.clone(),
        coef: out.coef,
        dispersion: None,
        scores,
        info,
        information: out.information,
        loglik: out.loglik,
        iterations: out.iterations,
        converged: true,
    })
}
