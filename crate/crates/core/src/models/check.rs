use nalgebra::{DMatrix, DVector};

use super::{contributions, loglik, score_and_information, Design, ModelFrame, OutcomeParams, OutcomeSpec};
use crate::error::Result;
use crate::table::Table;

#[derive(Clone, Copy, Debug)]
pub struct FdReport {
    /// max_j |analytic score_j − FD_j| / (1 + |FD_j|)
    pub score: f64,
    /// Same measure for the Hessian against `−Σ w J`.
    pub hessian: f64,
    /// Same measure for `Σ w U_r` (per-row contributions) against the FD score.
    pub row_score: f64,
}

impl FdReport {
    pub fn max(&self) -> f64 {
        self.score.max(self.hessian).max(self.row_score)
    }
}

fn rel(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (1.0 + fd.abs())
}

/// Compare analytic derivatives with central finite differences of the
/// implemented log-likelihood (score) and of the analytic score (Hessian).
pub fn finite_diff_check(
    spec: &OutcomeSpec,
    params: &OutcomeParams,
    data: &Table,
    w: &[f64],
) -> Result<FdReport> {
    let design = Design::new(spec, data)?;
    let frame = ModelFrame::build(&design, spec, data, None)?;
    Ok(finite_diff_frame(&frame, w, &params.coef, params.dispersion))
}

pub(crate) fn finite_diff_frame(
    frame: &ModelFrame,
    w: &[f64],
    coef: &DVector<f64>,
    dispersion: Option<f64>,
) -> FdReport {
    let q = coef.len();
    let (score, info) = score_and_information(frame, w, coef, dispersion);
    let (rows, blocks) = contributions(frame, w, coef, dispersion);
    let mut row_score = DVector::zeros(q);
    let mut row_info = DMatrix::<f64>::zeros(q, q);
    for (r, &wr) in w.iter().enumerate() {
        for j in 0..q {
            row_score[j] += wr * rows[(r, j)];
            for k in 0..q {
                row_info[(j, k)] += wr * blocks[r * q * q + k * q + j];
            }
        }
    }

    let mut fd_score = DVector::zeros(q);
    let mut fd_hess = DMatrix::zeros(q, q);
    for j in 0..q {
        let h = 1e-5 * coef[j].abs().max(1.0);
        let mut plus = coef.clone();
        let mut minus = coef.clone();
        plus[j] += h;
        minus[j] -= h;
        fd_score[j] = (loglik(frame, w, &plus, dispersion) - loglik(frame, w, &minus, dispersion)) / (2.0 * h);
        let gp = score_and_information(frame, w, &plus, dispersion).0;
        let gm = score_and_information(frame, w, &minus, dispersion).0;
        for k in 0..q {
            fd_hess[(k, j)] = (gp[k] - gm[k]) / (2.0 * h);
        }
    }
    // symmetrize the FD Hessian
    let fd_hess = (&fd_hess + fd_hess.transpose()) * 0.5;

    let mut s = 0.0_f64;
    let mut hs = 0.0_f64;
    let mut rs = 0.0_f64;
    for j in 0..q {
        s = s.max(rel(score[j], fd_score[j]));
        rs = rs.max(rel(row_score[j], fd_score[j]));
        for k in 0..q {
            hs = hs.max(rel(-info[(j, k)], fd_hess[(j, k)]));
            hs = hs.max(rel(-row_info[(j, k)], fd_hess[(j, k)]));
        }
    }
    FdReport {
        score: s,
        hessian: hs,
        row_score: rs,
    }
}
