//! Weighted Cox partial likelihood with Breslow handling of ties.
//!
//! Per-row contributions are score residuals
//! `U_r = δ_r (x_r − x̄(t_r)) − e^{η_r} Σ_{t_k ≤ t_r} dΛ_k (x_r − x̄(t_k))`
//! and `J_r = δ_r V(t_r)`, chosen so that `Σ w_r U_r` is the partial score
//! and `Σ w_r J_r` the partial information.

use nalgebra::{DMatrix, DVector};

use super::newton::{newton_raphson, Objective, SCORE_TOL};
use super::{FitResult, ModelFrame};
use crate::error::{Error, Result};

pub(super) struct CoxObjective<'a> {
    frame: &'a ModelFrame,
    w: &'a [f64],
    /// Row indices sorted by decreasing time.
    order: Vec<usize>,
    /// `[start, end)` ranges into `order`, one per distinct time, decreasing.
    groups: Vec<(usize, usize)>,
}

/// Risk-set sums at one distinct time, on the shifted scale `e^{η − shift}`.
struct GroupStats {
    time: f64,
    /// Weighted event count.
    events: f64,
    has_event_rows: bool,
    s0: f64,
    xbar: DVector<f64>,
    var: DMatrix<f64>,
}

impl<'a> CoxObjective<'a> {
    pub(super) fn new(frame: &'a ModelFrame, w: &'a [f64]) -> Self {
        let mut order: Vec<usize> = (0..frame.n_rows()).collect();
        order.sort_by(|&a, &b| frame.y[b].total_cmp(&frame.y[a]).then(a.cmp(&b)));
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 1..=order.len() {
            if i == order.len() || frame.y[order[i]] != frame.y[order[start]] {
                groups.push((start, i));
                start = i;
            }
        }
        Self {
            frame,
            w,
            order,
            groups,
        }
    }

    fn shifted_eta(&self, beta: &DVector<f64>) -> (Vec<f64>, f64) {
        let eta = &self.frame.x * beta;
        let shift = eta
            .iter()
            .zip(self.w)
            .filter(|(_, &w)| w > 0.0)
            .map(|(e, _)| *e)
            .fold(f64::NEG_INFINITY, f64::max);
        let shift = if shift.is_finite() { shift } else { 0.0 };
        (eta.iter().map(|e| e - shift).collect(), shift)
    }

    /// Walk risk sets from the latest time backwards.
    fn group_stats(&self, eta: &[f64], want_var: bool) -> Vec<GroupStats> {
        let q = self.frame.n_coef();
        let x = &self.frame.x;
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(q);
        let mut s2 = DMatrix::<f64>::zeros(q, q);
        let mut out = Vec::with_capacity(self.groups.len());
        for &(a, b) in &self.groups {
            let mut events = 0.0;
            let mut has_event_rows = false;
            for &r in &self.order[a..b] {
                let risk = self.w[r] * eta[r].exp();
                if risk > 0.0 {
                    s0 += risk;
                    for j in 0..q {
                        let xj = risk * x[(r, j)];
                        s1[j] += xj;
                        if want_var {
                            for k in 0..=j {
                                s2[(j, k)] += xj * x[(r, k)];
                            }
                        }
                    }
                }
                if self.frame.status[r] > 0.5 {
                    has_event_rows = true;
                    events += self.w[r];
                }
            }
            let (xbar, var) = if has_event_rows && s0 > 0.0 {
                let xbar = &s1 / s0;
                let var = if want_var {
                    let mut v = DMatrix::from_fn(q, q, |j, k| {
                        let (j, k) = if j >= k { (j, k) } else { (k, j) };
                        s2[(j, k)] / s0
                    });
                    v -= &xbar * xbar.transpose();
                    v
                } else {
                    DMatrix::zeros(0, 0)
                };
                (xbar, var)
            } else {
                (DVector::zeros(q), DMatrix::zeros(q, q))
            };
            out.push(GroupStats {
                time: self.frame.y[self.order[a]],
                events,
                has_event_rows,
                s0,
                xbar,
                var,
            });
        }
        out
    }

    pub(super) fn total_events(&self) -> f64 {
        self.w
            .iter()
            .zip(&self.frame.status)
            .filter(|(_, &d)| d > 0.5)
            .map(|(w, _)| w)
            .sum()
    }

    fn eval_inner(&self, beta: &DVector<f64>, derivs: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
        let q = self.frame.n_coef();
        let (eta, _) = self.shifted_eta(beta);
        let stats = self.group_stats(&eta, derivs);
        let mut ll = 0.0;
        let mut g = DVector::zeros(q);
        let mut h = DMatrix::zeros(q, q);
        for (st, &(a, b)) in stats.iter().zip(&self.groups) {
            if st.events <= 0.0 {
                continue;
            }
            let log_s0 = st.s0.ln();
            for &r in &self.order[a..b] {
                if self.frame.status[r] > 0.5 && self.w[r] > 0.0 {
                    ll += self.w[r] * (eta[r] - log_s0);
                    if derivs {
                        for j in 0..q {
                            g[j] += self.w[r] * self.frame.x[(r, j)];
                        }
                    }
                }
            }
            if derivs {
                g -= &st.xbar * st.events;
                h += &st.var * st.events;
            }
        }
        (ll, g, h)
    }

    /// Per-row score residuals and information blocks.
    pub(super) fn contributions(&self, beta: &DVector<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let (n, q) = self.frame.x.shape();
        let (eta, _) = self.shifted_eta(beta);
        let stats = self.group_stats(&eta, true);
        let x = &self.frame.x;
        let mut scores = DMatrix::zeros(n, q);
        let mut info = vec![0.0; n * q * q];
        // cumulative hazard increments and their x̄-weighted sums, ascending in time
        let mut cum_a = 0.0;
        let mut cum_b = DVector::zeros(q);
        for (st, &(a, b)) in stats.iter().zip(&self.groups).rev() {
            if st.events > 0.0 && st.s0 > 0.0 {
                let d_lambda = st.events / st.s0;
                cum_a += d_lambda;
                cum_b += &st.xbar * d_lambda;
            }
            for &r in &self.order[a..b] {
                let risk = eta[r].exp();
                let event = self.frame.status[r] > 0.5;
                for j in 0..q {
                    let mut u = -risk * (x[(r, j)] * cum_a - cum_b[j]);
                    if event {
                        u += x[(r, j)] - st.xbar[j];
                    }
                    scores[(r, j)] = u;
                }
                if event && st.has_event_rows {
                    let block = &mut info[r * q * q..(r + 1) * q * q];
                    block.copy_from_slice(st.var.as_slice());
                }
            }
        }
        (scores, info)
    }

    /// Distinct event times with positive weighted events and the Breslow
    /// increments `d_k / Σ_{risk set} w e^{η}`.
    pub(super) fn breslow_increments(&self, beta: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let (eta, shift) = self.shifted_eta(beta);
        let stats = self.group_stats(&eta, false);
        let mut times = Vec::new();
        let mut incs = Vec::new();
        for st in stats.iter().rev() {
            if st.events > 0.0 && st.s0 > 0.0 {
                times.push(st.time);
                // s0 is on the e^{η − shift} scale
                incs.push(st.events / st.s0 * (-shift).exp());
            }
        }
        (times, incs)
    }
}

impl Objective for CoxObjective<'_> {
    fn loglik(&self, beta: &DVector<f64>) -> f64 {
        self.eval_inner(beta, false).0
    }

    fn evaluate(&self, beta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        self.eval_inner(beta, true)
    }
}

pub(super) fn fit_cox(f: &ModelFrame, w: &[f64]) -> Result<FitResult> {
    let obj = CoxObjective::new(f, w);
    if !(obj.total_events() > 0.0) {
        return Err(Error::NoEvents);
    }
    let sw: f64 = w.iter().sum();
    let out = newton_raphson(&obj, DVector::zeros(f.n_coef()), SCORE_TOL * sw.max(1.0))?;
    let (scores, info) = obj.contributions(&out.coef);
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
