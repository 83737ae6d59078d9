use nalgebra::DVector;

use super::cox::CoxObjective;
use super::{check_weights, Family, ModelFrame};
use crate::error::{Error, Result};

/// Breslow cumulative baseline hazard and the piecewise-constant hazard
/// that integrates to it.
///
/// `rates[k]` is the hazard on `(times[k-1], times[k]]` (with `times[-1] = 0`).
/// Beyond the last event time the cumulative hazard is held flat and the
/// rate is taken from the last interval.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineHazard {
    times: Vec<f64>,
    cumhaz: Vec<f64>,
    rates: Vec<f64>,
}

impl BaselineHazard {
    pub fn from_steps(times: Vec<f64>, cumhaz: Vec<f64>) -> Result<Self> {
        if times.len() != cumhaz.len() || times.is_empty() {
            return Err(Error::NoEvents);
        }
        let mut rates = Vec::with_capacity(times.len());
        let (mut t0, mut h0) = (0.0, 0.0);
        for (&t, &h) in times.iter().zip(&cumhaz) {
            if !(t > t0) || !(h >= h0) || !h.is_finite() {
                return Err(Error::InvalidSpec(
                    "baseline steps must have increasing positive times and nondecreasing hazard".into(),
                ));
            }
            rates.push((h - h0) / (t - t0));
            t0 = t;
            h0 = h;
        }
        Ok(Self { times, cumhaz, rates })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `Λ₀(t_k)` at each event time.
    pub fn steps(&self) -> &[f64] {
        &self.cumhaz
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Index of the interval `(t_{k-1}, t_k]` containing `t`, if `t ≤ t_K`.
    fn interval(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&tk| tk < t);
        (k < self.times.len()).then_some(k)
    }

    /// Integral of the piecewise-constant hazard over `(0, t]`.
    pub fn cumulative(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.interval(t) {
            Some(k) => {
                let (t0, h0) = if k == 0 {
                    (0.0, 0.0)
                } else {
                    (self.times[k - 1], self.cumhaz[k - 1])
                };
                h0 + self.rates[k] * (t - t0)
            }
            None => *self.cumhaz.last().expect("nonempty"),
        }
    }

    /// Right-continuous step function `Λ₀(t)`.
    pub fn step_cumulative(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&tk| tk <= t);
        if k == 0 {
            0.0
        } else {
            self.cumhaz[k - 1]
        }
    }

    /// Piecewise-constant hazard `λ₀(t)`.
    pub fn rate(&self, t: f64) -> Option<f64> {
        if !(t > 0.0) {
            return None;
        }
        match self.interval(t) {
            Some(k) => Some(self.rates[k]),
            None => self.rates.last().copied(),
        }
    }
}

/// Breslow estimator at coefficients `coef` with row weights `w`.
pub fn breslow_baseline(coef: &DVector<f64>, frame: &ModelFrame, w: &[f64]) -> Result<BaselineHazard> {
    if frame.family != Family::Cox {
        return Err(Error::UnsupportedFamily(frame.family.name().into()));
    }
    check_weights(w, frame.n_rows())?;
    let obj = CoxObjective::new(frame, w);
    let (times, incs) = obj.breslow_increments(coef);
    if times.is_empty() {
        return Err(Error::NoEvents);
    }
    let mut acc = 0.0;
    let cumhaz = incs
        .iter()
        .map(|d| {
            acc += d;
            acc
        })
        .collect();
    BaselineHazard::from_steps(times, cumhaz)
}
