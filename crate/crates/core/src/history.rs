//! Time-stamped buffer of applied controls. It is both the physical input
//! delay line and the substrate of the prediction integral.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Relative slack used when comparing query times to sample times.
const TIME_EPS: f64 = 1e-9;

/// Uniformly sampled control history with linear interpolation.
///
/// Values before the first pushed sample are zero: the buffer is pre-filled
/// with zeros over one window before `t = 0`, and the first pushed sample is
/// a jump rather than the end of a ramp. Queries up to one step past the
/// newest sample hold the newest value, since the control at the current
/// instant is not known until it has been computed.
#[derive(Debug, Clone, PartialEq)]
pub struct InputHistory {
    step: f64,
    window: f64,
    samples: VecDeque<(f64, f64)>,
    /// Time of the first pushed sample; earlier queries read zero.
    start: f64,
}

impl InputHistory {
    /// `window` must cover the largest delay the buffer is queried with.
    /// The stored span is `window + 2 * step`.
    pub fn new(step: f64, window: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) || !(window >= 0.0 && window.is_finite()) {
            return Err(Error::contract(format!(
                "history step {step} and window {window} must be positive and finite"
            )));
        }
        let prefill = (window / step).ceil() as i64 + 2;
        let samples = (-prefill..0).map(|k| (k as f64 * step, 0.0)).collect();
        Ok(InputHistory {
            step,
            window,
            samples,
            start: f64::INFINITY,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn newest(&self) -> (f64, f64) {
        *self.samples.back().expect("history never empty")
    }

    pub fn oldest(&self) -> (f64, f64) {
        *self.samples.front().expect("history never empty")
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Appends `U(t)`. Timestamps must be strictly increasing.
    pub fn push(&mut self, t: f64, u: f64) -> Result<()> {
        let (last, _) = self.newest();
        if t <= last {
            return Err(Error::contract(format!(
                "history timestamps must increase: {t} after {last}"
            )));
        }
        if !u.is_finite() {
            return Err(Error::contract(format!("non-finite control {u} at t={t}")));
        }
        if self.start.is_infinite() {
            self.start = t;
        }
        self.samples.push_back((t, u));
        let horizon = t - self.window - 2.0 * self.step;
        while self.samples.len() > 2 && self.samples[1].0 <= horizon {
            self.samples.pop_front();
        }
        Ok(())
    }

    /// `U(t)` by linear interpolation between the bracketing samples.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        let (t_old, _) = self.oldest();
        let (t_new, u_new) = self.newest();
        let slack = TIME_EPS * self.step;
        if t < t_old - slack || t > t_new + self.step + slack || !t.is_finite() {
            return Err(Error::HistoryGap {
                agent: 0,
                t: t_new,
                query: t,
                oldest: t_old,
                newest: t_new,
            });
        }
        if t >= t_new {
            return Ok(u_new);
        }
        if t < self.start {
            return Ok(0.0);
        }
        // first index with sample time > t
        let idx = self.samples.partition_point(|&(ts, _)| ts <= t);
        if idx == 0 {
            return Ok(self.samples[0].1);
        }
        let (t0, u0) = self.samples[idx - 1];
        let (t1, u1) = self.samples[idx];
        if t == t0 {
            return Ok(u0);
        }
        let w = (t - t0) / (t1 - t0);
        Ok(u0 + w * (u1 - u0))
    }
}

/// `U(t - D)` as seen by the actuator.
pub fn delayed_input(hist: &InputHistory, t: f64, delay: f64) -> Result<f64> {
    hist.value_at(t - delay)
}
