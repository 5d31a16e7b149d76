//! Sensor-to-controller periodic event triggering and the filter that turns
//! the event-held measurement back into a continuous state estimate.

use crate::error::{Error, Result};
use crate::exosys;
use crate::history::InputHistory;
use crate::linalg::{Matrix, Vector};
use crate::observer::{check_on_grid, held_estimate, BroadcastRecord};
use crate::plant::PlantModel;
use crate::predictor::{shifted_rhs, ControllerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    /// Output injection gain, one entry per plant state.
    pub l: Vec<f64>,
    /// Sensor sampling period.
    pub period: f64,
    pub delta_phi: f64,
    pub gamma_phi: f64,
}

impl FilterParams {
    pub fn new(l: Vec<f64>, period: f64, delta_phi: f64, gamma_phi: f64) -> Result<Self> {
        if l.is_empty() || l.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("filter gain must be non-empty and finite"));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::contract(format!(
                "sensor period must be positive, got {period}"
            )));
        }
        if [delta_phi, gamma_phi]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return Err(Error::contract(
                "sensor trigger delta and gamma must be positive",
            ));
        }
        Ok(FilterParams {
            l,
            period,
            delta_phi,
            gamma_phi,
        })
    }

    pub fn threshold(&self, tau: f64) -> f64 {
        self.delta_phi * (-self.gamma_phi * tau).exp()
    }
}

/// Filter estimate plus the two holds it is driven by: the last transmitted
/// measurement and the estimate at the last sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: Vector,
    pub last_sample_t: f64,
    pub x_hat_at_sample: Vector,
    pub last_event_phi: f64,
    pub last_event_t: f64,
}

impl FilterState {
    /// State at `t = 0` with the forced first event carrying `phi0`.
    pub fn new(x_hat0: Vector, phi0: f64) -> Self {
        FilterState {
            x_hat_at_sample: x_hat0.clone(),
            x_hat: x_hat0,
            last_sample_t: 0.0,
            last_event_phi: phi0,
            last_event_t: 0.0,
        }
    }
}

/// `φ = Y - F v̄_i(t, t̄_ii)`, using only the discrete self snapshot.
pub fn measure_phi(y: f64, self_record: &BroadcastRecord, t: f64) -> Result<f64> {
    Ok(y - exosys::output(&held_estimate(self_record, t)?))
}

/// `f̄(X̂, v̂) + û(0, t) - L (φ(τ̄_q) - C X̂(τ_p))` with `C = [1, 0, ..., 0]`
/// and `û(0, t) = U(t - D̂) - R(v̂, Ŝ)`.
#[allow(clippy::too_many_arguments)]
pub fn filter_rhs(
    model: &PlantModel,
    fs: &FilterState,
    x_hat: &Vector,
    v_hat: &Vector,
    s_hat: &Matrix,
    hist: &InputHistory,
    cfg: &ControllerConfig,
    params: &FilterParams,
    t: f64,
) -> Result<Vector> {
    let u = hist.value_at(t - cfg.d_hat)?;
    Ok(filter_rhs_with_input(
        model, fs, x_hat, v_hat, s_hat, u, params,
    ))
}

pub(crate) fn filter_rhs_with_input(
    model: &PlantModel,
    fs: &FilterState,
    x_hat: &Vector,
    v_hat: &Vector,
    s_hat: &Matrix,
    u_delayed: f64,
    params: &FilterParams,
) -> Vector {
    let innovation = fs.last_event_phi - fs.x_hat_at_sample[0];
    let mut dx = shifted_rhs(model, x_hat, v_hat, s_hat, u_delayed);
    for (d, l) in dx.iter_mut().zip(&params.l) {
        *d -= l * innovation;
    }
    dx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorOutcome {
    pub fired: bool,
    pub deviation: f64,
    pub threshold: f64,
}

/// `|φ(τ) - φ(τ̄_q)| > δ_φ e^{-γ_φ τ}` at a sensor sampling instant.
pub fn trigger_check_sensor(
    phi_now: f64,
    fs: &FilterState,
    params: &FilterParams,
    tau: f64,
) -> Result<SensorOutcome> {
    check_on_grid(tau, params.period)?;
    let deviation = (phi_now - fs.last_event_phi).abs();
    let threshold = params.threshold(tau);
    Ok(SensorOutcome {
        fired: deviation > threshold,
        deviation,
        threshold,
    })
}

/// Sensor sampling instant: refresh the sample hold unconditionally, then
/// transmit `φ` if the trigger fires.
pub fn sensor_sample(
    fs: &mut FilterState,
    phi_now: f64,
    params: &FilterParams,
    tau: f64,
) -> Result<SensorOutcome> {
    let outcome = trigger_check_sensor(phi_now, fs, params, tau)?;
    fs.last_sample_t = tau;
    fs.x_hat_at_sample = fs.x_hat.clone();
    if outcome.fired {
        fs.last_event_phi = phi_now;
        fs.last_event_t = tau;
    }
    Ok(outcome)
}
