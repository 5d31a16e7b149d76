//! Runtime monitors: backstepping coordinates, the Lyapunov function of the
//! direct-feedback loop, the Lyapunov-Krasovskii functional of the filtered
//! loop, trigger statistics and exponential decay fits.

use std::collections::VecDeque;

use crate::engine::SimTrace;
use crate::error::{Error, Result};
use crate::exosys::expm;
use crate::history::InputHistory;
use crate::linalg::{Matrix, Vector};
use crate::plant::PlantModel;
use crate::predictor::{reference_state, residual_r, ControllerConfig, Prediction};

/// Default weights `λ_1..λ_4` of the Lyapunov function.
pub const DEFAULT_LAMBDA_V: [f64; 4] = [1.0, 0.1, 0.1, 0.1];
/// Default weights `λ_1..λ_5` of the Lyapunov-Krasovskii functional.
pub const DEFAULT_LAMBDA_K: [f64; 5] = [1.0, 0.1, 0.1, 0.1, 0.1];

/// Floor added before taking logarithms in [`decay_fit`].
pub const LOG_FLOOR: f64 = 1e-12;

/// Distributed-input and transformed coordinates on the prediction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BacksteppingSnapshot {
    pub x: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub u_check: Vec<f64>,
    /// `ū(x) = U(t + (x - 1) D) - R(e^{S D x} v, S)` with the true leader and delay
    pub u_bar: Vec<f64>,
    /// `ũ = ū - û`
    pub u_tilde: Vec<f64>,
    pub chi: Vec<Vector>,
    /// `ŵ = û - K χ̂`
    pub w: Vec<f64>,
    pub w_x: Vec<f64>,
    /// `Θ(x) = exp(∫_0^x D̂ ∂f̄/∂χ̂ dy)`
    pub theta: Vec<f64>,
}

impl BacksteppingSnapshot {
    pub fn w_end(&self) -> f64 {
        *self.w.last().expect("non-empty grid")
    }
}

/// Builds the snapshot from the controller's prediction and the simulator's
/// ground truth (`s_true`, `v_true`, true delay).
#[allow(clippy::too_many_arguments)]
pub fn backstepping_snapshot(
    model: &PlantModel,
    pred: &Prediction,
    cfg: &ControllerConfig,
    s_hat: &Matrix,
    hist: &InputHistory,
    delay: f64,
    s_true: &Matrix,
    v_true: &Vector,
) -> Result<BacksteppingSnapshot> {
    let nx = pred.nx();
    let t = pred.t;
    let n = model.order();
    let x: Vec<f64> = (0..=nx).map(|k| pred.x(k)).collect();

    let step = expm(s_true, delay / nx as f64)?;
    let mut w_true = v_true.clone();
    let mut u_bar = Vec::with_capacity(nx + 1);
    for &xk in &x {
        let query = t + (xk - 1.0) * delay;
        // ū only ever looks back from the current instant
        assert!(
            query <= t + 1e-12,
            "backstepping snapshot must not read future inputs"
        );
        u_bar.push(hist.value_at(query)? - residual_r(model, &w_true, s_true));
        w_true = &step * w_true;
    }
    // ǔ is re-read so that it includes U(t), appended after the prediction ran
    let mut u_check = Vec::with_capacity(nx + 1);
    let mut u_hat = Vec::with_capacity(nx + 1);
    for (&xk, wk) in x.iter().zip(&pred.w) {
        let uc = hist.value_at(t + (xk - 1.0) * cfg.d_hat)?;
        u_check.push(uc);
        u_hat.push(uc - residual_r(model, wk, s_hat));
    }
    let u_tilde: Vec<f64> = u_bar.iter().zip(&u_hat).map(|(a, b)| a - b).collect();
    let w: Vec<f64> = u_hat
        .iter()
        .zip(&pred.chi)
        .map(|(u, c)| u - cfg.k.iter().zip(c.iter()).map(|(k, c)| k * c).sum::<f64>())
        .collect();
    let w_x = derivative(&w, 1.0 / nx as f64);

    let mut theta = Vec::with_capacity(nx + 1);
    let mut integral = 0.0;
    let sens: Vec<f64> = pred
        .chi
        .iter()
        .zip(&pred.w)
        .map(|(c, wk)| {
            let state = c + reference_state(wk, s_hat, n);
            cfg.d_hat * model.input_channel_partial(state.as_slice())
        })
        .collect();
    theta.push(1.0);
    for k in 1..=nx {
        integral += 0.5 * (sens[k - 1] + sens[k]) / nx as f64;
        theta.push(integral.exp());
    }

    Ok(BacksteppingSnapshot {
        x,
        u_hat,
        u_check,
        u_bar,
        u_tilde,
        chi: pred.chi.clone(),
        w,
        w_x,
        theta,
    })
}

/// Central differences inside, one-sided at the ends.
fn derivative(f: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| match k {
            0 => (f[1] - f[0]) / dx,
            k if k == n - 1 => (f[n - 1] - f[n - 2]) / dx,
            k => (f[k + 1] - f[k - 1]) / (2.0 * dx),
        })
        .collect()
}

/// `∫_0^1 (1 + x) g(x)² dx` by the trapezoidal rule on a uniform grid.
fn weighted_square_integral(g: &[f64]) -> f64 {
    let n = g.len() - 1;
    let dx = 1.0 / n as f64;
    let val = |k: usize| (1.0 + k as f64 * dx) * g[k] * g[k];
    let inner: f64 = (1..n).map(val).sum();
    dx * (0.5 * (val(0) + val(n)) + inner)
}

/// Lyapunov function value and its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub terms: [f64; 4],
    pub total: f64,
}

/// `V = Σ λ_j V_j` with `V_1 = |X̄|²/2`, `V_2 = D/2 ∫(1+x) ũ²`,
/// `V_3 = D̂/2 ∫(1+x) ŵ²`, `V_4 = D̂/2 ∫(1+x) ŵ_x²`.
pub fn lyapunov_v(
    snap: &BacksteppingSnapshot,
    x_bar: &Vector,
    delay: f64,
    d_hat: f64,
    lambda: &[f64; 4],
) -> LyapunovSample {
    let terms = [
        x_bar.norm_squared() / 2.0,
        delay / 2.0 * weighted_square_integral(&snap.u_tilde),
        d_hat / 2.0 * weighted_square_integral(&snap.w),
        d_hat / 2.0 * weighted_square_integral(&snap.w_x),
    ];
    LyapunovSample {
        terms,
        total: terms.iter().zip(lambda).map(|(v, l)| v * l).sum(),
    }
}

/// Squared derivative norms sampled on the master grid, newest last.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeBuffer {
    step: f64,
    capacity: usize,
    values: VecDeque<f64>,
}

impl DerivativeBuffer {
    /// Keeps `span / step + 1` samples. Pre-filled with zeros (rest before `t = 0`).
    pub fn new(step: f64, span: f64) -> Self {
        let capacity = (span / step).round() as usize + 1;
        DerivativeBuffer {
            step,
            capacity,
            values: std::iter::repeat_n(0.0, capacity).collect(),
        }
    }

    /// Starts empty, for callers that supply their own history.
    pub fn empty(step: f64, span: f64) -> Self {
        let mut b = Self::new(step, span);
        b.values.clear();
        b
    }

    pub fn push(&mut self, squared_norm: f64) {
        self.values.push_back(squared_norm);
        while self.values.len() > self.capacity {
            self.values.pop_front();
        }
    }

    /// `∫_{t-T}^t ∫_s^t g(θ) dθ ds = ∫_{t-T}^t (θ - t + T) g(θ) dθ`, trapezoidal.
    pub fn double_integral(&self, span: f64) -> Result<f64> {
        let m = (span / self.step).round() as usize;
        if self.values.len() < m + 1 {
            return Err(Error::contract(format!(
                "derivative history holds {} samples, {} needed",
                self.values.len(),
                m + 1
            )));
        }
        let start = self.values.len() - (m + 1);
        let weighted = |j: usize| j as f64 * self.step * self.values[start + j];
        let inner: f64 = (1..m).map(weighted).sum();
        Ok(self.step * (0.5 * (weighted(0) + weighted(m)) + inner))
    }
}

/// Lyapunov-Krasovskii functional value and its terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrasovskiiSample {
    pub terms: [f64; 5],
    pub total: f64,
}

/// `𝒱 = Σ λ_j 𝒱_j` with `𝒱_1 = |X̃|²/2`, `𝒱_2 = |X̂|²/2`, `𝒱_3` as `V_3`,
/// and `𝒱_4`, `𝒱_5` the double integrals of `|dX̃/dt|²` and `|dX̂/dt|²` over
/// one sensor period.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_calv(
    x_tilde: &Vector,
    x_hat: &Vector,
    snap: &BacksteppingSnapshot,
    d_hat: f64,
    tilde_rate: &DerivativeBuffer,
    hat_rate: &DerivativeBuffer,
    period: f64,
    lambda: &[f64; 5],
) -> Result<KrasovskiiSample> {
    let terms = [
        x_tilde.norm_squared() / 2.0,
        x_hat.norm_squared() / 2.0,
        d_hat / 2.0 * weighted_square_integral(&snap.w),
        tilde_rate.double_integral(period)?,
        hat_rate.double_integral(period)?,
    ];
    Ok(KrasovskiiSample {
        terms,
        total: terms.iter().zip(lambda).map(|(v, l)| v * l).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStat {
    pub receiver: usize,
    pub sender: usize,
    pub period: f64,
    pub events: u64,
    pub samples: u64,
}

impl PairStat {
    pub fn ratio(&self) -> f64 {
        self.events as f64 / self.samples as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorStat {
    pub agent: usize,
    pub period: f64,
    pub events: u64,
    pub samples: u64,
}

impl SensorStat {
    pub fn ratio(&self) -> f64 {
        self.events as f64 / self.samples as f64
    }
}

/// Event counts against sampling instants, per channel and aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerStats {
    pub pairs: Vec<PairStat>,
    pub sensors: Vec<SensorStat>,
}

impl TriggerStats {
    pub fn network_events(&self) -> u64 {
        self.pairs.iter().map(|p| p.events).sum()
    }

    pub fn network_samples(&self) -> u64 {
        self.pairs.iter().map(|p| p.samples).sum()
    }

    pub fn network_ratio(&self) -> f64 {
        self.network_events() as f64 / self.network_samples() as f64
    }

    pub fn sensor_events(&self) -> u64 {
        self.sensors.iter().map(|p| p.events).sum()
    }

    pub fn sensor_samples(&self) -> u64 {
        self.sensors.iter().map(|p| p.samples).sum()
    }

    pub fn sensor_ratio(&self) -> f64 {
        self.sensor_events() as f64 / self.sensor_samples() as f64
    }
}

pub fn trigger_stats(trace: &SimTrace) -> TriggerStats {
    let pairs = trace
        .channels
        .iter()
        .map(|c| PairStat {
            receiver: c.receiver,
            sender: c.sender,
            period: c.period,
            events: trace
                .net_events
                .iter()
                .filter(|e| e.receiver == c.receiver && e.sender == c.sender)
                .count() as u64,
            samples: c.samples,
        })
        .collect();
    let sensors = trace
        .sensors
        .iter()
        .map(|s| SensorStat {
            agent: s.agent,
            period: s.period,
            events: trace
                .sensor_events
                .iter()
                .filter(|e| e.agent == s.agent)
                .count() as u64,
            samples: s.samples,
        })
        .collect();
    TriggerStats { pairs, sensors }
}

/// Least-squares line through `ln(series + floor)` over `t ∈ [from, to]`.
/// Returns `(rate, offset)`.
pub fn decay_fit(times: &[f64], series: &[f64], window: (f64, f64)) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(series)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(&t, &y)| (t, y))
        .collect();
    if pts.len() < 10 {
        return Err(Error::contract(format!(
            "decay fit window {window:?} holds {} samples, need at least 10",
            pts.len()
        )));
    }
    if pts.iter().any(|(_, y)| y.is_nan() || *y < 0.0) {
        return Err(Error::contract("decay fit needs a non-negative series"));
    }
    let n = pts.len() as f64;
    let logs: Vec<(f64, f64)> = pts
        .iter()
        .map(|(t, y)| (*t, (y + LOG_FLOOR).ln()))
        .collect();
    let mt = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    let rate = sxy / sxx;
    Ok((rate, my - rate * mt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::ScalarFn;
    use crate::predictor::predict;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn flat_snapshot(nx: usize, u_tilde: f64, w: f64, w_x: f64) -> BacksteppingSnapshot {
        let g = |c: f64| vec![c; nx + 1];
        BacksteppingSnapshot {
            x: (0..=nx).map(|k| k as f64 / nx as f64).collect(),
            u_hat: g(0.0),
            u_check: g(0.0),
            u_bar: g(u_tilde),
            u_tilde: g(u_tilde),
            chi: vec![v(&[0.0]); nx + 1],
            w: g(w),
            w_x: g(w_x),
            theta: g(1.0),
        }
    }

    #[test]
    fn lyapunov_examples() {
        let zero = lyapunov_v(
            &flat_snapshot(20, 0.0, 0.0, 0.0),
            &v(&[0.0]),
            0.15,
            0.15,
            &DEFAULT_LAMBDA_V,
        );
        assert_eq!(zero.total, 0.0);

        let s = lyapunov_v(
            &flat_snapshot(20, 1.0, 0.0, 0.0),
            &v(&[0.0]),
            0.15,
            0.15,
            &[1.0, 1.0, 1.0, 1.0],
        );
        assert_relative_eq!(s.terms[1], 0.1125, epsilon = 1e-14);

        let s = lyapunov_v(
            &flat_snapshot(20, 0.0, 0.0, 0.0),
            &v(&[2.0]),
            0.15,
            0.15,
            &DEFAULT_LAMBDA_V,
        );
        assert_eq!(s.terms[0], 2.0);
    }

    #[test]
    fn double_integral_examples() {
        let (h, period) = (0.001, 0.01);
        let mut b = DerivativeBuffer::new(h, period);
        assert_eq!(b.double_integral(period).unwrap(), 0.0);
        let c: f64 = 3.0;
        for _ in 0..20 {
            b.push(c * c);
        }
        assert_relative_eq!(
            b.double_integral(period).unwrap(),
            c * c * period * period / 2.0,
            max_relative = 1e-12
        );

        let short = DerivativeBuffer::empty(h, period);
        assert!(short.double_integral(period).is_err());
    }

    #[test]
    fn calv_zero_and_constant_state() {
        let (h, period) = (0.001, 0.01);
        let b = DerivativeBuffer::new(h, period);
        let snap = flat_snapshot(16, 0.0, 0.0, 0.0);
        let z = lyapunov_calv(
            &v(&[0.0]),
            &v(&[0.0]),
            &snap,
            0.15,
            &b,
            &b,
            period,
            &DEFAULT_LAMBDA_K,
        )
        .unwrap();
        assert_eq!(z.total, 0.0);
        // constant X̃: zero derivative history, so the fourth term vanishes
        let s = lyapunov_calv(
            &v(&[0.3]),
            &v(&[0.0]),
            &snap,
            0.15,
            &b,
            &b,
            period,
            &DEFAULT_LAMBDA_K,
        )
        .unwrap();
        assert_eq!(s.terms[3], 0.0);
        assert_relative_eq!(s.terms[0], 0.045, epsilon = 1e-15);
    }

    fn history(step: f64, until: f64, u: impl Fn(f64) -> f64) -> InputHistory {
        let mut h = InputHistory::new(step, 1.0).unwrap();
        let mut k = 0;
        while (k as f64) * step <= until + 1e-12 {
            h.push(k as f64 * step, u(k as f64 * step)).unwrap();
            k += 1;
        }
        h
    }

    fn rot() -> Matrix {
        Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
    }

    #[test]
    fn snapshot_exact_information_steady_state() {
        // Exact estimates, D̂ = D, f ≡ 0 and a history generated by the law
        // U(s) = R(e^{SD} v(s), S) (the steady state with X̄ ≡ 0): ũ ≡ 0.
        let zero = PlantModel::first_order(ScalarFn::Zero);
        let s = rot();
        let v0 = v(&[1.0, 0.0]);
        let d = 0.2;
        let u = |t: f64| {
            let vt = expm(&s, t + d).unwrap() * &v0;
            residual_r(&zero, &vt, &s)
        };
        let t = 1.0;
        let hist = history(1e-4, t, u);
        let cfg = ControllerConfig::new(vec![-5.0], d, 40, 0.0).unwrap();
        let vt = expm(&s, t).unwrap() * &v0;
        let pred = predict(&zero, &v(&[0.0]), &vt, &s, &hist, &cfg, t).unwrap();
        let snap = backstepping_snapshot(&zero, &pred, &cfg, &s, &hist, d, &s, &vt).unwrap();
        assert!(snap.u_tilde.iter().all(|x| x.abs() < 1e-9));
        assert!(snap.theta.iter().all(|&th| th == 1.0));
        // steady state: χ̂ ≡ 0 and û ≡ 0 up to interpolation error
        assert!(snap.w.iter().all(|x| x.abs() < 1e-6));
    }

    #[test]
    fn snapshot_zero_gain_w_is_u_hat() {
        let sine_linear = PlantModel::first_order(ScalarFn::SineLinear);
        let s = rot();
        let hist = history(1e-3, 2.0, |t| t.sin());
        let cfg = ControllerConfig {
            k: vec![0.0],
            d_hat: 0.3,
            nx: 20,
            ell: 1.1,
        };
        let vh = v(&[0.4, 0.1]);
        let pred = predict(&sine_linear, &v(&[0.2]), &vh, &s, &hist, &cfg, 2.0).unwrap();
        let snap = backstepping_snapshot(&sine_linear, &pred, &cfg, &s, &hist, 0.3, &s, &vh).unwrap();
        for (w, u) in snap.w.iter().zip(&snap.u_hat) {
            assert_eq!(w, u);
        }
        // Θ > 1 since f' > 0 for this plant
        assert!(snap.theta[20] > 1.0);
    }

    #[test]
    fn boundary_value_vanishes_once_control_is_applied() {
        let sine_linear = PlantModel::first_order(ScalarFn::SineLinear);
        let s = rot();
        let step = 1e-3;
        let mut hist = history(step, 1.0, |t| (3.0 * t).cos());
        let t = 1.0 + step;
        let cfg = ControllerConfig::new(vec![-5.0], 0.15, 30, 1.1).unwrap();
        let vh = v(&[0.8, -0.3]);
        let pred = predict(&sine_linear, &v(&[0.4]), &vh, &s, &hist, &cfg, t).unwrap();
        hist.push(t, crate::predictor::control(&pred, &cfg))
            .unwrap();
        let snap = backstepping_snapshot(&sine_linear, &pred, &cfg, &s, &hist, 0.15, &s, &vh).unwrap();
        assert!(snap.w_end().abs() < 1e-12, "{}", snap.w_end());
    }

    #[test]
    fn decay_fit_examples() {
        let t: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let y: Vec<f64> = t.iter().map(|t| (-2.0 * t).exp()).collect();
        let (rate, _) = decay_fit(&t, &y, (0.0, 5.0)).unwrap();
        assert!((rate + 2.0).abs() < 1e-3);

        let c = vec![0.7; t.len()];
        let (rate, off) = decay_fit(&t, &c, (1.0, 9.0)).unwrap();
        assert!(rate.abs() < 1e-12);
        assert_relative_eq!(off, (0.7f64 + LOG_FLOOR).ln(), epsilon = 1e-12);

        assert!(decay_fit(&t, &y, (0.0, 0.05)).is_err());
    }

    #[test]
    fn derivative_of_linear_is_exact() {
        let f: Vec<f64> = (0..=10).map(|k| 3.0 * k as f64 / 10.0).collect();
        assert!(derivative(&f, 0.1).iter().all(|d| (d - 3.0).abs() < 1e-12));
    }
}
