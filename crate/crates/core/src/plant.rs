//! Follower dynamics: first-order `Ẋ = f(X) + Δd(t) + U(t - D)`, the chain of
//! integrators with `f` on the last channel, and strict-feedback forms.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Scalar nonlinearities available to scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFn {
    Zero,
    /// `a x`
    Linear(f64),
    /// `x + 0.1 sin x`
    SineLinear,
    /// `0.1 x sin x + cos² x ln(1 + x²)`
    Robust,
}

/// Range over which the Lipschitz constant of [`ScalarFn::Robust`] is
/// estimated when the scenario does not give one.
pub const ROBUST_RANGE: f64 = 5.0;

impl ScalarFn {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Linear(a) => a * x,
            ScalarFn::SineLinear => x + 0.1 * x.sin(),
            ScalarFn::Robust => {
                let c = x.cos();
                0.1 * x.sin() * x + c * c * (1.0 + x * x).ln()
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Linear(a) => a,
            ScalarFn::SineLinear => 1.0 + 0.1 * x.cos(),
            ScalarFn::Robust => {
                let (s, c) = x.sin_cos();
                0.1 * c * x + 0.1 * s - 2.0 * c * s * (1.0 + x * x).ln()
                    + c * c * 2.0 * x / (1.0 + x * x)
            }
        }
    }

    /// True when the bound on `|f'|` holds globally.
    pub fn globally_lipschitz(&self) -> bool {
        !matches!(self, ScalarFn::Robust)
    }

    /// Bound on `|f'|`. Exact for the analytic entries, sampled over
    /// `[-range, range]` for [`ScalarFn::Robust`].
    pub fn lipschitz(&self, range: f64) -> f64 {
        match *self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Linear(a) => a.abs(),
            ScalarFn::SineLinear => 1.1,
            ScalarFn::Robust => sampled_lipschitz(|x| self.derivative(x), range),
        }
    }
}

fn sampled_lipschitz(df: impl Fn(f64) -> f64, range: f64) -> f64 {
    const SAMPLES: usize = 200_000;
    let mut best = 0.0f64;
    for k in 0..=SAMPLES {
        let x = -range + 2.0 * range * k as f64 / SAMPLES as f64;
        best = best.max(df(x).abs());
    }
    // inflate slightly to cover the gaps between grid points
    best * 1.001 + 1e-6
}

/// `f(X) = Σ_k g_k(X_k)`, one scalar term per state channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Separable(pub Vec<ScalarFn>);

impl Separable {
    pub fn scalar(f: ScalarFn) -> Self {
        Separable(vec![f])
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(g, &xi)| g.value(xi)).sum()
    }

    pub fn partial(&self, x: &[f64], k: usize) -> f64 {
        self.0.get(k).map_or(0.0, |g| g.derivative(x[k]))
    }

    pub fn lipschitz(&self, range: f64) -> f64 {
        self.0
            .iter()
            .map(|g| g.lipschitz(range))
            .fold(0.0, f64::max)
    }

    pub fn globally_lipschitz(&self) -> bool {
        self.0.iter().all(ScalarFn::globally_lipschitz)
    }
}

/// Drift structure of a follower.
#[derive(Debug, Clone, PartialEq)]
pub enum PlantModel {
    /// `Ẋ_k = X_{k+1}` for `k < n`, `Ẋ_n = f(X) + U`. Order one is the scalar plant.
    Chain(Separable),
    /// `Ẋ_k = X_{k+1} + f_k(X_1..X_k)`, `Ẋ_n = f_n(X) + U`.
    StrictFeedback(Vec<Separable>),
}

impl PlantModel {
    pub fn first_order(f: ScalarFn) -> Self {
        PlantModel::Chain(Separable::scalar(f))
    }

    pub fn order(&self) -> usize {
        match self {
            PlantModel::Chain(f) => f.0.len(),
            PlantModel::StrictFeedback(fs) => fs.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PlantModel::Chain(f) if f.0.is_empty() => {
                Err(Error::contract("plant order must be at least one"))
            }
            PlantModel::StrictFeedback(fs) => {
                if fs.is_empty() {
                    return Err(Error::contract("plant order must be at least one"));
                }
                for (k, f) in fs.iter().enumerate() {
                    if f.0.len() != k + 1 {
                        return Err(Error::contract(format!(
                            "strict-feedback channel {} must depend on exactly {} states, got {}",
                            k + 1,
                            k + 1,
                            f.0.len()
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Input-free vector field `a(X)`.
    pub fn drift(&self, x: &[f64]) -> Vector {
        let mut dx = Vector::zeros(self.order());
        self.drift_into(x, dx.as_mut_slice());
        dx
    }

    /// [`PlantModel::drift`] into a caller-owned buffer of length `order()`.
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        let n = out.len();
        out[..n - 1].copy_from_slice(&x[1..n]);
        match self {
            PlantModel::Chain(f) => out[n - 1] = f.value(x),
            PlantModel::StrictFeedback(fs) => {
                out[n - 1] = 0.0;
                for (k, f) in fs.iter().enumerate() {
                    out[k] += f.value(&x[..=k]);
                }
            }
        }
    }

    /// The nonlinearity acting on the input channel.
    pub fn input_channel_fn(&self) -> &Separable {
        match self {
            PlantModel::Chain(f) => f,
            PlantModel::StrictFeedback(fs) => fs.last().expect("validated non-empty"),
        }
    }

    /// `∂f_n/∂X_n`, the sensitivity of the input-channel nonlinearity to its own state.
    pub fn input_channel_partial(&self, x: &[f64]) -> f64 {
        let n = self.order();
        self.input_channel_fn().partial(x, n - 1)
    }

    pub fn lipschitz(&self, range: f64) -> f64 {
        match self {
            PlantModel::Chain(f) => f.lipschitz(range),
            PlantModel::StrictFeedback(fs) => {
                fs.iter().map(|f| f.lipschitz(range)).fold(0.0, f64::max)
            }
        }
    }

    pub fn globally_lipschitz(&self) -> bool {
        match self {
            PlantModel::Chain(f) => f.globally_lipschitz(),
            PlantModel::StrictFeedback(fs) => fs.iter().all(Separable::globally_lipschitz),
        }
    }
}

/// Additive matched disturbance `a sin t + b cos t`, unknown to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    #[serde(default)]
    pub sin: f64,
    #[serde(default)]
    pub cos: f64,
}

impl Disturbance {
    pub fn value(&self, t: f64) -> f64 {
        self.sin * t.sin() + self.cos * t.cos()
    }
}

/// One follower: model, true input delay, Lipschitz bound, initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerPlant {
    pub model: PlantModel,
    pub delay: f64,
    pub ell: f64,
    pub disturbance: Option<Disturbance>,
    pub x0: Vector,
}

impl FollowerPlant {
    /// `ell = None` takes the catalog bound (sampled over [`ROBUST_RANGE`] for
    /// entries without a global certificate, with a warning).
    pub fn new(
        model: PlantModel,
        delay: f64,
        x0: Vector,
        disturbance: Option<Disturbance>,
        ell: Option<f64>,
    ) -> Result<Self> {
        model.validate()?;
        if !(delay > 0.0 && delay.is_finite()) {
            return Err(Error::contract(format!(
                "input delay must be positive, got {delay}"
            )));
        }
        if x0.len() != model.order() || x0.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract(format!(
                "initial state must be {} finite values",
                model.order()
            )));
        }
        if !model.globally_lipschitz() {
            warn!(
                "plant nonlinearity is not globally Lipschitz; using a bound estimated over [-{ROBUST_RANGE}, {ROBUST_RANGE}]"
            );
        }
        let ell = match ell {
            Some(l) if l >= 0.0 && l.is_finite() => l,
            Some(l) => {
                return Err(Error::contract(format!(
                    "Lipschitz bound must be >= 0, got {l}"
                )))
            }
            None => model.lipschitz(ROBUST_RANGE),
        };
        Ok(FollowerPlant {
            model,
            delay,
            ell,
            disturbance,
            x0,
        })
    }

    pub fn order(&self) -> usize {
        self.model.order()
    }
}

/// State derivative given the already-delayed control `U(t - D)`.
pub fn plant_rhs(p: &FollowerPlant, x: &[f64], u_delayed: f64, t: f64) -> Vector {
    let mut dx = p.model.drift(x);
    let n = dx.len();
    dx[n - 1] += u_delayed + p.disturbance.map_or(0.0, |d| d.value(t));
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn first(f: ScalarFn) -> FollowerPlant {
        FollowerPlant::new(
            PlantModel::first_order(f),
            0.15,
            Vector::zeros(1),
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn rhs_examples() {
        assert_eq!(plant_rhs(&first(ScalarFn::Zero), &[0.0], 0.0, 0.0)[0], 0.0);
        assert_eq!(plant_rhs(&first(ScalarFn::SineLinear), &[0.0], 1.0, 0.0)[0], 1.0);
        let got = plant_rhs(&first(ScalarFn::SineLinear), &[1.0], -3.08415, 0.0)[0];
        assert_relative_eq!(got, 1.0 + 0.1 * 1f64.sin() - 3.08415, epsilon = 1e-15);
    }

    #[test]
    fn disturbance_on_last_channel() {
        let d = Disturbance { sin: 0.1, cos: 0.1 };
        let p = FollowerPlant::new(
            PlantModel::Chain(Separable(vec![ScalarFn::Zero, ScalarFn::Zero])),
            0.1,
            Vector::zeros(2),
            Some(d),
            None,
        )
        .unwrap();
        let dx = plant_rhs(&p, &[0.0, 0.5], 0.0, 1.0);
        assert_eq!(dx[0], 0.5);
        assert_relative_eq!(dx[1], 0.1 * 1f64.sin() + 0.1 * 1f64.cos(), epsilon = 1e-15);
    }

    #[test]
    fn chain_and_strict_feedback_fields() {
        let chain = PlantModel::Chain(Separable(vec![ScalarFn::Linear(2.0), ScalarFn::SineLinear]));
        let dx = chain.drift(&[1.0, 0.5]);
        assert_eq!(dx[0], 0.5);
        assert_relative_eq!(dx[1], 2.0 + 0.5 + 0.1 * 0.5f64.sin(), epsilon = 1e-15);

        let sf = PlantModel::StrictFeedback(vec![
            Separable(vec![ScalarFn::Linear(-1.0)]),
            Separable(vec![ScalarFn::Zero, ScalarFn::Linear(3.0)]),
        ]);
        let dx = sf.drift(&[2.0, 1.0]);
        assert_eq!(dx[0], 1.0 - 2.0);
        assert_eq!(dx[1], 3.0);

        let bad = PlantModel::StrictFeedback(vec![Separable(vec![ScalarFn::Zero, ScalarFn::Zero])]);
        assert!(FollowerPlant::new(bad, 0.1, Vector::zeros(1), None, None).is_err());
    }

    #[test]
    fn construction_checks() {
        let m = PlantModel::first_order(ScalarFn::SineLinear);
        assert!(FollowerPlant::new(m.clone(), 0.0, Vector::zeros(1), None, None).is_err());
        assert!(FollowerPlant::new(m.clone(), 0.1, Vector::zeros(2), None, None).is_err());
        assert!(FollowerPlant::new(m, 0.1, Vector::zeros(1), None, Some(-1.0)).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let eps = 1e-6;
        for f in [ScalarFn::Linear(-0.7), ScalarFn::SineLinear, ScalarFn::Robust] {
            for k in -40..=40 {
                let x = k as f64 * 0.25;
                let fd = (f.value(x + eps) - f.value(x - eps)) / (2.0 * eps);
                assert!((fd - f.derivative(x)).abs() < 1e-6, "{f:?} at {x}");
            }
        }
    }

    #[test]
    fn lipschitz_audit() {
        for (f, ell) in [
            (ScalarFn::Zero, 0.0),
            (ScalarFn::Linear(-2.0), 2.0),
            (ScalarFn::SineLinear, 1.1),
            (ScalarFn::Robust, ScalarFn::Robust.lipschitz(10.0)),
        ] {
            for k in 0..=200_000 {
                let x = -10.0 + 20.0 * k as f64 / 200_000.0;
                assert!(f.derivative(x).abs() <= ell + 1e-9, "{f:?} at {x}");
            }
        }
    }

    #[test]
    fn zero_equilibrium() {
        for f in [
            ScalarFn::Zero,
            ScalarFn::Linear(3.0),
            ScalarFn::SineLinear,
            ScalarFn::Robust,
        ] {
            assert_eq!(plant_rhs(&first(f), &[0.0], 0.0, 0.0)[0], 0.0);
        }
    }
}
