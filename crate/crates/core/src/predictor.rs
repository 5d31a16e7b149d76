//! Predictor-feedback control law.
//!
//! The controller integrates the shifted plant model over the stored input
//! history to obtain `χ̂(x, t) ≈ X̄(t + D̂ x)` on a uniform grid in `x ∈ [0, 1]`
//! and applies `U(t) = K χ̂(1, t) + R(e^{Ŝ D̂} v̂, Ŝ)`.

use log::warn;

use crate::error::{Error, Result};
use crate::exosys::expm;
use crate::history::InputHistory;
use crate::linalg::{self, Matrix, Vector};
use crate::plant::PlantModel;

pub use crate::history::delayed_input;

/// Smallest admissible prediction grid.
pub const MIN_NX: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Feedback gain, one entry per plant state.
    pub k: Vec<f64>,
    /// Assumed input delay `D̂`.
    pub d_hat: f64,
    /// Number of prediction steps on `[0, 1]`.
    pub nx: usize,
    /// Lipschitz bound of the plant nonlinearity.
    pub ell: f64,
}

impl ControllerConfig {
    /// First-order gains must satisfy `ℓ + K < 0`. Higher-order gains are
    /// only checked for a Hurwitz companion matrix, with warnings.
    pub fn new(k: Vec<f64>, d_hat: f64, nx: usize, ell: f64) -> Result<Self> {
        if k.is_empty() || k.iter().any(|g| !g.is_finite()) {
            return Err(Error::contract(
                "controller gain must be non-empty and finite",
            ));
        }
        if !(d_hat > 0.0 && d_hat.is_finite()) {
            return Err(Error::contract(format!(
                "assumed delay must be positive, got {d_hat}"
            )));
        }
        if nx < MIN_NX {
            return Err(Error::contract(format!(
                "prediction grid needs nx >= {MIN_NX}, got {nx}"
            )));
        }
        if k.len() == 1 {
            if ell + k[0] >= 0.0 {
                return Err(Error::contract(format!(
                    "gain admissibility: ell + K = {} + {} must be negative",
                    ell, k[0]
                )));
            }
        } else {
            let depth = closed_loop_depth(&k);
            if depth <= 0.0 {
                warn!("gain {k:?} does not make the chain closed loop Hurwitz");
            } else if ell >= depth {
                warn!("Lipschitz bound {ell} is large relative to closed-loop pole depth {depth}");
            }
        }
        Ok(ControllerConfig { k, d_hat, nx, ell })
    }

    pub fn order(&self) -> usize {
        self.k.len()
    }
}

/// `-max Re(λ)` of the chain closed loop `ẋ = (A + e_n K) x`.
fn closed_loop_depth(k: &[f64]) -> f64 {
    let n = k.len();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for (j, &kj) in k.iter().enumerate() {
        a[(n - 1, j)] = kj;
    }
    -linalg::eigenvalues(&a)
        .iter()
        .map(|e| e.0)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Gain placing the chain closed-loop poles at the given real locations.
pub fn place_poles(poles: &[f64]) -> Vec<f64> {
    // coefficients of prod (s - p), lowest degree first, monic
    let mut c = vec![1.0];
    for &p in poles {
        let mut next = vec![0.0; c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i + 1] += ci;
            next[i] -= p * ci;
        }
        c = next;
    }
    c[..poles.len()].iter().map(|ci| -ci).collect()
}

/// `out[k] = F S^k w` for `k = 0..out.len()`.
fn output_powers(w: &[f64], s: &Matrix, out: &mut [f64]) {
    let nv = w.len();
    let mut p = w.to_vec();
    let mut q = vec![0.0; nv];
    let len = out.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = p[0];
        if k + 1 < len {
            for i in 0..nv {
                q[i] = (0..nv).map(|j| s[(i, j)] * p[j]).sum();
            }
            std::mem::swap(&mut p, &mut q);
        }
    }
}

/// `(F w, F S w, ..., F S^{n-1} w)`: the state whose output follows `F w`.
pub fn reference_state(w: &Vector, s: &Matrix, n: usize) -> Vector {
    let mut out = Vector::zeros(n);
    output_powers(w.as_slice(), s, out.as_mut_slice());
    out
}

/// Shifted nonlinearity `f̄(X̄, w) = a(X̄ + Φ(w)) - a(Φ(w))`, with `a` the
/// plant drift and `Φ` the reference state built from `s`.
pub fn f_bar(model: &PlantModel, x_bar: &Vector, w: &Vector, s: &Matrix) -> Vector {
    let n = model.order();
    let phi = reference_state(w, s, n);
    let shifted = x_bar + &phi;
    model.drift(shifted.as_slice()) - model.drift(phi.as_slice())
}

/// Full residual vector `Φ(S w) - a(Φ(w))`. Only the last entry is matched
/// by the input; the others vanish for chain plants.
fn residual_vec(model: &PlantModel, w: &Vector, s: &Matrix) -> Vector {
    let n = model.order();
    let phi = reference_state(w, s, n);
    let sw = s * w;
    reference_state(&sw, s, n) - model.drift(phi.as_slice())
}

/// Shifted-state vector field driven by the raw control `u`:
/// `f̄(X̄, w) + e_n (u - R(w, S))`, plus any unmatched residual.
pub fn shifted_rhs(model: &PlantModel, x_bar: &Vector, w: &Vector, s: &Matrix, u: f64) -> Vector {
    let mut dx = f_bar(model, x_bar, w, s) - residual_vec(model, w, s);
    let n = dx.len();
    dx[n - 1] += u;
    dx
}

/// `R(w, S) = F S^n w - f(F w, ..., F S^{n-1} w)`.
pub fn residual_r(model: &PlantModel, w: &Vector, s: &Matrix) -> f64 {
    let n = model.order();
    let mut powers = vec![0.0; n + 1];
    output_powers(w.as_slice(), s, &mut powers);
    let mut drift = vec![0.0; n];
    model.drift_into(&powers[..n], &mut drift);
    powers[n] - drift[n - 1]
}

/// Prediction over the `x` grid at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub t: f64,
    /// `χ̂(x_k)`, `k = 0..=nx`
    pub chi: Vec<Vector>,
    /// `e^{Ŝ D̂ x_k} v̂`
    pub w: Vec<Vector>,
    /// `ǔ(x_k) = U(t + (x_k - 1) D̂)`
    pub u_check: Vec<f64>,
    /// `û(x_k) = ǔ(x_k) - R(w_k, Ŝ)`
    pub u_hat: Vec<f64>,
}

impl Prediction {
    pub fn nx(&self) -> usize {
        self.chi.len() - 1
    }

    pub fn x(&self, k: usize) -> f64 {
        k as f64 / self.nx() as f64
    }

    pub fn chi_end(&self) -> &Vector {
        self.chi.last().expect("grid has nx + 1 points")
    }

    /// `R(e^{Ŝ D̂} v̂, Ŝ)`
    pub fn residual_end(&self) -> f64 {
        self.u_check[self.nx()] - self.u_hat[self.nx()]
    }
}

/// Marches `dχ̂/dx = D̂ (f̄(χ̂, e^{Ŝ D̂ x} v̂) + û(x, t))`, `χ̂(0) = X̂`, with the
/// classical four-stage scheme on `x_k = k / nx`.
pub fn predict(
    model: &PlantModel,
    x_hat: &Vector,
    v_hat: &Vector,
    s_hat: &Matrix,
    hist: &InputHistory,
    cfg: &ControllerConfig,
    t: f64,
) -> Result<Prediction> {
    let n = model.order();
    if x_hat.len() != n || cfg.order() != n {
        return Err(Error::contract(format!(
            "state of length {} and gain of length {} do not match plant order {n}",
            x_hat.len(),
            cfg.order()
        )));
    }
    let nx = cfg.nx;
    let half = 2 * nx;
    let d = cfg.d_hat;
    let nv = v_hat.len();

    // Half grid x_m = m / (2 nx): leader estimate w_m = e^{Ŝ D̂ x_m} v̂, history
    // ǔ_m, the reference state Φ(w_m) and the offset e_n ǔ_m - Φ(Ŝ w_m).
    // The offset uses f̄(χ, w) - residual = a(χ + Φ(w)) - Φ(Ŝ w).
    let step = expm(s_hat, d / half as f64)?;
    let mut w = vec![0.0; (half + 1) * nv];
    w[..nv].copy_from_slice(v_hat.as_slice());
    for m in 1..=half {
        let (prev, next) = w.split_at_mut(m * nv);
        let prev = &prev[(m - 1) * nv..];
        for i in 0..nv {
            next[i] = (0..nv).map(|j| step[(i, j)] * prev[j]).sum();
        }
    }
    let mut u_check = Vec::with_capacity(half + 1);
    for m in 0..=half {
        let x = m as f64 / half as f64;
        u_check.push(hist.value_at(t + (x - 1.0) * d)?);
    }
    let mut phi = vec![0.0; (half + 1) * n];
    let mut offset = vec![0.0; (half + 1) * n];
    let (mut p, mut q) = (vec![0.0; nv], vec![0.0; nv]);
    for m in 0..=half {
        p.copy_from_slice(&w[m * nv..(m + 1) * nv]);
        for k in 0..=n {
            if k < n {
                phi[m * n + k] = p[0];
            }
            if k >= 1 {
                offset[m * n + k - 1] = -p[0];
            }
            if k < n {
                for i in 0..nv {
                    q[i] = (0..nv).map(|j| s_hat[(i, j)] * p[j]).sum();
                }
                std::mem::swap(&mut p, &mut q);
            }
        }
        offset[m * n + n - 1] += u_check[m];
    }

    let mut shifted = vec![0.0; n];
    let rhs = |chi: &[f64], m: usize, shifted: &mut [f64], out: &mut [f64]| {
        for j in 0..n {
            shifted[j] = chi[j] + phi[m * n + j];
        }
        model.drift_into(shifted, out);
        for j in 0..n {
            out[j] = (out[j] + offset[m * n + j]) * d;
        }
    };

    let dx = 1.0 / nx as f64;
    let (mut k1, mut k2, mut k3, mut k4, mut stage) = (
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
        vec![0.0; n],
    );
    let mut chi = Vec::with_capacity(nx + 1);
    chi.push(x_hat.clone());
    for k in 0..nx {
        let c = chi[k].as_slice();
        rhs(c, 2 * k, &mut shifted, &mut k1);
        for j in 0..n {
            stage[j] = c[j] + k1[j] * (dx / 2.0);
        }
        rhs(&stage, 2 * k + 1, &mut shifted, &mut k2);
        for j in 0..n {
            stage[j] = c[j] + k2[j] * (dx / 2.0);
        }
        rhs(&stage, 2 * k + 1, &mut shifted, &mut k3);
        for j in 0..n {
            stage[j] = c[j] + k3[j] * dx;
        }
        rhs(&stage, 2 * k + 2, &mut shifted, &mut k4);
        let next = Vector::from_fn(n, |j, _| {
            c[j] + (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) * (dx / 6.0)
        });
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::PredictionOverflow { agent: 0, t });
        }
        chi.push(next);
    }

    // û = ǔ - R with R = F Ŝ^n w - a_n(Φ(w)) = -(offset_n - ǔ) - a_n(Φ(w))
    let mut u_hat = Vec::with_capacity(nx + 1);
    let mut drift = vec![0.0; n];
    for k in 0..=nx {
        let m = 2 * k;
        model.drift_into(&phi[m * n..(m + 1) * n], &mut drift);
        let r = -(offset[m * n + n - 1] - u_check[m]) - drift[n - 1];
        u_hat.push(u_check[m] - r);
    }
    Ok(Prediction {
        t,
        chi,
        w: (0..=nx)
            .map(|k| Vector::from_column_slice(&w[2 * k * nv..(2 * k + 1) * nv]))
            .collect(),
        u_check: (0..=nx).map(|k| u_check[2 * k]).collect(),
        u_hat,
    })
}

/// `U = K χ̂(1) + R`.
pub fn control_law(k: &[f64], chi_end: &Vector, residual: f64) -> f64 {
    k.iter()
        .zip(chi_end.iter())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        + residual
}

/// Controller output for a completed prediction.
pub fn control(pred: &Prediction, cfg: &ControllerConfig) -> f64 {
    control_law(&cfg.k, pred.chi_end(), pred.residual_end())
}
