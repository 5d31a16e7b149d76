//! Leader exosystem `v̇ = S v`, `y0 = F v` and the small-matrix exponential.

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Tolerance on the real parts of the leader eigenvalues.
pub const EIG_TOL: f64 = 1e-9;

const TAYLOR_ORDER: usize = 18;
const SCALED_NORM: f64 = 0.5;

/// `e^{A t}` by scaling and squaring with a truncated Taylor series.
///
/// The argument is scaled until its 1-norm is at most 0.5; the order-18
/// series then has a truncation error below machine precision.
pub fn expm(a: &Matrix, t: f64) -> Result<Matrix> {
    linalg::require_square(a, "expm argument")?;
    if !t.is_finite() || !linalg::is_finite(a) {
        return Err(Error::contract("expm input must be finite"));
    }
    let n = a.nrows();
    if t == 0.0 || n == 0 {
        return Ok(Matrix::identity(n, n));
    }
    let at = a * t;
    let norm = at.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max);
    let mut squarings = 0u32;
    if norm > SCALED_NORM {
        squarings = (norm / SCALED_NORM).log2().ceil() as u32;
    }
    let scaled = at / 2f64.powi(squarings as i32);

    // Horner form of sum_{k=0}^{m} X^k / k!
    let id = Matrix::identity(n, n);
    let mut acc = id.clone();
    for k in (1..=TAYLOR_ORDER).rev() {
        acc = &id + (&scaled * acc) / k as f64;
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    Ok(acc)
}

/// The leader: system matrix `S`, initial state `v0`, output row `F = [1, 0, ..., 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exosystem {
    s: Matrix,
    v0: Vector,
}

impl Exosystem {
    /// Builds the leader. A spectrum off the imaginary axis is reported as a
    /// warning only, so unstable or damped leaders can still be explored.
    pub fn new(s: Matrix, v0: Vector) -> Result<Self> {
        linalg::require_square(&s, "leader matrix S")?;
        if s.nrows() == 0 {
            return Err(Error::contract("leader dimension must be at least one"));
        }
        if v0.len() != s.nrows() {
            return Err(Error::contract(format!(
                "v0 has length {} but S is {}x{}",
                v0.len(),
                s.nrows(),
                s.ncols()
            )));
        }
        if !linalg::is_finite(&s) || v0.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("leader data must be finite"));
        }
        let exo = Exosystem { s, v0 };
        if !exo.is_marginally_stable() {
            warn!(
                "leader matrix has eigenvalues with real part beyond ±{EIG_TOL}: {:?}",
                linalg::eigenvalues(&exo.s)
            );
        }
        Ok(exo)
    }

    pub fn is_marginally_stable(&self) -> bool {
        linalg::eigenvalues(&self.s)
            .iter()
            .all(|(re, _)| re.abs() <= EIG_TOL)
    }

    pub fn s(&self) -> &Matrix {
        &self.s
    }

    pub fn v0(&self) -> &Vector {
        &self.v0
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Leader state and output at time `t`.
    pub fn leader_state(&self, t: f64) -> Result<(Vector, f64)> {
        if t < 0.0 {
            return Err(Error::contract(format!(
                "leader queried at negative time {t}"
            )));
        }
        let v = expm(&self.s, t)? * &self.v0;
        let y0 = output(&v);
        Ok((v, y0))
    }
}

/// `F v` with `F = [1, 0, ..., 0]`.
#[inline]
pub fn output(v: &Vector) -> f64 {
    v[0]
}

/// Row `F S^k` as a vector, for the shifted-state map of order-n plants.
pub fn output_row_power(s: &Matrix, k: usize) -> Vector {
    let n = s.nrows();
    let mut row = Vector::zeros(n);
    row[0] = 1.0;
    let st = s.transpose();
    for _ in 0..k {
        row = &st * row;
    }
    row
}
