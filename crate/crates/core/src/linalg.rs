//! Small dense helpers on top of `nalgebra` dynamic matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 10_000;

/// Spectral norm (largest singular value) by power iteration on `AᵀA`.
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let ata = a.transpose() * a;
    let n = ata.ncols();
    // Non-symmetric start so we do not sit on a null direction of structured inputs.
    let mut x = Vector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let y = &ata * &x;
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = x.dot(&y);
        x = y / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs().max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub(crate) fn require_square(a: &Matrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::contract(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Eigenvalues of a real square matrix as `(re, im)` pairs.
///
/// Closed form for orders one and two, Schur decomposition otherwise.
pub fn eigenvalues(a: &Matrix) -> Vec<(f64, f64)> {
    match a.nrows() {
        0 => Vec::new(),
        1 => vec![(a[(0, 0)], 0.0)],
        2 => {
            let tr = a[(0, 0)] + a[(1, 1)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            let disc = tr * tr / 4.0 - det;
            if disc >= 0.0 {
                let r = disc.sqrt();
                vec![(tr / 2.0 + r, 0.0), (tr / 2.0 - r, 0.0)]
            } else {
                let r = (-disc).sqrt();
                vec![(tr / 2.0, r), (tr / 2.0, -r)]
            }
        }
        _ => a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|c| (c.re, c.im))
            .collect(),
    }
}
