//! Fixtures shared by the benchmarks.

use petreg::{
    load_preset, ControllerConfig, InputHistory, Matrix, PlantModel, ScalarFn, Scenario, Vector,
};

/// Rotation generator of the harmonic leader.
pub fn rotation() -> Matrix {
    Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
}

/// A well-conditioned dense matrix with entries in `[-scale, scale]`.
pub fn dense(n: usize, scale: f64) -> Matrix {
    Matrix::from_fn(n, n, |i, j| scale * ((7 * i + 3 * j + 1) as f64).sin())
}

/// Everything `predict` needs for one first-order follower at time `t`.
pub struct PredictFixture {
    pub model: PlantModel,
    pub x_hat: Vector,
    pub v_hat: Vector,
    pub s_hat: Matrix,
    pub hist: InputHistory,
    pub cfg: ControllerConfig,
    pub t: f64,
}

pub fn predict_fixture(nx: usize) -> PredictFixture {
    let (step, d) = (0.001, 0.15);
    let t = 1.0;
    let mut hist = InputHistory::new(step, 2.0 * d).unwrap();
    for k in 0..=1000 {
        let s = k as f64 * step;
        hist.push(s, (2.0 * s).cos()).unwrap();
    }
    PredictFixture {
        model: PlantModel::first_order(ScalarFn::SineLinear),
        x_hat: Vector::from_element(1, 0.3),
        v_hat: Vector::from_row_slice(&[0.8, -0.2]),
        s_hat: rotation(),
        hist,
        cfg: ControllerConfig::new(vec![-5.0], d, nx, 1.1).unwrap(),
        t,
    }
}

/// A bundled scenario cut to `t_end` seconds.
pub fn short_preset(name: &str, t_end: f64, diagnostics: bool) -> Scenario {
    let mut sc = load_preset(name).unwrap().1;
    sc.t_end = t_end;
    if diagnostics {
        sc.diagnostics.get_or_insert_with(Default::default);
    } else {
        sc.diagnostics = None;
    }
    sc
}
