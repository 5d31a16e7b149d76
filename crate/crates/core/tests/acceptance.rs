//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use petreg::history::InputHistory;
use petreg::linalg::spectral_norm;
use petreg::predictor::predict;
use petreg::{
    decay_fit, expm, load_preset, max_sampling_bound, run, trigger_stats, CommGraph,
    ControllerConfig, Matrix, PlantModel, ScalarFn, Scenario, SimTrace, Vector,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn preset(name: &str) -> Scenario {
    load_preset(name)
        .unwrap_or_else(|e| panic!("{name}: {e}"))
        .1
}

fn simulate(sc: &Scenario, label: &str) -> Result<SimTrace, String> {
    let start = Instant::now();
    let tr = run(sc).map_err(|e| format!("{label}: {e}"))?;
    eprintln!("  ran {label} in {:.1} s", start.elapsed().as_secs_f64());
    Ok(tr)
}

fn observer_convergence(tr: &SimTrace) -> Outcome {
    let late = tr.max_observer_error(10.0, f64::INFINITY);
    let (rate, _) =
        decay_fit(&tr.times, &tr.observer_error(), (2.0, 10.0)).map_err(|e| e.to_string())?;
    check(
        late < 1e-2 && rate < -0.1,
        format!("max error for t >= 10 s = {late:.3e}, decay rate over [2, 10] s = {rate:.3}"),
    )
}

fn network_economy(tr: &SimTrace) -> Outcome {
    let stats = trigger_stats(tr);
    let ratio = stats.network_ratio();
    check(
        ratio < 0.10,
        format!(
            "{} events over {} sampling instants, ratio {ratio:.4}",
            stats.network_events(),
            stats.network_samples()
        ),
    )
}

fn regulation(tr: &SimTrace, from: f64, bound: f64) -> Outcome {
    let sup = tr.max_abs_error(from, f64::INFINITY);
    check(
        sup < bound,
        format!("max |e| for t >= {from} s = {sup:.3e} (bound {bound})"),
    )
}

fn mismatch(tr: &SimTrace) -> Outcome {
    let late = tr.max_abs_error(20.0, 30.0);
    let early = tr.max_abs_error(15.0, 20.0);
    let tail = tr.max_abs_error(25.0, 30.0);
    check(
        late < 0.5 && tail <= early + 1e-3,
        format!(
            "sup over [20,30] = {late:.3e}; sup [25,30] = {tail:.3e} vs sup [15,20] = {early:.3e}"
        ),
    )
}

fn petm_b(tr: &SimTrace) -> Outcome {
    let sup = tr.max_abs_error(25.0, f64::INFINITY);
    let stats = trigger_stats(tr);
    let (events, samples) = (stats.sensor_events(), stats.sensor_samples());
    check(
        sup < 0.05 && stats.sensor_ratio() < 1.0 && events < samples,
        format!(
            "max |e| for t >= 25 s = {sup:.3e}; {events} sensor events over {samples} instants, ratio {:.4}",
            stats.sensor_ratio()
        ),
    )
}

fn disturbance(tr: &SimTrace) -> Outcome {
    let sup = tr.max_abs_error(20.0, 30.0);
    check(
        sup < 0.3,
        format!("sup over [20,30] of max |e| = {sup:.3e}"),
    )
}

/// `χ(1) = e^{a D} X + ∫_0^D e^{a θ} sin(t - θ) dθ` for `Ẋ = a X + U` with
/// `U(s) = sin s`, via `Im[e^{i t} (e^{(a - i) D} - 1) / (a - i)]`.
fn predictor_oracle() -> Outcome {
    let (a, d, t, x0) = (1.0, 0.4, 3.0, 0.7);
    let step = 1e-4;
    let mut hist = InputHistory::new(step, 1.0).map_err(|e| e.to_string())?;
    let mut k = 0;
    while k as f64 * step <= t + 1e-12 {
        let s = k as f64 * step;
        hist.push(s, s.sin()).map_err(|e| e.to_string())?;
        k += 1;
    }
    let model = PlantModel::first_order(ScalarFn::Linear(a));
    let cfg = ControllerConfig::new(vec![-2.0], d, 200, a).map_err(|e| e.to_string())?;
    let zero_s = Matrix::zeros(2, 2);
    let zero_v = Vector::zeros(2);
    let pred = predict(
        &model,
        &Vector::from_element(1, x0),
        &zero_v,
        &zero_s,
        &hist,
        &cfg,
        t,
    )
    .map_err(|e| e.to_string())?;

    // complex arithmetic by hand: z = (e^{(a - i) D} - 1) / (a - i)
    let (er, ei) = ((a * d).exp() * d.cos(), -(a * d).exp() * d.sin());
    let (nr, ni) = (er - 1.0, ei);
    let den = a * a + 1.0;
    let (zr, zi) = ((nr * a - ni) / den, (ni * a + nr) / den);
    let integral = t.sin() * zr + t.cos() * zi;
    let exact = (a * d).exp() * x0 + integral;
    let err = (pred.chi_end()[0] - exact).abs();
    check(
        err < 1e-6,
        format!("|chi(1) - closed form| = {err:.3e} at Nx = 200"),
    )
}

/// Order-30 truncated exponential series.
fn series_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=30 {
        term = &term * a / k as f64;
        sum += &term;
    }
    sum
}

fn expm_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let raw = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let target = rng.random_range(0.05..2.0);
        let a = &raw * (target / spectral_norm(&raw));
        let got = expm(&a, 1.0).map_err(|e| e.to_string())?;
        let want = series_exp(&a);
        worst = worst.max((got - &want).norm() / want.norm());
    }
    check(
        worst < 1e-10,
        format!("worst relative error over 100 cases = {worst:.3e}"),
    )
}

fn scalar_bound() -> Outcome {
    let mut g = CommGraph::new(1);
    g.add_edge(0, 1, 1.0, 0.01).map_err(|e| e.to_string())?;
    g.set_self_period(1, 0.01).map_err(|e| e.to_string())?;
    let b = max_sampling_bound(&g, 1).map_err(|e| e.to_string())?;
    let errs = [
        (b.m1 - 1.0 / 56.0).abs(),
        (b.m2 - 1.0 / 3.0).abs(),
        (b.m3 - (1.0f64 / 21.0).sqrt()).abs(),
        (b.m - 1.0 / 56.0).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    check(
        worst < 1e-12,
        format!(
            "M1 = {:.15}, M2 = {:.15}, M3 = {:.15}, M = {:.15}; worst error {worst:.1e}",
            b.m1, b.m2, b.m3, b.m
        ),
    )
}

fn lyapunov_monitor(tr: &SimTrace) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for a in &tr.agents {
        if a.lyapunov.len() != tr.len() {
            return Err(format!("agent {}: diagnostics missing", a.agent));
        }
        let v: Vec<f64> = a.lyapunov.iter().map(|s| s.total).collect();
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let (slope, _) = decay_fit(&tr.times, &v, (5.0, 25.0)).map_err(|e| e.to_string())?;
        let w_late = tr
            .times
            .iter()
            .zip(&a.w_end)
            .filter(|(t, _)| **t >= 10.0)
            .map(|(_, w)| w.abs())
            .fold(0.0, f64::max);
        ok &= min >= 0.0 && slope < 0.0 && w_late <= 1e-3;
        details.push(format!(
            "agent {}: min V = {min:.2e}, slope = {slope:.3}, max |w(1)| = {w_late:.1e}",
            a.agent
        ));
    }
    check(ok, details.join("; "))
}

fn determinism_and_refinement(s1: &SimTrace) -> Outcome {
    let again = simulate(&preset("s1_no_mismatch"), "s1_no_mismatch (repeat)")?;
    let identical = &again == s1;

    let coarse_sc = preset("s3_hetero_delay");
    let mut fine_sc = coarse_sc.clone();
    fine_sc.h = coarse_sc.h / 2.0;
    let coarse = simulate(&coarse_sc, "s3_hetero_delay")?;
    let fine = simulate(&fine_sc, "s3_hetero_delay (h/2)")?;
    let diff = coarse
        .final_states()
        .iter()
        .zip(fine.final_states())
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    check(
        identical && diff < 1e-4,
        format!(
            "repeat run bit-identical: {identical}; final-state change on halving h = {diff:.3e}"
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();

    let s1 = {
        let mut sc = preset("s1_no_mismatch");
        sc.diagnostics.get_or_insert_with(Default::default);
        simulate(&sc, "s1_no_mismatch")
    };
    let with = |tr: &Result<SimTrace, String>, f: &dyn Fn(&SimTrace) -> Outcome| match tr {
        Ok(t) => f(t),
        Err(e) => Err(e.clone()),
    };
    results.push((1, "observer convergence", with(&s1, &observer_convergence)));
    results.push((2, "network trigger economy", with(&s1, &network_economy)));
    results.push((
        3,
        "no-mismatch regulation",
        with(&s1, &|t| regulation(t, 20.0, 0.05)),
    ));

    let s2 = simulate(&preset("s2_mismatch"), "s2_mismatch");
    results.push((4, "mismatch boundedness", with(&s2, &mismatch)));

    let s3 = simulate(&preset("s3_hetero_delay"), "s3_hetero_delay");
    results.push((
        5,
        "heterogeneous delays",
        with(&s3, &|t| regulation(t, 20.0, 0.05)),
    ));

    let s4 = simulate(&preset("s4_petm_b"), "s4_petm_b");
    results.push((6, "sensor-side triggering", with(&s4, &petm_b)));

    let s5 = simulate(&preset("s5_robust_disturbance"), "s5_robust_disturbance");
    results.push((7, "disturbance robustness", with(&s5, &disturbance)));

    results.push((8, "predictor oracle", predictor_oracle()));
    results.push((9, "matrix exponential oracle", expm_oracle()));
    results.push((10, "scalar sampling bound", scalar_bound()));
    results.push((11, "Lyapunov monitor", with(&s1, &lyapunov_monitor)));
    results.push((
        12,
        "determinism and step refinement",
        with(&s1, &determinism_and_refinement),
    ));

    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  criterion {id:>2} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {id:>2} ({name}): {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
