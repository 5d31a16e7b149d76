//! Command-line front end: scenario resolution, outputs and reports.

pub mod output;
pub mod plot;

use std::fmt::Write;
use std::path::Path;

use anyhow::{Context, Result};
use petreg::config::{load_config, load_preset, preset_text};
use petreg::topology::max_sampling_bound;
use petreg::{Scenario, ScenarioConfig};

/// Loads `arg` as a file path, or as a bundled preset name if no such file exists.
pub fn resolve_config(arg: &str) -> Result<(ScenarioConfig, Scenario)> {
    let path = Path::new(arg);
    if !path.exists() && preset_text(arg).is_some() {
        return load_preset(arg).with_context(|| format!("preset {arg}"));
    }
    load_config(path).with_context(|| format!("loading {arg}"))
}

/// Sampling-period bound of the network against `κ T`.
pub fn bound_report(scenario: &Scenario) -> Result<String> {
    let b = max_sampling_bound(&scenario.graph, scenario.exo.dim())?;
    let kappa = scenario.observer_params.kappa();
    let t_max = scenario.graph.max_period();
    let mut out = String::new();
    writeln!(out, "M  = {:.6e}", b.m)?;
    writeln!(out, "M1 = {:.6e}", b.m1)?;
    writeln!(out, "M2 = {:.6e}", b.m2)?;
    writeln!(out, "M3 = {:.6e}", b.m3)?;
    writeln!(
        out,
        "kappa = {kappa}, T_max = {t_max}, kappa*T = {:.6e}",
        kappa * t_max
    )?;
    if b.admits(kappa, t_max) {
        writeln!(out, "verdict: pass (kappa*T <= M)")?;
    } else {
        writeln!(
            out,
            "verdict: warn (kappa*T > M; the sufficient condition does not certify this network)"
        )?;
    }
    Ok(out)
}
