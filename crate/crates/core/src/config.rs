//! Declarative scenario files (TOML) and the bundled presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{DEFAULT_LAMBDA_K, DEFAULT_LAMBDA_V};
use crate::engine::{DiagnosticsOptions, Scenario};
use crate::error::{Error, Result};
use crate::exosys::Exosystem;
use crate::linalg::{Matrix, Vector};
use crate::observer::{ObserverInit, ObserverParams};
use crate::petfilter::FilterParams;
use crate::plant::{Disturbance, FollowerPlant, PlantModel, ScalarFn, Separable};
use crate::predictor::ControllerConfig;
use crate::topology::CommGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub exosystem: ExosystemConfig,
    pub graph: GraphConfig,
    pub observer: ObserverConfig,
    pub agents: Vec<AgentConfig>,
    pub run: RunConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExosystemConfig {
    /// Row-major leader matrix.
    pub s: Vec<Vec<f64>>,
    pub v0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub followers: usize,
    /// Self-sampling period of each follower.
    pub self_periods: Vec<f64>,
    pub edges: Vec<EdgeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub from: usize,
    pub to: usize,
    #[serde(default = "one")]
    pub weight: f64,
    pub period: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    #[default]
    Zero,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub kappa1: f64,
    pub kappa2: f64,
    pub delta_s: f64,
    pub delta_v: f64,
    pub gamma_s: f64,
    pub gamma_v: f64,
    #[serde(default)]
    pub init: InitConfig,
}

/// Plant catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    FirstOrder(ScalarFn),
    /// One term per state channel, entering the last equation.
    Chain(Vec<ScalarFn>),
    /// Row `k` holds the terms of channel `k + 1`.
    StrictFeedback(Vec<Vec<ScalarFn>>),
}

impl PlantConfig {
    pub fn model(&self) -> PlantModel {
        match self {
            PlantConfig::FirstOrder(f) => PlantModel::first_order(*f),
            PlantConfig::Chain(fs) => PlantModel::Chain(Separable(fs.clone())),
            PlantConfig::StrictFeedback(rows) => {
                PlantModel::StrictFeedback(rows.iter().map(|r| Separable(r.clone())).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub plant: PlantConfig,
    pub delay: f64,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Disturbance>,
    pub controller: ControllerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub k: Vec<f64>,
    pub d_hat: f64,
    pub nx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub l: Vec<f64>,
    pub period: f64,
    pub delta_phi: f64,
    pub gamma_phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub t_end: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_lambda_v")]
    pub lambda_v: [f64; 4],
    #[serde(default = "default_lambda_k")]
    pub lambda_k: [f64; 5],
}

fn default_lambda_v() -> [f64; 4] {
    DEFAULT_LAMBDA_V
}

fn default_lambda_k() -> [f64; 5] {
    DEFAULT_LAMBDA_K
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            enabled: false,
            lambda_v: DEFAULT_LAMBDA_V,
            lambda_k: DEFAULT_LAMBDA_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "one_usize")]
    pub csv_stride: usize,
    #[serde(default)]
    pub plots: bool,
}

fn default_dir() -> String {
    "out".into()
}

fn one_usize() -> usize {
    1
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            csv_stride: 1,
            plots: false,
        }
    }
}

/// Parses TOML text. `origin` names the source in error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<ScenarioConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: e.message().to_string(),
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Parse {
            path: if path == "." {
                origin.to_string()
            } else {
                format!("{origin}: {path}")
            },
            message: e.into_inner().message().to_string(),
        }
    })
}

fn matrix_from_rows(rows: &[Vec<f64>], path: &str) -> Result<Matrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(path, "must be a non-empty square matrix"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(path, "entries must be finite"));
    }
    Ok(Matrix::from_row_slice(n, n, &flat))
}

fn at(path: String) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Contract(m)
        | Error::Structural(m)
        | Error::Scheduling(m)
        | Error::Solvability(m) => Error::config(path.clone(), m),
        other => other,
    }
}

impl ScenarioConfig {
    /// Validates the file contents and assembles the runnable scenario.
    pub fn build(&self) -> Result<Scenario> {
        let s = matrix_from_rows(&self.exosystem.s, "exosystem.s")?;
        if self.exosystem.v0.len() != s.nrows() {
            return Err(Error::config(
                "exosystem.v0",
                format!("must have {} entries", s.nrows()),
            ));
        }
        let exo = Exosystem::new(s, Vector::from_column_slice(&self.exosystem.v0))
            .map_err(at("exosystem".into()))?;

        let n = self.graph.followers;
        if n == 0 {
            return Err(Error::config("graph.followers", "must be at least 1"));
        }
        if self.graph.self_periods.len() != n {
            return Err(Error::config(
                "graph.self_periods",
                format!("must have {n} entries"),
            ));
        }
        let mut graph = CommGraph::new(n);
        for (i, &p) in self.graph.self_periods.iter().enumerate() {
            graph
                .set_self_period(i + 1, p)
                .map_err(at(format!("graph.self_periods[{i}]")))?;
        }
        for (k, e) in self.graph.edges.iter().enumerate() {
            graph
                .add_edge(e.from, e.to, e.weight, e.period)
                .map_err(at(format!("graph.edges[{k}]")))?;
        }
        graph.validate().map_err(at("graph".into()))?;

        let o = &self.observer;
        let observer_params = ObserverParams::new(
            o.kappa1, o.kappa2, o.delta_s, o.delta_v, o.gamma_s, o.gamma_v,
        )
        .map_err(at("observer".into()))?;

        if self.agents.len() != n {
            return Err(Error::config(
                "agents",
                format!("must list {n} followers, got {}", self.agents.len()),
            ));
        }
        let mut plants = Vec::with_capacity(n);
        let mut controller_cfgs = Vec::with_capacity(n);
        let mut filter_params = Vec::with_capacity(n);
        for (i, a) in self.agents.iter().enumerate() {
            let path = format!("agents[{i}]");
            let plant = FollowerPlant::new(
                a.plant.model(),
                a.delay,
                Vector::from_column_slice(&a.x0),
                a.disturbance,
                a.ell,
            )
            .map_err(at(path.clone()))?;
            let c = &a.controller;
            let cfg = ControllerConfig::new(c.k.clone(), c.d_hat, c.nx, plant.ell)
                .map_err(at(format!("{path}.controller")))?;
            let filter = a
                .filter
                .as_ref()
                .map(|f| FilterParams::new(f.l.clone(), f.period, f.delta_phi, f.gamma_phi))
                .transpose()
                .map_err(at(format!("{path}.filter")))?;
            plants.push(plant);
            controller_cfgs.push(cfg);
            filter_params.push(filter);
        }

        let scenario = Scenario {
            exo,
            graph,
            plants,
            controller_cfgs,
            observer_params,
            observer_init: match o.init {
                InitConfig::Zero => ObserverInit::Zero,
                InitConfig::Exact => ObserverInit::Exact,
            },
            filter_params,
            t_end: self.run.t_end,
            h: self.run.h,
            diagnostics: self.diagnostics.enabled.then_some(DiagnosticsOptions {
                lambda_v: self.diagnostics.lambda_v,
                lambda_k: self.diagnostics.lambda_k,
            }),
        };
        scenario.validate().map_err(at("run".into()))?;
        Ok(scenario)
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_config(path: impl AsRef<Path>) -> Result<(ScenarioConfig, Scenario)> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: origin.clone(),
        message: e.to_string(),
    })?;
    let cfg = parse_config(&text, &origin)?;
    let scenario = cfg.build()?;
    Ok((cfg, scenario))
}

/// Bundled scenario files, by name.
pub const PRESETS: &[(&str, &str)] = &[
    (
        "s1_no_mismatch",
        include_str!("../presets/s1_no_mismatch.toml"),
    ),
    ("s2_mismatch", include_str!("../presets/s2_mismatch.toml")),
    (
        "s3_hetero_delay",
        include_str!("../presets/s3_hetero_delay.toml"),
    ),
    ("s4_petm_b", include_str!("../presets/s4_petm_b.toml")),
    (
        "s5_robust_disturbance",
        include_str!("../presets/s5_robust_disturbance.toml"),
    ),
    (
        "s6_second_order",
        include_str!("../presets/s6_second_order.toml"),
    ),
];

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn load_preset(name: &str) -> Result<(ScenarioConfig, Scenario)> {
    let text = preset_text(name).ok_or_else(|| Error::Parse {
        path: name.to_string(),
        message: "no such preset".into(),
    })?;
    let cfg = parse_config(text, name)?;
    let scenario = cfg.build()?;
    Ok((cfg, scenario))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for (name, _) in PRESETS {
            let (cfg, sc) = load_preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, *name);
            assert_eq!(sc.followers(), 4);
        }
    }

    #[test]
    fn no_mismatch_preset_values() {
        let (_, sc) = load_preset("s1_no_mismatch").unwrap();
        for (p, c) in sc.plants.iter().zip(&sc.controller_cfgs) {
            assert_eq!(p.delay, 0.15);
            assert_eq!(c.d_hat, 0.15);
            assert_eq!(c.k, vec![-5.0]);
        }
        assert_eq!(sc.observer_params.kappa1, 3.0);
        assert_eq!(sc.graph.period(1, 0), Some(0.01));
        assert_eq!(sc.graph.period(3, 3), Some(0.02));
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(
            parse_config("", "empty.toml"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let text = preset_text("s1_no_mismatch")
            .unwrap()
            .replace("kappa1 = 3.0", "kappa1 = 3.0\nkapa = 1.0");
        match parse_config(&text, "x.toml") {
            Err(Error::Parse { path, message }) => {
                assert!(path.contains("observer"), "{path}");
                assert!(message.contains("kapa"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inadmissible_gain_is_rejected() {
        let mut cfg = parse_config(preset_text("s1_no_mismatch").unwrap(), "s1").unwrap();
        cfg.agents[2].controller.k = vec![-1.0];
        match cfg.build() {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "agents[2].controller");
                assert!(message.contains("gain admissibility"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn step_not_dividing_periods_is_rejected() {
        let mut cfg = parse_config(preset_text("s1_no_mismatch").unwrap(), "s1").unwrap();
        cfg.run.h = 0.003;
        assert!(matches!(cfg.build(), Err(Error::Config { .. })));
    }

    #[test]
    fn serialization_round_trips() {
        let cfg = parse_config(preset_text("s4_petm_b").unwrap(), "s4").unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(parse_config(&text, "again").unwrap(), cfg);
    }
}
