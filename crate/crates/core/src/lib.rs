//! Periodic event-triggered cooperative output regulation of nonlinear
//! multi-agent systems with input delay.
//!
//! A leader exosystem drives a directed network of followers. Each follower
//! estimates the leader through an adaptive distributed observer fed by
//! event-triggered neighbour broadcasts, and compensates its own input delay
//! with a predictor-feedback controller. An optional sensor-side trigger and
//! filter reduce the measurement traffic as well.
//!
//! The [`engine`] wires everything into a deterministic fixed-step simulation.
//! Scenario files are described in [`config`].

pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod exosys;
pub mod history;
pub mod linalg;
pub mod observer;
pub mod petfilter;
pub mod plant;
pub mod predictor;
pub mod topology;

pub use config::{load_config, load_preset, parse_config, preset_text, ScenarioConfig, PRESETS};
pub use diagnostics::{decay_fit, trigger_stats, BacksteppingSnapshot, TriggerStats};
pub use engine::{run, Scenario, SimTrace, Simulation};
pub use error::{Error, Result};
pub use exosys::{expm, Exosystem};
pub use history::InputHistory;
pub use linalg::{Matrix, Vector};
pub use observer::{EventKind, ObserverInit, ObserverParams, ObserverState};
pub use petfilter::{FilterParams, FilterState};
pub use plant::{Disturbance, FollowerPlant, PlantModel, ScalarFn, Separable};
pub use predictor::{ControllerConfig, Prediction};
pub use topology::{max_sampling_bound, CommGraph, SamplingBound};
