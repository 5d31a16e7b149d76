//! Fixed-step closed-loop simulation.
//!
//! Time is an integer tick counter on the master grid `t = k h`. Each tick
//! runs, in order: network trigger checks, sensor sampling, controller
//! evaluation (appending `U(t)` to the input history), diagnostics and trace
//! recording, then one classical four-stage step over `[t, t + h]` with all
//! held and broadcast quantities frozen.

use crate::diagnostics::{
    backstepping_snapshot, lyapunov_calv, lyapunov_v, DerivativeBuffer, KrasovskiiSample,
    LyapunovSample, DEFAULT_LAMBDA_K, DEFAULT_LAMBDA_V,
};
use crate::error::{Error, Result};
use crate::exosys::{self, expm, Exosystem};
use crate::history::InputHistory;
use crate::linalg::{Matrix, Vector};
use crate::observer::{
    consensus_rhs, evaluate_trigger, BroadcastRecord, EventKind, NeighborTerm, ObserverInit,
    ObserverParams, ObserverState,
};
use crate::petfilter::{filter_rhs_with_input, sensor_sample, FilterParams, FilterState};
use crate::plant::{plant_rhs, FollowerPlant};
use crate::predictor::{control, predict, reference_state, ControllerConfig};
use crate::topology::{CommGraph, LEADER};

/// Relative tolerance for periods being integer multiples of the master step.
pub const GRID_TOL: f64 = 1e-12;

/// Lyapunov weights used by the runtime monitors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsOptions {
    pub lambda_v: [f64; 4],
    pub lambda_k: [f64; 5],
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions {
            lambda_v: DEFAULT_LAMBDA_V,
            lambda_k: DEFAULT_LAMBDA_K,
        }
    }
}

/// Everything needed to run one closed loop. Follower `i` (1-based in the
/// graph) uses entry `i - 1` of the per-follower vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub exo: Exosystem,
    pub graph: CommGraph,
    pub plants: Vec<FollowerPlant>,
    pub controller_cfgs: Vec<ControllerConfig>,
    pub observer_params: ObserverParams,
    pub observer_init: ObserverInit,
    /// `Some` switches the sensor-side trigger and filter on for that follower.
    pub filter_params: Vec<Option<FilterParams>>,
    pub t_end: f64,
    pub h: f64,
    pub diagnostics: Option<DiagnosticsOptions>,
}

/// Number of master steps in `period`, if `period` is a multiple of `h`.
pub fn ticks_per(period: f64, h: f64) -> Option<u64> {
    let k = (period / h).round();
    if k >= 1.0 && (period - k * h).abs() <= GRID_TOL * period {
        Some(k as u64)
    } else {
        None
    }
}

impl Scenario {
    pub fn followers(&self) -> usize {
        self.graph.followers()
    }

    /// Number of integration steps to `t_end`.
    pub fn steps(&self) -> Result<u64> {
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::contract(format!(
                "t_end must be >= 0, got {}",
                self.t_end
            )));
        }
        let k = (self.t_end / self.h).round();
        if (self.t_end - k * self.h).abs() > 1e-9 * self.h.max(self.t_end) {
            return Err(Error::Scheduling(format!(
                "t_end {} is not a multiple of h {}",
                self.t_end, self.h
            )));
        }
        Ok(k as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.followers();
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::contract(format!(
                "master step must be positive, got {}",
                self.h
            )));
        }
        self.graph.validate()?;
        if self.plants.len() != n
            || self.controller_cfgs.len() != n
            || self.filter_params.len() != n
        {
            return Err(Error::contract(format!(
                "expected {n} plants, controllers and filter slots, got {}, {}, {}",
                self.plants.len(),
                self.controller_cfgs.len(),
                self.filter_params.len()
            )));
        }
        let nv = self.exo.dim();
        if self.graph.adjacency().nrows() != n + 1 {
            return Err(Error::contract(
                "adjacency size does not match follower count",
            ));
        }
        let mut periods: Vec<(String, f64)> = self
            .graph
            .pairs()
            .iter()
            .map(|p| (format!("T[{},{}]", p.receiver, p.sender), p.period))
            .collect();
        for (i, (plant, cfg)) in self.plants.iter().zip(&self.controller_cfgs).enumerate() {
            if cfg.order() != plant.order() {
                return Err(Error::contract(format!(
                    "follower {}: gain has {} entries, plant order is {}",
                    i + 1,
                    cfg.order(),
                    plant.order()
                )));
            }
            if plant.model.order() > 1 && nv < 2 {
                log::warn!(
                    "follower {}: high-order plant driven by a scalar leader",
                    i + 1
                );
            }
            if let Some(fp) = &self.filter_params[i] {
                if fp.l.len() != plant.order() {
                    return Err(Error::contract(format!(
                        "follower {}: filter gain has {} entries, plant order is {}",
                        i + 1,
                        fp.l.len(),
                        plant.order()
                    )));
                }
                if (cfg.d_hat - plant.delay).abs() > 0.0 {
                    log::warn!(
                        "follower {}: sensor filter with delay mismatch is exploratory",
                        i + 1
                    );
                }
                periods.push((format!("sensor[{}]", i + 1), fp.period));
            }
        }
        for (name, period) in &periods {
            match ticks_per(*period, self.h) {
                Some(k) if k >= 2 => {}
                Some(_) => {
                    return Err(Error::Scheduling(format!(
                        "master step {} must be at most half of period {name} = {period}",
                        self.h
                    )))
                }
                None => {
                    return Err(Error::Scheduling(format!(
                        "master step {} does not divide period {name} = {period}",
                        self.h
                    )))
                }
            }
        }
        self.steps()?;
        Ok(())
    }
}

/// One broadcast on the agent network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetEvent {
    pub t: f64,
    pub sender: usize,
    pub receiver: usize,
    pub kind: EventKind,
    pub deviation: f64,
    pub threshold: f64,
}

/// One sensor-to-controller transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorEvent {
    pub t: f64,
    pub agent: usize,
    pub phi: f64,
    pub deviation: f64,
    pub threshold: f64,
}

/// A directed pair and how many sampling instants it had.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelInfo {
    pub receiver: usize,
    pub sender: usize,
    pub period: f64,
    pub samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorInfo {
    pub agent: usize,
    pub period: f64,
    pub samples: u64,
}

/// Per-follower series, flattened row-major on the master grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrace {
    pub agent: usize,
    pub order: usize,
    pub nv: usize,
    pub x: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub u: Vec<f64>,
    pub e: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub s_hat: Vec<f64>,
    /// Measurement seen by the sensor; present when the filter is on.
    pub phi: Option<Vec<f64>>,
    pub chi_end: Vec<f64>,
    pub w_end: Vec<f64>,
    pub lyapunov: Vec<LyapunovSample>,
    pub krasovskii: Vec<KrasovskiiSample>,
}

impl AgentTrace {
    fn new(agent: usize, order: usize, nv: usize, filtered: bool, rows: usize) -> Self {
        AgentTrace {
            agent,
            order,
            nv,
            x: Vec::with_capacity(rows * order),
            x_hat: Vec::with_capacity(rows * order),
            u: Vec::with_capacity(rows),
            e: Vec::with_capacity(rows),
            v_hat: Vec::with_capacity(rows * nv),
            s_hat: Vec::with_capacity(rows * nv * nv),
            phi: filtered.then(|| Vec::with_capacity(rows)),
            chi_end: Vec::with_capacity(rows * order),
            w_end: Vec::new(),
            lyapunov: Vec::new(),
            krasovskii: Vec::new(),
        }
    }

    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.order..(k + 1) * self.order]
    }

    pub fn x_hat_at(&self, k: usize) -> &[f64] {
        &self.x_hat[k * self.order..(k + 1) * self.order]
    }

    pub fn v_hat_at(&self, k: usize) -> &[f64] {
        &self.v_hat[k * self.nv..(k + 1) * self.nv]
    }

    pub fn s_hat_at(&self, k: usize) -> &[f64] {
        let m = self.nv * self.nv;
        &self.s_hat[k * m..(k + 1) * m]
    }

    pub fn chi_end_at(&self, k: usize) -> &[f64] {
        &self.chi_end[k * self.order..(k + 1) * self.order]
    }
}

/// Complete record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub h: f64,
    pub times: Vec<f64>,
    pub nv: usize,
    /// Leader state `v(t)`, row-major.
    pub leader: Vec<f64>,
    pub agents: Vec<AgentTrace>,
    pub net_events: Vec<NetEvent>,
    pub sensor_events: Vec<SensorEvent>,
    pub channels: Vec<ChannelInfo>,
    pub sensors: Vec<SensorInfo>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn leader_at(&self, k: usize) -> &[f64] {
        &self.leader[k * self.nv..(k + 1) * self.nv]
    }

    /// Leader output `y_0 = F v`.
    pub fn y0(&self, k: usize) -> f64 {
        self.leader[k * self.nv]
    }

    fn rows_in(&self, from: f64, to: f64) -> impl Iterator<Item = usize> + '_ {
        let eps = 1e-9 * self.h;
        self.times
            .iter()
            .enumerate()
            .filter(move |(_, t)| **t >= from - eps && **t <= to + eps)
            .map(|(k, _)| k)
    }

    /// `sup_{t ∈ [from, to]} max_i |e_i(t)|`.
    pub fn max_abs_error(&self, from: f64, to: f64) -> f64 {
        self.rows_in(from, to)
            .flat_map(|k| self.agents.iter().map(move |a| a.e[k].abs()))
            .fold(0.0, f64::max)
    }

    /// `max_i ‖v̂_i(t_k) - v(t_k)‖` at every row.
    pub fn observer_error(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let v = self.leader_at(k);
                self.agents
                    .iter()
                    .map(|a| {
                        a.v_hat_at(k)
                            .iter()
                            .zip(v)
                            .map(|(p, q)| (p - q) * (p - q))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    /// Largest observer error over `[from, to]`.
    pub fn max_observer_error(&self, from: f64, to: f64) -> f64 {
        let err = self.observer_error();
        self.rows_in(from, to).map(|k| err[k]).fold(0.0, f64::max)
    }

    pub fn final_states(&self) -> Vec<&[f64]> {
        let k = self.len() - 1;
        self.agents.iter().map(|a| a.x_at(k)).collect()
    }
}

/// Continuous states of one follower.
#[derive(Debug, Clone)]
struct AgentVars {
    x: Vector,
    obs: ObserverState,
    x_hat: Option<Vector>,
}

impl AgentVars {
    /// `self + c * d`
    fn offset(&self, d: &AgentVars, c: f64) -> AgentVars {
        AgentVars {
            x: &self.x + &d.x * c,
            obs: ObserverState {
                s_hat: &self.obs.s_hat + &d.obs.s_hat * c,
                v_hat: &self.obs.v_hat + &d.obs.v_hat * c,
            },
            x_hat: self
                .x_hat
                .as_ref()
                .zip(d.x_hat.as_ref())
                .map(|(a, b)| a + b * c),
        }
    }

    fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
            && self.obs.is_finite()
            && self
                .x_hat
                .as_ref()
                .is_none_or(|x| x.iter().all(|v| v.is_finite()))
    }
}

struct Channel {
    receiver: usize,
    sender: usize,
    period: f64,
    period_ticks: u64,
    record: BroadcastRecord,
    half_step: Matrix,
    full_step: Matrix,
    /// Held estimate at `t`, `t + h/2`, `t + h`.
    held: [Vector; 3],
}

impl Channel {
    fn set_record(&mut self, record: BroadcastRecord, h: f64) -> Result<()> {
        self.half_step = expm(&record.s_snapshot, h / 2.0)?;
        self.full_step = expm(&record.s_snapshot, h)?;
        self.record = record;
        Ok(())
    }

    fn refresh_stages(&mut self) {
        self.held[1] = &self.half_step * &self.held[0];
        self.held[2] = &self.full_step * &self.held[0];
    }
}

struct Follower {
    plant: FollowerPlant,
    cfg: ControllerConfig,
    filter: Option<(FilterParams, FilterState, u64)>,
    vars: AgentVars,
    hist: InputHistory,
    self_channel: usize,
    in_channels: Vec<(usize, f64)>,
    tilde_rate: Option<DerivativeBuffer>,
    hat_rate: Option<DerivativeBuffer>,
}

/// Stateful closed loop. [`run`] drives it to `t_end`.
pub struct Simulation {
    scenario: Scenario,
    tick: u64,
    steps: u64,
    leader_s: Matrix,
    channels: Vec<Channel>,
    followers: Vec<Follower>,
    trace: SimTrace,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let steps = scenario.steps()?;
        let h = scenario.h;
        let nv = scenario.exo.dim();
        let leader_s = scenario.exo.s().clone();
        let v0 = scenario.exo.v0().clone();
        let rows = steps as usize + 1;

        let mut followers = Vec::with_capacity(scenario.followers());
        for (i, (plant, cfg)) in scenario
            .plants
            .iter()
            .zip(&scenario.controller_cfgs)
            .enumerate()
        {
            let obs = match scenario.observer_init {
                ObserverInit::Zero => ObserverState::zeros(nv),
                ObserverInit::Exact => ObserverState {
                    s_hat: leader_s.clone(),
                    v_hat: v0.clone(),
                },
            };
            let window = plant.delay.max(cfg.d_hat) + 2.0 * h;
            let filter = scenario.filter_params[i].clone();
            let (tilde_rate, hat_rate) = match (&filter, &scenario.diagnostics) {
                (Some(fp), Some(_)) => (
                    Some(DerivativeBuffer::new(h, fp.period)),
                    Some(DerivativeBuffer::new(h, fp.period)),
                ),
                _ => (None, None),
            };
            followers.push(Follower {
                plant: plant.clone(),
                cfg: cfg.clone(),
                filter: filter.map(|fp| {
                    let ticks = ticks_per(fp.period, h).expect("validated");
                    let fs = FilterState::new(Vector::zeros(plant.order()), 0.0);
                    (fp, fs, ticks)
                }),
                vars: AgentVars {
                    x: plant.x0.clone(),
                    obs,
                    x_hat: None,
                },
                hist: InputHistory::new(h, window)?,
                self_channel: usize::MAX,
                in_channels: Vec::new(),
                tilde_rate,
                hat_rate,
            });
        }

        let mut net_events = Vec::new();
        let mut channels = Vec::new();
        let leader_obs = ObserverState {
            s_hat: leader_s.clone(),
            v_hat: v0.clone(),
        };
        for p in scenario.graph.pairs() {
            let sender_state = if p.sender == LEADER {
                &leader_obs
            } else {
                &followers[p.sender - 1].vars.obs
            };
            let record = BroadcastRecord::capture(0.0, sender_state);
            let held0 = record.v_snapshot.clone();
            let mut ch = Channel {
                receiver: p.receiver,
                sender: p.sender,
                period: p.period,
                period_ticks: ticks_per(p.period, h).expect("validated"),
                record: record.clone(),
                half_step: Matrix::identity(nv, nv),
                full_step: Matrix::identity(nv, nv),
                held: [held0.clone(), held0.clone(), held0],
            };
            ch.set_record(record, h)?;
            let idx = channels.len();
            let f = &mut followers[p.receiver - 1];
            if p.is_self() {
                f.self_channel = idx;
            } else {
                f.in_channels
                    .push((idx, scenario.graph.weight(p.receiver, p.sender)));
            }
            net_events.push(NetEvent {
                t: 0.0,
                sender: p.sender,
                receiver: p.receiver,
                kind: EventKind::Init,
                deviation: 0.0,
                threshold: 0.0,
            });
            channels.push(ch);
        }
        for (i, f) in followers.iter().enumerate() {
            if f.self_channel == usize::MAX {
                return Err(Error::Structural(format!(
                    "follower {} has no self sampling period",
                    i + 1
                )));
            }
        }

        let mut sensor_events = Vec::new();
        for (i, f) in followers.iter_mut().enumerate() {
            if let Some((_, fs, _)) = f.filter.as_mut() {
                let self_rec = &channels[f.self_channel].record;
                let phi0 = f.vars.x[0] - exosys::output(&self_rec.v_snapshot);
                let mut x_hat0 = Vector::zeros(f.plant.order());
                x_hat0[0] = phi0;
                *fs = FilterState::new(x_hat0.clone(), phi0);
                f.vars.x_hat = Some(x_hat0);
                sensor_events.push(SensorEvent {
                    t: 0.0,
                    agent: i + 1,
                    phi: phi0,
                    deviation: 0.0,
                    threshold: 0.0,
                });
            }
        }

        let trace = SimTrace {
            h,
            times: Vec::with_capacity(rows),
            nv,
            leader: Vec::with_capacity(rows * nv),
            agents: followers
                .iter()
                .enumerate()
                .map(|(i, f)| AgentTrace::new(i + 1, f.plant.order(), nv, f.filter.is_some(), rows))
                .collect(),
            net_events,
            sensor_events,
            channels: channels
                .iter()
                .map(|c| ChannelInfo {
                    receiver: c.receiver,
                    sender: c.sender,
                    period: c.period,
                    samples: steps / c.period_ticks + 1,
                })
                .collect(),
            sensors: followers
                .iter()
                .enumerate()
                .filter_map(|(i, f)| {
                    f.filter.as_ref().map(|(fp, _, ticks)| SensorInfo {
                        agent: i + 1,
                        period: fp.period,
                        samples: steps / ticks + 1,
                    })
                })
                .collect(),
        };

        Ok(Simulation {
            scenario,
            tick: 0,
            steps,
            leader_s,
            channels,
            followers,
            trace,
        })
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.h
    }

    pub fn is_finished(&self) -> bool {
        self.tick > self.steps
    }

    /// Processes the current grid instant and, unless it is the last one,
    /// advances the state to the next.
    pub fn step(&mut self) -> Result<()> {
        if self.is_finished() {
            return Err(Error::contract("simulation already reached t_end"));
        }
        let h = self.scenario.h;
        let t = self.time();
        let (v, _) = self.scenario.exo.leader_state(t)?;

        self.network_phase(t, &v)?;
        let phi = self.sensor_phase(t)?;

        let mut preds = Vec::with_capacity(self.followers.len());
        for (i, f) in self.followers.iter_mut().enumerate() {
            let agent = i + 1;
            let obs = &f.vars.obs;
            let x_hat = match &f.vars.x_hat {
                Some(xh) => xh.clone(),
                None => &f.vars.x - reference_state(&obs.v_hat, &obs.s_hat, f.plant.order()),
            };
            let pred = predict(
                &f.plant.model,
                &x_hat,
                &obs.v_hat,
                &obs.s_hat,
                &f.hist,
                &f.cfg,
                t,
            )
            .map_err(|e| e.at(agent, t))?;
            let u = control(&pred, &f.cfg);
            if !u.is_finite() {
                return Err(Error::Divergence {
                    agent,
                    t,
                    what: "control".into(),
                });
            }
            f.hist.push(t, u).map_err(|e| e.at(agent, t))?;
            preds.push((x_hat, pred, u));
        }

        let k1 = self.derivatives(0, t, None)?;

        if let Some(opts) = self.scenario.diagnostics {
            self.diagnose(t, &v, &preds, &k1, &opts)?;
        }
        self.record(t, &v, &preds, &phi);

        if self.tick < self.steps {
            let base: Vec<AgentVars> = self.followers.iter().map(|f| f.vars.clone()).collect();
            let mid1: Vec<AgentVars> = base
                .iter()
                .zip(&k1)
                .map(|(b, d)| b.offset(d, h / 2.0))
                .collect();
            let k2 = self.derivatives(1, t + h / 2.0, Some(&mid1))?;
            let mid2: Vec<AgentVars> = base
                .iter()
                .zip(&k2)
                .map(|(b, d)| b.offset(d, h / 2.0))
                .collect();
            let k3 = self.derivatives(1, t + h / 2.0, Some(&mid2))?;
            let end: Vec<AgentVars> = base.iter().zip(&k3).map(|(b, d)| b.offset(d, h)).collect();
            let k4 = self.derivatives(2, t + h, Some(&end))?;
            for (i, f) in self.followers.iter_mut().enumerate() {
                let next = base[i]
                    .offset(&k1[i], h / 6.0)
                    .offset(&k2[i], h / 3.0)
                    .offset(&k3[i], h / 3.0)
                    .offset(&k4[i], h / 6.0);
                if !next.is_finite() {
                    return Err(Error::Divergence {
                        agent: i + 1,
                        t: t + h,
                        what: "non-finite state after integration step".into(),
                    });
                }
                f.vars = next;
            }
        }
        self.tick += 1;
        Ok(())
    }

    fn network_phase(&mut self, t: f64, v: &Vector) -> Result<()> {
        let params = self.scenario.observer_params;
        let leader_obs = ObserverState {
            s_hat: self.leader_s.clone(),
            v_hat: v.clone(),
        };
        // e^{S_snap (t - t̄)} v_snap: last tick's end-of-step stage, or the
        // snapshot itself at the event instant
        for ch in &mut self.channels {
            ch.held[0] = if self.tick == 0 {
                ch.record.v_snapshot.clone()
            } else {
                std::mem::replace(&mut ch.held[2], Vector::zeros(0))
            };
        }
        if self.tick > 0 {
            // Decisions use the states at t only, so the pair order does not matter.
            for ch in &mut self.channels {
                if !self.tick.is_multiple_of(ch.period_ticks) {
                    continue;
                }
                let sender = if ch.sender == LEADER {
                    &leader_obs
                } else {
                    &self.followers[ch.sender - 1].vars.obs
                };
                let out = evaluate_trigger(t, sender, &ch.record.s_snapshot, &ch.held[0], &params);
                if let Some(kind) = out.fired() {
                    let (deviation, threshold) = match kind {
                        EventKind::V => (out.dev_v, out.thr_v),
                        _ => (out.dev_s, out.thr_s),
                    };
                    self.trace.net_events.push(NetEvent {
                        t,
                        sender: ch.sender,
                        receiver: ch.receiver,
                        kind,
                        deviation,
                        threshold,
                    });
                    ch.set_record(BroadcastRecord::capture(t, sender), self.scenario.h)?;
                    ch.held[0] = ch.record.v_snapshot.clone();
                }
            }
        }
        for ch in &mut self.channels {
            ch.refresh_stages();
        }
        Ok(())
    }

    /// Samples sensors that are due; returns the current measurement per follower.
    fn sensor_phase(&mut self, t: f64) -> Result<Vec<Option<f64>>> {
        let mut phis = Vec::with_capacity(self.followers.len());
        for (i, f) in self.followers.iter_mut().enumerate() {
            let Some((fp, fs, ticks)) = f.filter.as_mut() else {
                phis.push(None);
                continue;
            };
            let phi = f.vars.x[0] - exosys::output(&self.channels[f.self_channel].held[0]);
            if self.tick > 0 && self.tick.is_multiple_of(*ticks) {
                fs.x_hat = f.vars.x_hat.clone().expect("filter state present");
                let out = sensor_sample(fs, phi, fp, t)?;
                if out.fired {
                    self.trace.sensor_events.push(SensorEvent {
                        t,
                        agent: i + 1,
                        phi,
                        deviation: out.deviation,
                        threshold: out.threshold,
                    });
                }
            }
            phis.push(Some(phi));
        }
        Ok(phis)
    }

    /// Right-hand sides of all followers at stage `stage` (0: `t`, 1: `t + h/2`,
    /// 2: `t + h`), evaluated at `vars` or at the current states.
    fn derivatives(
        &self,
        stage: usize,
        s: f64,
        vars: Option<&[AgentVars]>,
    ) -> Result<Vec<AgentVars>> {
        let params = &self.scenario.observer_params;
        let mut out = Vec::with_capacity(self.followers.len());
        for (i, f) in self.followers.iter().enumerate() {
            let agent = i + 1;
            let y = vars.map_or(&f.vars, |v| &v[i]);
            let u_plant = f
                .hist
                .value_at(s - f.plant.delay)
                .map_err(|e| e.at(agent, s))?;
            let dx = plant_rhs(&f.plant, y.x.as_slice(), u_plant, s);

            let terms: Vec<NeighborTerm<'_>> = f
                .in_channels
                .iter()
                .map(|&(c, w)| NeighborTerm {
                    weight: w,
                    s_snapshot: &self.channels[c].record.s_snapshot,
                    v_held: &self.channels[c].held[stage],
                })
                .collect();
            let own = &self.channels[f.self_channel];
            let (ds, dv) = consensus_rhs(
                &y.obs,
                &terms,
                &own.record.s_snapshot,
                &own.held[stage],
                params,
            );

            let dxh = match (&f.filter, &y.x_hat) {
                (Some((fp, fs, _)), Some(xh)) => {
                    let u = f
                        .hist
                        .value_at(s - f.cfg.d_hat)
                        .map_err(|e| e.at(agent, s))?;
                    Some(filter_rhs_with_input(
                        &f.plant.model,
                        fs,
                        xh,
                        &y.obs.v_hat,
                        &y.obs.s_hat,
                        u,
                        fp,
                    ))
                }
                _ => None,
            };
            out.push(AgentVars {
                x: dx,
                obs: ObserverState {
                    s_hat: ds,
                    v_hat: dv,
                },
                x_hat: dxh,
            });
        }
        Ok(out)
    }

    fn diagnose(
        &mut self,
        t: f64,
        v: &Vector,
        preds: &[(Vector, crate::predictor::Prediction, f64)],
        k1: &[AgentVars],
        opts: &DiagnosticsOptions,
    ) -> Result<()> {
        let s = &self.leader_s;
        for (i, f) in self.followers.iter_mut().enumerate() {
            let agent = i + 1;
            let n = f.plant.order();
            let (x_hat, pred, _) = &preds[i];
            let snap = backstepping_snapshot(
                &f.plant.model,
                pred,
                &f.cfg,
                &f.vars.obs.s_hat,
                &f.hist,
                f.plant.delay,
                s,
                v,
            )
            .map_err(|e| e.at(agent, t))?;
            let x_bar = &f.vars.x - reference_state(v, s, n);
            let sample = lyapunov_v(&snap, &x_bar, f.plant.delay, f.cfg.d_hat, &opts.lambda_v);
            let tr = &mut self.trace.agents[i];
            tr.lyapunov.push(sample);
            tr.w_end.push(snap.w_end());

            if let (Some((fp, _, _)), Some(tb), Some(hb)) =
                (&f.filter, f.tilde_rate.as_mut(), f.hat_rate.as_mut())
            {
                let dxh = k1[i].x_hat.as_ref().expect("filter derivative present");
                let dx_bar = &k1[i].x - reference_state(&(s * v), s, n);
                tb.push((dx_bar - dxh).norm_squared());
                hb.push(dxh.norm_squared());
                let x_tilde = &x_bar - x_hat;
                let k = lyapunov_calv(
                    &x_tilde,
                    x_hat,
                    &snap,
                    f.cfg.d_hat,
                    tb,
                    hb,
                    fp.period,
                    &opts.lambda_k,
                )?;
                tr.krasovskii.push(k);
            }
        }
        Ok(())
    }

    fn record(
        &mut self,
        t: f64,
        v: &Vector,
        preds: &[(Vector, crate::predictor::Prediction, f64)],
        phi: &[Option<f64>],
    ) {
        self.trace.times.push(t);
        self.trace.leader.extend(v.iter());
        let y0 = exosys::output(v);
        for (i, f) in self.followers.iter().enumerate() {
            let (x_hat, pred, u) = &preds[i];
            let tr = &mut self.trace.agents[i];
            tr.x.extend(f.vars.x.iter());
            tr.x_hat.extend(x_hat.iter());
            tr.u.push(*u);
            tr.e.push(f.vars.x[0] - y0);
            tr.v_hat.extend(f.vars.obs.v_hat.iter());
            tr.s_hat.extend(f.vars.obs.s_hat.transpose().iter());
            if let (Some(series), Some(p)) = (tr.phi.as_mut(), phi[i]) {
                series.push(p);
            }
            tr.chi_end.extend(pred.chi_end().iter());
        }
    }

    pub fn into_trace(self) -> SimTrace {
        self.trace
    }
}

/// Runs `scenario` from `t = 0` to `t_end`.
pub fn run(scenario: &Scenario) -> Result<SimTrace> {
    let mut sim = Simulation::new(scenario.clone())?;
    while !sim.is_finished() {
        sim.step()?;
    }
    Ok(sim.into_trace())
}
