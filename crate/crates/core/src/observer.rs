//! Periodic event-triggered adaptive distributed observer.
//!
//! Every follower estimates the leader matrix and state from neighbour
//! snapshots that are refreshed only when the sender's deviation from the
//! last transmitted value exceeds an exponentially decaying threshold,
//! checked at the pair's sampling instants.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exosys::expm;
use crate::linalg::{Matrix, Vector};
use crate::topology::CommGraph;

/// Per-follower estimate `(Ŝ_i, v̂_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub s_hat: Matrix,
    pub v_hat: Vector,
}

impl ObserverState {
    pub fn zeros(nv: usize) -> Self {
        ObserverState {
            s_hat: Matrix::zeros(nv, nv),
            v_hat: Vector::zeros(nv),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.s_hat
            .iter()
            .chain(self.v_hat.iter())
            .all(|x| x.is_finite())
    }
}

/// Snapshot delivered over one directed pair at an event instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BroadcastRecord {
    pub t_event: f64,
    pub s_snapshot: Matrix,
    pub v_snapshot: Vector,
}

impl BroadcastRecord {
    pub fn capture(t_event: f64, state: &ObserverState) -> Self {
        BroadcastRecord {
            t_event,
            s_snapshot: state.s_hat.clone(),
            v_snapshot: state.v_hat.clone(),
        }
    }
}

/// How estimates start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObserverInit {
    /// `Ŝ_i(0) = 0`, `v̂_i(0) = 0`.
    #[default]
    Zero,
    /// `Ŝ_i(0) = S`, `v̂_i(0) = v(0)`.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverParams {
    pub kappa1: f64,
    pub kappa2: f64,
    pub delta_s: f64,
    pub delta_v: f64,
    pub gamma_s: f64,
    pub gamma_v: f64,
}

impl ObserverParams {
    pub fn new(
        kappa1: f64,
        kappa2: f64,
        delta_s: f64,
        delta_v: f64,
        gamma_s: f64,
        gamma_v: f64,
    ) -> Result<Self> {
        let p = ObserverParams {
            kappa1,
            kappa2,
            delta_s,
            delta_v,
            gamma_s,
            gamma_v,
        };
        for (name, value) in [
            ("kappa1", kappa1),
            ("kappa2", kappa2),
            ("delta_s", delta_s),
            ("delta_v", delta_v),
            ("gamma_s", gamma_s),
            ("gamma_v", gamma_v),
        ] {
            if value.is_nan() || value <= 0.0 {
                return Err(Error::contract(format!(
                    "observer {name} must be positive, got {value}"
                )));
            }
        }
        Ok(p)
    }

    /// `κ = max(κ1, κ2)`
    pub fn kappa(&self) -> f64 {
        self.kappa1.max(self.kappa2)
    }

    pub fn threshold_s(&self, tau: f64) -> f64 {
        self.delta_s * (-self.gamma_s * tau).exp()
    }

    pub fn threshold_v(&self, tau: f64) -> f64 {
        self.delta_v * (-self.gamma_v * tau).exp()
    }
}

/// `e^{Ŝ_snap (t - t̄)} v̂_snap`.
pub fn held_estimate(rec: &BroadcastRecord, t: f64) -> Result<Vector> {
    if t < rec.t_event {
        return Err(Error::contract(format!(
            "held estimate queried at {t} before its event time {}",
            rec.t_event
        )));
    }
    Ok(expm(&rec.s_snapshot, t - rec.t_event)? * &rec.v_snapshot)
}

/// One neighbour term of the consensus sums.
#[derive(Debug, Clone, Copy)]
pub struct NeighborTerm<'a> {
    pub weight: f64,
    pub s_snapshot: &'a Matrix,
    pub v_held: &'a Vector,
}

/// Observer right-hand side from already extrapolated held values.
///
/// `dŜ = κ1 Σ a_ij (Ŝ_j(t̄_ij) - Ŝ_i(t̄_ii))`,
/// `dv̂ = Ŝ_i v̂_i + κ2 Σ a_ij (v̄_j - v̄_i)`.
pub fn consensus_rhs(
    state: &ObserverState,
    neighbors: &[NeighborTerm<'_>],
    self_s_snapshot: &Matrix,
    self_v_held: &Vector,
    params: &ObserverParams,
) -> (Matrix, Vector) {
    let nv = state.v_hat.len();
    let mut ds = Matrix::zeros(nv, nv);
    let mut dv = &state.s_hat * &state.v_hat;
    for term in neighbors {
        ds += (term.s_snapshot - self_s_snapshot) * (params.kappa1 * term.weight);
        dv += (term.v_held - self_v_held) * (params.kappa2 * term.weight);
    }
    (ds, dv)
}

/// Observer right-hand side for follower `i` at time `t`.
///
/// `records` maps each sender `j` with `a_ij > 0` to the last snapshot it
/// delivered to `i`. The consensus terms never see live neighbour states.
pub fn observer_rhs(
    i: usize,
    graph: &CommGraph,
    state: &ObserverState,
    records: &BTreeMap<usize, BroadcastRecord>,
    self_record: &BroadcastRecord,
    t: f64,
    params: &ObserverParams,
) -> Result<(Matrix, Vector)> {
    let senders = graph.in_neighbors(i);
    let mut held = Vec::with_capacity(senders.len());
    for &j in &senders {
        let rec = records.get(&j).ok_or_else(|| {
            Error::contract(format!("follower {i} has no record from sender {j}"))
        })?;
        held.push((graph.weight(i, j), rec, held_estimate(rec, t)?));
    }
    let terms: Vec<NeighborTerm<'_>> = held
        .iter()
        .map(|(w, rec, v)| NeighborTerm {
            weight: *w,
            s_snapshot: &rec.s_snapshot,
            v_held: v,
        })
        .collect();
    let self_held = held_estimate(self_record, t)?;
    Ok(consensus_rhs(
        state,
        &terms,
        &self_record.s_snapshot,
        &self_held,
        params,
    ))
}

/// Which condition caused a broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Forced transmission at `t = 0`.
    Init,
    /// The matrix deviation crossed its threshold.
    S,
    /// Only the state deviation crossed its threshold.
    V,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Init => "init",
            EventKind::S => "S",
            EventKind::V => "v",
        }
    }
}

/// Result of evaluating both trigger functions at one sampling instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerOutcome {
    pub dev_s: f64,
    pub dev_v: f64,
    pub thr_s: f64,
    pub thr_v: f64,
}

impl TriggerOutcome {
    /// Strict inequalities: a deviation equal to its threshold does not fire.
    pub fn fired(&self) -> Option<EventKind> {
        if self.dev_s > self.thr_s {
            Some(EventKind::S)
        } else if self.dev_v > self.thr_v {
            Some(EventKind::V)
        } else {
            None
        }
    }
}

/// Checks `τ` against a sampling grid of the given period.
pub fn check_on_grid(tau: f64, period: f64) -> Result<u64> {
    let k = (tau / period).round();
    if tau.is_nan() || tau < 0.0 || (tau / period - k).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::Scheduling(format!(
            "instant {tau} is not on the sampling grid of period {period}"
        )));
    }
    Ok(k as u64)
}

/// Sender-side check for one directed pair at sampling instant `τ`.
///
/// The sender compares its current estimate with the snapshot it last
/// delivered to the receiver: `‖Ŝ(τ) - Ŝ_snap‖_F > δ_S e^{-γ_S τ}` or
/// `‖v̂(τ) - v̄(τ)‖ > δ_v e^{-γ_v τ}`. Either condition transmits both.
pub fn trigger_check_pair(
    tau: f64,
    period: f64,
    sender: &ObserverState,
    last: &BroadcastRecord,
    params: &ObserverParams,
) -> Result<TriggerOutcome> {
    check_on_grid(tau, period)?;
    if tau <= last.t_event {
        return Err(Error::Scheduling(format!(
            "trigger check at {tau} does not follow the last event at {}",
            last.t_event
        )));
    }
    let held = held_estimate(last, tau)?;
    Ok(evaluate_trigger(
        tau,
        sender,
        &last.s_snapshot,
        &held,
        params,
    ))
}

pub(crate) fn evaluate_trigger(
    tau: f64,
    sender: &ObserverState,
    s_snapshot: &Matrix,
    v_held: &Vector,
    params: &ObserverParams,
) -> TriggerOutcome {
    TriggerOutcome {
        dev_s: (&sender.s_hat - s_snapshot).norm(),
        dev_v: (&sender.v_hat - v_held).norm(),
        thr_s: params.threshold_s(tau),
        thr_v: params.threshold_v(tau),
    }
}
