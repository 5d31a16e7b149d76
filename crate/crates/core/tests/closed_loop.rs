use petreg::engine::ticks_per;
use petreg::{
    load_preset, run, trigger_stats, Error, EventKind, ObserverInit, PlantModel, ScalarFn,
    Scenario, SimTrace,
};

fn preset(name: &str, t_end: f64) -> Scenario {
    let mut sc = load_preset(name).unwrap().1;
    sc.t_end = t_end;
    sc
}

fn on_grid(t: f64, period: f64) -> bool {
    let k = (t / period).round();
    (t - k * period).abs() <= 1e-9 * period.max(t)
}

fn assert_shapes(tr: &SimTrace) {
    let rows = tr.len();
    assert_eq!(tr.leader.len(), rows * tr.nv);
    for a in &tr.agents {
        assert_eq!(a.x.len(), rows * a.order);
        assert_eq!(a.x_hat.len(), rows * a.order);
        assert_eq!(a.u.len(), rows);
        assert_eq!(a.e.len(), rows);
        assert_eq!(a.v_hat.len(), rows * a.nv);
        assert_eq!(a.s_hat.len(), rows * a.nv * a.nv);
        if let Some(phi) = &a.phi {
            assert_eq!(phi.len(), rows);
        }
    }
}

#[test]
fn events_lie_on_their_sampling_grids() {
    let tr = run(&preset("s4_petm_b", 5.0)).unwrap();
    assert_shapes(&tr);
    for e in &tr.net_events {
        let c = tr
            .channels
            .iter()
            .find(|c| c.sender == e.sender && c.receiver == e.receiver)
            .unwrap();
        assert!(on_grid(e.t, c.period), "{e:?}");
        assert!(e.kind == EventKind::Init || e.deviation > e.threshold);
    }
    for e in &tr.sensor_events {
        let s = tr.sensors.iter().find(|s| s.agent == e.agent).unwrap();
        assert!(on_grid(e.t, s.period), "{e:?}");
    }
    // forced first broadcast on every pair and every sensor
    assert_eq!(
        tr.net_events
            .iter()
            .filter(|e| e.kind == EventKind::Init)
            .count(),
        tr.channels.len()
    );
    assert_eq!(tr.sensor_events.iter().filter(|e| e.t == 0.0).count(), 4);
}

#[test]
fn infinite_thresholds_leave_only_the_initial_broadcasts() {
    let mut sc = preset("s1_no_mismatch", 2.0);
    sc.observer_params.delta_s = f64::INFINITY;
    sc.observer_params.delta_v = f64::INFINITY;
    let stats = trigger_stats(&run(&sc).unwrap());
    assert_eq!(stats.network_events(), stats.pairs.len() as u64);
    for p in &stats.pairs {
        assert_eq!(p.events, 1);
        assert_eq!(p.samples, (2.0 / p.period).round() as u64 + 1);
    }
}

#[test]
fn vanishing_thresholds_fire_at_every_instant_once_the_sender_moves() {
    let mut sc = preset("s1_no_mismatch", 1.0);
    sc.observer_params.delta_s = 1e-300;
    sc.observer_params.delta_v = 1e-300;
    sc.observer_params.gamma_s = 1e3;
    sc.observer_params.gamma_v = 1e3;
    let tr = run(&sc).unwrap();
    for c in tr.channels.iter().filter(|c| c.sender != 0) {
        let times: Vec<f64> = tr
            .net_events
            .iter()
            .filter(|e| {
                e.sender == c.sender && e.receiver == c.receiver && e.kind != EventKind::Init
            })
            .map(|e| e.t)
            .collect();
        // zero-initialised estimates downstream stay put until news arrives
        let first = times[0];
        let expected = ((1.0 - first) / c.period).round() as usize + 1;
        assert_eq!(times.len(), expected, "{c:?} first at {first}");
    }
}

#[test]
fn exact_observer_start_stays_on_the_leader() {
    let mut sc = preset("s1_no_mismatch", 5.0);
    sc.observer_init = ObserverInit::Exact;
    let tr = run(&sc).unwrap();
    assert!(tr.max_observer_error(0.0, 5.0) < 1e-9);
    // nothing to report once everyone agrees
    assert_eq!(
        trigger_stats(&tr).network_events(),
        tr.channels.len() as u64
    );
}

#[test]
fn zero_horizon_holds_only_the_initial_state() {
    let tr = run(&preset("s4_petm_b", 0.0)).unwrap();
    assert_shapes(&tr);
    assert_eq!(tr.len(), 1);
    assert_eq!(tr.times, vec![0.0]);
    let x0: Vec<f64> = tr.agents.iter().map(|a| a.x[0]).collect();
    assert_eq!(x0, vec![0.5, -0.5, 1.0, -1.0]);
    for c in &tr.channels {
        assert_eq!(c.samples, 1);
    }
}

#[test]
fn filter_tracks_the_shifted_state() {
    let tr = run(&preset("s4_petm_b", 30.0)).unwrap();
    let worst = (0..tr.len())
        .filter(|&k| tr.times[k] >= 20.0)
        .flat_map(|k| {
            let y0 = tr.y0(k);
            tr.agents
                .iter()
                .map(move |a| (a.x_at(k)[0] - y0 - a.x_hat_at(k)[0]).abs())
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-2, "{worst}");
}

#[test]
fn fast_lossless_sensing_approaches_direct_feedback() {
    let h = 0.0005;
    let mut direct = preset("s1_no_mismatch", 10.0);
    direct.h = h;
    direct.diagnostics = None;
    direct.observer_init = ObserverInit::Exact;
    let mut filtered = preset("s4_petm_b", 10.0);
    filtered.h = h;
    filtered.observer_init = ObserverInit::Exact;
    for f in filtered.filter_params.iter_mut().flatten() {
        f.period = 0.001;
        f.delta_phi = 1e-12;
    }
    assert_eq!(ticks_per(0.001, h), Some(2));
    let a = run(&direct).unwrap();
    let b = run(&filtered).unwrap();
    let sup = a
        .agents
        .iter()
        .zip(&b.agents)
        .flat_map(|(p, q)| p.x.iter().zip(&q.x).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(sup < 1e-6, "sup-norm difference {sup}");
}

#[test]
fn second_order_preset_regulates() {
    let tr = run(&preset("s6_second_order", 30.0)).unwrap();
    assert_shapes(&tr);
    let late = tr.max_abs_error(20.0, 30.0);
    assert!(late < 0.05, "{late}");
}

#[test]
fn overflowing_prediction_reports_agent_and_time() {
    let mut sc = preset("s1_no_mismatch", 1.0);
    sc.plants[2].model = PlantModel::first_order(ScalarFn::Linear(1e4));
    match run(&sc) {
        Err(Error::PredictionOverflow { agent, t }) => {
            assert_eq!(agent, 3);
            assert!((0.0..1.0).contains(&t), "{t}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn misaligned_step_is_a_scheduling_fault() {
    let mut sc = preset("s1_no_mismatch", 1.0);
    sc.h = 0.0015;
    assert!(matches!(run(&sc), Err(Error::Scheduling(_))));
}
