use std::io::Write;

use edgecast::dpi::FrameClass;
use edgecast::ids::{ProcessId, StreamId};
use edgecast::runner::{run, simulate, RunError};
use edgecast::scenario::Scenario;
use proptest::prelude::*;
use serde_json::json;

fn synthetic(stream: u16) -> serde_json::Value {
    json!({
        "stream_id": stream, "ingress_addr": "127.0.0.1:0", "control_addr": "127.0.0.1:0",
        "source": {"kind": "synthetic", "gop_length": 5, "packets_per_frame": 133, "fps": 30}
    })
}

fn process(id: u16, streams: &[u16], threshold: f64) -> serde_json::Value {
    let reqs: Vec<_> = streams
        .iter()
        .map(|s| json!({"stream_id": s, "threshold": threshold, "strategy": "differential"}))
        .collect();
    json!({"process_id": id, "egress_addr": "127.0.0.1:0", "requirements": reqs})
}

fn scenario(v: serde_json::Value) -> Scenario {
    serde_json::from_value(v).unwrap()
}

fn desk(duration: f64) -> Scenario {
    scenario(json!({
        "duration_s": duration,
        "edge": {"control_addr": "127.0.0.1:0"},
        "sensors": [synthetic(1)],
        "processes": [process(1, &[1], 0.96), process(2, &[1], 0.74)]
    }))
}

#[test]
fn no_sinks_means_zero_traffic() {
    let mut s = desk(2.0);
    s.processes.clear();
    let r = simulate(&s).unwrap();
    assert!(r.sensors[0].paused);
    assert_eq!(r.sensors[0].packets_out.total(), 0);
    assert_eq!(r.edges[0].packets_in.total(), 0);
    assert!(r.egresses.is_empty());
    assert_eq!(r.sensors[0].realized_keep, None);
    assert_eq!(r.proxies.decodable_ratio_mean, None);
    assert_eq!(r.proxies.cpu_cost.total, 0.0);
}

#[test]
fn simulated_desk_run_meets_predictions() {
    let r = simulate(&desk(6.0)).unwrap();
    let sensor = &r.sensors[0];
    assert!(!sensor.paused);
    assert!((sensor.keep - 0.99).abs() < 1e-4);
    let measured = sensor.measured_bps.unwrap();
    let predicted = sensor.predicted_bps.unwrap();
    assert!((measured / predicted - 1.0).abs() < 0.05, "{measured} vs {predicted}");
    for e in &r.egresses {
        assert!(e.conserved);
        assert_eq!(e.offered[FrameClass::Reference], e.forwarded[FrameClass::Reference]);
        assert_eq!(e.received_packets, e.forwarded.total());
    }
    let e2 = r.egresses.iter().find(|e| e.process == ProcessId(2)).unwrap();
    let want = 1.0 - 0.98 / 0.99;
    assert!((e2.realized_suppression.unwrap() - want).abs() < 0.005);
    // Suppression of any differential frame packet breaks the rest of the GOP.
    assert!(e2.decodable_ratio.unwrap() < 1.0);
}

#[test]
fn simulation_is_reproducible() {
    let mut s = desk(3.0);
    s.seed = 42;
    let a = serde_json::to_string(&simulate(&s).unwrap()).unwrap();
    let b = serde_json::to_string(&simulate(&s).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn saved_bandwidth_on_the_desk_instance() {
    // Two 1.2 + 4.8 Mbps streams; a table row at 50 % loss lets a sink ask for keep 0.5.
    let mut table = tempfile::NamedTempFile::new().unwrap();
    writeln!(
        table,
        "0.5 0.95 0.99\n1 0.84 0.96\n2 0.46 0.74\n5 0.1 0.4\n50 0.01 0.2\n100 0 0"
    )
    .unwrap();
    let mut s = scenario(json!({
        "duration_s": 6,
        "sensors": [synthetic(1), synthetic(2)],
        "processes": [process(1, &[1, 2], 0.2)]
    }));
    s.detection_table = Some(table.path().to_owned());
    let r = simulate(&s).unwrap();
    for sensor in &r.sensors {
        assert!((sensor.keep - 0.5).abs() < 1e-4, "{}", sensor.keep);
    }
    // 6.0016 Mbps per stream at 1:4, so the desk figure is 4.8 Mbps within rounding.
    let predicted = r.predictions.bandwidth_saved_bps;
    assert!((predicted - 4.8e6).abs() / 4.8e6 < 0.001, "{predicted}");
    let measured = r.predictions.bandwidth_saved_measured_bps.unwrap();
    assert!((measured - 4.8e6).abs() / 4.8e6 < 0.05, "{measured}");
}

#[test]
fn tightening_a_requirement_steps_the_bitrate_down() {
    let mut s = desk(10.0);
    s.processes.truncate(1);
    s.processes[0].requirements[0].threshold = 0.99;
    s.timeline = serde_json::from_value(json!([
        {"at_s": 5.0, "action": {"type": "set_requirement", "process_id": 1, "stream_id": 1,
                                 "threshold": 0.74, "strategy": "differential"}}
    ]))
    .unwrap();
    let r = simulate(&s).unwrap();
    let w = &r.sensors[0].bitrate_windows_bps;
    let before = w[1..5].iter().sum::<f64>() / 4.0;
    let after = w[6..9].iter().sum::<f64>() / 3.0;
    assert!(after < before * 0.995, "{before} -> {after}");
    assert!((r.sensors[0].keep - 0.98).abs() < 1e-4);
    assert_eq!(r.control.timeline.len(), 1);
}

#[test]
fn operator_delta_overrides_and_clears() {
    let mut s = desk(4.0);
    s.timeline = serde_json::from_value(json!([
        {"at_s": 1.0, "action": {"type": "set_delta", "stream_id": 1, "process_id": 1, "delta": 0.5}},
        {"at_s": 3.0, "action": {"type": "clear_deltas", "stream_id": 1}}
    ]))
    .unwrap();
    let r = simulate(&s).unwrap();
    let e1 = r.egresses.iter().find(|e| e.process == ProcessId(1)).unwrap();
    assert_eq!(e1.configured_delta, Some(0.0));
    let realized = e1.realized_suppression.unwrap();
    assert!(realized > 0.1 && realized < 0.4, "{realized}");
}

#[test]
fn invalid_scenarios_are_refused() {
    let mut s = desk(1.0);
    s.processes[0].requirements[0].threshold = 0.999;
    assert!(matches!(simulate(&s), Err(RunError::Invalid(_))));
    assert!(matches!(run(&s), Err(RunError::Invalid(_))));
}

#[test]
fn live_loopback_run() {
    let r = run(&desk(3.0)).unwrap();
    let sensor = &r.sensors[0];
    assert!(!sensor.paused);
    assert!(sensor.notifications >= 1);
    assert!((sensor.keep - 0.99).abs() < 1e-4);
    assert!(sensor.packets_out.total() > 0);
    assert_eq!(r.edges[0].stream, StreamId(1));
    assert!(r.control.unacked.is_empty(), "{:?}", r.control.unacked);
    assert_eq!(r.egresses.len(), 2);
    for e in &r.egresses {
        assert!(e.conserved);
        assert_eq!(e.overflow_dropped, 0);
        assert_eq!(e.received_packets, e.forwarded.total());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]
    #[test]
    fn same_scenario_and_seed_give_identical_reports(seed in any::<u64>(), threshold in prop::sample::select(vec![0.74, 0.96, 0.99])) {
        let mut s = desk(1.5);
        s.seed = seed;
        s.processes[1].requirements[0].threshold = threshold;
        let a = serde_json::to_vec(&simulate(&s).unwrap()).unwrap();
        let b = serde_json::to_vec(&simulate(&s).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn check_agrees_with_the_run(thresholds in prop::collection::vec(30u32..=99, 1..=3), uniform in any::<bool>()) {
        let strategy = if uniform { "uniform" } else { "differential" };
        let processes: Vec<_> = thresholds
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let t = f64::from(t.min(if uniform { 95 } else { 99 })) / 100.0;
                json!({"process_id": i + 1, "egress_addr": "127.0.0.1:0",
                       "requirements": [{"stream_id": 1, "threshold": t, "strategy": strategy}]})
            })
            .collect();
        let s = scenario(json!({
            "duration_s": 1.0,
            "edge": {"control_addr": "127.0.0.1:0"},
            "sensors": [synthetic(1)],
            "processes": processes
        }));
        let check = s.check_report().unwrap();
        let run = simulate(&s).unwrap().predictions;
        prop_assert_eq!(check.processes.len(), run.processes);
        prop_assert_eq!(check.streams.len(), run.streams.len());
        for (c, r) in check.streams.iter().zip(&run.streams) {
            prop_assert_eq!(c.keep, r.keep);
            prop_assert_eq!(&c.omega, &r.omega);
            prop_assert_eq!(&c.delta, &r.delta);
            prop_assert_eq!(c.predicted_bps, r.predicted_bps);
        }
        prop_assert_eq!(check.bandwidth_saved_bps, run.bandwidth_saved_bps);
    }
}
