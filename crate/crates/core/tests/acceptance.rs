//! End-to-end acceptance criteria. Each test prints one PASS/FAIL line to the
//! terminal, bypassing the test harness's output capture.

use std::io::Write;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use bytes::Bytes;
use edgecast::control::{
    Ack, AckStatus, CodecError, ControlMessage, Fixed16, PolicyUpdateMsg, QualityNotify, RegisterAction, SinkRegister,
    SinkRequirement,
};
use edgecast::dpi::{FrameClass, SYNC_BYTE, TS_PACKET_SIZE};
use edgecast::edge::{EdgeEngine, EgressPolicy, EgressSink, MemorySink, PolicyMap, PolicyUpdate, SharedPolicy};
use edgecast::ids::{EgressId, IngressPort, ProcessId, StreamId};
use edgecast::metrics::{
    compare_strategies, cpu_sweep, linear_fit, ratio_after_drops, synthetic_frames, ClassCounts, CpuProxy, Report,
};
use edgecast::qoc::{
    bandwidth_full, bandwidth_saved, detection_lookup, effective_quality, DetectionTable, RateModel, Strategy,
    StreamQuality, StreamRate,
};
use edgecast::runner::run;
use edgecast::scenario::Scenario;
use edgecast::sensor::{generate_synthetic, pack_datagrams, PacketTag, SyntheticSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

/// Live runs share the loopback interface and the CPU; run them one at a time.
static LIVE: Mutex<()> = Mutex::new(());

struct Checks {
    criterion: u8,
    name: &'static str,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn new(criterion: u8, name: &'static str) -> Self {
        Checks {
            criterion,
            name,
            failures: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn finish(self) {
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        let detail = if self.failures.is_empty() {
            self.notes.join("; ")
        } else {
            self.failures.join("; ")
        };
        let line = format!("criterion {} {}: {verdict} ({detail})\n", self.criterion, self.name);
        let _ = std::io::stderr().write_all(line.as_bytes());
        assert!(self.failures.is_empty(), "{}", line.trim_end());
    }
}

#[test]
fn criterion_1_detection_table() {
    let mut c = Checks::new(1, "detection table lookup");
    let start = Instant::now();
    let table = DetectionTable::builtin();
    let published = [(0.5, 0.95, 0.99), (1.0, 0.84, 0.96), (2.0, 0.46, 0.74), (5.0, 0.1, 0.4)];
    for (loss, uniform, differential) in published {
        let u = detection_lookup(loss, Strategy::Uniform, &table);
        let d = detection_lookup(loss, Strategy::Differential, &table);
        c.check(u == uniform, format!("uniform at {loss}% = {u}"));
        c.check(d == differential, format!("differential at {loss}% = {d}"));
    }
    let elapsed = start.elapsed();
    c.check(elapsed < Duration::from_secs(1), format!("{elapsed:?}"));
    c.finish();
}

#[test]
fn criterion_2_desk_arithmetic() {
    let mut c = Checks::new(2, "bandwidth arithmetic");
    let (ref_rate, diff_rate, processes) = (1.2e6, 4.8e6, 3);
    let rates = RateModel::new(vec![StreamRate::new(ref_rate, diff_rate); 2]);

    let full = bandwidth_full(&rates, processes);
    let full_oracle = processes as f64 * 2.0 * (ref_rate + diff_rate);
    c.check(
        (full - 36e6).abs() <= 1e-9 && (full - full_oracle).abs() <= 1e-9,
        format!("full {full}"),
    );

    let q = |k| StreamQuality::new(k).unwrap();
    let union = effective_quality(&[q(0.5), q(0.9)]).unwrap().differential_keep();
    c.check((union - 0.9).abs() <= 1e-9, format!("union {union}"));

    let saved = bandwidth_saved(&rates, &[q(0.5), q(0.5)]);
    let saved_oracle = 2.0 * diff_rate * (1.0 - 0.5);
    c.check(
        (saved - 4.8e6).abs() <= 1e-9 && (saved - saved_oracle).abs() <= 1e-9,
        format!("saved {saved}"),
    );
    c.finish();
}

/// Unit sequence of a synthetic stream with a null packet after every tenth unit.
fn with_null_packets(units: Vec<Bytes>) -> Vec<Bytes> {
    let mut null = [0xFFu8; TS_PACKET_SIZE];
    null[..4].copy_from_slice(&[SYNC_BYTE, 0x1F, 0xFF, 0x10]);
    let null = Bytes::copy_from_slice(&null);
    let mut out = Vec::with_capacity(units.len() + units.len() / 10);
    for (i, u) in units.into_iter().enumerate() {
        out.push(u);
        if i % 10 == 9 {
            out.push(null.clone());
        }
    }
    out
}

/// True class of a unit, from its synthetic tag rather than from inspection.
fn true_class(spec: &SyntheticSpec, unit: &[u8]) -> FrameClass {
    match PacketTag::read(unit) {
        Some(tag) => spec.class_of_frame(u64::from(tag.frame)),
        None => FrameClass::NonVideo,
    }
}

/// Feed `units` through an edge engine whose egresses use `deltas`.
fn fan_out(spec: &SyntheticSpec, units: &[Bytes], deltas: &[f64]) -> (EdgeEngine, Vec<MemorySink>) {
    let stream = StreamId(1);
    let policy = Arc::new(SharedPolicy::new(PolicyMap::new()));
    policy
        .commit(&[
            PolicyUpdate::Upsert {
                ingress: IngressPort(1),
                stream,
                egresses: deltas
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| EgressPolicy::new(EgressId(i as u16), d))
                    .collect(),
            },
            PolicyUpdate::SetVideoPids {
                stream,
                pids: [spec.video_pid].into(),
            },
        ])
        .unwrap();
    let sinks: Vec<MemorySink> = deltas.iter().map(|_| MemorySink::new()).collect();
    let factory_sinks = sinks.clone();
    let mut engine = EdgeEngine::new(IngressPort(1), stream, policy, move |_: StreamId, e: EgressId| {
        Some(Box::new(factory_sinks[usize::from(e.0)].clone()) as Box<dyn EgressSink>)
    });
    let start = Instant::now();
    for (i, d) in pack_datagrams(units).into_iter().enumerate() {
        engine
            .process_datagram(d, start + Duration::from_micros(i as u64))
            .unwrap();
    }
    engine.flush();
    (engine, sinks)
}

#[test]
fn criterion_3_reference_preservation() {
    let mut c = Checks::new(3, "reference preservation");
    let start = Instant::now();
    let spec = SyntheticSpec::new(12, 8, 25.0);
    let units = with_null_packets(generate_synthetic(StreamId(1), &spec, 1200));
    c.check(units.len() >= 10_000, format!("{} packets", units.len()));
    let mut ingress = ClassCounts::default();
    for u in &units {
        ingress.add(true_class(&spec, u), 1);
    }

    let deltas = [0.5; 3];
    let (engine, sinks) = fan_out(&spec, &units, &deltas);
    for (e, sink) in sinks.iter().enumerate() {
        let mut received = ClassCounts::default();
        for d in sink.datagrams() {
            for u in d.chunks(TS_PACKET_SIZE) {
                received.add(true_class(&spec, u), 1);
            }
        }
        for class in [FrameClass::Reference, FrameClass::NonVideo] {
            let lost = ingress[class] - received[class];
            c.check(lost == 0, format!("egress {e}: {lost} {class:?} suppressed"));
        }
        let diff_in = ingress[FrameClass::Differential] as f64;
        let dropped = 1.0 - received[FrameClass::Differential] as f64 / diff_in;
        c.check(
            (dropped - 0.5).abs() <= 0.005,
            format!("egress {e}: differential drop {dropped:.4}"),
        );

        let counters = engine.egress_counter(EgressId(e as u16)).unwrap();
        c.check(
            counters.offered[FrameClass::Reference] == counters.forwarded[FrameClass::Reference]
                && counters.offered[FrameClass::NonVideo] == counters.forwarded[FrameClass::NonVideo],
            format!("egress {e}: counters agree"),
        );
    }
    let elapsed = start.elapsed();
    c.check(elapsed < Duration::from_secs(5), format!("{elapsed:?}"));
    c.finish();
}

#[test]
fn criterion_4_fan_out_identity() {
    let mut c = Checks::new(4, "fan-out byte identity");
    let spec = SyntheticSpec::new(12, 8, 25.0);
    let units = with_null_packets(generate_synthetic(StreamId(1), &spec, 600));
    let deltas = [0.0, 0.25, 0.5];
    let (engine, sinks) = fan_out(&spec, &units, &deltas);

    let ingress: Vec<u8> = units.iter().flat_map(|u| u.iter().copied()).collect();
    c.check(
        sinks[0].stream_bytes() == ingress,
        "egress 0 is byte-identical to ingress",
    );

    for (e, &delta) in deltas.iter().enumerate() {
        // Oracle: an accumulator over differential packets in arrival order.
        let mut acc = 0.0;
        let mut expected = Vec::new();
        for u in &units {
            if true_class(&spec, u) == FrameClass::Differential {
                acc += delta;
                if acc >= 1.0 {
                    acc -= 1.0;
                    continue;
                }
            }
            expected.extend_from_slice(u);
        }
        let forwarded = engine.egress_counter(EgressId(e as u16)).unwrap().forwarded.total();
        let want = (expected.len() / TS_PACKET_SIZE) as u64;
        c.check(
            forwarded == want,
            format!("egress {e}: forwarded {forwarded}, oracle {want}"),
        );
        c.check(
            sinks[e].stream_bytes() == expected,
            format!("egress {e}: bytes match oracle"),
        );
    }
    c.finish();
}

/// Decodable ratio computed from first principles: a frame decodes when all
/// its packets arrived and, unless it is a reference frame, its predecessor
/// decoded.
fn oracle_ratio(frames: &[(FrameClass, u32)], lost: &[bool]) -> f64 {
    let mut p = 0;
    let mut prev = false;
    let mut ok = 0;
    for &(class, n) in frames {
        let complete = !lost[p..p + n as usize].iter().any(|&l| l);
        p += n as usize;
        prev = complete && (class == FrameClass::Reference || prev);
        ok += usize::from(prev);
    }
    ok as f64 / frames.len() as f64
}

/// Every `k`-subset of `pool`, visited in lexicographic order.
fn for_each_subset(pool: &[usize], k: usize, f: &mut impl FnMut(&[usize])) {
    fn go(pool: &[usize], k: usize, chosen: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if chosen.len() == k {
            f(chosen);
            return;
        }
        for (i, &x) in pool.iter().enumerate() {
            chosen.push(x);
            go(&pool[i + 1..], k, chosen, f);
            chosen.pop();
        }
    }
    go(pool, k, &mut Vec::with_capacity(k), f);
}

#[test]
fn criterion_5_strategy_dominance() {
    let mut c = Checks::new(5, "strategy dominance");
    let seeds: Vec<u64> = (1..=10).collect();
    let spec = SyntheticSpec::new(12, 8, 25.0);
    for loss in [0.02, 0.05] {
        let r = compare_strategies(&spec, 30, loss, &seeds);
        c.check(
            r.selective > r.uniform,
            format!("{loss}: selective {:.4} vs uniform {:.4}", r.selective, r.uniform),
        );
    }

    // Exhaustive expectation over every drop pattern of a 2-GOP instance.
    let small = SyntheticSpec::new(4, 2, 25.0);
    let frames = synthetic_frames(&small, 2);
    let total: usize = frames.iter().map(|f| f.1 as usize).sum();
    let mut differential = Vec::new();
    let mut p = 0;
    for &(class, n) in &frames {
        if class == FrameClass::Differential {
            differential.extend(p..p + n as usize);
        }
        p += n as usize;
    }
    let all: Vec<usize> = (0..total).collect();
    let mut mismatches = 0;
    let many_seeds: Vec<u64> = (1..=2000).collect();
    for k in 1..=4 {
        let mut mean = |pool: &[usize]| {
            let (mut sum, mut n) = (0.0, 0usize);
            for_each_subset(pool, k, &mut |drop| {
                let mut lost = vec![false; total];
                for &d in drop {
                    lost[d] = true;
                }
                let exact = oracle_ratio(&frames, &lost);
                if (ratio_after_drops(&frames, drop) - exact).abs() > 1e-12 {
                    mismatches += 1;
                }
                sum += exact;
                n += 1;
            });
            sum / n as f64
        };
        let uniform = mean(&all);
        let selective = mean(&differential);
        c.check(
            selective > uniform,
            format!("2 GOPs, {k} drops: oracle selective {selective:.4} vs uniform {uniform:.4}"),
        );
        let sampled = compare_strategies(&small, 2, k as f64 / total as f64, &many_seeds);
        c.check(
            (sampled.selective > sampled.uniform)
                && (sampled.uniform - uniform).abs() < 0.05
                && (sampled.selective - selective).abs() < 0.05,
            format!(
                "2 GOPs, {k} drops: sampled selective {:.4} vs uniform {:.4}",
                sampled.selective, sampled.uniform
            ),
        );
    }
    c.check(
        mismatches == 0,
        format!("{mismatches} patterns disagree with the oracle"),
    );
    c.finish();
}

#[test]
fn criterion_6_control_loop() {
    let _live = LIVE.lock().unwrap_or_else(|e| e.into_inner());
    let mut c = Checks::new(6, "control loop");
    let (gop, ppf, fps) = (5u32, 133u32, 30.0);
    let scenario: Scenario = serde_json::from_value(json!({
        "duration_s": 10,
        "edge": {"control_addr": "127.0.0.1:0"},
        "sensors": [{
            "stream_id": 1, "ingress_addr": "127.0.0.1:0", "control_addr": "127.0.0.1:0",
            "source": {"kind": "synthetic", "gop_length": gop, "packets_per_frame": ppf, "fps": fps}
        }],
        "processes": [{
            "process_id": 1, "egress_addr": "127.0.0.1:0",
            "requirements": [{"stream_id": 1, "threshold": 0.96, "strategy": "differential"}]
        }]
    }))
    .unwrap();
    let r = run(&scenario).unwrap();
    let sensor = &r.sensors[0];
    c.check(
        !sensor.paused && sensor.notifications >= 1,
        format!("{} notifications", sensor.notifications),
    );
    c.check((sensor.keep - 0.99).abs() < 1e-4, format!("keep {:.5}", sensor.keep));

    // S(Q_eff) from the stream shape: one reference and gop-1 differential frames per GOP.
    let unit_bps = (TS_PACKET_SIZE * 8) as f64 * fps * f64::from(ppf) / f64::from(gop);
    let target = unit_bps * (1.0 + 0.99 * f64::from(gop - 1));
    match sensor.measured_bps {
        Some(m) => c.check(
            (m / target - 1.0).abs() < 0.05,
            format!("measured {:.4} Mbps vs {:.4} Mbps", m / 1e6, target / 1e6),
        ),
        None => c.check(false, "no sensor bitrate measured"),
    }
    c.check(r.control.unacked.is_empty(), format!("unacked {:?}", r.control.unacked));
    c.finish();
}

fn random_fixed(rng: &mut ChaCha8Rng) -> Fixed16 {
    Fixed16(rng.gen())
}

fn random_message(rng: &mut ChaCha8Rng) -> ControlMessage {
    match rng.gen_range(0..4) {
        0 => ControlMessage::QualityNotify(QualityNotify {
            stream: StreamId(rng.gen()),
            keep: random_fixed(rng),
        }),
        1 => ControlMessage::PolicyUpdate(PolicyUpdateMsg {
            stream: StreamId(rng.gen()),
            egresses: (0..rng.gen_range(0..=255))
                .map(|_| (EgressId(rng.gen()), random_fixed(rng)))
                .collect(),
        }),
        2 => ControlMessage::SinkRegister(SinkRegister {
            process: ProcessId(rng.gen()),
            action: if rng.gen() {
                RegisterAction::Register
            } else {
                RegisterAction::Deregister
            },
            egress: SocketAddrV4::new(Ipv4Addr::from(rng.gen::<u32>()), rng.gen()),
            requirements: (0..rng.gen_range(0..=255))
                .map(|_| SinkRequirement {
                    stream: StreamId(rng.gen()),
                    strategy: if rng.gen() {
                        Strategy::Uniform
                    } else {
                        Strategy::Differential
                    },
                    threshold: random_fixed(rng),
                })
                .collect(),
        }),
        _ => ControlMessage::Ack(Ack {
            acked_type: rng.gen(),
            status: if rng.gen() { AckStatus::Ok } else { AckStatus::Rejected },
            key: rng.gen(),
            token: rng.gen(),
        }),
    }
}

#[test]
fn criterion_7_codec() {
    let mut c = Checks::new(7, "control codec");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failed = 0;
    for _ in 0..10_000 {
        let m = random_message(&mut rng);
        let ok = m
            .encode()
            .and_then(|b| ControlMessage::decode(&b))
            .is_ok_and(|d| d == m);
        failed += usize::from(!ok);
    }
    c.check(failed == 0, format!("{failed} of 10000 round trips failed"));

    let notify = ControlMessage::QualityNotify(QualityNotify {
        stream: StreamId(3),
        keep: Fixed16(1234),
    })
    .encode()
    .unwrap();
    let register = ControlMessage::SinkRegister(SinkRegister {
        process: ProcessId(1),
        action: RegisterAction::Register,
        egress: SocketAddrV4::new(Ipv4Addr::LOCALHOST, 7000),
        requirements: vec![SinkRequirement {
            stream: StreamId(1),
            strategy: Strategy::Differential,
            threshold: Fixed16(100),
        }],
    })
    .encode()
    .unwrap();
    let update = ControlMessage::PolicyUpdate(PolicyUpdateMsg {
        stream: StreamId(1),
        egresses: vec![(EgressId(0), Fixed16(5)); 2],
    })
    .encode()
    .unwrap();
    let ack = ControlMessage::Ack(Ack {
        acked_type: 1,
        status: AckStatus::Ok,
        key: 1,
        token: 9,
    })
    .encode()
    .unwrap();
    let with = |base: &[u8], at: usize, v: u8| {
        let mut b = base.to_vec();
        b[at] = v;
        b
    };
    let mut longer = notify.clone();
    longer.extend_from_slice(&[0, 0]);
    let corpus: Vec<(&str, Vec<u8>, CodecError)> = vec![
        ("empty", vec![], CodecError::Truncated { needed: 1, have: 0 }),
        (
            "bad first magic byte",
            with(&notify, 0, 0x00),
            CodecError::BadMagic([0x00, 0x43]),
        ),
        (
            "bad second magic byte",
            with(&notify, 1, 0x00),
            CodecError::BadMagic([0x45, 0x00]),
        ),
        ("version", with(&notify, 2, 2), CodecError::BadVersion(2)),
        ("type", with(&notify, 3, 9), CodecError::UnknownType(9)),
        (
            "short header",
            notify[..3].to_vec(),
            CodecError::Truncated { needed: 4, have: 3 },
        ),
        (
            "short notify",
            notify[..6].to_vec(),
            CodecError::Truncated { needed: 8, have: 6 },
        ),
        ("trailing", longer, CodecError::TrailingBytes(2)),
        (
            "short update list",
            update[..update.len() - 1].to_vec(),
            CodecError::Truncated {
                needed: update.len(),
                have: update.len() - 1,
            },
        ),
        (
            "register action",
            with(&register, 6, 2),
            CodecError::BadField {
                field: "action",
                value: 2,
            },
        ),
        (
            "register strategy",
            with(&register, 16, 7),
            CodecError::BadField {
                field: "strategy",
                value: 7,
            },
        ),
        (
            "ack status",
            with(&ack, 5, 3),
            CodecError::BadField {
                field: "status",
                value: 3,
            },
        ),
        (
            "short ack",
            ack[..11].to_vec(),
            CodecError::Truncated { needed: 12, have: 11 },
        ),
    ];
    for (name, bytes, want) in corpus {
        let got = ControlMessage::decode(&bytes);
        c.check(got == Err(want.clone()), format!("{name}: {got:?}"));
    }
    let too_many = ControlMessage::PolicyUpdate(PolicyUpdateMsg {
        stream: StreamId(1),
        egresses: vec![(EgressId(0), Fixed16::ZERO); 256],
    });
    c.check(
        too_many.encode() == Err(CodecError::TooManyEntries(256)),
        "256 entries refused",
    );
    c.finish();
}

fn throughput_run() -> Report {
    let processes = [1, 2].map(|p| {
        json!({
            "process_id": p, "egress_addr": "127.0.0.1:0",
            "requirements": [{"stream_id": 1, "threshold": 0.99, "strategy": "differential"}]
        })
    });
    let scenario: Scenario = serde_json::from_value(json!({
        "seed": 3,
        "duration_s": 30,
        "edge": {"control_addr": "127.0.0.1:0"},
        "sensors": [{
            "stream_id": 1, "ingress_addr": "127.0.0.1:0", "control_addr": "127.0.0.1:0",
            "source": {"kind": "synthetic", "gop_length": 12, "packets_per_frame": 2300, "fps": 30}
        }],
        "processes": processes
    }))
    .unwrap();
    run(&scenario).unwrap()
}

#[test]
fn criterion_8_throughput() {
    let _live = LIVE.lock().unwrap_or_else(|e| e.into_inner());
    let mut c = Checks::new(8, "throughput");
    let start = Instant::now();
    let r = throughput_run();
    let elapsed = start.elapsed();
    let edge = &r.edges[0];
    match edge.measured_bps {
        Some(b) => c.check(b >= 100e6, format!("edge ingress {:.1} Mbps", b / 1e6)),
        None => c.check(false, "no edge bitrate measured"),
    }
    c.check(r.egresses.len() == 2, format!("{} egresses", r.egresses.len()));
    for e in &r.egresses {
        c.check(
            e.overflow_dropped == 0 && e.conserved,
            format!("process {}: {} overflow drops", e.process, e.overflow_dropped),
        );
    }
    c.check(
        elapsed >= Duration::from_secs(30),
        format!("{:.1} s", elapsed.as_secs_f64()),
    );
    c.finish();
}

#[test]
fn criterion_9_cpu_trend() {
    let mut c = Checks::new(9, "cpu proxy trend");
    let proxy = CpuProxy::default();
    let spec = SyntheticSpec::new(12, 8, 25.0);
    let sweep = cpu_sweep(&spec, 1200, 2, &[0.0, 0.2, 0.4, 0.6, 0.8], &proxy);
    let parsed = sweep[0].tally.parsed;
    c.check(sweep.iter().all(|p| p.tally.parsed == parsed), "ingress held fixed");
    let points: Vec<(f64, f64)> = sweep.iter().map(|p| (p.suppressed as f64, p.cost.total)).collect();
    let (slope, _, residual) = linear_fit(&points);
    c.check(
        (slope + proxy.c_clone).abs() < 1e-9,
        format!("slope {slope:.9} vs -{}", proxy.c_clone),
    );
    c.check(residual < 1e-6, format!("max residual {residual:.3e}"));
    c.check(
        points.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 < w[0].1),
        "cost falls as suppression rises",
    );
    c.finish();
}
