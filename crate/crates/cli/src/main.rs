use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bytes::Bytes;
use clap::{Parser, Subcommand, ValueEnum};
use edgecast::dpi::{find_video_pids, scan_datagram, Classifier};
use edgecast::metrics::{
    cpu_rows, cpu_sweep, decodability_curve, decodability_rows, detection_rows, emit_report, write_plot_csv, CpuProxy,
    PlotRow, Report,
};
use edgecast::qoc::DetectionTable;
use edgecast::runner::{run, simulate};
use edgecast::scenario::{CheckReport, Scenario};
use edgecast::sensor::{SyntheticSpec, DEFAULT_VIDEO_PID};

#[derive(Parser)]
#[command(
    name = "edgecast",
    version,
    about = "Quality-aware video stream replication at the edge"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report.
    Run {
        scenario: PathBuf,
        /// Report path; overrides the scenario's `report`. Defaults to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Run length in seconds, overriding `duration_s`.
        #[arg(long)]
        duration: Option<f64>,
        /// Seed for synthetic sources, overriding `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Use a virtual clock instead of sockets; the report is reproducible.
        #[arg(long)]
        simulate: bool,
    },
    /// Validate a scenario and print the planned qualities and bandwidths.
    Check {
        scenario: PathBuf,
        /// Print the plan as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print the class of every packet in a TS capture as CSV.
    ReplayClassify {
        file: PathBuf,
        /// Video PID; repeatable. Defaults to the H.264 PIDs in the PMT.
        #[arg(long = "pid", value_parser = parse_pid)]
        pids: Vec<u16>,
    },
    /// Write curve data as `x,series,value` CSV.
    Plot {
        #[arg(value_enum)]
        curve: Curve,
        /// Output path. Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Curve {
    /// Decodable-frame ratio against packet loss for both dropping strategies.
    Decodability,
    /// Detection rate against packet loss from the built-in table.
    Detection,
    /// Edge proxy cost against the edge suppression rate.
    Cpu,
}

fn parse_pid(s: &str) -> Result<u16, String> {
    let v = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u16::from_str_radix(hex, 16),
        None => s.parse(),
    }
    .map_err(|e| format!("{s:?}: {e}"))?;
    if v > 0x1FFF {
        return Err(format!("{s:?}: PIDs are 13 bits"));
    }
    Ok(v)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EDGECAST_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            report,
            duration,
            seed,
            simulate,
        } => cmd_run(&scenario, report, duration, seed, simulate),
        Command::Check { scenario, json } => cmd_check(&scenario, json),
        Command::ReplayClassify { file, pids } => cmd_classify(&file, pids),
        Command::Plot { curve, out } => cmd_plot(curve, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_run(
    path: &Path,
    report: Option<PathBuf>,
    duration: Option<f64>,
    seed: Option<u64>,
    sim: bool,
) -> Result<ExitCode> {
    let mut scenario = Scenario::load(path)?;
    if let Some(d) = duration {
        scenario.duration_s = d;
    }
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let r = if sim { simulate(&scenario)? } else { run(&scenario)? };
    summarize(&r);
    match report.or(scenario.report.clone()) {
        Some(p) => {
            emit_report(&r, &p).with_context(|| format!("writing {}", p.display()))?;
            eprintln!("report written to {}", p.display());
        }
        None => {
            let mut out = output(None)?;
            serde_json::to_writer_pretty(&mut out, &r)?;
            writeln!(out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize(r: &Report) {
    for s in &r.sensors {
        let state = if s.paused { "paused" } else { "sending" };
        let rate = s
            .measured_bps
            .map(|b| format!("{:.3} Mbps", b / 1e6))
            .unwrap_or_else(|| "-".into());
        eprintln!("stream {}: {state}, keep {:.4}, {rate}", s.stream, s.keep);
    }
    for e in &r.egresses {
        eprintln!(
            "stream {} -> process {}: forwarded {}, suppressed {}, overflow {}",
            e.stream,
            e.process,
            e.forwarded.total(),
            e.policy_suppressed,
            e.overflow_dropped
        );
    }
    for msg in r.control.rejected.iter().chain(&r.control.unacked) {
        eprintln!("warning: {msg}");
    }
}

fn cmd_check(path: &Path, json: bool) -> Result<ExitCode> {
    let scenario = Scenario::load(path)?;
    let report = match scenario.check_report() {
        Ok(r) => r,
        Err(errs) => {
            for e in errs {
                eprintln!("invalid: {e}");
            }
            return Ok(ExitCode::FAILURE);
        }
    };
    let mut out = output(None)?;
    if json {
        serde_json::to_writer_pretty(&mut out, &report)?;
        writeln!(out)?;
    } else {
        print_check(&mut out, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn print_check(out: &mut impl Write, r: &CheckReport) -> io::Result<()> {
    let mbps = |b: f64| b / 1e6;
    for s in &r.streams {
        match s.keep {
            Some(k) => writeln!(
                out,
                "stream {}: keep {k:.4}, {:.3} of {:.3} Mbps",
                s.stream,
                mbps(s.predicted_bps.unwrap_or(0.0)),
                mbps(s.full_bps)
            )?,
            None => writeln!(out, "stream {}: unused, sensor paused", s.stream)?,
        }
        for (p, need) in &s.omega {
            let delta = s.delta.get(p).copied().unwrap_or(0.0);
            writeln!(out, "  process {p}: needs keep {need:.4}, edge suppression {delta:.4}")?;
        }
    }
    writeln!(out, "processes: {}", r.processes.len())?;
    writeln!(out, "full replication: {:.3} Mbps", mbps(r.bandwidth_full_bps))?;
    writeln!(out, "sensor egress: {:.3} Mbps", mbps(r.sensor_egress_bps))?;
    writeln!(out, "saved: {:.3} Mbps", mbps(r.bandwidth_saved_bps))
}

fn cmd_classify(path: &Path, pids: Vec<u16>) -> Result<ExitCode> {
    let data = Bytes::from(std::fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    let packets = scan_datagram(&data).with_context(|| format!("parsing {}", path.display()))?;
    let pids = if pids.is_empty() {
        let found = find_video_pids(&packets);
        if found.is_empty() {
            log::warn!("no H.264 PID announced; assuming {DEFAULT_VIDEO_PID:#x}");
            [DEFAULT_VIDEO_PID].into()
        } else {
            found
        }
    } else {
        pids.into_iter().collect()
    };
    let mut classifier = Classifier::new(pids);
    let mut out = output(None)?;
    writeln!(out, "index,pid,pusi,class")?;
    for (i, pkt) in packets.iter().enumerate() {
        let class = classifier.classify(pkt);
        let name = serde_json::to_value(class)?;
        writeln!(
            out,
            "{i},{},{},{}",
            pkt.pid,
            u8::from(pkt.pusi),
            name.as_str().unwrap_or_default()
        )?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(curve: Curve, out_path: Option<PathBuf>) -> Result<ExitCode> {
    let rows: Vec<PlotRow> = match curve {
        Curve::Decodability => {
            let spec = SyntheticSpec::new(12, 8, 25.0);
            let losses: Vec<f64> = (0..=20).map(|i| f64::from(i) * 0.005).collect();
            let seeds: Vec<u64> = (1..=10).collect();
            decodability_rows(&decodability_curve(&spec, 30, &losses, &seeds))
        }
        Curve::Detection => {
            let losses: Vec<f64> = (0..=24).map(|i| f64::from(i) * 0.25).collect();
            detection_rows(&DetectionTable::builtin(), &losses)
        }
        Curve::Cpu => {
            let spec = SyntheticSpec::new(12, 8, 25.0);
            let deltas: Vec<f64> = (0..=10).map(|i| f64::from(i) * 0.1).collect();
            cpu_rows(&cpu_sweep(&spec, 600, 2, &deltas, &CpuProxy::default()))
        }
    };
    if rows.is_empty() {
        bail!("no curve data");
    }
    let mut out = output(out_path.as_deref())?;
    write_plot_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}
