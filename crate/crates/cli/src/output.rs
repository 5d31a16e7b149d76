//! Trace and event-log files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use petreg::SimTrace;

use crate::plot;

/// Exact round-trip formatting: 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Column names of `trace.csv`.
pub fn trace_header(trace: &SimTrace) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    for a in &trace.agents {
        let i = a.agent;
        let states = |name: &str| -> Vec<String> {
            if a.order == 1 {
                vec![format!("{name}_{i}")]
            } else {
                (1..=a.order).map(|k| format!("{name}_{i}_{k}")).collect()
            }
        };
        cols.extend(states("X"));
        cols.extend(states("X_hat"));
        cols.push(format!("U_{i}"));
        cols.push(format!("e_{i}"));
        cols.extend((1..=a.nv).map(|k| format!("v_hat_{i}_{k}")));
        if a.phi.is_some() {
            cols.push(format!("phi_{i}"));
        }
        if !a.lyapunov.is_empty() {
            cols.push(format!("V_{i}"));
            cols.push(format!("w1_{i}"));
        }
        if !a.krasovskii.is_empty() {
            cols.push(format!("calV_{i}"));
        }
    }
    cols
}

fn trace_row(trace: &SimTrace, k: usize) -> Vec<f64> {
    let mut row = vec![trace.times[k]];
    for a in &trace.agents {
        row.extend_from_slice(a.x_at(k));
        row.extend_from_slice(a.x_hat_at(k));
        row.push(a.u[k]);
        row.push(a.e[k]);
        row.extend_from_slice(a.v_hat_at(k));
        if let Some(phi) = &a.phi {
            row.push(phi[k]);
        }
        if !a.lyapunov.is_empty() {
            row.push(a.lyapunov[k].total);
            row.push(a.w_end[k]);
        }
        if !a.krasovskii.is_empty() {
            row.push(a.krasovskii[k].total);
        }
    }
    row
}

/// Writes every `stride`-th row; the last row is always included.
pub fn write_trace_csv(trace: &SimTrace, path: &Path, stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(trace_header(trace))?;
    let last = trace.len().saturating_sub(1);
    for k in (0..trace.len()).filter(|&k| k % stride == 0 || k == last) {
        w.write_record(trace_row(trace, k).into_iter().map(fmt_num))?;
    }
    w.flush()?;
    Ok(())
}

/// Header and numeric rows of a CSV written by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|s| {
                    s.parse::<f64>()
                        .with_context(|| format!("bad number {s:?}"))
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((header, rows))
}

pub fn write_net_events(trace: &SimTrace, path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "t_event",
        "sender",
        "receiver",
        "kind",
        "deviation_norm",
        "threshold",
    ])?;
    for e in &trace.net_events {
        w.write_record([
            fmt_num(e.t),
            e.sender.to_string(),
            e.receiver.to_string(),
            e.kind.as_str().to_string(),
            fmt_num(e.deviation),
            fmt_num(e.threshold),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sensor_events(trace: &SimTrace, path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["t_event", "agent", "phi_value", "deviation", "threshold"])?;
    for e in &trace.sensor_events {
        w.write_record([
            fmt_num(e.t),
            e.agent.to_string(),
            fmt_num(e.phi),
            fmt_num(e.deviation),
            fmt_num(e.threshold),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct OutputOptions {
    pub csv_stride: usize,
    pub plots: bool,
}

/// Writes the trace, both event logs and, optionally, SVG plots into `dir`.
pub fn emit_outputs(trace: &SimTrace, dir: &Path, opts: OutputOptions) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();

    let p = dir.join("trace.csv");
    write_trace_csv(trace, &p, opts.csv_stride)?;
    written.push(p);
    let p = dir.join("events_net.csv");
    write_net_events(trace, &p)?;
    written.push(p);
    let p = dir.join("events_sensor.csv");
    write_sensor_events(trace, &p)?;
    written.push(p);

    if opts.plots {
        for (name, svg) in plot::figures(trace) {
            let p = dir.join(name);
            fs::write(&p, svg).with_context(|| format!("writing {}", p.display()))?;
            written.push(p);
        }
    }
    Ok(written)
}
