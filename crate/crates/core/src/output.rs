//! Result files. Every CSV has a header row and a fixed column order, and
//! every file is replaced atomically.

use std::io::Write;
use std::path::Path;

use crate::experiment::{BenchRow, Comparison, Plan};
use crate::fuel::equivalent_traction_accel;
use crate::platoon::{PlatoonConfig, TimeTrace};
use crate::solver::IterationRecord;
use crate::stability::StabilityReport;
use crate::terrain::SlopeProfile;
use crate::{Error, Result};

/// Writes `bytes` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[String]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    fn row(&mut self, cells: &[String]) {
        self.writer.write_record(cells).expect("in-memory write");
    }

    fn finish(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

fn per_vehicle(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// One row per spatial step: arrival time, speed, acceleration and
/// equivalent traction acceleration of every vehicle. The acceleration
/// columns are empty on the final row, which has no outgoing step.
pub fn trajectories_csv(plan: &Plan, config: &PlatoonConfig, profile: &SlopeProfile) -> Vec<u8> {
    let n = config.n();
    let mut header = vec!["position_m".to_string()];
    header.extend(per_vehicle("time_s", n));
    header.extend(per_vehicle("speed_ms", n));
    header.extend(per_vehicle("accel_ms2", n));
    header.extend(per_vehicle("traction_accel_ms2", n));
    let mut t = Table::new(&header);
    let steps = plan.controls.len();
    for k in 0..=steps {
        let s = k as f64 * config.ds;
        let mut row = vec![num(s)];
        row.extend((0..n).map(|i| num(plan.states.arrival_times[(i, k)])));
        row.extend((0..n).map(|i| num(plan.states.speed(i, k))));
        if k < steps {
            let theta = profile.grade_or_flat(s);
            row.extend((0..n).map(|i| num(plan.controls.accels[(i, k)])));
            row.extend((0..n).map(|i| {
                num(equivalent_traction_accel(
                    plan.controls.accels[(i, k)],
                    plan.states.speed(i, k),
                    theta,
                    &config.vehicles[i],
                    config,
                ))
            }));
        } else {
            row.extend(std::iter::repeat_n(String::new(), 2 * n));
        }
        t.row(&row);
    }
    t.finish()
}

/// Follower gap errors, one row per spatial step.
pub fn following_errors_csv(errors: &[Vec<f64>], ds: f64) -> Vec<u8> {
    let mut header = vec!["position_m".to_string()];
    header.extend((2..=errors.len() + 1).map(|i| format!("gap_error_s_{i}")));
    let mut t = Table::new(&header);
    let len = errors.first().map_or(0, Vec::len);
    for k in 0..len {
        let mut row = vec![num(k as f64 * ds)];
        row.extend(errors.iter().map(|e| num(e[k])));
        t.row(&row);
    }
    t.finish()
}

pub fn iterations_csv(records: &[IterationRecord]) -> Vec<u8> {
    let header: Vec<String> = [
        "outer",
        "inner",
        "augmented_cost",
        "max_violation",
        "step",
        "regularization",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut t = Table::new(&header);
    for r in records {
        t.row(&[
            r.outer.to_string(),
            r.inner.to_string(),
            num(r.augmented_cost),
            num(r.max_violation),
            num(r.step),
            num(r.regularization),
        ]);
    }
    t.finish()
}

/// Speed of a time trace at position `s`, interpolated by position.
fn speed_at(trace: &TimeTrace, s: f64) -> f64 {
    let p = &trace.position;
    let idx = p.partition_point(|&x| x < s);
    if idx == 0 {
        return trace.speed[0];
    }
    if idx >= p.len() {
        return *trace.speed.last().unwrap_or(&0.0);
    }
    let (p0, p1) = (p[idx - 1], p[idx]);
    if p1 <= p0 {
        return trace.speed[idx];
    }
    let w = (s - p0) / (p1 - p0);
    trace.speed[idx - 1] * (1.0 - w) + trace.speed[idx] * w
}

/// Speed and cumulative fuel of both controllers, one row per spatial step.
pub fn comparison_csv(cmp: &Comparison, config: &PlatoonConfig) -> Vec<u8> {
    let n = config.n();
    let mut header = vec!["position_m".to_string()];
    header.extend(per_vehicle("eco_speed_ms", n));
    header.extend(per_vehicle("baseline_speed_ms", n));
    header.extend(per_vehicle("eco_fuel_l", n));
    header.extend(per_vehicle("baseline_fuel_l", n));
    let mut t = Table::new(&header);
    for k in 0..=config.horizon_steps {
        let s = k as f64 * config.ds;
        let mut row = vec![num(s)];
        row.extend((0..n).map(|i| num(cmp.plan.states.speed(i, k))));
        row.extend(cmp.baseline_traces.iter().map(|tr| num(speed_at(tr, s))));
        row.extend(cmp.eco_fuel.iter().map(|f| num(f.at(s))));
        row.extend(cmp.baseline_fuel.iter().map(|f| num(f.at(s))));
        t.row(&row);
    }
    t.finish()
}

/// Per-segment fuel of both controllers summed over the platoon.
pub fn segments_csv(cmp: &Comparison, profile: &SlopeProfile) -> Vec<u8> {
    let header: Vec<String> = [
        "segment",
        "start_m",
        "end_m",
        "grade_percent",
        "eco_fuel_l",
        "baseline_fuel_l",
        "saving_l",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut t = Table::new(&header);
    let sum = |series: &[crate::fuel::FuelSeries], seg: usize| -> f64 {
        series.iter().map(|f| f.per_segment(profile)[seg]).sum()
    };
    for (seg, (a, b, g)) in profile.segments().enumerate() {
        t.row(&[
            seg.to_string(),
            num(a),
            num(b),
            num(100.0 * g.tan()),
            num(sum(&cmp.eco_fuel, seg)),
            num(sum(&cmp.baseline_fuel, seg)),
            num(cmp.segment_deltas[seg]),
        ]);
    }
    t.finish()
}

/// Transfer ratios, one row per follower.
pub fn gamma_csv(report: &StabilityReport) -> Vec<u8> {
    let header: Vec<String> = ["vehicle", "deviation_norm", "gamma_vs_predecessor", "gamma_vs_leader"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut t = Table::new(&header);
    let opt = |g: Option<f64>| g.map_or_else(String::new, num);
    t.row(&["1".into(), num(report.deviation_norms[0]), String::new(), String::new()]);
    for j in 1..report.deviation_norms.len() {
        t.row(&[
            (j + 1).to_string(),
            num(report.deviation_norms[j]),
            opt(report.gamma[j - 1]),
            opt(report.gamma_vs_leader[j - 1]),
        ]);
    }
    t.finish()
}

/// Traction-acceleration deviation of every vehicle, one row per step.
pub fn deviations_csv(report: &StabilityReport, ds: f64) -> Vec<u8> {
    let n = report.deviations.len();
    let mut header = vec!["position_m".to_string()];
    header.extend(per_vehicle("delta_traction_accel_ms2", n));
    let mut t = Table::new(&header);
    let len = report.deviations.first().map_or(0, Vec::len);
    for k in 0..len {
        let mut row = vec![num(k as f64 * ds)];
        row.extend(report.deviations.iter().map(|d| num(d[k])));
        t.row(&row);
    }
    t.finish()
}

pub fn bench_csv(rows: &[BenchRow]) -> Vec<u8> {
    let header: Vec<String> = ["ds_m", "window_m", "executions", "mean_s", "max_s", "converged"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut t = Table::new(&header);
    for r in rows {
        t.row(&[
            num(r.ds),
            num(r.window),
            r.executions.to_string(),
            num(r.mean),
            num(r.max),
            r.converged.to_string(),
        ]);
    }
    t.finish()
}

/// A matplotlib script that renders whichever result files are present in
/// its own directory.
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots the CSV files written next to this script."""
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

here = os.path.dirname(os.path.abspath(__file__))


def load(name):
    path = os.path.join(here, name)
    return pd.read_csv(path) if os.path.exists(path) else None


def columns(df, prefix):
    return [c for c in df.columns if c.startswith(prefix)]


def save(fig, name):
    fig.tight_layout()
    fig.savefig(os.path.join(here, name), dpi=150)
    plt.close(fig)


cmp = load("comparison.csv")
if cmp is not None:
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(8, 6))
    for c in columns(cmp, "eco_speed_ms"):
        ax1.plot(cmp.position_m, cmp[c], label=c)
    for c in columns(cmp, "baseline_speed_ms"):
        ax1.plot(cmp.position_m, cmp[c], "--", label=c)
    ax1.set_ylabel("speed (m/s)")
    ax1.legend(fontsize=7)
    ax2.plot(cmp.position_m, cmp[columns(cmp, "eco_fuel_l")].sum(axis=1), label="Eco-CACC")
    ax2.plot(cmp.position_m, cmp[columns(cmp, "baseline_fuel_l")].sum(axis=1), label="CACC")
    ax2.set_xlabel("position (m)")
    ax2.set_ylabel("cumulative fuel (L)")
    ax2.legend()
    save(fig, "fuel.png")

seg = load("segments.csv")
if seg is not None:
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.bar(seg.segment, seg.saving_l, color=["tab:red" if g > 0 else "tab:blue" for g in seg.grade_percent])
    ax.set_xlabel("segment (red: uphill)")
    ax.set_ylabel("fuel saved (L)")
    save(fig, "segments.png")

err = load("following_errors.csv")
if err is not None:
    fig, ax = plt.subplots(figsize=(8, 3))
    for c in columns(err, "gap_error_s"):
        ax.plot(err.position_m, err[c], label=c)
    ax.set_xlabel("position (m)")
    ax.set_ylabel("following error (s)")
    ax.legend()
    save(fig, "following_errors.png")

dev = load("deviations.csv")
if dev is not None:
    fig, ax = plt.subplots(figsize=(8, 3))
    for c in columns(dev, "delta_traction_accel"):
        ax.plot(dev.position_m, dev[c], label=c)
    ax.set_xlabel("position (m)")
    ax.set_ylabel("traction accel deviation (m/s^2)")
    ax.legend()
    save(fig, "deviations.png")

bench = load("bench.csv")
if bench is not None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for ds, group in bench.groupby("ds_m"):
        ax.plot(group.window_m, group.mean_s, "o-", label=f"ds = {ds} m")
    ax.set_xlabel("window (m)")
    ax.set_ylabel("mean execution time (s)")
    ax.legend()
    save(fig, "bench.png")

sys.exit(0)
"#;
