use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use ecoplatoon::experiment::{self, grade_split, Comparison, Plan};
use ecoplatoon::output::{self, write_atomic};
use ecoplatoon::scenario::Scenario;
use ecoplatoon::solver::Expansion;
use ecoplatoon::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

const BENCH_GRID: [f64; 3] = [0.05, 0.1, 1.0];
const BENCH_WINDOWS: [f64; 3] = [20.0, 30.0, 40.0];
const BENCH_REPLAN: f64 = 5.0;
const BENCH_REPEATS: usize = 3;

#[derive(Parser)]
#[command(
    name = "ecoplatoon",
    version,
    about = "Eco-driving platoon planner on rolling terrain"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan the platoon and write trajectories, fuel and solver history.
    Simulate(Common),
    /// Plan the platoon and compare its fuel use with the baseline CACC.
    Compare(Common),
    /// Perturb the leader and measure string stability.
    Stability(Common),
    /// Time receding-horizon executions over a grid of steps and windows.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file, or the name of a preset.
    #[arg(long)]
    scenario: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Spatial step in metres.
    #[arg(long)]
    ds: Option<f64>,
    /// Plan with a receding horizon of this many metres.
    #[arg(long)]
    window: Option<f64>,
    /// Drop second-order dynamics terms from the backward pass.
    #[arg(long)]
    ilqr: bool,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } => Failure::Config(e),
            other => Failure::Runtime(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => load(&c, true).and_then(|s| simulate(&s, &c.out, false)),
        Command::Compare(c) => load(&c, true).and_then(|s| simulate(&s, &c.out, true)),
        Command::Stability(c) => load(&c, true).and_then(|s| stability(&s, &c.out)),
        Command::Bench(c) => load(&c, false).and_then(|s| bench(&s, &c)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: solver did not converge; diagnostics were written");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

/// Loads the scenario and applies command-line overrides. Any failure here is
/// a configuration error.
fn load(args: &Common, apply_grid: bool) -> Result<Scenario, Failure> {
    let build = || -> ecoplatoon::Result<Scenario> {
        let mut s = Scenario::locate(&args.scenario)?;
        if apply_grid {
            if let Some(ds) = args.ds {
                s = s.with_ds(ds)?;
            }
            if let Some(w) = args.window {
                s = s.with_window(w)?;
            }
        }
        if args.ilqr {
            s = s.with_expansion(Expansion::Ilqr);
        }
        Ok(s)
    };
    let s = build().map_err(Failure::Config)?;
    if apply_grid && s.weights_mistuned_for_grid() {
        eprintln!(
            "warning: default cost weights are tuned for ds = 0.1 m; ds = {} m changes their effective scale",
            s.config.ds
        );
    }
    Ok(s)
}

fn write(out: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(&out.join(name), bytes).map_err(Failure::Runtime)
}

fn write_json(out: &Path, name: &str, value: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    write(out, name, format!("{text}\n").as_bytes())
}

fn timing_stats(times: &[f64]) -> Value {
    let count = times.len();
    let total: f64 = times.iter().sum();
    json!({
        "solves": count,
        "total_s": total,
        "mean_s": if count > 0 { total / count as f64 } else { 0.0 },
        "max_s": times.iter().cloned().fold(0.0, f64::max),
    })
}

fn plan_summary(s: &Scenario, plan: &Plan, cmp: &Comparison) -> Value {
    let (uphill, downhill) = grade_split(s, &cmp.segment_deltas);
    json!({
        "scenario": s.name,
        "converged": plan.converged,
        "max_violation": plan.max_violation,
        "fuel_l": { "eco_cacc": cmp.eco_total(), "baseline": cmp.baseline_total() },
        "savings_percent": cmp.savings_percent(),
        "uphill_saving_l": uphill,
        "downhill_saving_l": downhill,
        "cost": {
            "gap": plan.cost.cacc,
            "ecology": plan.cost.ecology,
            "effort": plan.cost.effort,
            "terminal": plan.cost.terminal,
            "total": plan.cost.total,
        },
        "ds_m": s.config.ds,
        "wall_time": timing_stats(&plan.solve_times),
    })
}

fn simulate(s: &Scenario, out: &Path, with_comparison: bool) -> Result<bool, Failure> {
    let cmp = experiment::compare(s)?;
    let plan = &cmp.plan;
    write(
        out,
        "trajectories.csv",
        &output::trajectories_csv(plan, &s.config, &s.profile),
    )?;
    let errors = ecoplatoon::stability::following_errors(&plan.states, &s.config);
    write(
        out,
        "following_errors.csv",
        &output::following_errors_csv(&errors, s.config.ds),
    )?;
    write(out, "iterations.csv", &output::iterations_csv(&plan.iterations))?;
    write(out, "comparison.csv", &output::comparison_csv(&cmp, &s.config))?;
    if with_comparison {
        write(out, "segments.csv", &output::segments_csv(&cmp, &s.profile))?;
    }
    write(out, "plot.py", output::PLOT_SCRIPT.as_bytes())?;
    let summary = plan_summary(s, plan, &cmp);
    write_json(out, "summary.json", &summary)?;
    println!(
        "{}: converged={} eco={:.4} L baseline={:.4} L savings={:.2}%",
        s.name,
        plan.converged,
        cmp.eco_total(),
        cmp.baseline_total(),
        cmp.savings_percent()
    );
    Ok(plan.converged)
}

fn stability(s: &Scenario, out: &Path) -> Result<bool, Failure> {
    let outcome = experiment::stability(s)?;
    let r = &outcome.report;
    write(out, "gamma.csv", &output::gamma_csv(r))?;
    write(out, "deviations.csv", &output::deviations_csv(r, s.config.ds))?;
    write(
        out,
        "following_errors.csv",
        &output::following_errors_csv(&outcome.following_errors, s.config.ds),
    )?;
    write(out, "plot.py", output::PLOT_SCRIPT.as_bytes())?;
    write_json(
        out,
        "summary.json",
        &json!({
            "scenario": s.name,
            "converged": r.converged,
            "stable": r.stable,
            "gamma": r.gamma,
            "gamma_vs_leader": r.gamma_vs_leader,
            "deviation_norms": r.deviation_norms,
            "perturbation": s.perturbation,
        }),
    )?;
    println!(
        "{}: stable={} max gamma={}",
        s.name,
        r.stable,
        r.max_gamma().map_or("undefined".into(), |g| format!("{g:.6}"))
    );
    Ok(r.converged)
}

fn bench(s: &Scenario, args: &Common) -> Result<bool, Failure> {
    let grid: Vec<f64> = args.ds.map_or(BENCH_GRID.to_vec(), |d| vec![d]);
    let windows: Vec<f64> = args.window.map_or(BENCH_WINDOWS.to_vec(), |w| vec![w]);
    let rows = experiment::bench(s, &grid, &windows, BENCH_REPLAN, BENCH_REPEATS)?;
    write(&args.out, "bench.csv", &output::bench_csv(&rows))?;
    write(&args.out, "plot.py", output::PLOT_SCRIPT.as_bytes())?;
    write_json(&args.out, "summary.json", &json!({ "scenario": s.name, "rows": rows }))?;
    for r in &rows {
        println!(
            "ds={} m window={} m executions={} mean={:.4} s max={:.4} s",
            r.ds, r.window, r.executions, r.mean, r.max
        );
    }
    Ok(rows.iter().all(|r| r.converged))
}
