//! End-to-end experiments on a [`Scenario`]: plan, compare against the
//! baseline, probe string stability and time the receding-horizon loop.

use serde::Serialize;

use crate::baseline::simulate_baseline;
use crate::cost::CostBreakdown;
use crate::fuel::{platoon_fuel, FuelSeries};
use crate::platoon::{resimulate_time_domain, ControlTrajectory, PlatoonState, TimeTrace};
use crate::receding::{receding_horizon_run, Execution, RecedingOptions};
use crate::scenario::{HorizonMode, Scenario};
use crate::solver::{solve, IterationRecord, Problem};
use crate::stability::{following_errors, run_perturbation, StabilityReport};
use crate::{Error, Result};

/// Sampling step for replaying plans in the time domain, s.
pub const REPLAY_DT: f64 = 0.05;

/// An Eco-CACC plan for the whole route.
#[derive(Debug, Clone)]
pub struct Plan {
    pub states: PlatoonState,
    pub controls: ControlTrajectory,
    pub cost: CostBreakdown,
    pub converged: bool,
    pub max_violation: f64,
    /// Per-solve iteration history (one-shot plans only).
    pub iterations: Vec<IterationRecord>,
    /// Per-window statistics (receding-horizon plans only).
    pub executions: Vec<Execution>,
    /// Wall time of every solve, s.
    pub solve_times: Vec<f64>,
}

pub fn plan(scenario: &Scenario) -> Result<Plan> {
    let problem = Problem::new(
        scenario.config.clone(),
        scenario.weights,
        &scenario.profile,
        &scenario.initial,
    )?;
    match scenario.horizon {
        HorizonMode::OneShot => {
            let r = solve(&problem, &scenario.solver)?;
            Ok(Plan {
                states: r.states,
                controls: r.controls,
                cost: r.cost,
                converged: r.converged,
                max_violation: r.max_violation,
                iterations: r.iterations,
                executions: Vec::new(),
                solve_times: vec![r.wall_time],
            })
        }
        HorizonMode::Receding {
            window,
            replan_interval,
        } => {
            let run = receding_horizon_run(
                &scenario.config,
                &scenario.weights,
                &scenario.profile,
                &scenario.initial,
                &RecedingOptions {
                    window,
                    replan_interval,
                },
                &scenario.solver,
                &[],
            )?;
            let steps = run.states.steps();
            let controls = run.controls.steps();
            Ok(Plan {
                cost: problem.cost(&steps, &controls),
                max_violation: problem.max_violation(&steps, &controls),
                converged: run.all_converged(),
                solve_times: run.timings(),
                states: run.states,
                controls: run.controls,
                iterations: Vec::new(),
                executions: run.executions,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub plan: Plan,
    pub eco_traces: Vec<TimeTrace>,
    pub baseline_traces: Vec<TimeTrace>,
    pub eco_fuel: Vec<FuelSeries>,
    pub baseline_fuel: Vec<FuelSeries>,
    /// Baseline minus Eco-CACC fuel in each road segment, summed over the
    /// platoon, L.
    pub segment_deltas: Vec<f64>,
}

impl Comparison {
    pub fn eco_total(&self) -> f64 {
        self.eco_fuel.iter().map(FuelSeries::total).sum()
    }

    pub fn baseline_total(&self) -> f64 {
        self.baseline_fuel.iter().map(FuelSeries::total).sum()
    }

    /// Fuel saved relative to the baseline, percent.
    pub fn savings_percent(&self) -> f64 {
        100.0 * (self.baseline_total() - self.eco_total()) / self.baseline_total()
    }
}

pub fn compare(scenario: &Scenario) -> Result<Comparison> {
    let plan = plan(scenario)?;
    let eco_traces = resimulate_time_domain(&plan.states, &plan.controls, scenario.config.ds, REPLAY_DT)?;
    let baseline_traces = simulate_baseline(
        &scenario.config,
        &scenario.initial,
        scenario.config.horizon_length(),
        &scenario.baseline,
    )?;
    let eco_fuel = platoon_fuel(&scenario.fuel, &eco_traces, &scenario.profile, &scenario.config)?;
    let baseline_fuel = platoon_fuel(&scenario.fuel, &baseline_traces, &scenario.profile, &scenario.config)?;
    let segments = scenario.profile.segments().count();
    let mut segment_deltas = vec![0.0; segments];
    for (e, b) in eco_fuel.iter().zip(&baseline_fuel) {
        let (e, b) = (e.per_segment(&scenario.profile), b.per_segment(&scenario.profile));
        for s in 0..segments {
            segment_deltas[s] += b[s] - e[s];
        }
    }
    Ok(Comparison {
        plan,
        eco_traces,
        baseline_traces,
        eco_fuel,
        baseline_fuel,
        segment_deltas,
    })
}

/// Fuel deltas summed over uphill and downhill segments.
pub fn grade_split(scenario: &Scenario, deltas: &[f64]) -> (f64, f64) {
    scenario
        .profile
        .segments()
        .zip(deltas)
        .fold((0.0, 0.0), |(up, down), ((_, _, g), d)| {
            if g > 0.0 {
                (up + d, down)
            } else if g < 0.0 {
                (up, down + d)
            } else {
                (up, down)
            }
        })
}

#[derive(Debug, Clone)]
pub struct StabilityOutcome {
    pub report: StabilityReport,
    /// Following errors of the unperturbed plan, one row per follower.
    pub following_errors: Vec<Vec<f64>>,
}

pub fn stability(scenario: &Scenario) -> Result<StabilityOutcome> {
    let spec = scenario
        .perturbation
        .ok_or_else(|| Error::Config(format!("scenario {} has no perturbation", scenario.name)))?;
    let report = run_perturbation(
        &scenario.config,
        &scenario.weights,
        &scenario.profile,
        &scenario.initial,
        &spec,
        &scenario.solver,
    )?;
    let plan = plan(scenario)?;
    Ok(StabilityOutcome {
        report,
        following_errors: following_errors(&plan.states, &scenario.config),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub ds: f64,
    pub window: f64,
    pub executions: usize,
    /// Mean execution time, s. Every repeat performs the same deterministic
    /// sequence of solves, so each execution is timed by its fastest repeat.
    pub mean: f64,
    /// Slowest single execution over all repeats, s.
    pub max: f64,
    pub converged: bool,
}

/// Times the receding-horizon loop for every `(ds, window)` pair, running
/// each pair `repeats` times.
pub fn bench(
    scenario: &Scenario,
    grid: &[f64],
    windows: &[f64],
    replan_interval: f64,
    repeats: usize,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &ds in grid {
        let s = scenario.clone().with_ds(ds)?;
        for &window in windows {
            let options = RecedingOptions {
                window,
                replan_interval: replan_interval.min(window),
            };
            let mut fastest: Vec<f64> = Vec::new();
            let mut max = 0.0f64;
            let mut converged = true;
            for _ in 0..repeats.max(1) {
                let run =
                    receding_horizon_run(&s.config, &s.weights, &s.profile, &s.initial, &options, &s.solver, &[])?;
                let t = run.timings();
                if fastest.is_empty() {
                    fastest = t.clone();
                }
                for (f, x) in fastest.iter_mut().zip(&t) {
                    *f = f.min(*x);
                }
                max = t.iter().cloned().fold(max, f64::max);
                converged &= run.all_converged();
            }
            rows.push(BenchRow {
                ds,
                window,
                executions: fastest.len(),
                mean: fastest.iter().sum::<f64>() / fastest.len().max(1) as f64,
                max,
                converged,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
pub(crate) mod tests {
    use std::path::Path;

    use super::*;

    /// A 60 m rolling road at Δs = 0.5 m, quick enough for unit tests.
    pub(crate) fn small_scenario(horizon: &str) -> Scenario {
        let text = format!(
            r#"{{
              "name": "small",
              "road": {{ "breakpoints_m": [0, 20, 40, 60], "percent_grades": [3, -3, 0] }},
              "platoon": {{ "vehicles": 3, "headway_s": 1.0, "ds_m": 0.5, "route_length_m": 60,
                            "target_speed": {{ "value": 20, "unit": "m/s" }},
                            "speed_limit": {{ "value": 30, "unit": "m/s" }} }},
              "initial": {{ "time_offsets_s": [0, 0.2, -0.1] }},
              "perturbation": {{ "magnitude": 0.5, "shape": "step" }},
              "horizon": {horizon}
            }}"#
        );
        Scenario::from_json_str(&text, Path::new("small.json")).unwrap()
    }

    #[test]
    fn one_shot_plan_records_its_history() {
        let p = plan(&small_scenario(r#"{ "mode": "one_shot" }"#)).unwrap();
        assert!(p.converged);
        assert!(!p.iterations.is_empty());
        assert!(p.executions.is_empty());
        assert_eq!(p.solve_times.len(), 1);
        assert_eq!(p.controls.len(), 120);
    }

    #[test]
    fn receding_plan_records_windows() {
        let p = plan(&small_scenario(
            r#"{ "mode": "receding", "window": 20, "replan_interval": 5 }"#,
        ))
        .unwrap();
        assert!(p.converged);
        assert!(p.iterations.is_empty());
        assert_eq!(p.executions.len(), 9);
        assert_eq!(p.solve_times.len(), 9);
        assert_eq!(p.states.len(), 121);
        assert!(p.cost.total.is_finite());
    }

    #[test]
    fn comparison_totals_add_up() {
        let s = small_scenario(r#"{ "mode": "one_shot" }"#);
        let c = compare(&s).unwrap();
        assert_eq!(c.segment_deltas.len(), 3);
        let delta: f64 = c.segment_deltas.iter().sum();
        assert!((delta - (c.baseline_total() - c.eco_total())).abs() < 1e-9);
        let (up, down) = grade_split(&s, &c.segment_deltas);
        assert_eq!(up, c.segment_deltas[0]);
        assert_eq!(down, c.segment_deltas[1]);
        let pct = 100.0 * delta / c.baseline_total();
        assert!((c.savings_percent() - pct).abs() < 1e-9);
    }

    #[test]
    fn stability_needs_a_perturbation() {
        let mut s = small_scenario(r#"{ "mode": "one_shot" }"#);
        let out = stability(&s).unwrap();
        assert_eq!(out.following_errors.len(), 2);
        assert!(out.report.stable);
        s.perturbation = None;
        assert!(matches!(stability(&s), Err(Error::Config(_))));
    }

    #[test]
    fn bench_reports_one_row_per_pair() {
        let s = small_scenario(r#"{ "mode": "one_shot" }"#);
        let rows = bench(&s, &[1.0, 0.5], &[10.0, 20.0], 5.0, 2).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].ds, rows[0].window), (1.0, 10.0));
        assert_eq!((rows[3].ds, rows[3].window), (0.5, 20.0));
        for r in &rows {
            assert!(r.converged);
            assert!(r.mean > 0.0 && r.mean <= r.max);
        }
        assert_eq!(rows[0].executions, 11);
    }
}
