//! Receding-horizon execution: solve over a short spatial window, execute
//! its first few steps, shift and repeat.
//!
//! Window problems are anchored to the route-wide schedule: vehicle times are
//! measured relative to when the leader is due at the window start, so the
//! terminal target of every window is the leader's on-schedule arrival at
//! the window end.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::CostWeights;
use crate::platoon::{
    slowness_index, steps_for, time_index, ControlTrajectory, InitialState, PlatoonConfig, PlatoonState,
};
use crate::solver::{solve_from, Problem, SolverOptions, WarmStart};
use crate::terrain::SlopeProfile;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecedingOptions {
    /// Planning window length, m.
    pub window: f64,
    /// Distance executed between re-plans, m.
    pub replan_interval: f64,
}

impl Default for RecedingOptions {
    fn default() -> Self {
        Self {
            window: 40.0,
            replan_interval: 5.0,
        }
    }
}

impl RecedingOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.replan_interval > 0.0 && self.window >= self.replan_interval) {
            return Err(Error::Config(format!(
                "window {} m must be at least the replan interval {} m (> 0)",
                self.window, self.replan_interval
            )));
        }
        Ok(())
    }
}

/// An exogenous speed change applied to one vehicle at a re-plan boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedDisturbance {
    /// Applied at the first re-plan boundary at or beyond this position, m.
    pub position: f64,
    pub vehicle: usize,
    /// Speed change, m/s.
    pub delta: f64,
}

/// Statistics of one window solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Execution {
    /// Window start, m.
    pub position: f64,
    pub steps: usize,
    /// Solve wall time, s.
    pub wall_time: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_violation: f64,
}

/// The executed route-wide plan. Times are relative to the leader's initial
/// arrival.
#[derive(Debug, Clone)]
pub struct RecedingRun {
    pub states: PlatoonState,
    pub controls: ControlTrajectory,
    pub executions: Vec<Execution>,
}

impl RecedingRun {
    pub fn all_converged(&self) -> bool {
        self.executions.iter().all(|e| e.converged)
    }

    pub fn timings(&self) -> Vec<f64> {
        self.executions.iter().map(|e| e.wall_time).collect()
    }

    pub fn max_violation(&self) -> f64 {
        self.executions.iter().map(|e| e.max_violation).fold(0.0, f64::max)
    }
}

/// A window solve failed; `partial` holds everything executed before it.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct Aborted {
    pub partial: Box<RecedingRun>,
    #[source]
    pub error: Error,
}

impl From<Aborted> for Error {
    fn from(a: Aborted) -> Self {
        a.error
    }
}

/// Runs the receding-horizon loop over `config.horizon_steps` steps.
pub fn receding_horizon_run(
    config: &PlatoonConfig,
    weights: &CostWeights,
    profile: &SlopeProfile,
    initial: &InitialState,
    options: &RecedingOptions,
    solver: &SolverOptions,
    disturbances: &[SpeedDisturbance],
) -> std::result::Result<RecedingRun, Aborted> {
    let n = config.n();
    let mut executed_x: Vec<DVector<f64>> = Vec::new();
    let mut executed_u: Vec<DVector<f64>> = Vec::new();
    let mut executions = Vec::new();

    let setup = (|| -> Result<(usize, usize, DVector<f64>)> {
        config.validate()?;
        weights.validate()?;
        solver.validate()?;
        options.validate()?;
        initial.validate(n)?;
        if let Some(d) = disturbances.iter().find(|d| d.vehicle >= n || !d.delta.is_finite()) {
            return Err(Error::Config(format!(
                "disturbance on vehicle {} is invalid",
                d.vehicle
            )));
        }
        let window = steps_for(options.window, config.ds);
        let replan = steps_for(options.replan_interval, config.ds).min(window);
        Ok((window, replan, initial.rebased().to_vector()))
    })();
    let (window, replan, mut x) = match setup {
        Ok(v) => v,
        Err(error) => {
            return Err(Aborted {
                partial: Box::new(assemble(&[], &[], n, executions)),
                error,
            })
        }
    };

    let total = config.horizon_steps;
    let pace = config.ds / config.target_speed;
    let mut applied = vec![false; disturbances.len()];
    let mut warm: Option<Vec<DVector<f64>>> = None;
    let mut k0 = 0usize;
    executed_x.push(x.clone());

    while k0 < total {
        let w = window.min(total - k0);
        let position = k0 as f64 * config.ds;
        let anchor = k0 as f64 * pace;
        let outcome = (|| -> Result<_> {
            let local_cfg = PlatoonConfig {
                horizon_steps: w,
                ..config.clone()
            };
            let thetas = (k0..k0 + w)
                .map(|k| profile.grade_or_flat(k as f64 * config.ds))
                .collect();
            let problem = Problem::from_parts(local_cfg, *weights, thetas, shift_times(&x, n, -anchor))?;
            let controls = warm.take().map(|mut u| {
                u.resize(w, DVector::zeros(n));
                u
            });
            solve_from(
                &problem,
                solver,
                WarmStart {
                    controls,
                    multipliers: None,
                },
            )
        })();
        let report = match outcome {
            Ok(r) => r,
            Err(e) => {
                return Err(Aborted {
                    partial: Box::new(assemble(&executed_x, &executed_u, n, executions)),
                    error: Error::Window {
                        position,
                        source: Box::new(e),
                    },
                })
            }
        };

        let r = if w == total - k0 { w } else { replan };
        let local_x = report.state_steps();
        let local_u = report.control_steps();
        for k in 0..r {
            executed_u.push(local_u[k].clone());
            executed_x.push(shift_times(&local_x[k + 1], n, anchor));
        }
        executions.push(Execution {
            position,
            steps: w,
            wall_time: report.wall_time,
            iterations: report.inner_iterations,
            converged: report.converged,
            max_violation: report.max_violation,
        });
        k0 += r;
        x = executed_x.last().cloned().unwrap_or(x);

        let boundary = k0 as f64 * config.ds;
        for (d, done) in disturbances.iter().zip(applied.iter_mut()) {
            if !*done && d.position <= boundary + 1e-9 && k0 < total {
                let p = slowness_index(d.vehicle);
                let v = 1.0 / x[p] + d.delta;
                if !(v > 0.0) {
                    return Err(Aborted {
                        partial: Box::new(assemble(&executed_x, &executed_u, n, executions)),
                        error: Error::Domain(format!(
                            "disturbance at {} m drives vehicle {} to non-positive speed",
                            d.position, d.vehicle
                        )),
                    });
                }
                x[p] = 1.0 / v;
                *done = true;
                // The record shows the speed actually held at the boundary.
                if let Some(last) = executed_x.last_mut() {
                    *last = x.clone();
                }
            }
        }
        warm = Some(local_u[r..].to_vec());
    }

    Ok(assemble(&executed_x, &executed_u, n, executions))
}

fn shift_times(x: &DVector<f64>, n: usize, offset: f64) -> DVector<f64> {
    let mut out = x.clone();
    for i in 0..n {
        out[time_index(i)] += offset;
    }
    out
}

fn assemble(xs: &[DVector<f64>], us: &[DVector<f64>], n: usize, executions: Vec<Execution>) -> RecedingRun {
    let states = if xs.is_empty() {
        PlatoonState::from_steps(&[DVector::zeros(2 * n)])
    } else {
        PlatoonState::from_steps(xs)
    };
    RecedingRun {
        states,
        controls: ControlTrajectory::from_steps(us, n),
        executions,
    }
}
