//! String-stability measurements.
//!
//! A leader speed perturbation is injected and the platoon is re-planned.
//! For each vehicle the deviation of its equivalent traction acceleration
//! from the unperturbed plan is sampled on the spatial grid, and the
//! platoon is string stable when no follower's deviation norm exceeds its
//! predecessor's.

use serde::{Deserialize, Serialize};

use crate::cost::{gap_error, CostWeights};
use crate::fuel::equivalent_traction_accel;
use crate::platoon::{ControlTrajectory, InitialState, PlatoonConfig, PlatoonState};
use crate::receding::{receding_horizon_run, RecedingOptions, SpeedDisturbance};
use crate::solver::{solve, Problem, SolverOptions};
use crate::terrain::SlopeProfile;
use crate::{Error, Result};

/// Tolerance on the transfer ratio when judging stability.
pub const STABILITY_SLACK: f64 = 1e-6;

/// Deviation norms below this are treated as zero when forming ratios.
pub const NEGLIGIBLE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationShape {
    /// Persistent change of the leader's speed from the onset on.
    Step,
    /// Speed change at the onset, reversed after `duration` metres.
    Pulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Leader speed change δ, m/s.
    pub magnitude: f64,
    pub shape: PerturbationShape,
    /// Where the perturbation starts, m. A step at 0 perturbs the initial
    /// condition of a one-shot plan; anything else runs receding horizon.
    #[serde(default)]
    pub onset_position: f64,
    /// Pulse length, m.
    #[serde(default)]
    pub duration: f64,
    /// Window used when the perturbation occurs mid-route.
    #[serde(default)]
    pub receding: RecedingOptions,
}

impl PerturbationSpec {
    pub fn step(magnitude: f64) -> Self {
        Self {
            magnitude,
            shape: PerturbationShape::Step,
            onset_position: 0.0,
            duration: 0.0,
            receding: RecedingOptions::default(),
        }
    }

    pub fn validate(&self, route_length: f64) -> Result<()> {
        if !(self.magnitude.is_finite() && self.magnitude != 0.0) {
            return Err(Error::Config("perturbation magnitude must be non-zero".into()));
        }
        if !(0.0..route_length).contains(&self.onset_position) {
            return Err(Error::Config(format!(
                "perturbation onset {} m lies outside the route [0, {route_length})",
                self.onset_position
            )));
        }
        if self.shape == PerturbationShape::Pulse && !(self.duration > 0.0) {
            return Err(Error::Config("pulse duration must be > 0".into()));
        }
        Ok(())
    }

    fn one_shot(&self) -> bool {
        self.shape == PerturbationShape::Step && self.onset_position == 0.0
    }

    fn disturbances(&self) -> Vec<SpeedDisturbance> {
        let mut d = vec![SpeedDisturbance {
            position: self.onset_position,
            vehicle: 0,
            delta: self.magnitude,
        }];
        if self.shape == PerturbationShape::Pulse {
            d.push(SpeedDisturbance {
                position: self.onset_position + self.duration,
                vehicle: 0,
                delta: -self.magnitude,
            });
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `gamma[j-1]` is ‖Δa_{j+1}‖ / ‖Δa_j‖ in 1-based vehicle numbering;
    /// `None` when the denominator vanishes.
    pub gamma: Vec<Option<f64>>,
    /// `gamma_vs_leader[j-1]` is ‖Δa_{j+1}‖ / ‖Δa_1‖.
    pub gamma_vs_leader: Vec<Option<f64>>,
    /// Discrete L2 norm of each vehicle's deviation, leader first.
    pub deviation_norms: Vec<f64>,
    pub stable: bool,
    /// Deviation series, one row per vehicle, one entry per running step.
    #[serde(skip)]
    pub deviations: Vec<Vec<f64>>,
    pub converged: bool,
}

impl StabilityReport {
    pub fn max_gamma(&self) -> Option<f64> {
        self.gamma.iter().flatten().cloned().reduce(f64::max)
    }
}

/// Equivalent traction acceleration of every vehicle at every running step.
pub fn traction_series(
    states: &PlatoonState,
    controls: &ControlTrajectory,
    config: &PlatoonConfig,
    profile: &SlopeProfile,
) -> Vec<Vec<f64>> {
    (0..config.n())
        .map(|i| {
            (0..controls.len())
                .map(|k| {
                    let theta = profile.grade_or_flat(k as f64 * config.ds);
                    equivalent_traction_accel(
                        controls.accels[(i, k)],
                        states.speed(i, k),
                        theta,
                        &config.vehicles[i],
                        config,
                    )
                })
                .collect()
        })
        .collect()
}

/// Builds the report from per-vehicle deviation series sampled every `ds`.
pub fn transfer_ratios(deviations: Vec<Vec<f64>>, ds: f64, converged: bool) -> StabilityReport {
    let norms: Vec<f64> = deviations
        .iter()
        .map(|d| (ds * d.iter().map(|x| x * x).sum::<f64>()).sqrt())
        .collect();
    let ratio = |num: f64, den: f64| (den > NEGLIGIBLE_NORM).then(|| num / den);
    let gamma: Vec<Option<f64>> = norms.windows(2).map(|w| ratio(w[1], w[0])).collect();
    let gamma_vs_leader = norms[1..].iter().map(|&x| ratio(x, norms[0])).collect();
    let stable = norms.windows(2).zip(&gamma).all(|(w, g)| match g {
        Some(g) => *g <= 1.0 + STABILITY_SLACK,
        None => w[1] <= NEGLIGIBLE_NORM,
    });
    StabilityReport {
        gamma,
        gamma_vs_leader,
        deviation_norms: norms,
        stable,
        deviations,
        converged,
    }
}

/// Plans the platoon with and without the perturbation and measures how the
/// acceleration deviation propagates.
pub fn run_perturbation(
    config: &PlatoonConfig,
    weights: &CostWeights,
    profile: &SlopeProfile,
    initial: &InitialState,
    spec: &PerturbationSpec,
    solver: &SolverOptions,
) -> Result<StabilityReport> {
    config.validate()?;
    spec.validate(config.horizon_length())?;

    let (nominal, perturbed, converged) = if spec.one_shot() {
        let base = solve(&Problem::new(config.clone(), *weights, profile, initial)?, solver)?;
        let mut shifted = initial.clone();
        let v = 1.0 / shifted.slownesses[0] + spec.magnitude;
        if !(v > 0.0) {
            return Err(Error::Domain(format!("perturbed leader speed {v} m/s is not positive")));
        }
        shifted.slownesses[0] = 1.0 / v;
        let pert = solve(&Problem::new(config.clone(), *weights, profile, &shifted)?, solver)?;
        let converged = base.converged && pert.converged;
        ((base.states, base.controls), (pert.states, pert.controls), converged)
    } else {
        let run = |d: &[SpeedDisturbance]| {
            receding_horizon_run(config, weights, profile, initial, &spec.receding, solver, d).map_err(Error::from)
        };
        let base = run(&[])?;
        let pert = run(&spec.disturbances())?;
        let converged = base.all_converged() && pert.all_converged();
        ((base.states, base.controls), (pert.states, pert.controls), converged)
    };

    let a0 = traction_series(&nominal.0, &nominal.1, config, profile);
    let a1 = traction_series(&perturbed.0, &perturbed.1, config, profile);
    let deviations = a0
        .iter()
        .zip(&a1)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| q - p).collect())
        .collect();
    Ok(transfer_ratios(deviations, config.ds, converged))
}

/// Gap error of every follower at every step: `t_1 − t_i + (i−1)h` with
/// 1-based `i`, so a follower lagging behind its slot has a negative error.
/// Row `i-1` of the result belongs to vehicle `i+1`.
pub fn following_errors(plan: &PlatoonState, config: &PlatoonConfig) -> Vec<Vec<f64>> {
    (1..plan.n())
        .map(|i| {
            (0..plan.len())
                .map(|k| gap_error(&plan.step(k), i, config.headway))
                .collect()
        })
        .collect()
}

/// Largest absolute value of `series` over the fractional span `[from, to]`
/// of its indices.
pub fn max_abs_over(series: &[f64], from: f64, to: f64) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let last = series.len() - 1;
    let lo = (from * last as f64).floor() as usize;
    let hi = ((to * last as f64).ceil() as usize).min(last);
    series[lo..=hi].iter().map(|x| x.abs()).fold(0.0, f64::max)
}
