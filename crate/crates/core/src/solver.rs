//! Constrained differential dynamic programming in the space domain.
//!
//! The inner loop alternates a backward pass, which builds quadratic models
//! of the value function and extracts affine feedback laws, with a forward
//! rollout under a backtracking line search on the feedforward term. The
//! outer loop updates the augmented-Lagrangian multipliers and penalties
//! once the inner loop has converged.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{max_violation, AlState, ConstraintSet, SlackPolicy};
use crate::cost::{cost_derivatives, running_cost, terminal_cost, terminal_derivatives, CostBreakdown, CostWeights};
use crate::platoon::{
    dynamics_jacobians, rollout, step_dynamics, ControlTrajectory, InitialState, PlatoonConfig, PlatoonState,
};
use crate::terrain::SlopeProfile;
use crate::{Error, Result};

/// Which second-order dynamics terms enter the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    /// Full DDP: dynamics Hessians contracted with the value gradient.
    #[default]
    Ddp,
    /// Iterative LQR: dynamics linearised only.
    Ilqr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_inner: usize,
    pub max_outer: usize,
    /// Relative change of the augmented cost below which the inner loop may
    /// stop.
    pub cost_tolerance: f64,
    /// Largest control gradient of the augmented cost accepted at inner
    /// convergence.
    pub gradient_tolerance: f64,
    /// Largest admissible constraint residual.
    pub violation_tolerance: f64,
    pub regularization_init: f64,
    pub regularization_factor: f64,
    pub regularization_max: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
    /// Fraction of the predicted decrease a step must achieve.
    pub armijo: f64,
    pub penalty_init: f64,
    pub penalty_factor: f64,
    pub penalty_max: f64,
    pub expansion: Expansion,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_inner: 50,
            max_outer: 8,
            cost_tolerance: 1e-6,
            gradient_tolerance: 1e-4,
            violation_tolerance: 1e-3,
            regularization_init: 1e-6,
            regularization_factor: 10.0,
            regularization_max: 1e6,
            backtrack_factor: 0.5,
            min_step: 1e-8,
            armijo: 1e-4,
            penalty_init: 10.0,
            penalty_factor: 10.0,
            penalty_max: 1e9,
            expansion: Expansion::Ddp,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_inner > 0
            && self.max_outer > 0
            && self.cost_tolerance > 0.0
            && self.gradient_tolerance > 0.0
            && self.violation_tolerance > 0.0
            && self.regularization_init > 0.0
            && self.regularization_factor > 1.0
            && self.regularization_max >= self.regularization_init
            && self.backtrack_factor > 0.0
            && self.backtrack_factor < 1.0
            && self.min_step > 0.0
            && (0.0..1.0).contains(&self.armijo)
            && self.penalty_init > 0.0
            && self.penalty_factor > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("solver options out of range".into()))
        }
    }
}

/// One optimal-control instance over a fixed spatial grid.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: PlatoonConfig,
    pub weights: CostWeights,
    /// Grade at each running step, sampled at the leader's grid point `kΔs`.
    pub thetas: Vec<f64>,
    pub x0: DVector<f64>,
}

impl Problem {
    /// Builds a problem whose horizon covers `config.horizon_steps` steps of
    /// `profile`. Positions past the end of the profile are treated as flat.
    pub fn new(
        config: PlatoonConfig,
        weights: CostWeights,
        profile: &SlopeProfile,
        initial: &InitialState,
    ) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        initial.validate(config.n())?;
        let thetas = (0..config.horizon_steps)
            .map(|k| profile.grade_or_flat(k as f64 * config.ds))
            .collect();
        Ok(Self {
            x0: initial.rebased().to_vector(),
            config,
            weights,
            thetas,
        })
    }

    /// Builds a problem from an explicit grade sequence and start state. Times
    /// in `x0` are used as given, which lets a caller anchor them to an
    /// external schedule.
    pub fn from_parts(config: PlatoonConfig, weights: CostWeights, thetas: Vec<f64>, x0: DVector<f64>) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        if thetas.len() != config.horizon_steps {
            return Err(Error::Config(format!(
                "{} grades supplied for {} steps",
                thetas.len(),
                config.horizon_steps
            )));
        }
        InitialState::from_vector(&x0).validate(config.n())?;
        Ok(Self {
            config,
            weights,
            thetas,
            x0,
        })
    }

    pub fn horizon(&self) -> usize {
        self.thetas.len()
    }

    pub fn constraints(&self) -> ConstraintSet {
        ConstraintSet::from_config(&self.config)
    }

    pub fn rollout(&self, controls: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        rollout(&self.x0, controls, self.config.ds)
    }

    /// Unaugmented trajectory cost.
    pub fn cost(&self, states: &[DVector<f64>], controls: &[DVector<f64>]) -> CostBreakdown {
        crate::cost::trajectory_cost(states, controls, &self.thetas, &self.config, &self.weights)
    }

    /// Cost plus augmented-Lagrangian terms with pointwise-optimal slack.
    pub fn augmented_cost(&self, states: &[DVector<f64>], controls: &[DVector<f64>], al: &[AlState]) -> f64 {
        let set = self.constraints();
        let k_end = controls.len();
        let mut total = 0.0;
        for k in 0..k_end {
            let base = running_cost(&states[k], &controls[k], self.thetas[k], &self.config, &self.weights);
            total += set.augmented_running_cost(base.total, &al[k], &states[k], &controls[k], SlackPolicy::Optimal);
        }
        let x = &states[k_end];
        total += terminal_cost(x, &self.config, &self.weights);
        total + al[k_end].penalty(&set.evaluate_terminal(x), SlackPolicy::Optimal)
    }

    /// Largest constraint residual along a trajectory.
    pub fn max_violation(&self, states: &[DVector<f64>], controls: &[DVector<f64>]) -> f64 {
        let set = self.constraints();
        let running = controls
            .iter()
            .enumerate()
            .map(|(k, u)| max_violation(&set.evaluate(&states[k], u)))
            .fold(0.0, f64::max);
        running.max(max_violation(&set.evaluate_terminal(&states[controls.len()])))
    }

    /// Fresh multipliers: one set per running step plus the terminal set.
    pub fn initial_multipliers(&self, penalty: f64) -> Vec<AlState> {
        let set = self.constraints();
        let mut al = vec![AlState::new(set.running_len(), penalty); self.horizon()];
        al.push(AlState::new(set.terminal_len(), penalty));
        al
    }

    /// Gradient of the unaugmented cost with respect to every control,
    /// computed by the adjoint recursion.
    pub fn control_gradient(&self, states: &[DVector<f64>], controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.adjoint(states, controls, None)
    }

    /// As [`Problem::control_gradient`], for the augmented cost.
    pub fn augmented_control_gradient(
        &self,
        states: &[DVector<f64>],
        controls: &[DVector<f64>],
        al: &[AlState],
    ) -> Vec<DVector<f64>> {
        self.adjoint(states, controls, Some(al))
    }

    fn adjoint(&self, states: &[DVector<f64>], controls: &[DVector<f64>], al: Option<&[AlState]>) -> Vec<DVector<f64>> {
        let set = self.constraints();
        let k_end = controls.len();
        let (mut p, _) = terminal_derivatives(&states[k_end], &self.config, &self.weights);
        if let Some(al) = al {
            p += set
                .al_terminal_terms(&al[k_end], &states[k_end], SlackPolicy::Optimal)
                .0;
        }
        let mut grads = vec![DVector::zeros(self.config.n()); k_end];
        for k in (0..k_end).rev() {
            let mut d = cost_derivatives(&states[k], &controls[k], self.thetas[k], &self.config, &self.weights);
            if let Some(al) = al {
                d.add_assign(&set.al_derivative_terms(&al[k], &states[k], &controls[k], SlackPolicy::Optimal));
            }
            let f = dynamics_jacobians(&states[k], &controls[k], self.config.ds);
            grads[k] = &d.lu + f.fu.transpose() * &p;
            p = &d.lx + f.fx.transpose() * &p;
        }
        grads
    }
}

fn max_abs(grads: &[DVector<f64>]) -> f64 {
    grads.iter().map(|g| g.amax()).fold(0.0, f64::max)
}

/// Quadratic model `½ δxᵀ A δx + bᵀ δx + c` of the cost-to-go.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constant: f64,
}

/// `δu = gain · δx + feedforward`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    pub gain: DMatrix<f64>,
    pub feedforward: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub laws: Vec<FeedbackLaw>,
    /// First- and second-order terms of the predicted change,
    /// `ΔJ(α) = α·d1 + ½α²·d2`.
    pub expected: (f64, f64),
    pub value: ValueModel,
}

impl BackwardPass {
    pub fn predicted_change(&self, alpha: f64) -> f64 {
        alpha * self.expected.0 + 0.5 * alpha * alpha * self.expected.1
    }
}

pub fn backward_pass(
    problem: &Problem,
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    al: &[AlState],
    regularization: f64,
    expansion: Expansion,
) -> Result<BackwardPass> {
    let cfg = &problem.config;
    let set = problem.constraints();
    let n = cfg.n();
    let k_end = controls.len();

    let x_end = &states[k_end];
    let (mut vx, mut vxx) = terminal_derivatives(x_end, cfg, &problem.weights);
    let (ax, axx) = set.al_terminal_terms(&al[k_end], x_end, SlackPolicy::Optimal);
    vx += ax;
    vxx += axx;

    let mut laws = vec![
        FeedbackLaw {
            gain: DMatrix::zeros(n, 2 * n),
            feedforward: DVector::zeros(n),
        };
        k_end
    ];
    let (mut d1, mut d2) = (0.0, 0.0);
    let eye = DMatrix::<f64>::identity(n, n);

    for k in (0..k_end).rev() {
        let (x, u) = (&states[k], &controls[k]);
        let mut l = cost_derivatives(x, u, problem.thetas[k], cfg, &problem.weights);
        l.add_assign(&set.al_derivative_terms(&al[k], x, u, SlackPolicy::Optimal));
        let f = dynamics_jacobians(x, u, cfg.ds);
        let fxt = f.fx.transpose();
        let fut = f.fu.transpose();

        let qx = &l.lx + &fxt * &vx;
        let qu = &l.lu + &fut * &vx;
        let vxx_fx = &vxx * &f.fx;
        let mut qxx = &l.lxx + &fxt * &vxx_fx;
        let mut quu = &l.luu + &fut * &vxx * &f.fu;
        let mut qux = &l.lux + &fut * &vxx_fx;
        if expansion == Expansion::Ddp {
            let (bxx, buu, bux) = f.contract(&vx);
            qxx += bxx;
            quu += buu;
            qux += bux;
        }

        let chol = (&quu + &eye * regularization).cholesky().ok_or(Error::BackwardPass {
            step: k,
            regularization,
        })?;
        let ff = -chol.solve(&qu);
        let gain = -chol.solve(&qux);
        if !(ff.iter().all(|v| v.is_finite()) && gain.iter().all(|v| v.is_finite())) {
            return Err(Error::BackwardPass {
                step: k,
                regularization,
            });
        }

        d1 += ff.dot(&qu);
        d2 += ff.dot(&(&quu * &ff));

        let gt = gain.transpose();
        let quxt = qux.transpose();
        vx = &qx + &gt * (&quu * &ff) + &gt * &qu + &quxt * &ff;
        let cross = &gt * &qux;
        vxx = &qxx + &gt * &quu * &gain + &cross + cross.transpose();
        vxx = (&vxx + vxx.transpose()) * 0.5;

        laws[k] = FeedbackLaw { gain, feedforward: ff };
    }

    Ok(BackwardPass {
        laws,
        expected: (d1, d2),
        value: ValueModel {
            hessian: vxx,
            gradient: vx,
            constant: d1 + 0.5 * d2,
        },
    })
}

/// States and controls, step by step.
pub type Trajectory = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Rolls out `u_k + gain·(x̂_k − x_k) + α·feedforward` from the fixed
/// initial state.
pub fn forward_pass(
    problem: &Problem,
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    laws: &[FeedbackLaw],
    alpha: f64,
) -> Result<Trajectory> {
    let mut xs = Vec::with_capacity(states.len());
    let mut us = Vec::with_capacity(controls.len());
    xs.push(problem.x0.clone());
    for k in 0..controls.len() {
        let dx = &xs[k] - &states[k];
        let u = &controls[k] + &laws[k].gain * dx + &laws[k].feedforward * alpha;
        let next = step_dynamics(&xs[k], &u, problem.config.ds).map_err(|e| match e {
            Error::Integration { vehicle, slowness, .. } => Error::Integration {
                vehicle,
                step: k,
                slowness,
            },
            other => other,
        })?;
        us.push(u);
        xs.push(next);
    }
    Ok((xs, us))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub outer: usize,
    pub inner: usize,
    /// Augmented cost after the step.
    pub augmented_cost: f64,
    pub max_violation: f64,
    pub step: f64,
    pub regularization: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub states: PlatoonState,
    pub controls: ControlTrajectory,
    pub cost: CostBreakdown,
    pub iterations: Vec<IterationRecord>,
    /// Backward passes performed, accepted or not.
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub max_violation: f64,
    pub converged: bool,
    pub multipliers: Vec<AlState>,
    pub wall_time: f64,
}

impl SolveReport {
    pub fn state_steps(&self) -> Vec<DVector<f64>> {
        self.states.steps()
    }

    pub fn control_steps(&self) -> Vec<DVector<f64>> {
        self.controls.steps()
    }
}

/// Optional starting point for [`solve_from`].
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub controls: Option<Vec<DVector<f64>>>,
    pub multipliers: Option<Vec<AlState>>,
}

pub fn solve(problem: &Problem, options: &SolverOptions) -> Result<SolveReport> {
    solve_from(problem, options, WarmStart::default())
}

enum Inner {
    Converged,
    Stalled,
    Capped,
}

pub fn solve_from(problem: &Problem, options: &SolverOptions, warm: WarmStart) -> Result<SolveReport> {
    options.validate()?;
    let started = Instant::now();
    let n = problem.config.n();
    let k_end = problem.horizon();

    let mut controls = match warm.controls {
        Some(u) if u.len() == k_end && u.iter().all(|v| v.len() == n) => u,
        Some(_) => return Err(Error::Config("warm-start controls do not match the horizon".into())),
        None => vec![DVector::zeros(n); k_end],
    };
    let mut al = match warm.multipliers {
        Some(al) if al.len() == k_end + 1 => al,
        Some(_) => return Err(Error::Config("warm-start multipliers do not match the horizon".into())),
        None => problem.initial_multipliers(options.penalty_init),
    };
    let mut states = problem.rollout(&controls)?;
    let set = problem.constraints();
    let stationary = |xs: &[DVector<f64>], us: &[DVector<f64>], al: &[AlState]| {
        max_abs(&problem.augmented_control_gradient(xs, us, al)) <= options.gradient_tolerance
    };

    let mut iterations = Vec::new();
    let mut inner_count = 0usize;
    let mut outer_count = 0usize;
    let mut regularization = options.regularization_init;
    let mut converged = false;

    for outer in 0..options.max_outer {
        outer_count = outer + 1;
        let mut cost = problem.augmented_cost(&states, &controls, &al);
        let mut status = Inner::Capped;
        // Set once the cost change falls below the tolerance; convergence
        // additionally asks for a small gradient.
        let mut settled = false;

        for inner in 0..options.max_inner {
            inner_count += 1;
            let bp = loop {
                match backward_pass(problem, &states, &controls, &al, regularization, options.expansion) {
                    Ok(bp) => break Some(bp),
                    Err(Error::BackwardPass { .. }) if regularization < options.regularization_max => {
                        regularization =
                            (regularization * options.regularization_factor).min(options.regularization_max);
                    }
                    Err(Error::BackwardPass { .. }) => break None,
                    Err(e) => return Err(e),
                }
            };
            let Some(bp) = bp else {
                status = Inner::Stalled;
                break;
            };

            // Nothing left to gain at this linearisation.
            if -bp.predicted_change(1.0) <= options.cost_tolerance * 1e-3 * cost.abs().max(1.0) {
                settled = true;
            }
            if settled && stationary(&states, &controls, &al) {
                iterations.push(IterationRecord {
                    outer,
                    inner,
                    augmented_cost: cost,
                    max_violation: problem.max_violation(&states, &controls),
                    step: 0.0,
                    regularization,
                });
                status = Inner::Converged;
                break;
            }

            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha >= options.min_step {
                if let Ok((xs, us)) = forward_pass(problem, &states, &controls, &bp.laws, alpha) {
                    let new_cost = problem.augmented_cost(&xs, &us, &al);
                    let predicted = bp.predicted_change(alpha);
                    if new_cost.is_finite() && new_cost <= cost && (new_cost - cost) <= options.armijo * predicted {
                        accepted = Some((xs, us, new_cost));
                        break;
                    }
                }
                alpha *= options.backtrack_factor;
            }

            match accepted {
                Some((xs, us, new_cost)) => {
                    let change = (cost - new_cost) / new_cost.abs().max(1.0);
                    states = xs;
                    controls = us;
                    cost = new_cost;
                    regularization = (regularization / options.regularization_factor).max(options.regularization_init);
                    iterations.push(IterationRecord {
                        outer,
                        inner,
                        augmented_cost: cost,
                        max_violation: problem.max_violation(&states, &controls),
                        step: alpha,
                        regularization,
                    });
                    settled = change < options.cost_tolerance;
                    if settled && stationary(&states, &controls, &al) {
                        status = Inner::Converged;
                        break;
                    }
                }
                None if regularization < options.regularization_max => {
                    regularization = (regularization * options.regularization_factor).min(options.regularization_max);
                }
                None => {
                    status = if settled { Inner::Converged } else { Inner::Stalled };
                    break;
                }
            }
        }
        // The cost stopped moving even though the gradient test was not met.
        if matches!(status, Inner::Capped) && settled {
            status = Inner::Converged;
        }

        let violation = problem.max_violation(&states, &controls);
        if matches!(status, Inner::Converged) && violation <= options.violation_tolerance {
            converged = true;
            break;
        }
        if outer + 1 == options.max_outer {
            break;
        }

        for k in 0..=k_end {
            let e = if k < k_end {
                set.evaluate(&states[k], &controls[k])
            } else {
                set.evaluate_terminal(&states[k])
            };
            al[k].update_slack(&e);
            al[k].update_multipliers(&e);
            al[k].escalate_penalty(
                &e,
                options.penalty_factor,
                options.violation_tolerance,
                options.penalty_max,
            );
        }
    }

    let max_violation = problem.max_violation(&states, &controls);
    Ok(SolveReport {
        cost: problem.cost(&states, &controls),
        states: PlatoonState::from_steps(&states),
        controls: ControlTrajectory::from_steps(&controls, n),
        iterations,
        inner_iterations: inner_count,
        outer_iterations: outer_count,
        max_violation,
        converged,
        multipliers: al,
        wall_time: started.elapsed().as_secs_f64(),
    })
}
