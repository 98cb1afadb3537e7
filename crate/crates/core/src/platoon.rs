//! Platoon configuration, space-domain state and the slowness dynamics.
//!
//! Each vehicle `i` carries `(t_i, π_i)` per spatial step: the time it reaches
//! the step's position and its slowness `π = 1/v` there. Per-step vectors are
//! interleaved as `[t_1, π_1, t_2, π_2, …]`, so vehicle `i` (0-based) owns
//! indices `2i` and `2i + 1`; controls are `[a_1, …, a_N]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MPH_TO_MS: f64 = 0.44704;

#[inline]
pub fn time_index(i: usize) -> usize {
    2 * i
}

#[inline]
pub fn slowness_index(i: usize) -> usize {
    2 * i + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// m/s², negative
    pub a_min: f64,
    /// m/s², positive
    pub a_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 1400.0,
            a_min: -5.0,
            a_max: 3.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::Config(format!("mass must be > 0, got {}", self.mass)));
        }
        if !(self.a_min < 0.0 && self.a_max > 0.0) {
            return Err(Error::Config(format!(
                "acceleration bounds must satisfy a_min < 0 < a_max, got [{}, {}]",
                self.a_min, self.a_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonConfig {
    /// Leader first.
    pub vehicles: Vec<VehicleParams>,
    /// Desired time headway h (s).
    pub headway: f64,
    /// Target average speed v^d (m/s).
    pub target_speed: f64,
    /// Speed limit v_max (m/s).
    pub speed_limit: f64,
    /// Minimum admissible speed (m/s); slowness is singular at standstill.
    pub speed_floor: f64,
    pub gravity: f64,
    /// Rolling resistance coefficient μ.
    pub rolling_coeff: f64,
    /// Aerodynamic drag constant ξ (kg/m).
    pub drag_coeff: f64,
    /// Spatial step Δs (m).
    pub ds: f64,
    /// Number of spatial steps K.
    pub horizon_steps: usize,
}

impl PlatoonConfig {
    /// Default parameter table: 1400 kg vehicles, a ∈ [−5, 3] m/s², h = 1 s,
    /// v_max = 75 mph, g = 9.8, μ = 0.015, ξ = 0.000024, Δs = 0.1 m.
    pub fn defaults(n: usize, target_speed: f64, route_length: f64) -> Self {
        let ds = 0.1;
        Self {
            vehicles: vec![VehicleParams::default(); n],
            headway: 1.0,
            target_speed,
            speed_limit: 75.0 * MPH_TO_MS,
            speed_floor: 0.1,
            gravity: 9.8,
            rolling_coeff: 0.015,
            drag_coeff: 0.000024,
            ds,
            horizon_steps: steps_for(route_length, ds),
        }
    }

    pub fn n(&self) -> usize {
        self.vehicles.len()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n()
    }

    pub fn horizon_length(&self) -> f64 {
        self.horizon_steps as f64 * self.ds
    }

    /// Route travel time at the target speed, K·Δs/v^d.
    pub fn nominal_duration(&self) -> f64 {
        self.horizon_length() / self.target_speed
    }

    pub fn with_grid(&self, ds: f64, route_length: f64) -> Self {
        Self {
            ds,
            horizon_steps: steps_for(route_length, ds),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::Config(format!(
                "platoon needs at least 2 vehicles, got {}",
                self.n()
            )));
        }
        for v in &self.vehicles {
            v.validate()?;
        }
        if !(self.headway > 0.0) {
            return Err(Error::Config("headway must be > 0".into()));
        }
        if !(self.target_speed > 0.0 && self.target_speed <= self.speed_limit) {
            return Err(Error::Config(format!(
                "target speed {} must lie in (0, {}]",
                self.target_speed, self.speed_limit
            )));
        }
        if !(self.speed_floor > 0.0 && self.speed_floor < self.target_speed) {
            return Err(Error::Config("speed floor must lie in (0, v^d)".into()));
        }
        if !(self.ds > 0.0) {
            return Err(Error::Config("ds must be > 0".into()));
        }
        if self.horizon_steps < 1 {
            return Err(Error::Config("horizon must have at least one step".into()));
        }
        if !(self.gravity > 0.0 && self.rolling_coeff >= 0.0 && self.drag_coeff >= 0.0) {
            return Err(Error::Config("physical constants out of range".into()));
        }
        Ok(())
    }
}

/// Number of Δs steps covering `length`, rounding to the nearest step.
pub fn steps_for(length: f64, ds: f64) -> usize {
    ((length / ds).round() as usize).max(1)
}

/// Initial boundary condition: arrival time and slowness of each vehicle at
/// the first spatial step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub times: Vec<f64>,
    pub slownesses: Vec<f64>,
}

impl InitialState {
    /// All vehicles at v^d, follower `i` arriving `(i-1)·h` after the leader.
    pub fn equilibrium(config: &PlatoonConfig) -> Self {
        let n = config.n();
        Self {
            times: (0..n).map(|i| i as f64 * config.headway).collect(),
            slownesses: vec![1.0 / config.target_speed; n],
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.times.len();
        DVector::from_fn(2 * n, |r, _| {
            if r % 2 == 0 {
                self.times[r / 2]
            } else {
                self.slownesses[r / 2]
            }
        })
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self {
            times: (0..n).map(|i| x[time_index(i)]).collect(),
            slownesses: (0..n).map(|i| x[slowness_index(i)]).collect(),
        }
    }

    /// Shifts all times so the leader starts at t = 0.
    pub fn rebased(&self) -> Self {
        let t0 = self.times[0];
        Self {
            times: self.times.iter().map(|t| t - t0).collect(),
            slownesses: self.slownesses.clone(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.times.len() != n || self.slownesses.len() != n {
            return Err(Error::Config(format!("initial state must describe {n} vehicles")));
        }
        if self.slownesses.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::Domain("initial slowness must be positive".into()));
        }
        Ok(())
    }
}

/// Arrival times and slownesses, one row per vehicle, one column per step.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonState {
    pub arrival_times: DMatrix<f64>,
    pub slownesses: DMatrix<f64>,
}

impl PlatoonState {
    pub fn from_steps(steps: &[DVector<f64>]) -> Self {
        let n = steps[0].len() / 2;
        let cols = steps.len();
        Self {
            arrival_times: DMatrix::from_fn(n, cols, |i, k| steps[k][time_index(i)]),
            slownesses: DMatrix::from_fn(n, cols, |i, k| steps[k][slowness_index(i)]),
        }
    }

    pub fn n(&self) -> usize {
        self.arrival_times.nrows()
    }

    /// Number of columns, K + 1.
    pub fn len(&self) -> usize {
        self.arrival_times.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Interleaved per-step vector at step `k`.
    pub fn step(&self, k: usize) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(2 * n, |r, _| {
            if r % 2 == 0 {
                self.arrival_times[(r / 2, k)]
            } else {
                self.slownesses[(r / 2, k)]
            }
        })
    }

    pub fn steps(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|k| self.step(k)).collect()
    }

    pub fn speed(&self, i: usize, k: usize) -> f64 {
        1.0 / self.slownesses[(i, k)]
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n() {
            for k in 0..self.len() {
                let p = self.slownesses[(i, k)];
                if !(p > 0.0 && p.is_finite()) {
                    return Err(Error::Integration {
                        vehicle: i,
                        step: k,
                        slowness: p,
                    });
                }
                if k > 0 && self.arrival_times[(i, k)] < self.arrival_times[(i, k - 1)] {
                    return Err(Error::Domain(format!(
                        "arrival time of vehicle {i} decreases at step {k}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-vehicle acceleration, one row per vehicle, one column per step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    pub accels: DMatrix<f64>,
}

impl ControlTrajectory {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            accels: DMatrix::zeros(n, k),
        }
    }

    pub fn from_steps(steps: &[DVector<f64>], n: usize) -> Self {
        Self {
            accels: DMatrix::from_fn(n, steps.len(), |i, k| steps[k][i]),
        }
    }

    pub fn len(&self) -> usize {
        self.accels.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn step(&self, k: usize) -> DVector<f64> {
        self.accels.column(k).into_owned()
    }

    pub fn steps(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|k| self.step(k)).collect()
    }
}

/// Slowness of a vehicle moving at `v` m/s.
pub fn slowness(v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(1.0 / v)
    } else {
        Err(Error::Domain(format!("slowness undefined for speed {v} m/s")))
    }
}

/// Gap/slowness difference vector relative to the leader at step `k`:
/// `[t₁−t₂+h, π₁−π₂, …, t₁−t_N+(N−1)h, π₁−π_N]`.
///
/// Followers reach a position after the leader, so the gap entry vanishes
/// when follower `i` arrives exactly `(i−1)·h` later.
pub fn diff_state(state: &PlatoonState, k: usize, config: &PlatoonConfig) -> DVector<f64> {
    diff_of(&state.step(k), config.headway)
}

pub(crate) fn diff_of(x: &DVector<f64>, headway: f64) -> DVector<f64> {
    let n = x.len() / 2;
    let mut out = DVector::zeros(2 * (n - 1));
    for i in 1..n {
        out[2 * (i - 1)] = x[0] - x[time_index(i)] + i as f64 * headway;
        out[2 * (i - 1) + 1] = x[1] - x[slowness_index(i)];
    }
    out
}

/// One spatial step: `t' = t + π·Δs`, `π' = π − a·π³·Δs` for every vehicle.
pub fn step_dynamics(x: &DVector<f64>, u: &DVector<f64>, ds: f64) -> Result<DVector<f64>> {
    let n = u.len();
    let mut next = x.clone();
    for i in 0..n {
        let p = x[slowness_index(i)];
        let p_next = p - u[i] * p * p * p * ds;
        if !(p_next > 0.0 && p_next.is_finite()) {
            return Err(Error::Integration {
                vehicle: i,
                step: 0,
                slowness: p_next,
            });
        }
        next[time_index(i)] = x[time_index(i)] + p * ds;
        next[slowness_index(i)] = p_next;
    }
    Ok(next)
}

/// First and second derivatives of [`step_dynamics`].
///
/// Only `π'_i` is nonlinear, so the second-order tensors reduce to two
/// scalars per vehicle: `∂²π'/∂π²` and `∂²π'/∂π∂a`; `∂²/∂a²` vanishes.
#[derive(Debug, Clone)]
pub struct DynamicsDerivatives {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub pi_pi: Vec<f64>,
    pub pi_a: Vec<f64>,
}

impl DynamicsDerivatives {
    /// Contracts the second-order tensors with a value gradient `b` over the
    /// next state, returning `(b·f_xx, b·f_uu, b·f_ux)`.
    pub fn contract(&self, b: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.pi_pi.len();
        let mut xx = DMatrix::zeros(2 * n, 2 * n);
        let uu = DMatrix::zeros(n, n);
        let mut ux = DMatrix::zeros(n, 2 * n);
        for i in 0..n {
            let bp = b[slowness_index(i)];
            xx[(slowness_index(i), slowness_index(i))] = bp * self.pi_pi[i];
            ux[(i, slowness_index(i))] = bp * self.pi_a[i];
        }
        (xx, uu, ux)
    }
}

pub fn dynamics_jacobians(x: &DVector<f64>, u: &DVector<f64>, ds: f64) -> DynamicsDerivatives {
    let n = u.len();
    let mut fx = DMatrix::identity(2 * n, 2 * n);
    let mut fu = DMatrix::zeros(2 * n, n);
    let mut pi_pi = vec![0.0; n];
    let mut pi_a = vec![0.0; n];
    for i in 0..n {
        let p = x[slowness_index(i)];
        let a = u[i];
        fx[(time_index(i), slowness_index(i))] = ds;
        fx[(slowness_index(i), slowness_index(i))] = 1.0 - 3.0 * a * p * p * ds;
        fu[(slowness_index(i), i)] = -p * p * p * ds;
        pi_pi[i] = -6.0 * a * p * ds;
        pi_a[i] = -3.0 * p * p * ds;
    }
    DynamicsDerivatives { fx, fu, pi_pi, pi_a }
}

/// Rolls the dynamics forward from `x0` under `controls`.
pub fn rollout(x0: &DVector<f64>, controls: &[DVector<f64>], ds: f64) -> Result<Vec<DVector<f64>>> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(x0.clone());
    for (k, u) in controls.iter().enumerate() {
        let next = step_dynamics(&states[k], u, ds).map_err(|e| match e {
            Error::Integration { vehicle, slowness, .. } => Error::Integration {
                vehicle,
                step: k,
                slowness,
            },
            other => other,
        })?;
        states.push(next);
    }
    Ok(states)
}

/// Time-indexed trace of one vehicle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeTrace {
    pub time: Vec<f64>,
    pub position: Vec<f64>,
    pub speed: Vec<f64>,
    /// Acceleration applied from this sample to the next.
    pub accel: Vec<f64>,
}

impl TimeTrace {
    pub fn push(&mut self, t: f64, s: f64, v: f64, a: f64) {
        self.time.push(t);
        self.position.push(s);
        self.speed.push(v);
        self.accel.push(a);
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn arrival_time(&self) -> f64 {
        *self.time.last().unwrap_or(&0.0)
    }
}

/// Replays a space-domain plan in the time domain.
///
/// Each vehicle enters position 0 at its planned `t_{i,0}` with speed
/// `1/π_{i,0}` and applies the planned acceleration of whichever spatial step
/// it currently occupies. Motion within a step is integrated exactly (constant
/// acceleration), splitting time steps at step boundaries; samples are taken
/// every `dt` plus the exact arrival at `K·Δs`.
pub fn resimulate_time_domain(
    plan: &PlatoonState,
    controls: &ControlTrajectory,
    ds: f64,
    dt: f64,
) -> Result<Vec<TimeTrace>> {
    if !(dt > 0.0) {
        return Err(Error::Config("dt must be > 0".into()));
    }
    let k_steps = controls.len();
    let length = k_steps as f64 * ds;
    (0..plan.n())
        .map(|i| {
            let t0 = plan.arrival_times[(i, 0)];
            let v0 = 1.0 / plan.slownesses[(i, 0)];
            let accel = |k: usize| controls.accels[(i, k.min(k_steps - 1))];
            integrate_piecewise(i, t0, v0, length, ds, dt, accel)
        })
        .collect()
}

fn integrate_piecewise(
    vehicle: usize,
    t0: f64,
    v0: f64,
    length: f64,
    ds: f64,
    dt: f64,
    accel: impl Fn(usize) -> f64,
) -> Result<TimeTrace> {
    let n_steps = steps_for(length, ds);
    let mut trace = TimeTrace::default();
    let (mut t, mut s, mut v, mut k) = (t0, 0.0, v0, 0usize);
    trace.push(t, s, v, accel(0));
    loop {
        let mut remaining = dt;
        while remaining > 0.0 {
            let a = accel(k);
            let boundary = ((k + 1) as f64 * ds).min(length);
            match time_to_cover(v, a, boundary - s) {
                Some((tau, v_exit)) if tau <= remaining => {
                    t += tau;
                    remaining -= tau;
                    s = boundary;
                    v = v_exit;
                    k += 1;
                    if k >= n_steps {
                        trace.push(t, s, v, a);
                        return Ok(trace);
                    }
                }
                _ => {
                    let v_new = v + a * remaining;
                    if v_new <= 0.0 {
                        return Err(Error::Stall { vehicle, position: s });
                    }
                    s += (v + v_new) * 0.5 * remaining;
                    v = v_new;
                    t += remaining;
                    remaining = 0.0;
                }
            }
        }
        trace.push(t, s, v, accel(k));
    }
}

/// Time and exit speed to cover `d` metres from speed `v` under constant `a`,
/// or `None` if the vehicle stops first.
pub(crate) fn time_to_cover(v: f64, a: f64, d: f64) -> Option<(f64, f64)> {
    if d <= 0.0 {
        return Some((0.0, v));
    }
    let disc = v * v + 2.0 * a * d;
    if disc < 0.0 {
        return None;
    }
    let v_exit = disc.sqrt();
    let denom = v + v_exit;
    if denom <= 0.0 {
        return None;
    }
    Some((2.0 * d / denom, v_exit))
}
