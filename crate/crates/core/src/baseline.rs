//! Constant-time-gap CACC used as the comparison controller. It runs in the
//! time domain and compensates the road grade through torque, so its speed
//! is held regardless of slope.

use serde::{Deserialize, Serialize};

use crate::platoon::{InitialState, PlatoonConfig, TimeTrace, VehicleParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaccGains {
    /// Spacing-error gain, 1/s².
    pub kp_gap: f64,
    /// Relative-speed gain, 1/s.
    pub kd_gap: f64,
    /// Leader speed-tracking gain, 1/s.
    pub kp_speed: f64,
}

impl Default for CaccGains {
    fn default() -> Self {
        Self {
            kp_gap: 0.45,
            kd_gap: 1.2,
            kp_speed: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineOptions {
    pub gains: CaccGains,
    /// Integration step, s.
    pub dt: f64,
    /// Tire radius for torque output, m.
    pub tire_radius: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            gains: CaccGains::default(),
            dt: 0.05,
            tire_radius: 0.3,
        }
    }
}

impl BaselineOptions {
    pub fn validate(&self) -> Result<()> {
        let g = &self.gains;
        if !(g.kp_gap > 0.0 && g.kd_gap > 0.0 && g.kp_speed > 0.0) {
            return Err(Error::Config("CACC gains must be positive".into()));
        }
        if !(self.dt > 0.0 && self.tire_radius > 0.0) {
            return Err(Error::Config("baseline dt and tire radius must be positive".into()));
        }
        Ok(())
    }
}

/// Wheel torque that realises acceleration `a` at speed `v` on grade `θ`.
pub fn torque_of(a: f64, v: f64, theta: f64, params: &VehicleParams, config: &PlatoonConfig, tire_radius: f64) -> f64 {
    let g = config.gravity;
    (a + g * theta.sin() + config.rolling_coeff * g * theta.cos() + config.drag_coeff * v * v / params.mass)
        * params.mass
        * tire_radius
}

/// Acceleration commands for one control period. `positions` and `speeds`
/// are ordered leader first; the result respects both acceleration bounds
/// and, over `dt`, the speed bounds.
pub fn baseline_step(
    positions: &[f64],
    speeds: &[f64],
    config: &PlatoonConfig,
    gains: &CaccGains,
    dt: f64,
) -> Vec<f64> {
    (0..speeds.len())
        .map(|i| {
            let v = speeds[i];
            let raw = if i == 0 {
                gains.kp_speed * (config.target_speed - v)
            } else {
                let gap = positions[i - 1] - positions[i];
                gains.kp_gap * (gap - config.headway * v) + gains.kd_gap * (speeds[i - 1] - v)
            };
            let p = &config.vehicles[i];
            let hi = p.a_max.min((config.speed_limit - v) / dt);
            let lo = p.a_min.max((config.speed_floor - v) / dt);
            raw.clamp(lo.min(hi), hi)
        })
        .collect()
}

/// Simulates the platoon until every vehicle has passed `route_length`.
///
/// Vehicles start where the space-domain initial state places them: a
/// vehicle due at position 0 at time `t_i` starts `t_i·v_i` behind it. Each
/// follower cruises at its initial speed until it reaches position 0 and the
/// controller engages, mirroring the planner's fixed boundary condition.
pub fn simulate_baseline(
    config: &PlatoonConfig,
    initial: &InitialState,
    route_length: f64,
    options: &BaselineOptions,
) -> Result<Vec<TimeTrace>> {
    config.validate()?;
    options.validate()?;
    initial.validate(config.n())?;
    let init = initial.rebased();
    let n = config.n();
    let dt = options.dt;
    let mut speeds: Vec<f64> = init.slownesses.iter().map(|p| 1.0 / p).collect();
    let mut positions: Vec<f64> = (0..n).map(|i| -init.times[i] * speeds[i]).collect();
    let mut traces = vec![TimeTrace::default(); n];

    let slowest = config.speed_floor.max(1e-3);
    let horizon = (route_length - positions.iter().cloned().fold(0.0, f64::min)) / slowest;
    let max_steps = (horizon / dt).ceil() as usize + 1;

    let mut t = 0.0;
    for step in 0..=max_steps {
        let mut accel = baseline_step(&positions, &speeds, config, &options.gains, dt);
        for i in 0..n {
            if positions[i] < 0.0 {
                accel[i] = 0.0;
            }
            traces[i].push(t, positions[i], speeds[i], accel[i]);
        }
        if positions.iter().all(|&s| s >= route_length) {
            return Ok(traces);
        }
        for i in 0..n {
            positions[i] += speeds[i] * dt + 0.5 * accel[i] * dt * dt;
            speeds[i] += accel[i] * dt;
            if speeds[i] <= 0.0 {
                return Err(Error::Stall {
                    vehicle: i,
                    position: positions[i],
                });
            }
        }
        t = (step + 1) as f64 * dt;
    }
    Err(Error::Domain(format!(
        "baseline did not cover {route_length} m within {max_steps} steps"
    )))
}
