//! VT-micro style fuel meter driven by speed and equivalent traction
//! acceleration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::platoon::{PlatoonConfig, TimeTrace, VehicleParams};
use crate::terrain::SlopeProfile;
use crate::{Error, Result};

const KMH_PER_MS: f64 = 3.6;
const SHIPPED: &str = include_str!("../data/vt_micro_light_duty.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuelUnits {
    pub speed: String,
    pub accel: String,
    pub rate: String,
}

/// Log-polynomial regression `ln F = Σ c[p][q] v^p a^q`, with separate
/// coefficients for accelerating and decelerating regimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuelModel {
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub source: String,
    pub units: FuelUnits,
    /// Lower edge of the calibration envelope in m/s². The deceleration
    /// polynomial grows without bound beyond it, so harder braking is
    /// metered at this value.
    #[serde(default)]
    pub min_accel_ms2: Option<f64>,
    pub positive_accel: [[f64; 4]; 4],
    pub negative_accel: [[f64; 4]; 4],
}

impl FuelModel {
    /// The light-duty coefficients shipped with the crate.
    pub fn light_duty() -> Self {
        Self::from_json_str(SHIPPED, Path::new("data/vt_micro_light_duty.json")).expect("shipped fuel model is valid")
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let model: FuelModel = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        model.validate(origin)?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    fn validate(&self, origin: &Path) -> Result<()> {
        let expected = ("km/h", "km/h/s", "L/s");
        let u = &self.units;
        if (u.speed.as_str(), u.accel.as_str(), u.rate.as_str()) != expected {
            return Err(Error::Config(format!(
                "{}: unsupported fuel model units {}/{}/{}, expected km/h, km/h/s, L/s",
                origin.display(),
                u.speed,
                u.accel,
                u.rate
            )));
        }
        let finite = self
            .positive_accel
            .iter()
            .chain(&self.negative_accel)
            .flatten()
            .all(|c| c.is_finite());
        if !finite {
            return Err(Error::Config(format!("{}: non-finite coefficient", origin.display())));
        }
        Ok(())
    }

    /// Fuel rate at zero speed and acceleration.
    pub fn idle_rate(&self) -> f64 {
        self.positive_accel[0][0].exp()
    }

    /// Fuel rate in L/s at speed `v` (m/s) and equivalent traction
    /// acceleration `a_eq` (m/s²), never below idle.
    pub fn rate(&self, v: f64, a_eq: f64) -> f64 {
        let a_eq = self.min_accel_ms2.map_or(a_eq, |lo| a_eq.max(lo));
        let coeffs = if a_eq >= 0.0 {
            &self.positive_accel
        } else {
            &self.negative_accel
        };
        let (sv, sa) = (v.max(0.0) * KMH_PER_MS, a_eq * KMH_PER_MS);
        let mut exponent = 0.0;
        let mut vp = 1.0;
        for row in coeffs {
            let mut ap = 1.0;
            for c in row {
                exponent += c * vp * ap;
                ap *= sa;
            }
            vp *= sv;
        }
        exponent.exp().max(self.idle_rate())
    }
}

/// Traction force per unit mass: observed acceleration plus grade, rolling
/// and aerodynamic resistance.
pub fn equivalent_traction_accel(a: f64, v: f64, theta: f64, params: &VehicleParams, config: &PlatoonConfig) -> f64 {
    a + config.gravity * theta.sin()
        + config.rolling_coeff * config.gravity * theta.cos()
        + config.drag_coeff * v * v / params.mass
}

/// Cumulative fuel of one vehicle against position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FuelSeries {
    pub position: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl FuelSeries {
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Cumulative fuel at position `s`, interpolated linearly.
    pub fn at(&self, s: f64) -> f64 {
        if self.position.is_empty() || s <= self.position[0] {
            return 0.0;
        }
        let idx = self.position.partition_point(|&p| p < s);
        if idx >= self.position.len() {
            return self.total();
        }
        let (p0, p1) = (self.position[idx - 1], self.position[idx]);
        let (c0, c1) = (self.cumulative[idx - 1], self.cumulative[idx]);
        if p1 <= p0 {
            return c1;
        }
        c0 + (c1 - c0) * (s - p0) / (p1 - p0)
    }

    /// Fuel burnt inside each segment of `profile`.
    pub fn per_segment(&self, profile: &SlopeProfile) -> Vec<f64> {
        profile.segments().map(|(a, b, _)| self.at(b) - self.at(a)).collect()
    }
}

/// Integrates fuel along a time trace, counting only motion inside
/// `[0, profile length]`. Each sample interval uses its mean speed, its mean
/// acceleration `Δv/Δt` and the grade at its midpoint.
pub fn trajectory_fuel(
    model: &FuelModel,
    trace: &TimeTrace,
    profile: &SlopeProfile,
    params: &VehicleParams,
    config: &PlatoonConfig,
) -> Result<FuelSeries> {
    let length = profile.total_length();
    let mut series = FuelSeries {
        position: vec![0.0],
        cumulative: vec![0.0],
    };
    let mut total = 0.0;
    for j in 1..trace.len() {
        let (t0, t1) = (trace.time[j - 1], trace.time[j]);
        let (s0, s1) = (trace.position[j - 1], trace.position[j]);
        let (v0, v1) = (trace.speed[j - 1], trace.speed[j]);
        let dt = t1 - t0;
        if dt <= 0.0 || s1 <= 0.0 || s0 >= length {
            continue;
        }
        if v0 <= 0.0 && v1 <= 0.0 {
            return Err(Error::Stall {
                vehicle: 0,
                position: s0,
            });
        }
        let inside = if s1 > s0 {
            ((s1.min(length) - s0.max(0.0)) / (s1 - s0)).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let v = 0.5 * (v0 + v1);
        let a = (v1 - v0) / dt;
        let mid = (0.5 * (s0.max(0.0) + s1.min(length))).clamp(0.0, length);
        let theta = profile.grade_or_flat(mid);
        let a_eq = equivalent_traction_accel(a, v, theta, params, config);
        total += model.rate(v, a_eq) * dt * inside;
        series.position.push(s1.min(length));
        series.cumulative.push(total);
    }
    Ok(series)
}

/// Fuel of every vehicle in a platoon.
pub fn platoon_fuel(
    model: &FuelModel,
    traces: &[TimeTrace],
    profile: &SlopeProfile,
    config: &PlatoonConfig,
) -> Result<Vec<FuelSeries>> {
    traces
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            trajectory_fuel(model, tr, profile, &config.vehicles[i], config).map_err(|e| match e {
                Error::Stall { position, .. } => Error::Stall { vehicle: i, position },
                other => other,
            })
        })
        .collect()
}
