//! Scenario files: JSON describing a road, a platoon and every option needed
//! to run an experiment.
//!
//! Speeds carry an explicit unit tag (`"mph"` or `"m/s"`); everything else
//! is SI. Relative paths inside a scenario resolve against the scenario's
//! own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineOptions;
use crate::cost::CostWeights;
use crate::fuel::FuelModel;
use crate::platoon::{steps_for, InitialState, PlatoonConfig, VehicleParams, MPH_TO_MS};
use crate::receding::RecedingOptions;
use crate::solver::{Expansion, SolverOptions};
use crate::stability::PerturbationSpec;
use crate::terrain::{RoadClass, SlopeProfile};
use crate::{Error, Result};

/// Environment variable naming the directory searched for preset names.
pub const PRESET_DIR_ENV: &str = "ECOPLATOON_PRESET_DIR";

const EMBEDDED_PRESETS: [(&str, &str); 2] = [
    ("collector", include_str!("../presets/collector.json")),
    ("major_arterial", include_str!("../presets/major_arterial.json")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeedUnit {
    #[serde(rename = "mph")]
    Mph,
    #[serde(rename = "m/s")]
    MetresPerSecond,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Speed {
    pub value: f64,
    pub unit: SpeedUnit,
}

impl Speed {
    pub fn ms(value: f64) -> Self {
        Self {
            value,
            unit: SpeedUnit::MetresPerSecond,
        }
    }

    pub fn to_ms(self) -> f64 {
        match self.unit {
            SpeedUnit::Mph => self.value * MPH_TO_MS,
            SpeedUnit::MetresPerSecond => self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoadSpec {
    Preset {
        preset: RoadClass,
    },
    File {
        file: PathBuf,
    },
    Inline {
        breakpoints_m: Vec<f64>,
        percent_grades: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VehicleSpec {
    /// That many identical vehicles described by `vehicle`.
    Count(usize),
    /// One entry per vehicle, leader first.
    List(Vec<VehicleParams>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonSpec {
    pub vehicles: VehicleSpec,
    #[serde(default)]
    pub vehicle: VehicleParams,
    pub headway_s: f64,
    pub target_speed: Speed,
    pub speed_limit: Speed,
    #[serde(default = "default_floor")]
    pub speed_floor: Speed,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default = "default_rolling")]
    pub rolling_coeff: f64,
    #[serde(default = "default_drag")]
    pub drag_coeff: f64,
    pub ds_m: f64,
    pub route_length_m: f64,
}

fn default_floor() -> Speed {
    Speed::ms(0.1)
}
fn default_gravity() -> f64 {
    9.8
}
fn default_rolling() -> f64 {
    0.015
}
fn default_drag() -> f64 {
    0.000024
}

/// Departure from the equilibrium start. Offsets are added to the
/// equilibrium arrival times; speeds replace the target speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct InitialSpec {
    #[serde(default)]
    pub time_offsets_s: Option<Vec<f64>>,
    #[serde(default)]
    pub speeds: Option<Vec<Speed>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HorizonMode {
    #[default]
    OneShot,
    Receding {
        window: f64,
        replan_interval: f64,
    },
}

/// The on-disk layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    pub road: RoadSpec,
    pub platoon: PlatoonSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub baseline: BaselineOptions,
    #[serde(default)]
    pub fuel_model: Option<PathBuf>,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub horizon: HorizonMode,
}

/// A fully resolved scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub profile: SlopeProfile,
    pub config: PlatoonConfig,
    pub initial: InitialState,
    pub weights: CostWeights,
    pub solver: SolverOptions,
    pub baseline: BaselineOptions,
    pub fuel: FuelModel,
    pub perturbation: Option<PerturbationSpec>,
    pub horizon: HorizonMode,
}

impl Scenario {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = origin.parent().unwrap_or(Path::new("."));
        Self::resolve(file, base)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    /// One of the shipped presets, by name.
    pub fn preset(name: &str) -> Result<Self> {
        let stem = name.trim_end_matches(".json");
        let (_, text) = EMBEDDED_PRESETS
            .iter()
            .find(|(n, _)| *n == stem)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        Self::from_json_str(text, Path::new(&format!("presets/{stem}.json")))
    }

    /// Loads `arg` as a path if it exists, otherwise as a preset name. The
    /// preset directory is `$ECOPLATOON_PRESET_DIR` when set; otherwise
    /// `./presets` is tried before the built-in presets.
    pub fn locate(arg: &str) -> Result<Self> {
        let path = Path::new(arg);
        if path.exists() {
            return Self::load(path);
        }
        let file_name = if arg.ends_with(".json") {
            arg.to_string()
        } else {
            format!("{arg}.json")
        };
        if let Some(dir) = std::env::var_os(PRESET_DIR_ENV) {
            return Self::load(&Path::new(&dir).join(&file_name));
        }
        let local = Path::new("presets").join(&file_name);
        if local.exists() {
            return Self::load(&local);
        }
        if path.components().count() == 1 {
            if let Ok(s) = Self::preset(&file_name) {
                return Ok(s);
            }
        }
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such scenario file or preset"),
        ))
    }

    fn resolve(file: ScenarioFile, base: &Path) -> Result<Self> {
        let profile = match &file.road {
            RoadSpec::Preset { preset } => SlopeProfile::preset(*preset),
            RoadSpec::File { file } => SlopeProfile::load(&base.join(file))?,
            RoadSpec::Inline {
                breakpoints_m,
                percent_grades,
            } => SlopeProfile::from_percent_grades(breakpoints_m.clone(), percent_grades)?,
        };
        let p = &file.platoon;
        let vehicles = match &p.vehicles {
            VehicleSpec::Count(n) => vec![p.vehicle; *n],
            VehicleSpec::List(v) => v.clone(),
        };
        if !(p.ds_m > 0.0 && p.route_length_m > 0.0) {
            return Err(Error::Config("ds_m and route_length_m must be > 0".into()));
        }
        let config = PlatoonConfig {
            vehicles,
            headway: p.headway_s,
            target_speed: p.target_speed.to_ms(),
            speed_limit: p.speed_limit.to_ms(),
            speed_floor: p.speed_floor.to_ms(),
            gravity: p.gravity,
            rolling_coeff: p.rolling_coeff,
            drag_coeff: p.drag_coeff,
            ds: p.ds_m,
            horizon_steps: steps_for(p.route_length_m, p.ds_m),
        };
        config.validate()?;
        let n = config.n();

        let mut initial = InitialState::equilibrium(&config);
        if let Some(offsets) = &file.initial.time_offsets_s {
            if offsets.len() != n {
                return Err(Error::Config(format!("time_offsets_s must list {n} values")));
            }
            for (t, o) in initial.times.iter_mut().zip(offsets) {
                *t += o;
            }
        }
        if let Some(speeds) = &file.initial.speeds {
            if speeds.len() != n {
                return Err(Error::Config(format!("initial speeds must list {n} values")));
            }
            for (p, v) in initial.slownesses.iter_mut().zip(speeds) {
                let v = v.to_ms();
                if !(v > 0.0) {
                    return Err(Error::Config("initial speeds must be > 0".into()));
                }
                *p = 1.0 / v;
            }
        }
        initial.validate(n)?;

        file.weights.validate()?;
        file.solver.validate()?;
        file.baseline.validate()?;
        if let Some(spec) = &file.perturbation {
            spec.validate(config.horizon_length())?;
        }
        if let HorizonMode::Receding {
            window,
            replan_interval,
        } = file.horizon
        {
            RecedingOptions {
                window,
                replan_interval,
            }
            .validate()?;
        }
        let fuel = match &file.fuel_model {
            Some(path) => FuelModel::load(&base.join(path))?,
            None => FuelModel::light_duty(),
        };

        Ok(Self {
            name: file.name,
            profile,
            config,
            initial,
            weights: file.weights,
            solver: file.solver,
            baseline: file.baseline,
            fuel,
            perturbation: file.perturbation,
            horizon: file.horizon,
        })
    }

    /// Re-grids the route with step `ds`, keeping its length.
    pub fn with_ds(mut self, ds: f64) -> Result<Self> {
        if !(ds > 0.0 && ds.is_finite()) {
            return Err(Error::Config(format!("ds must be > 0, got {ds}")));
        }
        let length = self.config.horizon_length();
        self.config = self.config.with_grid(ds, length);
        self.config.validate()?;
        Ok(self)
    }

    /// Switches to receding-horizon planning with the given window. An
    /// existing replan interval is kept if it fits.
    pub fn with_window(mut self, window: f64) -> Result<Self> {
        let replan = match self.horizon {
            HorizonMode::Receding { replan_interval, .. } => replan_interval.min(window),
            HorizonMode::OneShot => RecedingOptions::default().replan_interval.min(window),
        };
        let options = RecedingOptions {
            window,
            replan_interval: replan,
        };
        options.validate()?;
        self.horizon = HorizonMode::Receding {
            window,
            replan_interval: replan,
        };
        Ok(self)
    }

    pub fn with_expansion(mut self, expansion: Expansion) -> Self {
        self.solver.expansion = expansion;
        self
    }

    /// True when the running-cost weights are the defaults but the grid is
    /// not the 0.1 m they were tuned for.
    pub fn weights_mistuned_for_grid(&self) -> bool {
        self.weights == CostWeights::default() && (self.config.ds - 0.1).abs() > 1e-12
    }
}
