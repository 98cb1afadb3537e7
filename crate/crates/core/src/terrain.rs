//! Road grade as a piecewise-constant function of longitudinal position.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the preset test roads.
pub const PRESET_LENGTH_M: f64 = 800.0;
/// Number of equal-length sections in a preset road (4 up/down undulations).
pub const PRESET_SEGMENTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadClass {
    MajorArterial,
    Collector,
}

impl RoadClass {
    /// Peak grade as a fraction (tan θ).
    pub fn peak_grade(self) -> f64 {
        match self {
            RoadClass::MajorArterial => 0.06,
            RoadClass::Collector => 0.15,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RoadClass::MajorArterial => "major_arterial",
            RoadClass::Collector => "collector",
        }
    }
}

/// Piecewise-constant road grade.
///
/// Segment `i` covers `[breakpoints[i], breakpoints[i + 1])`; the last segment
/// is closed on the right so that `total_length` itself is a valid query.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeProfile {
    breakpoints: Vec<f64>,
    grades: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileFile {
    breakpoints_m: Vec<f64>,
    percent_grades: Vec<f64>,
}

impl SlopeProfile {
    /// Builds a profile from breakpoints and per-segment grade angles (rad).
    pub fn new(breakpoints: Vec<f64>, grades: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Config("slope profile needs at least two breakpoints".into()));
        }
        if grades.len() + 1 != breakpoints.len() {
            return Err(Error::Config(format!(
                "{} breakpoints require {} grades, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                grades.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::Config(format!(
                "first breakpoint must be 0 m, got {}",
                breakpoints[0]
            )));
        }
        if let Some(w) = breakpoints.windows(2).position(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Config(format!(
                "breakpoints must be strictly increasing (index {} -> {})",
                w,
                w + 1
            )));
        }
        if let Some(i) = grades.iter().position(|g| !g.is_finite() || g.abs() >= FRAC_PI_2) {
            return Err(Error::Config(format!("grade of segment {i} must satisfy |θ| < π/2")));
        }
        Ok(Self { breakpoints, grades })
    }

    /// Builds a profile from percent grades (100·tan θ).
    pub fn from_percent_grades(breakpoints: Vec<f64>, percent: &[f64]) -> Result<Self> {
        let grades = percent.iter().map(|p| (p / 100.0).atan()).collect();
        Self::new(breakpoints, grades)
    }

    pub fn flat(length: f64) -> Result<Self> {
        Self::new(vec![0.0, length], vec![0.0])
    }

    /// 800 m road with eight 100 m sections alternating uphill and downhill at
    /// the class's peak grade, starting uphill. Net elevation change is zero.
    pub fn preset(class: RoadClass) -> Self {
        let seg = PRESET_LENGTH_M / PRESET_SEGMENTS as f64;
        let theta = class.peak_grade().atan();
        let breakpoints = (0..=PRESET_SEGMENTS).map(|i| i as f64 * seg).collect();
        let grades = (0..PRESET_SEGMENTS)
            .map(|i| if i % 2 == 0 { theta } else { -theta })
            .collect();
        Self::new(breakpoints, grades).expect("preset profile is valid")
    }

    pub fn total_length(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn grades(&self) -> &[f64] {
        &self.grades
    }

    /// Index of the segment containing `s`, right-continuous at breakpoints.
    pub fn segment_index(&self, s: f64) -> Result<usize> {
        let len = self.total_length();
        if !(0.0..=len).contains(&s) {
            return Err(Error::Domain(format!("position {s} m outside profile [0, {len}]")));
        }
        let idx = self.breakpoints.partition_point(|&b| b <= s);
        Ok((idx - 1).min(self.grades.len() - 1))
    }

    /// Grade angle (rad) at position `s`.
    pub fn grade_at(&self, s: f64) -> Result<f64> {
        Ok(self.grades[self.segment_index(s)?])
    }

    /// Grade at `s`, treating positions outside the profile as flat.
    pub fn grade_or_flat(&self, s: f64) -> f64 {
        self.grade_at(s).unwrap_or(0.0)
    }

    /// Segments as `(start, end, θ)`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.grades)
            .map(|(w, &g)| (w[0], w[1], g))
    }

    /// Elevation relative to the start, ∫ tan θ ds.
    pub fn elevation_at(&self, s: f64) -> Result<f64> {
        let len = self.total_length();
        if !(0.0..=len).contains(&s) {
            return Err(Error::Domain(format!("position {s} m outside profile [0, {len}]")));
        }
        Ok(self.segments().map(|(a, b, g)| (b.min(s) - a).max(0.0) * g.tan()).sum())
    }

    /// Restriction to `[start, start + length]`, re-based to start at zero.
    pub fn window(&self, start: f64, length: f64) -> Result<Self> {
        let end = start + length;
        let len = self.total_length();
        if start < 0.0 || end > len + 1e-9 || length <= 0.0 {
            return Err(Error::Domain(format!(
                "window [{start}, {end}] outside profile [0, {len}]"
            )));
        }
        let end = end.min(len);
        let mut breakpoints = vec![0.0];
        let mut grades = Vec::new();
        for (a, b, g) in self.segments() {
            if b <= start || a >= end {
                continue;
            }
            grades.push(g);
            breakpoints.push(b.min(end) - start);
        }
        Self::new(breakpoints, grades)
    }

    /// Parses the JSON profile format
    /// `{"breakpoints_m": [...], "percent_grades": [...]}`.
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let file: ProfileFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_percent_grades(file.breakpoints_m, &file.percent_grades).map_err(|e| {
            let key = match &e {
                Error::Config(m) if m.contains("grade") && !m.contains("breakpoint") => "percent_grades",
                _ => "breakpoints_m",
            };
            Error::Parse {
                path: origin.to_path_buf(),
                line: line_of(text, key),
                message: e.to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    pub fn to_json_string(&self) -> String {
        let file = ProfileFile {
            breakpoints_m: self.breakpoints.clone(),
            percent_grades: self.grades.iter().map(|g| 100.0 * g.tan()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("profile serializes")
    }
}

/// 1-based line of the first occurrence of `"key"`, or 1 if absent.
fn line_of(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map_or(1, |i| i + 1)
}
