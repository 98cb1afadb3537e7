//! Running and terminal costs of the eco-platooning problem and their
//! derivatives with respect to the per-vehicle state `(t_i, π_i)` and the
//! accelerations `a_i`.
//!
//! The running cost at step `k` is
//!
//! ```text
//! L = Σ_{i≥2} q1·(t_1 − t_i + (i−1)h)²
//!   + Σ_i q2·σ·(m_i a_i v_i + m_i g sinθ_k v_i + μ m_i g cosθ_k v_i + ξ v_i³)
//!   + Σ_i r1·a_i²
//! ```
//!
//! with `v_i = 1/π_i` and `σ = 1/P_ref` normalising power by a reference
//! power. Running
//! costs are summed over steps without a Δs factor, so the effective weights
//! depend on the grid.
//!
//! The ecology bracket is the vehicle's traction power `P`. [`EcologyForm`]
//! selects whether it enters the cost as written or through a smoothed
//! positive part, which gives no credit for braking power.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::platoon::{slowness_index, time_index, PlatoonConfig};

/// Arrival-time target used by the terminal cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TerminalTarget {
    /// Every vehicle targets `K·Δs/v^d`.
    Common,
    /// Follower `i` targets `K·Δs/v^d + (i−1)·h`, consistent with the gap term.
    #[default]
    Staggered,
}

/// How traction power enters the ecology term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EcologyForm {
    /// `P` as written, negative when braking or descending.
    Power,
    /// Softplus `ε·ln(1 + e^{P/ε})`, a smooth stand-in for `max(0, P)`.
    #[default]
    PositivePower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Gap-error weight.
    pub q1: f64,
    /// Ecology weight.
    pub q2: f64,
    /// Terminal arrival weight.
    pub q3: f64,
    /// Control-effort weight.
    pub r1: f64,
    /// Reference power in W; the ecology term is measured in units of it.
    #[serde(default = "default_power_reference")]
    pub power_reference: f64,
    #[serde(default)]
    pub terminal_target: TerminalTarget,
    #[serde(default)]
    pub ecology_form: EcologyForm,
    /// Softplus width ε in W for [`EcologyForm::PositivePower`].
    #[serde(default = "default_power_smoothing")]
    pub power_smoothing: f64,
}

fn default_power_reference() -> f64 {
    100_000.0
}

fn default_power_smoothing() -> f64 {
    1000.0
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q1: 500.0,
            q2: 10.0,
            q3: 5000.0,
            r1: 1.0,
            power_reference: default_power_reference(),
            terminal_target: TerminalTarget::Staggered,
            ecology_form: EcologyForm::PositivePower,
            power_smoothing: default_power_smoothing(),
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.q1, self.q2, self.q3, self.r1];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(crate::Error::Config(
                "cost weights must be finite and non-negative".into(),
            ));
        }
        if !(self.power_reference > 0.0 && self.power_reference.is_finite()) {
            return Err(crate::Error::Config("reference power must be positive".into()));
        }
        if !(self.power_smoothing > 0.0 && self.power_smoothing.is_finite()) {
            return Err(crate::Error::Config("power smoothing must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub cacc: f64,
    pub ecology: f64,
    pub effort: f64,
    pub terminal: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn accumulate(&mut self, other: &CostBreakdown) {
        self.cacc += other.cacc;
        self.ecology += other.ecology;
        self.effort += other.effort;
        self.terminal += other.terminal;
        self.total += other.total;
    }
}

/// Gradients and Hessians of a stage cost. `lux` is `N × 2N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDerivatives {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    pub lux: DMatrix<f64>,
}

impl CostDerivatives {
    pub fn zeros(n: usize) -> Self {
        Self {
            lx: DVector::zeros(2 * n),
            lu: DVector::zeros(n),
            lxx: DMatrix::zeros(2 * n, 2 * n),
            luu: DMatrix::zeros(n, n),
            lux: DMatrix::zeros(n, 2 * n),
        }
    }

    pub fn add_assign(&mut self, other: &CostDerivatives) {
        self.lx += &other.lx;
        self.lu += &other.lu;
        self.lxx += &other.lxx;
        self.luu += &other.luu;
        self.lux += &other.lux;
    }
}

/// Gap error of follower `i` (0-based, `i ≥ 1`) in seconds.
#[inline]
pub fn gap_error(x: &DVector<f64>, i: usize, headway: f64) -> f64 {
    x[time_index(0)] - x[time_index(i)] + i as f64 * headway
}

/// Road-load force per unit of speed, `m g (sinθ + μ cosθ)`.
#[inline]
fn grade_force(mass: f64, theta: f64, config: &PlatoonConfig) -> f64 {
    mass * config.gravity * (theta.sin() + config.rolling_coeff * theta.cos())
}

/// Ecology power of one vehicle in W (before weighting).
pub fn ecology_power(a: f64, v: f64, mass: f64, theta: f64, config: &PlatoonConfig) -> f64 {
    mass * a * v + grade_force(mass, theta, config) * v + config.drag_coeff * v * v * v
}

/// Weighted ecology cost of one vehicle and its derivatives in `(π, a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct EcologyTerm {
    value: f64,
    d_pi: f64,
    d_a: f64,
    d_pi_pi: f64,
    d_a_a: f64,
    d_a_pi: f64,
}

fn ecology_term(p: f64, a: f64, i: usize, theta: f64, config: &PlatoonConfig, weights: &CostWeights) -> EcologyTerm {
    let c = weights.q2 / weights.power_reference;
    let m = config.vehicles[i].mass;
    let xi = config.drag_coeff;
    let lin = m * a + grade_force(m, theta, config);
    let p2 = p * p;
    // P = (m a + w) π⁻¹ + ξ π⁻³
    let power = lin / p + xi / (p2 * p);
    let power_pi = -lin / p2 - 3.0 * xi / (p2 * p2);
    let power_pi_pi = 2.0 * lin / (p2 * p) + 12.0 * xi / (p2 * p2 * p);
    let power_a = m / p;
    let power_a_pi = -m / p2;
    match weights.ecology_form {
        EcologyForm::Power => EcologyTerm {
            value: c * power,
            d_pi: c * power_pi,
            d_a: c * power_a,
            d_pi_pi: c * power_pi_pi,
            d_a_a: 0.0,
            d_a_pi: c * power_a_pi,
        },
        EcologyForm::PositivePower => {
            let eps = weights.power_smoothing;
            let z = power / eps;
            let soft = eps * (z.max(0.0) + (-z.abs()).exp().ln_1p());
            let sig = if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            };
            let curv = sig * (1.0 - sig) / eps;
            EcologyTerm {
                value: c * soft,
                d_pi: c * sig * power_pi,
                d_a: c * sig * power_a,
                d_pi_pi: c * (sig * power_pi_pi + curv * power_pi * power_pi),
                d_a_a: c * curv * power_a * power_a,
                d_a_pi: c * (sig * power_a_pi + curv * power_a * power_pi),
            }
        }
    }
}

pub fn running_cost(
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: f64,
    config: &PlatoonConfig,
    weights: &CostWeights,
) -> CostBreakdown {
    let n = config.n();
    let cacc: f64 = (1..n)
        .map(|i| weights.q1 * gap_error(x, i, config.headway).powi(2))
        .sum();
    let ecology: f64 = (0..n)
        .map(|i| ecology_term(x[slowness_index(i)], u[i], i, theta, config, weights).value)
        .sum();
    let effort: f64 = u.iter().map(|a| weights.r1 * a * a).sum();
    CostBreakdown {
        cacc,
        ecology,
        effort,
        terminal: 0.0,
        total: cacc + ecology + effort,
    }
}

/// Arrival-time target of vehicle `i` at the end of the horizon.
pub fn terminal_target(i: usize, config: &PlatoonConfig, weights: &CostWeights) -> f64 {
    let base = config.nominal_duration();
    match weights.terminal_target {
        TerminalTarget::Common => base,
        TerminalTarget::Staggered => base + i as f64 * config.headway,
    }
}

pub fn terminal_cost(x: &DVector<f64>, config: &PlatoonConfig, weights: &CostWeights) -> f64 {
    (0..config.n())
        .map(|i| weights.q3 * (x[time_index(i)] - terminal_target(i, config, weights)).powi(2))
        .sum()
}

/// Gradient and Hessian of [`terminal_cost`].
pub fn terminal_derivatives(
    x: &DVector<f64>,
    config: &PlatoonConfig,
    weights: &CostWeights,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = config.n();
    let mut lx = DVector::zeros(2 * n);
    let mut lxx = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let ti = time_index(i);
        lx[ti] = 2.0 * weights.q3 * (x[ti] - terminal_target(i, config, weights));
        lxx[(ti, ti)] = 2.0 * weights.q3;
    }
    (lx, lxx)
}

/// Analytic derivatives of [`running_cost`].
pub fn cost_derivatives(
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: f64,
    config: &PlatoonConfig,
    weights: &CostWeights,
) -> CostDerivatives {
    let n = config.n();
    let mut d = CostDerivatives::zeros(n);
    let t0 = time_index(0);

    // gap terms: g_i = t_1 − t_i + (i−1)h
    let two_q1 = 2.0 * weights.q1;
    for i in 1..n {
        let g = gap_error(x, i, config.headway);
        let ti = time_index(i);
        d.lx[t0] += two_q1 * g;
        d.lx[ti] -= two_q1 * g;
        d.lxx[(t0, t0)] += two_q1;
        d.lxx[(ti, ti)] += two_q1;
        d.lxx[(t0, ti)] -= two_q1;
        d.lxx[(ti, t0)] -= two_q1;
    }

    for i in 0..n {
        let pi = slowness_index(i);
        let e = ecology_term(x[pi], u[i], i, theta, config, weights);
        d.lx[pi] += e.d_pi;
        d.lxx[(pi, pi)] += e.d_pi_pi;
        d.lu[i] += e.d_a;
        d.luu[(i, i)] += e.d_a_a;
        d.lux[(i, pi)] += e.d_a_pi;
    }

    for i in 0..n {
        d.lu[i] += 2.0 * weights.r1 * u[i];
        d.luu[(i, i)] += 2.0 * weights.r1;
    }
    d
}

/// Total cost of a trajectory: running costs over `controls.len()` steps plus
/// the terminal cost. `thetas[k]` is the grade at step `k`.
pub fn trajectory_cost(
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    thetas: &[f64],
    config: &PlatoonConfig,
    weights: &CostWeights,
) -> CostBreakdown {
    let mut total = CostBreakdown::default();
    for (k, u) in controls.iter().enumerate() {
        total.accumulate(&running_cost(&states[k], u, thetas[k], config, weights));
    }
    let term = terminal_cost(&states[controls.len()], config, weights);
    total.terminal += term;
    total.total += term;
    total
}
