//! Speed and acceleration bounds as inequality constraints `e ≤ 0`, and the
//! augmented-Lagrangian terms they contribute to the stage costs.
//!
//! Running steps carry four constraints per vehicle, in this order:
//! `v ≤ v_max`, `v ≥ v_floor`, `a ≤ a_max`, `a ≥ a_min`. The terminal state
//! only carries the two speed bounds.

use nalgebra::{DMatrix, DVector};

use crate::cost::CostDerivatives;
use crate::platoon::{slowness_index, PlatoonConfig};

pub const PER_VEHICLE: usize = 4;
pub const PER_VEHICLE_TERMINAL: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub speed_limit: f64,
    pub speed_floor: f64,
    pub a_max: Vec<f64>,
    pub a_min: Vec<f64>,
}

/// How the slack `s` is chosen when the augmented terms are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlackPolicy {
    /// Use the slack stored in [`AlState`] as a constant.
    Fixed,
    /// Minimise over `s ≥ 0` pointwise, `s = max(0, −λ/ρ − e)`. Inactive
    /// constraints then contribute neither gradient nor curvature.
    Optimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlState {
    pub rho: DVector<f64>,
    pub lambda: DVector<f64>,
    pub slack: DVector<f64>,
}

impl AlState {
    pub fn new(len: usize, rho: f64) -> Self {
        Self {
            rho: DVector::from_element(len, rho),
            lambda: DVector::zeros(len),
            slack: DVector::zeros(len),
        }
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Slack minimising the augmented term for constraint `j` at value `e`.
    #[inline]
    pub fn optimal_slack(&self, j: usize, e: f64) -> f64 {
        (-self.lambda[j] / self.rho[j] - e).max(0.0)
    }

    fn slack_for(&self, j: usize, e: f64, policy: SlackPolicy) -> f64 {
        match policy {
            SlackPolicy::Fixed => self.slack[j],
            SlackPolicy::Optimal => self.optimal_slack(j, e),
        }
    }

    /// `Σ λ C + ½ ρ C²` with `C = e + s`.
    pub fn penalty(&self, e: &DVector<f64>, policy: SlackPolicy) -> f64 {
        (0..e.len())
            .map(|j| {
                let c = e[j] + self.slack_for(j, e[j], policy);
                self.lambda[j] * c + 0.5 * self.rho[j] * c * c
            })
            .sum()
    }

    pub fn update_slack(&mut self, e: &DVector<f64>) {
        for j in 0..e.len() {
            self.slack[j] = self.optimal_slack(j, e[j]);
        }
    }

    pub fn update_multipliers(&mut self, e: &DVector<f64>) {
        for j in 0..e.len() {
            self.lambda[j] = (self.lambda[j] + self.rho[j] * (e[j] + self.slack[j])).max(0.0);
        }
    }

    /// Scales `ρ` by `factor` (capped at `max`) where `e > tol`.
    pub fn escalate_penalty(&mut self, e: &DVector<f64>, factor: f64, tol: f64, max: f64) {
        for j in 0..e.len() {
            if e[j] > tol {
                self.rho[j] = (self.rho[j] * factor).min(max);
            }
        }
    }
}

impl ConstraintSet {
    pub fn from_config(config: &PlatoonConfig) -> Self {
        Self {
            speed_limit: config.speed_limit,
            speed_floor: config.speed_floor,
            a_max: config.vehicles.iter().map(|v| v.a_max).collect(),
            a_min: config.vehicles.iter().map(|v| v.a_min).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.a_max.len()
    }

    pub fn running_len(&self) -> usize {
        PER_VEHICLE * self.n()
    }

    pub fn terminal_len(&self) -> usize {
        PER_VEHICLE_TERMINAL * self.n()
    }

    pub fn evaluate(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut e = DVector::zeros(self.running_len());
        for i in 0..self.n() {
            let v = 1.0 / x[slowness_index(i)];
            e[4 * i] = v - self.speed_limit;
            e[4 * i + 1] = self.speed_floor - v;
            e[4 * i + 2] = u[i] - self.a_max[i];
            e[4 * i + 3] = self.a_min[i] - u[i];
        }
        e
    }

    pub fn evaluate_terminal(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut e = DVector::zeros(self.terminal_len());
        for i in 0..self.n() {
            let v = 1.0 / x[slowness_index(i)];
            e[2 * i] = v - self.speed_limit;
            e[2 * i + 1] = self.speed_floor - v;
        }
        e
    }

    /// Augmented stage cost `base + Σ λ C + ½ ρ C²`.
    pub fn augmented_running_cost(
        &self,
        base: f64,
        al: &AlState,
        x: &DVector<f64>,
        u: &DVector<f64>,
        policy: SlackPolicy,
    ) -> f64 {
        base + al.penalty(&self.evaluate(x, u), policy)
    }

    /// Augmented-Lagrangian additions to the running-cost derivatives.
    pub fn al_derivative_terms(
        &self,
        al: &AlState,
        x: &DVector<f64>,
        u: &DVector<f64>,
        policy: SlackPolicy,
    ) -> CostDerivatives {
        let n = self.n();
        let e = self.evaluate(x, u);
        let mut d = CostDerivatives::zeros(n);
        for i in 0..n {
            let pi = slowness_index(i);
            let p = x[pi];
            for (k, sign) in [(0usize, 1.0), (1, -1.0)] {
                let j = 4 * i + k;
                if let Some((mu, rho)) = multiplier(al, j, e[j], policy) {
                    let ex = -sign / (p * p);
                    let exx = 2.0 * sign / (p * p * p);
                    d.lx[pi] += mu * ex;
                    d.lxx[(pi, pi)] += rho * ex * ex + mu * exx;
                }
            }
            for (k, sign) in [(2usize, 1.0), (3, -1.0)] {
                let j = 4 * i + k;
                if let Some((mu, rho)) = multiplier(al, j, e[j], policy) {
                    d.lu[i] += mu * sign;
                    d.luu[(i, i)] += rho;
                }
            }
        }
        d
    }

    /// Augmented-Lagrangian additions to the terminal gradient and Hessian.
    pub fn al_terminal_terms(
        &self,
        al: &AlState,
        x: &DVector<f64>,
        policy: SlackPolicy,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let e = self.evaluate_terminal(x);
        let mut lx = DVector::zeros(2 * n);
        let mut lxx = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            let pi = slowness_index(i);
            let p = x[pi];
            for (k, sign) in [(0usize, 1.0), (1, -1.0)] {
                let j = 2 * i + k;
                if let Some((mu, rho)) = multiplier(al, j, e[j], policy) {
                    let ex = -sign / (p * p);
                    lx[pi] += mu * ex;
                    lxx[(pi, pi)] += rho * ex * ex + mu * 2.0 * sign / (p * p * p);
                }
            }
        }
        (lx, lxx)
    }
}

/// Effective multiplier `λ + ρC` and curvature weight for one constraint,
/// or `None` when the optimal slack makes it inactive.
#[inline]
fn multiplier(al: &AlState, j: usize, e: f64, policy: SlackPolicy) -> Option<(f64, f64)> {
    match policy {
        SlackPolicy::Fixed => Some((al.lambda[j] + al.rho[j] * (e + al.slack[j]), al.rho[j])),
        SlackPolicy::Optimal => {
            let mu = al.lambda[j] + al.rho[j] * e;
            (mu > 0.0).then_some((mu, al.rho[j]))
        }
    }
}

/// Largest positive residual, zero when all constraints hold.
pub fn max_violation(e: &DVector<f64>) -> f64 {
    e.iter().fold(0.0f64, |m, v| m.max(*v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::platoon::InitialState;
    use proptest::prelude::*;

    fn set() -> (PlatoonConfig, ConstraintSet) {
        let c = PlatoonConfig::defaults(3, 20.0, 800.0);
        let s = ConstraintSet::from_config(&c);
        (c, s)
    }

    #[test]
    fn count_is_four_per_vehicle() {
        let (_, s) = set();
        assert_eq!(s.running_len(), 12);
        assert_eq!(s.terminal_len(), 6);
    }

    #[test]
    fn boundaries_evaluate_to_zero() {
        let (c, s) = set();
        let mut x = InitialState::equilibrium(&c).to_vector();
        x[1] = 1.0 / c.speed_limit;
        let u = DVector::from_vec(vec![0.0, 3.0, -5.0]);
        let e = s.evaluate(&x, &u);
        assert!(e[0].abs() < 1e-12);
        assert_eq!(e[4 + 2], 0.0);
        assert_eq!(e[8 + 3], 0.0);
    }

    proptest! {
        #[test]
        fn signs_match_direct_checks(
            v in proptest::collection::vec(0.05f64..45.0, 3),
            a in proptest::collection::vec(-7.0f64..5.0, 3),
        ) {
            let (c, s) = set();
            let x = DVector::from_fn(6, |r, _| if r % 2 == 1 { 1.0 / v[r / 2] } else { r as f64 });
            let u = DVector::from_vec(a.clone());
            let e = s.evaluate(&x, &u);
            for i in 0..3 {
                prop_assert_eq!(e[4 * i] <= 0.0, v[i] <= c.speed_limit + 1e-12 || e[4 * i].abs() < 1e-12);
                prop_assert_eq!(e[4 * i + 1] <= 0.0, v[i] >= c.speed_floor);
                prop_assert_eq!(e[4 * i + 2] <= 0.0, a[i] <= 3.0);
                prop_assert_eq!(e[4 * i + 3] <= 0.0, a[i] >= -5.0);
            }
        }
    }

    #[test]
    fn inactive_penalty_is_zero() {
        let al = AlState::new(4, 10.0);
        let e = DVector::zeros(4);
        assert_eq!(al.penalty(&e, SlackPolicy::Fixed), 0.0);
    }

    #[test]
    fn single_constraint_substitution() {
        let mut al = AlState::new(1, 10.0);
        al.lambda[0] = 1.0;
        let e = DVector::from_vec(vec![0.2]);
        assert!((al.penalty(&e, SlackPolicy::Fixed) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn slack_examples() {
        let mut al = AlState::new(3, 10.0);
        al.lambda[2] = 2.0;
        al.update_slack(&DVector::from_vec(vec![-1.0, 0.5, -0.1]));
        assert_eq!(al.slack[0], 1.0);
        assert_eq!(al.slack[1], 0.0);
        assert_eq!(al.slack[2], 0.0);
    }

    #[test]
    fn multiplier_examples() {
        let mut al = AlState::new(2, 10.0);
        al.lambda[0] = 0.7;
        al.slack[0] = 0.25;
        al.update_multipliers(&DVector::from_vec(vec![-0.25, 0.3]));
        assert_eq!(al.lambda[0], 0.7);
        assert!((al.lambda[1] - 3.0).abs() < 1e-12);

        let mut prev = al.lambda[1];
        for _ in 0..5 {
            al.update_multipliers(&DVector::from_vec(vec![-0.25, 0.3]));
            assert!(al.lambda[1] > prev);
            prev = al.lambda[1];
        }
    }

    #[test]
    fn slack_absorbs_multiplier_when_nonnegative() {
        let mut al = AlState::new(1, 4.0);
        al.lambda[0] = 2.0;
        let e = DVector::from_vec(vec![-1.0]);
        al.update_slack(&e);
        assert!((e[0] + al.slack[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn penalty_escalation() {
        let mut al = AlState::new(3, 10.0);
        al.escalate_penalty(&DVector::from_vec(vec![-1.0, -0.1, 0.0]), 10.0, 1e-3, 1e8);
        assert_eq!(al.rho, DVector::from_element(3, 10.0));
        al.escalate_penalty(&DVector::from_vec(vec![0.5, -0.1, 2e-3]), 10.0, 1e-3, 1e8);
        assert_eq!(al.rho, DVector::from_vec(vec![100.0, 10.0, 100.0]));
    }

    #[test]
    fn acceleration_cap_gradient() {
        let (c, s) = set();
        let x = InitialState::equilibrium(&c).to_vector();
        let u = DVector::from_vec(vec![3.5, 0.0, 0.0]);
        let mut al = AlState::new(12, 10.0);
        al.lambda[2] = 1.5;
        let d = s.al_derivative_terms(&al, &x, &u, SlackPolicy::Optimal);
        assert!((d.lu[0] - (1.5 + 10.0 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_multipliers_and_violations_give_zero_blocks() {
        let (c, s) = set();
        let x = InitialState::equilibrium(&c).to_vector();
        let u = DVector::zeros(3);
        let al = AlState::new(12, 10.0);
        let d = s.al_derivative_terms(&al, &x, &u, SlackPolicy::Optimal);
        assert_eq!(d.lx.norm() + d.lu.norm() + d.lxx.norm() + d.luu.norm(), 0.0);
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0)
    }

    fn check_fd(
        s: &ConstraintSet,
        al: &AlState,
        x: &DVector<f64>,
        u: &DVector<f64>,
        policy: SlackPolicy,
    ) -> Result<(), TestCaseError> {
        let f = |x: &DVector<f64>, u: &DVector<f64>| s.augmented_running_cost(0.0, al, x, u, policy);
        let d = s.al_derivative_terms(al, x, u, policy);
        for j in 0..x.len() {
            let h = 1e-7 * x[j].abs().max(1e-3);
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (f(&xp, u) - f(&xm, u)) / (2.0 * h);
            prop_assert!(close(d.lx[j], fd), "lx[{}] {} vs {}", j, d.lx[j], fd);
            let col = (s.al_derivative_terms(al, &xp, u, policy).lx - s.al_derivative_terms(al, &xm, u, policy).lx)
                / (2.0 * h);
            for r in 0..x.len() {
                prop_assert!(close(d.lxx[(r, j)], col[r]), "lxx[{},{}]", r, j);
            }
        }
        for j in 0..u.len() {
            let h = 1e-6;
            let mut up = u.clone();
            up[j] += h;
            let mut um = u.clone();
            um[j] -= h;
            let fd = (f(x, &up) - f(x, &um)) / (2.0 * h);
            prop_assert!(close(d.lu[j], fd), "lu[{}] {} vs {}", j, d.lu[j], fd);
            let col = (s.al_derivative_terms(al, x, &up, policy).lu - s.al_derivative_terms(al, x, &um, policy).lu)
                / (2.0 * h);
            for r in 0..u.len() {
                prop_assert!(close(d.luu[(r, j)], col[r]));
            }
        }
        Ok(())
    }

    fn kink_free(al: &AlState, e: &DVector<f64>) -> bool {
        (0..e.len()).all(|j| (al.lambda[j] + al.rho[j] * e[j]).abs() > 1e-3)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn augmented_derivatives_match_finite_differences(
            v in proptest::collection::vec(0.02f64..40.0, 3),
            a in proptest::collection::vec(-7.0f64..5.0, 3),
            lam in proptest::collection::vec(0.0f64..5.0, 12),
            rho in proptest::collection::vec(1.0f64..100.0, 12),
            slack in proptest::collection::vec(0.0f64..2.0, 12),
        ) {
            let (_, s) = set();
            let x = DVector::from_fn(6, |r, _| if r % 2 == 1 { 1.0 / v[r / 2] } else { 1.0 + r as f64 });
            let u = DVector::from_vec(a);
            let al = AlState {
                rho: DVector::from_vec(rho),
                lambda: DVector::from_vec(lam),
                slack: DVector::from_vec(slack),
            };
            check_fd(&s, &al, &x, &u, SlackPolicy::Fixed)?;
            if kink_free(&al, &s.evaluate(&x, &u)) {
                check_fd(&s, &al, &x, &u, SlackPolicy::Optimal)?;
            }
        }

        #[test]
        fn augmented_cost_dominates_base_on_violation(
            e in proptest::collection::vec(0.0f64..3.0, 6),
            lam in proptest::collection::vec(0.0f64..5.0, 6),
        ) {
            let mut al = AlState::new(6, 100.0);
            al.lambda = DVector::from_vec(lam);
            let e = DVector::from_vec(e);
            al.update_slack(&e);
            prop_assert!(al.penalty(&e, SlackPolicy::Fixed) >= 0.0);
        }
    }

    #[test]
    fn terminal_terms_match_finite_differences() {
        let (_, s) = set();
        let x = DVector::from_vec(vec![40.0, 1.0 / 36.0, 41.0, 1.0 / 0.05, 42.0, 0.05]);
        let mut al = AlState::new(6, 10.0);
        al.lambda[1] = 0.5;
        al.lambda[2] = 0.3;
        al.slack[4] = 0.2;
        let (lx, lxx) = s.al_terminal_terms(&al, &x, SlackPolicy::Fixed);
        let f = |x: &DVector<f64>| al.penalty(&s.evaluate_terminal(x), SlackPolicy::Fixed);
        for j in 0..6 {
            let h = 1e-7 * x[j].abs();
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!(close(lx[j], fd), "{j}: {} vs {fd}", lx[j]);
            let col = (s.al_terminal_terms(&al, &xp, SlackPolicy::Fixed).0
                - s.al_terminal_terms(&al, &xm, SlackPolicy::Fixed).0)
                / (2.0 * h);
            for r in 0..6 {
                assert!(close(lxx[(r, j)], col[r]));
            }
        }
    }
}
