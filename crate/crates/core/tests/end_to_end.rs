//! Full-route experiments through the library API.

use ecoplatoon::experiment::{compare, grade_split, plan};
use ecoplatoon::receding::RecedingOptions;
use ecoplatoon::scenario::{HorizonMode, Scenario};
use ecoplatoon::stability::{following_errors, max_abs_over, run_perturbation, PerturbationShape, PerturbationSpec};

#[test]
fn receding_horizon_keeps_most_of_the_saving() {
    let one_shot = compare(&Scenario::preset("collector").unwrap()).unwrap();
    let s = Scenario::preset("collector").unwrap().with_window(40.0).unwrap();
    assert!(matches!(s.horizon, HorizonMode::Receding { .. }));
    let rh = compare(&s).unwrap();
    assert!(rh.plan.converged);
    assert!(rh.plan.max_violation <= 1e-3);
    assert!(
        rh.savings_percent() > 0.5 * one_shot.savings_percent(),
        "{} vs {}",
        rh.savings_percent(),
        one_shot.savings_percent()
    );
    assert!(rh.savings_percent() <= one_shot.savings_percent() + 1e-9);
    let (up, down) = grade_split(&s, &rh.segment_deltas);
    assert!(up > down);
}

#[test]
fn without_the_ecology_term_there_is_nothing_to_save() {
    let mut s = Scenario::preset("collector").unwrap();
    s.weights.q2 = 0.0;
    let c = compare(&s).unwrap();
    assert!(c.plan.converged);
    assert!(c.savings_percent().abs() < 1.0, "{}", c.savings_percent());
    assert!(c.plan.controls.accels.amax() < 1e-4);
}

#[test]
fn offsets_are_closed_within_the_route() {
    let mut s = Scenario::preset("major_arterial").unwrap();
    s.initial.times[1] += 0.4;
    let p = plan(&s).unwrap();
    for e in following_errors(&p.states, &s.config) {
        assert!(max_abs_over(&e, 0.75, 1.0) < 0.1 * max_abs_over(&e, 0.0, 0.25).max(1e-9));
    }
}

#[test]
fn mid_route_pulse_is_damped_along_the_platoon() {
    let s = Scenario::preset("collector").unwrap().with_ds(0.5).unwrap();
    let spec = PerturbationSpec {
        magnitude: 1.0,
        shape: PerturbationShape::Pulse,
        onset_position: 200.0,
        duration: 50.0,
        receding: RecedingOptions {
            window: 40.0,
            replan_interval: 5.0,
        },
    };
    let r = run_perturbation(&s.config, &s.weights, &s.profile, &s.initial, &spec, &s.solver).unwrap();
    assert!(r.converged);
    assert!(r.stable, "{:?}", r.gamma);
    assert!(r.deviation_norms[0] > 0.0);
}
