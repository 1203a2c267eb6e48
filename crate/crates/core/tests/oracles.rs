#[path = "support/properties.rs"]
mod support;

use mfc_core::fixed_point::evaluate_policy;
use mfc_core::mc_eval::{
    convergence_study, estimate_value_sampled, paired_difference, population_probe, McConfig,
};
use mfc_core::measure::MeasureSlice;
use mfc_core::particle_sim::{DecisionGrid, Dynamics};
use mfc_core::policy::GaussianPolicy;
use mfc_core::riccati::{optimal_policy, solve_backward};
use nalgebra::DVector;
use support::*;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[test]
fn m1_value_matches_closed_form_at_every_node() {
    let sol = solve_backward(&m1(), 1000).unwrap();
    for (t, n) in sol.times().iter().zip(sol.nodes()) {
        let exact = 1.0 / (2.0 * t - 4.0);
        assert!((n.lambda[(0, 0)] - exact).abs() < 1e-12, "t={t}");
        assert!((n.gamma[(0, 0)] - exact).abs() < 1e-12, "t={t}");
        assert_eq!(n.zeta[0], 0.0);
        assert!((n.chi - 0.5 * LN_2PI * (1.0 - t)).abs() < 1e-12, "t={t}");
    }
}

#[test]
fn m1_gains_match_closed_form() {
    let model = m1();
    let pi = optimal_policy(&solve_backward(&model, 1000).unwrap(), &model).unwrap();
    for (t, b) in pi.times().iter().zip(pi.nodes()) {
        let k = 1.0 / (t - 2.0);
        assert!((b.k[(0, 0)] - k).abs() < 1e-12);
        assert!((b.k_bar[(0, 0)] - k).abs() < 1e-12);
        assert_eq!(b.k0[0], 0.0);
        assert!((b.sigma[(0, 0)] - 1.0).abs() < 1e-12);
    }
}

/// With `Fo = ½` the scalar equation `Λ' = Λ²/(Λ/4 − ½)` integrates to
/// `¼ log(−Λ) + 1/(2Λ) = t + c`; invert it by bisection on `(−½, 0)`.
fn m2_lambda(t: f64) -> f64 {
    let g = |l: f64| 0.25 * (-l).ln() + 0.5 / l;
    let c = g(-0.5) - 1.0;
    let (mut lo, mut hi) = (-0.5, -1e-9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        // g is decreasing on (−∞, 0) towards −∞ near 0.
        if g(mid) - t - c > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn m2_value_matches_implicit_solution() {
    let sol = solve_backward(&m2(), 1000).unwrap();
    for (t, n) in sol.times().iter().zip(sol.nodes()).step_by(50) {
        let exact = m2_lambda(*t);
        assert!(
            (n.lambda[(0, 0)] - exact).abs() < 1e-10,
            "t={t}: {} vs {exact}",
            n.lambda[(0, 0)]
        );
        assert!((n.gamma[(0, 0)] - n.lambda[(0, 0)]).abs() < 1e-14);
    }
}

#[test]
fn open_loop_value_matches_discrete_oracle_in_the_fine_limit() {
    let model = m1();
    let pi = GaussianPolicy::open_loop(1.0, 1, scalar(1.0)).unwrap();
    let value = evaluate_policy(&model, &pi, 1000).unwrap();
    // J̃(0, δ₀) = γE − ½Σ with E = ½ log(2πe): the relaxed value.
    let closed = 0.5 * LN_2PI;
    assert!((value.value_at(0.0, &MeasureSlice::dirac(DVector::zeros(1))) - closed).abs() < 1e-10);
    // The sampled value sits below it by ½·h·Σ·T.
    for steps in [10, 100, 1000] {
        let sampled = sampled_value_scalar(&model, &pi, steps, 0.0, 0.0);
        assert!((sampled - (closed - 0.5 / steps as f64)).abs() < 1e-12);
    }
}

fn mc(
    particles: usize,
    steps: usize,
    replications: usize,
    initial: MeasureSlice<f64>,
) -> McConfig<f64> {
    McConfig {
        particles,
        steps,
        decision: DecisionGrid::Uniform(steps),
        replications,
        seed: 11,
        initial,
        base_steps: None,
        dynamics: Dynamics::Sampled,
    }
}

#[test]
fn sampled_estimator_is_unbiased_for_the_discrete_value() {
    let model = m1();
    let star = optimal_policy(&solve_backward(&model, 1000).unwrap(), &model).unwrap();
    let open = GaussianPolicy::open_loop(1.0, 1, scalar(2.0)).unwrap();
    for (pi, init, v0) in [
        (&open, MeasureSlice::standard(1), 1.0),
        (&star, MeasureSlice::dirac(DVector::zeros(1)), 0.0),
    ] {
        let oracle = sampled_value_scalar(&model, pi, 20, 0.0, v0);
        let est =
            estimate_value_sampled(&model, pi, &mc(2000, 20, 40, init), Some(oracle)).unwrap();
        let z = (est.estimate - oracle) / est.std_error;
        assert!(
            z.abs() < 3.5,
            "estimate {} oracle {oracle} se {}",
            est.estimate,
            est.std_error
        );
    }
}

#[test]
fn rate_study_gaps_match_the_discrete_oracle() {
    let model = m1();
    let pi = GaussianPolicy::open_loop(1.0, 1, scalar(4.0)).unwrap();
    let init = MeasureSlice::dirac(DVector::zeros(1));
    let reference = evaluate_policy(&model, &pi, 1000)
        .unwrap()
        .value_at(0.0, &init);
    let grids = [0.2, 0.1, 0.05];
    let study = convergence_study(&model, &pi, &grids, &mc(1000, 1, 30, init), reference).unwrap();
    for row in &study.rows {
        let steps = (1.0 / row.grid).round() as usize;
        let expected = sampled_value_scalar(&model, &pi, steps, 0.0, 0.0) - reference;
        assert!(
            (row.gap - expected).abs() < 3.5 * row.std_error,
            "grid {}: gap {} expected {expected} se {}",
            row.grid,
            row.gap,
            row.std_error
        );
    }
    let slope = study.slope.expect("gaps well above noise");
    assert!((slope - 1.0).abs() < 0.1, "slope {slope}");
    assert!(study.monotone);
}

#[test]
fn doubling_the_population_leaves_the_m2_value_within_noise() {
    let model = m2();
    let star = optimal_policy(&solve_backward(&model, 200).unwrap(), &model).unwrap();
    let (small, large) =
        population_probe(&model, &star, &mc(500, 20, 30, MeasureSlice::standard(1))).unwrap();
    assert_eq!(large.replications, small.replications);
    let (diff, se) = paired_difference(&large, &small);
    assert!(
        diff.abs() < 4.0 * se.max(1e-12),
        "N -> 2N moved the value by {diff} (se {se})"
    );
}
