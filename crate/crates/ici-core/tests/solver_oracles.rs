//! Independent integration oracles for the backward solvers: refined
//! backward-Euler for the scalar ODE, bisection shooting on the coupled
//! forward-backward pair for the degenerate exponential case.

mod common;

use common::{backward_euler, benign_scenario, degenerate_scenario, shoot_coupled};
use ici_core::generator::{generator_power, GeneratorInputs, GeneratorMode};
use ici_core::mortality::{InsuranceContract, MortalityCurve};
use ici_core::paths::{ControlBoxes, TimeGrid};
use ici_core::solver::{
    solve_fbsde_exponential, solve_ode_power, PicardSettings, RegressionSpec,
};

fn wide_boxes() -> ControlBoxes {
    ControlBoxes::new([[-50.0, 50.0]; 3], [-50.0, 50.0], [-50.0, 50.0]).unwrap()
}

#[test]
fn ode_power_matches_refined_backward_euler_oracle() {
    let horizon = 2.0;
    let scenario = benign_scenario(
        horizon,
        0.03,
        0.04,
        0.02,
        0.01,
        0.08,
        0.2,
        0.03,
        Some((-0.1, 0.2)),
    );
    let mortality = MortalityCurve::constant(0.01, horizon).unwrap();
    let contract = InsuranceContract::constant(0.02, horizon).unwrap();
    let kappa = 0.5;
    let boxes = wide_boxes();
    let steps = 100usize;
    let grid = TimeGrid::new(horizon, steps).unwrap();

    let solution =
        solve_ode_power(&scenario, &mortality, &contract, kappa, grid, &boxes).unwrap();

    // Oracle: explicit backward Euler on 32- and 64-fold refinements of the
    // grid, Richardson-extrapolated to cancel the first-order term.
    let rhs = |t: f64, y: f64| {
        let co = scenario.coefficients_at(t).unwrap();
        let inputs = GeneratorInputs::new(t, 1.0, y, [0.0; 3], vec![0.0; co.n_atoms()]);
        generator_power(&inputs, &co, &mortality, &contract, kappa, &boxes, GeneratorMode::InfForm)
            .unwrap()
            .value
    };
    let coarse = backward_euler(horizon, 32 * steps, rhs);
    let fine = backward_euler(horizon, 64 * steps, rhs);

    // The Euler pair itself must behave first order before extrapolation.
    let euler_gap = (fine[0] - coarse[0]).abs();
    assert!(euler_gap > 0.0 && euler_gap < 1e-3, "euler gap {euler_gap}");

    let mut max_err = 0.0f64;
    for i in 0..=steps {
        let oracle = 2.0 * fine[64 * i] - coarse[32 * i];
        max_err = max_err.max((solution.y[i][0] - oracle).abs());
    }
    assert!(max_err < 1e-6, "max node error {max_err}");
}

#[test]
fn degenerate_fbsde_matches_coupled_ode_shooting_oracle() {
    // Zero noise reduces the wealth-coupled exponential system to a pair of
    // ordinary differential equations with X(0) fixed and Y(T) = 0.
    let horizon = 1.0;
    let (rate, discount, lambda, eta, delta, x0) = (0.03, 0.03, 0.02, 0.04, 1.0, 1.0);
    let scenario = degenerate_scenario(horizon, rate, discount);
    let mortality = MortalityCurve::constant(lambda, horizon).unwrap();
    let contract = InsuranceContract::constant(eta, horizon).unwrap();
    let boxes = wide_boxes();
    let steps = 4000usize;
    let grid = TimeGrid::new(horizon, steps).unwrap();

    let (solution, _) = solve_fbsde_exponential(
        &scenario,
        &mortality,
        &contract,
        delta,
        grid,
        10,
        &RegressionSpec { degree: 0, ridge: 0.0 },
        &PicardSettings { damping: 0.5, max_iterations: 200, tolerance: 1e-9 },
        3,
        x0,
        &boxes,
    )
    .unwrap();
    assert!(solution.converged);

    // Closed-form scalar reductions of the optimal controls with all market
    // loadings zero: c* = x - y + ln(delta)/delta, p* = eta (ln(delta
    // lambda/eta)/delta - y), portfolio terms vanish.
    let log_dle = (delta * lambda / eta).ln();
    let c_star = |x: f64, y: f64| x - y + delta.ln() / delta;
    let p_star = |y: f64| eta * (log_dle / delta - y);
    let h = |x: f64, y: f64| {
        let fc = 1.0 / delta + x - y + delta.ln() / delta;
        let fp = eta / delta + eta * log_dle / delta - eta * y;
        fc + fp - (discount + lambda) / delta - rate * x
    };
    let rhs = move |_t: f64, x: f64, y: f64| {
        (rate * x - c_star(x, y) - p_star(y), -h(x, y))
    };
    let oracle = shoot_coupled(x0, horizon, steps, [-5.0, 5.0], rhs);

    let mut max_err = 0.0f64;
    for i in 0..=steps {
        max_err = max_err.max((solution.y[i][0] - oracle[i].1).abs());
    }
    assert!(max_err < 1e-4, "max node error {max_err}");
}

#[test]
fn picard_trace_converges_on_benign_scenario() {
    // Initial wealth is set high enough that no sampled path goes bankrupt:
    // a changing bankruptcy flag set would make the fixed-point map jump
    // between iterations and mask genuine convergence.
    let horizon = 1.0;
    let scenario =
        benign_scenario(horizon, 0.03, 0.04, 0.02, 0.05, 0.08, 0.2, 0.03, None);
    let mortality = MortalityCurve::constant(0.02, horizon).unwrap();
    let contract = InsuranceContract::constant(0.04, horizon).unwrap();
    let boxes = wide_boxes();
    let grid = TimeGrid::new(horizon, 20).unwrap();

    let (solution, wealth) = solve_fbsde_exponential(
        &scenario,
        &mortality,
        &contract,
        1.0,
        grid,
        400,
        &RegressionSpec::default(),
        &PicardSettings { damping: 0.5, max_iterations: 50, tolerance: 1e-6 },
        11,
        5.0,
        &boxes,
    )
    .unwrap();
    assert!(
        solution.converged,
        "flagged {} regression_flagged {} trace: {:?}",
        wealth.flagged_fraction(),
        solution.regression_flagged,
        solution.picard_trace
    );
    assert!(solution.picard_trace.len() <= 50);
    assert!(*solution.picard_trace.last().unwrap() < 1e-6);
    assert!(wealth.flagged_fraction() < 0.05);
}
