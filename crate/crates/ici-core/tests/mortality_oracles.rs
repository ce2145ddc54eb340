//! Quadrature oracles for the mortality law: survival against an adaptive
//! Simpson hazard integral, and the density-survival partition of unity.

mod common;

use common::adaptive_simpson;
use ici_core::mortality::{death_density, survival_probability, MortalityCurve};
use ici_core::piecewise::Piecewise;

/// Integrates a piecewise-smooth function by adaptive Simpson between the
/// given break points, so no panel straddles a kink.
fn simpson_between_breaks(
    f: &impl Fn(f64) -> f64,
    breaks: &[f64],
    a: f64,
    b: f64,
    tol: f64,
) -> f64 {
    let mut cuts = vec![a];
    for &c in breaks {
        if c > a && c < b {
            cuts.push(c);
        }
    }
    cuts.push(b);
    cuts.windows(2)
        .map(|w| adaptive_simpson(f, w[0], w[1], tol / (cuts.len() - 1) as f64))
        .sum()
}

fn stepped_mortality() -> MortalityCurve {
    let hazard = Piecewise::new(vec![0.0, 5.0], vec![0.01, 0.03], 10.0).unwrap();
    MortalityCurve::new(hazard).unwrap()
}

#[test]
fn survival_matches_hazard_quadrature() {
    let stepped = stepped_mortality();
    let flat = MortalityCurve::constant(0.02, 40.0).unwrap();

    for t in [0.1, 2.5, 5.0, 7.75, 10.0] {
        let rate = |s: f64| stepped.rate(s).unwrap();
        let quad = (-simpson_between_breaks(&rate, &[5.0], 0.0, t, 1e-12)).exp();
        let closed = survival_probability(&stepped, t).unwrap();
        assert!(
            (closed - quad).abs() <= 1e-10,
            "stepped t={t}: {closed} vs quadrature {quad}"
        );
    }
    for t in [0.5, 11.0, 40.0] {
        let rate = |s: f64| flat.rate(s).unwrap();
        let quad = (-adaptive_simpson(&rate, 0.0, t, 1e-12)).exp();
        let closed = survival_probability(&flat, t).unwrap();
        assert!(
            (closed - quad).abs() <= 1e-10,
            "flat t={t}: {closed} vs quadrature {quad}"
        );
    }
}

#[test]
fn death_density_and_terminal_survival_partition_unity() {
    let stepped = stepped_mortality();
    let g = |t: f64| death_density(&stepped, t).unwrap();
    let mass = simpson_between_breaks(&g, &[5.0], 0.0, 10.0, 1e-12)
        + survival_probability(&stepped, 10.0).unwrap();
    assert!((mass - 1.0).abs() <= 1e-10, "stepped mass {mass}");

    let flat = MortalityCurve::constant(0.02, 40.0).unwrap();
    let g = |t: f64| death_density(&flat, t).unwrap();
    let mass =
        adaptive_simpson(&g, 0.0, 40.0, 1e-12) + survival_probability(&flat, 40.0).unwrap();
    assert!((mass - 1.0).abs() <= 1e-10, "flat mass {mass}");
}

#[test]
fn density_is_negative_survival_derivative() {
    let mort = stepped_mortality();
    let h = 1e-5;
    // Interior points away from the hazard break, where survival is smooth.
    for t in [1.0, 3.5, 7.0, 9.0] {
        let left = survival_probability(&mort, t - h).unwrap();
        let right = survival_probability(&mort, t + h).unwrap();
        let derivative = (left - right) / (2.0 * h);
        let g = death_density(&mort, t).unwrap();
        assert!(
            (derivative - g).abs() < 1e-9,
            "t={t}: finite difference {derivative} vs density {g}"
        );
    }
}
