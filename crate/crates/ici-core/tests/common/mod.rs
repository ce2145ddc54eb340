//! Independent numerical oracles shared by the integration tests.
//!
//! Nothing here reuses library numerics beyond plain arithmetic: argmins
//! come from grid search and golden-section, integrals from adaptive
//! Simpson, differential equations from hand-rolled Euler and RK4 steppers.

#![allow(dead_code)]

use ici_core::market::{
    HjmCurve, InflationModel, JumpAtom, JumpMeasure, MarketScenario, RiskyAssetModel,
};
use ici_core::piecewise::{Piecewise, PiecewiseSurface};
use ici_core::rng::{CounterRng, Driver};

/// Uniform draw in `[lo, hi]` from the keyed counter generator.
pub fn uniform_in(rng: &CounterRng, key: u64, slot: u64, lo: f64, hi: f64) -> f64 {
    let u = (rng.normal(key, Driver::Risky, slot).atan() / std::f64::consts::PI) + 0.5;
    lo + (hi - lo) * u
}

/// Golden-section argmin of a unimodal scalar function on `[lo, hi]`.
pub fn golden_section_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Shrinking 3-d grid-search argmin: scans a uniform lattice, then zooms on
/// the best cell. Finds the global box minimum of smooth objectives to the
/// final lattice spacing.
pub fn grid_search_argmin_3d(
    f: impl Fn([f64; 3]) -> f64,
    bounds: [[f64; 2]; 3],
    points_per_axis: usize,
    levels: usize,
) -> [f64; 3] {
    let mut lo = [bounds[0][0], bounds[1][0], bounds[2][0]];
    let mut hi = [bounds[0][1], bounds[1][1], bounds[2][1]];
    let mut best = [0.0; 3];
    for _ in 0..levels {
        let mut best_val = f64::INFINITY;
        let n = points_per_axis;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = [
                        lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
                        lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64,
                        lo[2] + (hi[2] - lo[2]) * k as f64 / (n - 1) as f64,
                    ];
                    let v = f(x);
                    if v < best_val {
                        best_val = v;
                        best = x;
                    }
                }
            }
        }
        // Zoom to two lattice cells around the best point, clipped to the
        // original box.
        for a in 0..3 {
            let cell = (hi[a] - lo[a]) / (n - 1) as f64;
            lo[a] = (best[a] - 2.0 * cell).max(bounds[a][0]);
            hi[a] = (best[a] + 2.0 * cell).min(bounds[a][1]);
        }
    }
    best
}

/// Adaptive Simpson quadrature to the requested absolute tolerance.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 40)
}

/// Backward Euler march for a terminal-value scalar ODE `y' = -rhs(t, y)`,
/// `y(T) = 0`, on `steps` uniform steps; returns the node values.
pub fn backward_euler(horizon: f64, steps: usize, rhs: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let dt = horizon / steps as f64;
    let mut y = vec![0.0; steps + 1];
    for i in (0..steps).rev() {
        let t_next = (i + 1) as f64 * dt;
        y[i] = y[i + 1] + dt * rhs(t_next, y[i + 1]);
    }
    y
}

/// RK4 forward integration of a coupled pair `(x, y)` from `t = 0`.
pub fn rk4_pair(
    x0: f64,
    y0: f64,
    horizon: f64,
    steps: usize,
    rhs: impl Fn(f64, f64, f64) -> (f64, f64),
) -> Vec<(f64, f64)> {
    let dt = horizon / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (x0, y0);
    out.push((x, y));
    for i in 0..steps {
        let t = i as f64 * dt;
        let (k1x, k1y) = rhs(t, x, y);
        let (k2x, k2y) = rhs(t + 0.5 * dt, x + 0.5 * dt * k1x, y + 0.5 * dt * k1y);
        let (k3x, k3y) = rhs(t + 0.5 * dt, x + 0.5 * dt * k2x, y + 0.5 * dt * k2y);
        let (k4x, k4y) = rhs(t + dt, x + dt * k3x, y + dt * k3y);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        y += dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        out.push((x, y));
    }
    out
}

/// Solves the two-point problem `x(0) = x0`, `y(T) = 0` for a coupled pair
/// by bisection shooting on `y(0)` with RK4 integration.
pub fn shoot_coupled(
    x0: f64,
    horizon: f64,
    steps: usize,
    bracket: [f64; 2],
    rhs: impl Fn(f64, f64, f64) -> (f64, f64) + Copy,
) -> Vec<(f64, f64)> {
    let terminal = |y0: f64| rk4_pair(x0, y0, horizon, steps, rhs).last().unwrap().1;
    let (mut a, mut b) = (bracket[0], bracket[1]);
    let (fa, fb) = (terminal(a), terminal(b));
    assert!(
        fa.signum() != fb.signum(),
        "shooting bracket does not straddle the terminal condition: {fa} vs {fb}"
    );
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = terminal(m);
        if fm == 0.0 {
            a = m;
            b = m;
            break;
        }
        if fm.signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    rk4_pair(x0, 0.5 * (a + b), horizon, steps, rhs)
}

/// Least-squares slope of `log2(gap)` against the refinement level.
pub fn fitted_order(gaps: &[f64]) -> f64 {
    let n = gaps.len() as f64;
    let logs: Vec<f64> = gaps.iter().map(|g| g.log2()).collect();
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = logs.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, l) in logs.iter().enumerate() {
        num += (i as f64 - mean_x) * (l - mean_y);
        den += (i as f64 - mean_x) * (i as f64 - mean_x);
    }
    // Gap per halving should shrink, so the slope is negated into an order.
    -num / den
}

/// Flat zero-volatility scenario for degenerate-limit oracles.
pub fn degenerate_scenario(horizon: f64, rate: f64, discount: f64) -> MarketScenario {
    let flat = |r: f64| HjmCurve {
        initial_forward: Piecewise::constant(r, horizon + 2.0),
        alpha: PiecewiseSurface::zero(horizon, horizon + 2.0),
        sigma: PiecewiseSurface::zero(horizon, horizon + 2.0),
        gamma: vec![],
    };
    MarketScenario::new(
        flat(rate),
        flat(rate + 0.01),
        InflationModel {
            initial_index: 1.0,
            mu: Piecewise::constant(0.0, horizon),
            sigma: Piecewise::constant(0.0, horizon),
            gamma: vec![],
        },
        RiskyAssetModel {
            initial_price: 1.0,
            mu: Piecewise::constant(rate, horizon),
            sigma: Piecewise::constant(0.0, horizon),
            gamma: vec![],
        },
        JumpMeasure::none(),
        Piecewise::constant(discount, horizon),
        horizon,
        horizon + 2.0,
    )
    .unwrap()
}

/// Constant-coefficient noisy scenario: flat real curve at `rate` whose
/// bond diffusion loading is exactly `bond_loading` at every decision time,
/// lognormal index and risky asset, optionally one jump atom on the asset.
pub fn benign_scenario(
    horizon: f64,
    rate: f64,
    bond_loading: f64,
    mu_i: f64,
    sigma_i: f64,
    mu_s: f64,
    sigma_s: f64,
    discount: f64,
    jump: Option<(f64, f64)>,
) -> MarketScenario {
    let maturity = horizon + 2.0;
    // All forward volatility sits in the maturity band past the horizon, so
    // the maturity integral from any t <= horizon covers the whole band and
    // the bond loading is exactly bond_loading, constant in time.
    let sigma_surface = PiecewiseSurface::new(
        vec![0.0],
        vec![0.0, horizon],
        vec![vec![0.0, -bond_loading / (maturity - horizon)]],
        horizon,
        maturity,
    )
    .unwrap();
    let (atoms, gamma_s) = match jump {
        Some((mark, intensity)) => (
            vec![JumpAtom { mark, intensity }],
            vec![Piecewise::constant(mark, horizon)],
        ),
        None => (vec![], vec![]),
    };
    let n_atoms = atoms.len();
    let real = HjmCurve {
        initial_forward: Piecewise::constant(rate, maturity),
        alpha: PiecewiseSurface::zero(horizon, maturity),
        sigma: sigma_surface,
        gamma: vec![PiecewiseSurface::zero(horizon, maturity); n_atoms],
    };
    let nominal = HjmCurve {
        initial_forward: Piecewise::constant(rate + 0.01, maturity),
        alpha: PiecewiseSurface::zero(horizon, maturity),
        sigma: PiecewiseSurface::zero(horizon, maturity),
        gamma: vec![PiecewiseSurface::zero(horizon, maturity); n_atoms],
    };
    MarketScenario::new(
        real,
        nominal,
        InflationModel {
            initial_index: 1.0,
            mu: Piecewise::constant(mu_i, horizon),
            sigma: Piecewise::constant(sigma_i, horizon),
            gamma: vec![Piecewise::constant(0.0, horizon); n_atoms],
        },
        RiskyAssetModel {
            initial_price: 1.0,
            mu: Piecewise::constant(mu_s, horizon),
            sigma: Piecewise::constant(sigma_s, horizon),
            gamma: gamma_s,
        },
        JumpMeasure::new(atoms).unwrap(),
        Piecewise::constant(discount, horizon),
        horizon,
        maturity,
    )
    .unwrap()
}
