//! Projected damped Newton minimization over a 3-dimensional box.
//!
//! The portfolio objectives are smooth with analytic Hessians, so an
//! active-set reduced Newton step with Armijo backtracking converges in a
//! handful of iterations. Invariants:
//! - iterates stay inside the box and the objective's open domain
//! - convergence means the projected gradient sup-norm meets the tolerance
//! - objectives whose gradient lies in the row space of a rank-deficient
//!   Hessian never move along flat directions, so starting from the box
//!   projection of the origin yields the smallest-norm minimizer

/// Smooth objective on (a subset of) 3-space.
pub trait Objective3 {
    /// Objective value.
    fn value(&self, x: [f64; 3]) -> f64;
    /// Gradient.
    fn gradient(&self, x: [f64; 3]) -> [f64; 3];
    /// Hessian, symmetric.
    fn hessian(&self, x: [f64; 3]) -> [[f64; 3]; 3];
    /// True when `x` lies in the open domain of the objective.
    fn feasible(&self, _x: [f64; 3]) -> bool {
        true
    }
}

/// Result of a box-constrained minimization.
#[derive(Debug, Clone, Copy)]
pub struct NewtonResult {
    pub x: [f64; 3],
    pub value: f64,
    /// Projected gradient sup-norm at `x`.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: [f64; 3], bounds: &[[f64; 2]; 3]) -> [f64; 3] {
    [
        x[0].clamp(bounds[0][0], bounds[0][1]),
        x[1].clamp(bounds[1][0], bounds[1][1]),
        x[2].clamp(bounds[2][0], bounds[2][1]),
    ]
}

/// Gradient with infeasible descent directions removed: at an active bound
/// only the component pointing back into the box survives.
fn projected_gradient(x: [f64; 3], g: [f64; 3], bounds: &[[f64; 2]; 3]) -> [f64; 3] {
    let mut pg = g;
    for i in 0..3 {
        if x[i] <= bounds[i][0] && g[i] > 0.0 {
            pg[i] = 0.0;
        }
        if x[i] >= bounds[i][1] && g[i] < 0.0 {
            pg[i] = 0.0;
        }
    }
    pg
}

fn sup_norm(v: [f64; 3]) -> f64 {
    v.iter().fold(0.0f64, |m, c| m.max(c.abs()))
}

/// Solves `A d = -g` for symmetric `A` by Cholesky with a growing diagonal
/// shift when `A` is not safely positive definite. The shift only bends the
/// search direction; optimality is judged by the projected gradient alone.
fn newton_direction(a: [[f64; 3]; 3], g: [f64; 3]) -> [f64; 3] {
    let scale = (0..3).map(|i| a[i][i].abs()).fold(1e-12, f64::max);
    // Pivots below this floor mean a numerically singular factor whose
    // backsolve would amplify rounding noise along near-null directions.
    let floor = 1e-11 * scale;
    let mut shift = 0.0;
    for _ in 0..10 {
        if let Some(l) = cholesky(add_diag(a, shift), floor) {
            return solve_cholesky(l, [-g[0], -g[1], -g[2]]);
        }
        shift = if shift == 0.0 { 1e-6 * scale } else { shift * 100.0 };
    }
    // Fall back to steepest descent scaled by the diagonal.
    [-g[0] / scale, -g[1] / scale, -g[2] / scale]
}

fn add_diag(mut a: [[f64; 3]; 3], shift: f64) -> [[f64; 3]; 3] {
    for i in 0..3 {
        a[i][i] += shift;
    }
    a
}

fn cholesky(a: [[f64; 3]; 3], floor: f64) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= floor {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn solve_cholesky(l: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let mut y = [0.0f64; 3];
    for i in 0..3 {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = [0.0f64; 3];
    for i in (0..3).rev() {
        let mut sum = y[i];
        for k in i + 1..3 {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    x
}

/// Minimizes the objective over the box.
///
/// `start` defaults to the box projection of the origin. At each iterate
/// the coordinates pressed against a bound by the gradient are frozen and a
/// Newton step is taken in the free coordinates, followed by projection,
/// a feasibility safeguard, and Armijo backtracking.
pub fn minimize_box(
    objective: &dyn Objective3,
    bounds: [[f64; 2]; 3],
    start: Option<[f64; 3]>,
    tolerance: f64,
    max_iterations: usize,
) -> NewtonResult {
    let mut x = project(start.unwrap_or([0.0; 3]), &bounds);
    debug_assert!(objective.feasible(x), "starting point must be feasible");
    let mut fx = objective.value(x);
    let mut best = NewtonResult { x, value: fx, gradient_norm: f64::INFINITY, iterations: 0, converged: false };
    let mut used = 0;

    for iter in 0..max_iterations {
        used = iter + 1;
        let g = objective.gradient(x);
        let pg = sup_norm(projected_gradient(x, g, &bounds));
        if pg < best.gradient_norm {
            best = NewtonResult { x, value: fx, gradient_norm: pg, iterations: iter, converged: false };
        }
        if pg <= tolerance {
            return NewtonResult { x, value: fx, gradient_norm: pg, iterations: iter, converged: true };
        }

        // Freeze coordinates held at a bound by the gradient sign.
        let active = [
            (x[0] <= bounds[0][0] && g[0] > 0.0) || (x[0] >= bounds[0][1] && g[0] < 0.0),
            (x[1] <= bounds[1][0] && g[1] > 0.0) || (x[1] >= bounds[1][1] && g[1] < 0.0),
            (x[2] <= bounds[2][0] && g[2] > 0.0) || (x[2] >= bounds[2][1] && g[2] < 0.0),
        ];
        let mut h = objective.hessian(x);
        let mut gr = g;
        for i in 0..3 {
            if active[i] {
                gr[i] = 0.0;
                for j in 0..3 {
                    h[i][j] = 0.0;
                    h[j][i] = 0.0;
                }
                h[i][i] = 1.0;
            }
        }
        let d = newton_direction(h, gr);

        // Backtracking with projection and an open-domain safeguard. Decreases
        // below the rounding floor of the objective still count: near the
        // minimum a full Newton step changes the value by less than one ulp
        // while still tightening the gradient.
        let slope: f64 = gr.iter().zip(&d).map(|(gi, di)| gi * di).sum();
        let noise = 1e-12 * (1.0 + fx.abs());
        let mut alpha = 1.0;
        let mut stepped = false;
        for _ in 0..60 {
            let trial = project(
                [x[0] + alpha * d[0], x[1] + alpha * d[1], x[2] + alpha * d[2]],
                &bounds,
            );
            if trial == x {
                // Projection absorbed the whole step; nothing moves.
                break;
            }
            if objective.feasible(trial) {
                let ft = objective.value(trial);
                let predicted = (-slope * alpha).max(0.0);
                if ft <= fx - 1e-4 * predicted + noise {
                    x = trial;
                    fx = ft;
                    stepped = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !stepped {
            break;
        }
    }

    // Out of iterations or out of admissible steps: judge the final iterate
    // and report the smallest projected gradient seen.
    let g = objective.gradient(x);
    let pg = sup_norm(projected_gradient(x, g, &bounds));
    if pg < best.gradient_norm {
        best = NewtonResult { x, value: fx, gradient_norm: pg, iterations: used, converged: false };
    }
    best.converged = best.gradient_norm <= tolerance;
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        center: [f64; 3],
        weights: [f64; 3],
    }

    impl Objective3 for Quadratic {
        fn value(&self, x: [f64; 3]) -> f64 {
            (0..3)
                .map(|i| 0.5 * self.weights[i] * (x[i] - self.center[i]).powi(2))
                .sum()
        }
        fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
            [
                self.weights[0] * (x[0] - self.center[0]),
                self.weights[1] * (x[1] - self.center[1]),
                self.weights[2] * (x[2] - self.center[2]),
            ]
        }
        fn hessian(&self, _x: [f64; 3]) -> [[f64; 3]; 3] {
            [
                [self.weights[0], 0.0, 0.0],
                [0.0, self.weights[1], 0.0],
                [0.0, 0.0, self.weights[2]],
            ]
        }
    }

    #[test]
    fn interior_quadratic_minimum() {
        let q = Quadratic { center: [0.3, -0.7, 2.0], weights: [2.0, 1.0, 5.0] };
        let r = minimize_box(&q, [[-10.0, 10.0]; 3], None, 1e-12, 100);
        assert!(r.converged);
        for i in 0..3 {
            assert!((r.x[i] - q.center[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn face_minimum_with_kkt_sign() {
        let q = Quadratic { center: [3.0, -5.0, 0.0], weights: [1.0, 1.0, 1.0] };
        let bounds = [[-1.0, 1.0]; 3];
        let r = minimize_box(&q, bounds, None, 1e-12, 100);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-12);
        assert!((r.x[1] + 1.0).abs() < 1e-12);
        assert!(r.x[2].abs() < 1e-12);
        // Gradient pushes outward at the active faces.
        let g = q.gradient(r.x);
        assert!(g[0] < 0.0 && g[1] > 0.0);
    }

    struct Coupled;

    impl Objective3 for Coupled {
        // Convex with a cross term and an exponential well.
        fn value(&self, x: [f64; 3]) -> f64 {
            (x[0] + x[1] - 1.0).powi(2) + (x[2] - 0.5).exp() - x[2] + x[0].powi(2)
        }
        fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
            let s = 2.0 * (x[0] + x[1] - 1.0);
            [s + 2.0 * x[0], s, (x[2] - 0.5).exp() - 1.0]
        }
        fn hessian(&self, x: [f64; 3]) -> [[f64; 3]; 3] {
            [
                [4.0, 2.0, 0.0],
                [2.0, 2.0, 0.0],
                [0.0, 0.0, (x[2] - 0.5).exp()],
            ]
        }
    }

    #[test]
    fn coupled_convex_interior() {
        let r = minimize_box(&Coupled, [[-10.0, 10.0]; 3], None, 1e-12, 100);
        assert!(r.converged);
        // Stationarity: x0 = 0, x1 = 1, x2 = 0.5.
        assert!(r.x[0].abs() < 1e-9);
        assert!((r.x[1] - 1.0).abs() < 1e-9);
        assert!((r.x[2] - 0.5).abs() < 1e-9);
    }

    struct FlatDirection;

    impl Objective3 for FlatDirection {
        // Depends on x0 + x1 only; the difference is a flat direction.
        fn value(&self, x: [f64; 3]) -> f64 {
            (x[0] + x[1] - 2.0).powi(2) + x[2].powi(2)
        }
        fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
            let s = 2.0 * (x[0] + x[1] - 2.0);
            [s, s, 2.0 * x[2]]
        }
        fn hessian(&self, _x: [f64; 3]) -> [[f64; 3]; 3] {
            [[2.0, 2.0, 0.0], [2.0, 2.0, 0.0], [0.0, 0.0, 2.0]]
        }
    }

    #[test]
    fn flat_direction_keeps_smallest_norm() {
        let r = minimize_box(&FlatDirection, [[-10.0, 10.0]; 3], None, 1e-11, 100);
        assert!(r.converged);
        // Both coordinates share the load: the minimal-norm minimizer.
        assert!((r.x[0] - 1.0).abs() < 1e-9, "{:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-9, "{:?}", r.x);
    }

    struct OpenDomain;

    impl Objective3 for OpenDomain {
        // Minimum pushed toward the boundary x0 > -0.5 of the open domain.
        fn value(&self, x: [f64; 3]) -> f64 {
            -(1.0 + 2.0 * x[0]).sqrt() + x[0].powi(2) + x[1].powi(2) + x[2].powi(2)
        }
        fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
            [
                -1.0 / (1.0 + 2.0 * x[0]).sqrt() + 2.0 * x[0],
                2.0 * x[1],
                2.0 * x[2],
            ]
        }
        fn hessian(&self, x: [f64; 3]) -> [[f64; 3]; 3] {
            [
                [(1.0 + 2.0 * x[0]).powf(-1.5) + 2.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [0.0, 0.0, 2.0],
            ]
        }
        fn feasible(&self, x: [f64; 3]) -> bool {
            1.0 + 2.0 * x[0] > 0.0
        }
    }

    #[test]
    fn respects_open_domain() {
        let r = minimize_box(&OpenDomain, [[-10.0, 10.0]; 3], None, 1e-10, 100);
        assert!(r.converged);
        assert!(1.0 + 2.0 * r.x[0] > 0.0);
        // Stationarity of -sqrt(1+2u) + u^2.
        let g = OpenDomain.gradient(r.x);
        assert!(g[0].abs() < 1e-9);
    }

    #[test]
    fn offset_does_not_change_argmin() {
        struct Offset(f64);
        impl Objective3 for Offset {
            fn value(&self, x: [f64; 3]) -> f64 {
                (x[0] - 0.2).powi(2) + (x[1] + 0.4).powi(2) + x[2].powi(2) + self.0
            }
            fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
                [2.0 * (x[0] - 0.2), 2.0 * (x[1] + 0.4), 2.0 * x[2]]
            }
            fn hessian(&self, _x: [f64; 3]) -> [[f64; 3]; 3] {
                [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]
            }
        }
        let a = minimize_box(&Offset(0.0), [[-1.0, 1.0]; 3], None, 1e-12, 100);
        let b = minimize_box(&Offset(123.75), [[-1.0, 1.0]; 3], None, 1e-12, 100);
        for i in 0..3 {
            assert!((a.x[i] - b.x[i]).abs() < 1e-12);
        }
    }
}
