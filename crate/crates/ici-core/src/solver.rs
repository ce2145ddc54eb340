//! Backward-equation solvers on the time grid.
//!
//! The power family reduces to a scalar terminal-value ODE because its
//! generator does not involve wealth; the exponential family is wealth
//! coupled and is solved as a forward-backward system by regression Monte
//! Carlo inside a damped Picard loop. Invariants:
//! - the backward component at the final node is exactly zero in every mode
//!   and every iteration
//! - deterministic mode carries identically zero martingale loadings
//! - Picard convergence is measured and reported, never assumed; the last
//!   iterate is returned with its flag on non-convergence
//! - backward regressions run over bankruptcy-free paths in a fixed order,
//!   so results are independent of the thread count

use std::cell::Cell;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generator::{
    generator_exponential, generator_power, optimal_controls_exponential, optimal_controls_power,
    GeneratorInputs, GeneratorMode, GeneratorValue, OptimalControls, UtilitySpec,
};
use crate::market::MarketScenario;
use crate::mortality::{InsuranceContract, MortalityCurve};
use crate::paths::{
    build_tables, simulate_drivers, simulate_wealth_path, simulate_wealth_power_logform_path,
    ControlBoxes, ControlMode, ControlPoint, Drivers, MaterializedDrivers, SimulationTables,
    StrategyRule, TimeGrid, WealthPath, WealthPathSingle, ZeroFeedback,
};
use crate::rng::Driver;

/// Polynomial regression basis and its ridge regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSpec {
    /// Total polynomial degree in the state variable.
    pub degree: usize,
    /// Nonnegative ridge penalty on the non-intercept coefficients.
    pub ridge: f64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self { degree: 2, ridge: 1e-8 }
    }
}

impl RegressionSpec {
    /// Checks the ridge sign.
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidInput("ridge penalty must be nonnegative".into()));
        }
        Ok(())
    }

    /// Number of basis functions.
    pub fn basis_dim(&self) -> usize {
        self.degree + 1
    }
}

/// Damping, budget and tolerance of the Picard loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardSettings {
    /// Mixing weight of the fresh backward sweep, in (0, 1].
    pub damping: f64,
    pub max_iterations: usize,
    /// Threshold on the sup-node sup-path backward residual.
    pub tolerance: f64,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self { damping: 0.5, max_iterations: 50, tolerance: 1e-6 }
    }
}

impl PicardSettings {
    /// Checks parameter ranges.
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidInput("damping must lie in (0, 1]".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("at least one Picard iteration required".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("Picard tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted one-dimensional polynomial regression on a standardized state.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedRegression {
    /// Coefficients on powers of the standardized state `(x - mean)/scale`.
    pub coefficients: Vec<f64>,
    mean: f64,
    scale: f64,
    /// Zero-variance state collapsed to an intercept, or ridge escalation
    /// was needed to factor the normal equations.
    pub flagged: bool,
}

impl FittedRegression {
    /// Constant fit independent of the state.
    pub fn constant(value: f64) -> Self {
        Self { coefficients: vec![value], mean: 0.0, scale: 1.0, flagged: false }
    }

    /// Fitted conditional-expectation estimate at `state`.
    pub fn evaluate(&self, state: f64) -> f64 {
        let u = (state - self.mean) / self.scale;
        let mut v = 0.0;
        for &c in self.coefficients.iter().rev() {
            v = v * u + c;
        }
        v
    }

    /// Coefficients on raw monomials `1, x, x^2, ...` of the state.
    pub fn monomial_coefficients(&self) -> Vec<f64> {
        let m = self.coefficients.len();
        let mut out = vec![0.0; m];
        for (k, &beta) in self.coefficients.iter().enumerate() {
            // Expand ((x - mean)/scale)^k.
            let mut poly = vec![0.0; k + 1];
            poly[0] = 1.0;
            for step in 0..k {
                let mut next = vec![0.0; k + 1];
                for j in 0..=step {
                    next[j + 1] += poly[j];
                    next[j] -= self.mean * poly[j];
                }
                poly = next;
            }
            let scale_k = self.scale.powi(k as i32);
            for j in 0..=k {
                out[j] += beta * poly[j] / scale_k;
            }
        }
        out
    }
}

/// Solves the symmetric positive definite system `a x = b` by Cholesky.
/// Pivots below a relative floor reject the factorization.
fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    let diag_scale = (0..m).map(|i| a[i][i].abs()).fold(1e-300, f64::max);
    let floor = 1e-13 * diag_scale;
    let mut l = vec![vec![0.0f64; m]; m];
    for i in 0..m {
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
    let mut y = vec![0.0f64; m];
    for i in 0..m {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = vec![0.0f64; m];
    for i in (0..m).rev() {
        let mut sum = y[i];
        for k in i + 1..m {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    Some(x)
}

/// Ridge-regularized polynomial least squares of `targets` on `states`.
///
/// The state is standardized, the intercept is unpenalized, and a
/// zero-variance state collapses to the intercept-only fit. A factorization
/// failure escalates the ridge and flags the fit.
pub fn regression_conditional_expectation(
    states: &[f64],
    targets: &[f64],
    spec: &RegressionSpec,
) -> Result<FittedRegression> {
    spec.validate()?;
    if states.len() != targets.len() {
        return Err(Error::InvalidInput("states and targets must have equal length".into()));
    }
    let m = spec.basis_dim();
    if states.len() < m {
        return Err(Error::InvalidInput(format!(
            "{} samples cannot support a basis of dimension {m}",
            states.len()
        )));
    }
    let n = states.len() as f64;
    let mean = states.iter().sum::<f64>() / n;
    let var = states.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt();
    if !(scale > 0.0) {
        let intercept = targets.iter().sum::<f64>() / n;
        return Ok(FittedRegression {
            coefficients: {
                let mut c = vec![0.0; m];
                c[0] = intercept;
                c
            },
            mean,
            scale: 1.0,
            flagged: spec.degree > 0,
        });
    }

    let u: Vec<f64> = states.iter().map(|s| (s - mean) / scale).collect();
    // Moments of the standardized state feed the Hankel normal matrix.
    let mut moments = vec![0.0f64; 2 * spec.degree + 1];
    let mut rhs = vec![0.0f64; m];
    for (ui, &yi) in u.iter().zip(targets) {
        let mut pow = 1.0;
        for (j, mo) in moments.iter_mut().enumerate() {
            *mo += pow;
            if j < m {
                rhs[j] += pow * yi;
            }
            pow *= ui;
        }
    }
    for mo in moments.iter_mut() {
        *mo /= n;
    }
    for r in rhs.iter_mut() {
        *r /= n;
    }

    let mut ridge = spec.ridge;
    for attempt in 0..7 {
        let mut a = vec![vec![0.0f64; m]; m];
        for j in 0..m {
            for k in 0..m {
                a[j][k] = moments[j + k];
            }
            if j > 0 {
                a[j][j] += ridge;
            }
        }
        if let Some(coefficients) = solve_spd(&a, &rhs) {
            return Ok(FittedRegression { coefficients, mean, scale, flagged: attempt > 0 });
        }
        ridge = if ridge == 0.0 { 1e-10 } else { ridge * 100.0 };
    }
    Err(Error::InvalidInput(
        "regression design matrix is degenerate beyond ridge rescue".into(),
    ))
}

/// Per-node fitted feedback: the backward component and its martingale
/// loadings as functions of wealth.
#[derive(Debug, Clone)]
pub struct NodeFit {
    pub y: FittedRegression,
    pub z: [FittedRegression; 3],
    pub upsilon: Vec<FittedRegression>,
}

impl NodeFit {
    /// All-zero feedback.
    pub fn zero(n_atoms: usize) -> Self {
        Self {
            y: FittedRegression::constant(0.0),
            z: [
                FittedRegression::constant(0.0),
                FittedRegression::constant(0.0),
                FittedRegression::constant(0.0),
            ],
            upsilon: vec![FittedRegression::constant(0.0); n_atoms],
        }
    }

    /// Deterministic feedback holding the backward component constant.
    pub fn constant_y(y: f64, n_atoms: usize) -> Self {
        let mut fit = Self::zero(n_atoms);
        fit.y = FittedRegression::constant(y);
        fit
    }
}

/// Whether a solution is a single deterministic column or per-path samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionMode {
    Deterministic,
    PerPath,
}

/// Solved backward components on the grid.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub mode: SolutionMode,
    /// Backward component, indexed `[node][sample]`; deterministic mode has
    /// one sample per node.
    pub y: Vec<Vec<f64>>,
    /// Diffusive loadings per driver, same shape as `y`.
    pub z1: Vec<Vec<f64>>,
    pub z2: Vec<Vec<f64>>,
    pub z3: Vec<Vec<f64>>,
    /// Jump loadings, indexed `[node][atom][sample]`.
    pub upsilon: Vec<Vec<Vec<f64>>>,
    /// Per-node feedback fits; deterministic mode stores constant fits.
    pub fits: Vec<NodeFit>,
    pub converged: bool,
    /// Any generator evaluation hit the exponent cap.
    pub saturated: bool,
    /// Any regression collapsed or needed ridge escalation.
    pub regression_flagged: bool,
    /// Successive sup |backward residual| per Picard iteration.
    pub picard_trace: Vec<f64>,
}

impl BsdeSolution {
    /// Cross-sample mean of the backward component at a node.
    pub fn y_mean(&self, node: usize) -> f64 {
        let col = &self.y[node];
        col.iter().sum::<f64>() / col.len() as f64
    }

    /// Mean backward component at the first node.
    pub fn y0(&self) -> f64 {
        self.y_mean(0)
    }
}

/// Fourth-order one-step integration of `y' = rhs(t, y)` backward from a
/// zero terminal value, returning one value per grid node.
pub fn integrate_backward_rk4(
    grid: TimeGrid,
    rhs: impl Fn(f64, f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    let h = -grid.dt();
    let mut y = vec![0.0f64; n];
    for i in (1..n).rev() {
        let t = grid.node(i);
        let yi = y[i];
        let k1 = rhs(t, yi)?;
        let k2 = rhs(t + 0.5 * h, yi + 0.5 * h * k1)?;
        let k3 = rhs(t + 0.5 * h, yi + 0.5 * h * k2)?;
        let k4 = rhs(t + h, yi + h * k3)?;
        y[i - 1] = yi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(y)
}

/// Deterministic backward solution for the power family.
///
/// The power generator does not involve wealth, so with deterministic
/// coefficients the backward component solves the scalar terminal-value ODE
/// `Y' = -h(t, Y)` with zero diffusive and jump loadings.
pub fn solve_ode_power(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    kappa: f64,
    grid: TimeGrid,
    boxes: &ControlBoxes,
) -> Result<BsdeSolution> {
    UtilitySpec::Power { kappa }.validate()?;
    if grid.horizon() > scenario.horizon {
        return Err(Error::InvalidInput("grid horizon exceeds the scenario horizon".into()));
    }
    let n_atoms = scenario.jumps.len();
    let saturated = Cell::new(false);
    let rhs = |t: f64, y: f64| -> Result<f64> {
        let co = scenario.coefficients_at(t)?;
        let inputs = GeneratorInputs::new(t, 1.0, y, [0.0; 3], vec![0.0; n_atoms]);
        let gv = generator_power(
            &inputs,
            &co,
            mortality,
            contract,
            kappa,
            boxes,
            GeneratorMode::InfForm,
        )?;
        saturated.set(saturated.get() | gv.saturated);
        Ok(-gv.value)
    };
    let y = integrate_backward_rk4(grid, rhs)?;
    let n = grid.n_nodes();
    let fits = y.iter().map(|&v| NodeFit::constant_y(v, n_atoms)).collect();
    Ok(BsdeSolution {
        mode: SolutionMode::Deterministic,
        y: y.into_iter().map(|v| vec![v]).collect(),
        z1: vec![vec![0.0]; n],
        z2: vec![vec![0.0]; n],
        z3: vec![vec![0.0]; n],
        upsilon: vec![vec![vec![0.0]; n_atoms]; n],
        fits,
        converged: true,
        saturated: saturated.get(),
        regression_flagged: false,
        picard_trace: Vec::new(),
    })
}

fn control_mode(utility: UtilitySpec) -> ControlMode {
    match utility {
        UtilitySpec::Exponential { .. } => ControlMode::Absolute,
        UtilitySpec::Power { .. } => ControlMode::Fractional,
    }
}

fn generator_value(
    utility: UtilitySpec,
    inputs: &GeneratorInputs,
    co: &crate::market::MarketCoefficients,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    boxes: &ControlBoxes,
) -> Result<GeneratorValue> {
    match utility {
        UtilitySpec::Exponential { delta } => generator_exponential(
            inputs,
            co,
            mortality,
            contract,
            delta,
            boxes,
            GeneratorMode::InfForm,
        ),
        UtilitySpec::Power { kappa } => generator_power(
            inputs,
            co,
            mortality,
            contract,
            kappa,
            boxes,
            GeneratorMode::InfForm,
        ),
    }
}

fn controls_value(
    utility: UtilitySpec,
    inputs: &GeneratorInputs,
    co: &crate::market::MarketCoefficients,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    boxes: &ControlBoxes,
) -> Result<OptimalControls> {
    match utility {
        UtilitySpec::Exponential { delta } => {
            optimal_controls_exponential(inputs, co, mortality, contract, delta, boxes)
        }
        UtilitySpec::Power { kappa } => {
            optimal_controls_power(inputs, co, mortality, contract, kappa, boxes)
        }
    }
}

/// Feedback strategy applying the optimal controls of the given utility at
/// the fitted `(Y, Z, Upsilon)` of each node.
fn make_optimal_rule(
    tables: &Arc<SimulationTables>,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    utility: UtilitySpec,
    fits: &Arc<Vec<NodeFit>>,
    boxes: &ControlBoxes,
) -> StrategyRule {
    let tables = Arc::clone(tables);
    let fits = Arc::clone(fits);
    let mortality = mortality.clone();
    let contract = contract.clone();
    let boxes_owned = *boxes;
    StrategyRule::feedback(control_mode(utility), *boxes, move |node, t, x, _| {
        let co = &tables.coeffs[node];
        let nf = &fits[node];
        let y = nf.y.evaluate(x);
        let z = [nf.z[0].evaluate(x), nf.z[1].evaluate(x), nf.z[2].evaluate(x)];
        let upsilon: Vec<f64> = nf.upsilon.iter().map(|f| f.evaluate(x)).collect();
        let inputs = GeneratorInputs::new(t, x, y, z, upsilon);
        // Per-node feasibility is state independent and checked up front.
        let oc = controls_value(utility, &inputs, co, &mortality, &contract, &boxes_owned)
            .expect("controls were pre-validated per node");
        ControlPoint {
            portfolio: oc.portfolio,
            consumption: oc.consumption,
            insurance: oc.insurance,
        }
    })
}

/// Output of one backward regression sweep.
struct SweepOutput {
    fits: Vec<NodeFit>,
    y: Vec<Vec<f64>>,
    z1: Vec<Vec<f64>>,
    z2: Vec<Vec<f64>>,
    z3: Vec<Vec<f64>>,
    upsilon: Vec<Vec<Vec<f64>>>,
    sup_diff: f64,
    saturated: bool,
    flagged: bool,
}

/// One explicit trapezoidal backward sweep with per-node regressions.
///
/// The recursion runs on undamped values; the stored feedback fits mix the
/// fresh sweep with the previous feedback at the given damping, which equals
/// function-space damping because regression is linear in its targets.
#[allow(clippy::too_many_arguments)]
fn backward_sweep(
    tables: &SimulationTables,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    utility: UtilitySpec,
    regression: &RegressionSpec,
    damping: f64,
    boxes: &ControlBoxes,
    wealth: &WealthPath,
    drivers: &dyn Drivers,
    old_fits: &[NodeFit],
) -> Result<SweepOutput> {
    let grid = tables.grid;
    let n = grid.n_nodes();
    let dt = grid.dt();
    let n_paths = wealth.x.len();
    let n_atoms = drivers.n_atoms();
    let solvent: Vec<usize> =
        (0..n_paths).filter(|&p| !wealth.bankrupt[p]).collect();
    if solvent.len() < regression.basis_dim() {
        return Err(Error::InvalidInput(format!(
            "{} solvent paths cannot support a basis of dimension {}",
            solvent.len(),
            regression.basis_dim()
        )));
    }

    let mut y = vec![vec![0.0f64; n_paths]; n];
    let mut z1 = vec![vec![0.0f64; n_paths]; n];
    let mut z2 = vec![vec![0.0f64; n_paths]; n];
    let mut z3 = vec![vec![0.0f64; n_paths]; n];
    let mut upsilon = vec![vec![vec![0.0f64; n_paths]; n_atoms]; n];
    let mut fits = vec![NodeFit::zero(n_atoms); n];
    let mut saturated = false;
    let mut flagged = false;
    let mut sup_diff = 0.0f64;

    // Terminal node: Y = 0 exactly; the generator there seeds the trapezoid.
    let t_term = grid.node(n - 1);
    let co_term = &tables.coeffs[n - 1];
    let mut y_raw_next = vec![0.0f64; n_paths];
    let mut h_next = vec![0.0f64; n_paths];
    for p in 0..n_paths {
        let inputs =
            GeneratorInputs::new(t_term, wealth.x[p][n - 1], 0.0, [0.0; 3], vec![0.0; n_atoms]);
        let gv = generator_value(utility, &inputs, co_term, mortality, contract, boxes)?;
        saturated |= gv.saturated;
        h_next[p] = gv.value;
    }

    for i in (0..n - 1).rev() {
        let t = grid.node(i);
        let co = &tables.coeffs[i];
        let xs: Vec<f64> = (0..n_paths).map(|p| wealth.x[p][i]).collect();
        let xsol: Vec<f64> = solvent.iter().map(|&p| xs[p]).collect();

        // Conditional expectation of the one-step trapezoid target.
        let targets: Vec<f64> =
            (0..n_paths).map(|p| y_raw_next[p] + 0.5 * dt * h_next[p]).collect();
        let tsol: Vec<f64> = solvent.iter().map(|&p| targets[p]).collect();
        let fit_pred = regression_conditional_expectation(&xsol, &tsol, regression)?;
        flagged |= fit_pred.flagged;

        // Martingale loadings from centered increments.
        let centered: Vec<f64> =
            (0..n_paths).map(|p| targets[p] - fit_pred.evaluate(xs[p])).collect();
        let z_drivers = [Driver::RealCurve, Driver::Inflation, Driver::Risky];
        let mut fit_z: Vec<FittedRegression> = Vec::with_capacity(3);
        for &d in &z_drivers {
            let zt: Vec<f64> = solvent
                .iter()
                .map(|&p| centered[p] * drivers.dw(p, d, i) / dt)
                .collect();
            let f = regression_conditional_expectation(&xsol, &zt, regression)?;
            flagged |= f.flagged;
            fit_z.push(f);
        }
        let mut fit_u: Vec<FittedRegression> = Vec::with_capacity(n_atoms);
        for z in 0..n_atoms {
            let w = co.weights[z];
            if w > 0.0 {
                let ut: Vec<f64> = solvent
                    .iter()
                    .map(|&p| {
                        centered[p] * (drivers.count(p, z, i) as f64 - w * dt) / (w * dt)
                    })
                    .collect();
                let f = regression_conditional_expectation(&xsol, &ut, regression)?;
                flagged |= f.flagged;
                fit_u.push(f);
            } else {
                fit_u.push(FittedRegression::constant(0.0));
            }
        }

        // Corrector: two fixed-point passes of y = pred + dt/2 h(y) keep the
        // trapezoid's second order; the final generator value seeds the next
        // target.
        let mut y_raw = vec![0.0f64; n_paths];
        let mut h_here = vec![0.0f64; n_paths];
        for p in 0..n_paths {
            let zp = [
                fit_z[0].evaluate(xs[p]),
                fit_z[1].evaluate(xs[p]),
                fit_z[2].evaluate(xs[p]),
            ];
            let up: Vec<f64> = fit_u.iter().map(|f| f.evaluate(xs[p])).collect();
            let y_pred = fit_pred.evaluate(xs[p]);
            let mut y_cur = y_pred;
            let mut h_cur = 0.0;
            for _ in 0..3 {
                let inputs = GeneratorInputs::new(t, xs[p], y_cur, zp, up.clone());
                let gv = generator_value(utility, &inputs, co, mortality, contract, boxes)?;
                saturated |= gv.saturated;
                h_cur = gv.value;
                y_cur = y_pred + 0.5 * dt * h_cur;
            }
            y_raw[p] = y_cur;
            h_here[p] = h_cur;
            z1[i][p] = zp[0];
            z2[i][p] = zp[1];
            z3[i][p] = zp[2];
            for (a, &u) in up.iter().enumerate() {
                upsilon[i][a][p] = u;
            }
        }

        // Damped feedback refit and residual against the previous feedback.
        let old = &old_fits[i];
        let mut damped = vec![0.0f64; n_paths];
        for p in 0..n_paths {
            let prev = old.y.evaluate(xs[p]);
            damped[p] = damping * y_raw[p] + (1.0 - damping) * prev;
            if !wealth.bankrupt[p] {
                sup_diff = sup_diff.max((y_raw[p] - prev).abs());
            }
        }
        let dsol: Vec<f64> = solvent.iter().map(|&p| damped[p]).collect();
        let fit_y = regression_conditional_expectation(&xsol, &dsol, regression)?;
        flagged |= fit_y.flagged;
        fits[i] = NodeFit {
            y: fit_y,
            z: [fit_z[0].clone(), fit_z[1].clone(), fit_z[2].clone()],
            upsilon: fit_u,
        };
        y[i] = damped;
        y_raw_next = y_raw;
        h_next = h_here;
    }

    Ok(SweepOutput { fits, y, z1, z2, z3, upsilon, sup_diff, saturated, flagged })
}

/// Regression Monte Carlo solution of the coupled forward-backward system
/// under the optimal feedback controls, with damped Picard iteration.
#[allow(clippy::too_many_arguments)]
pub fn solve_fbsde(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    utility: UtilitySpec,
    grid: TimeGrid,
    n_paths: usize,
    regression: &RegressionSpec,
    picard: &PicardSettings,
    seed: u64,
    x0: f64,
    boxes: &ControlBoxes,
) -> Result<(BsdeSolution, WealthPath)> {
    utility.validate()?;
    regression.validate()?;
    picard.validate()?;
    if n_paths < 10 * regression.basis_dim() {
        return Err(Error::InvalidInput(format!(
            "{n_paths} paths cannot support ten samples per basis function of dimension {}",
            regression.basis_dim()
        )));
    }
    let mode = control_mode(utility);
    if mode == ControlMode::Fractional && !(x0 > 0.0) {
        return Err(Error::InvalidInput("fractional wealth needs positive x0".into()));
    }
    let tables = Arc::new(build_tables(scenario, grid)?);
    let n = grid.n_nodes();
    let n_atoms = scenario.jumps.len();

    // Per-node preflight: control feasibility does not depend on the state,
    // so one probe per node certifies the strategy closure.
    for i in 0..n {
        let t = grid.node(i);
        let probe = GeneratorInputs::new(t, x0, 0.0, [0.0; 3], vec![0.0; n_atoms]);
        controls_value(utility, &probe, &tables.coeffs[i], mortality, contract, boxes)?;
    }

    let drivers = MaterializedDrivers::from_drivers(&simulate_drivers(
        grid,
        scenario.jumps.intensities(),
        seed,
        n_paths,
    )?);

    let mut fits = Arc::new(vec![NodeFit::zero(n_atoms); n]);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut saturated = false;
    let mut regression_flagged = false;
    let mut last: Option<(SweepOutput, WealthPath)> = None;

    for _ in 0..picard.max_iterations {
        let strategy = make_optimal_rule(&tables, mortality, contract, utility, &fits, boxes);
        let singles: Vec<WealthPathSingle> = (0..n_paths)
            .into_par_iter()
            .map(|p| match mode {
                ControlMode::Absolute => {
                    simulate_wealth_path(&tables, &strategy, &drivers, p, x0, &ZeroFeedback)
                }
                ControlMode::Fractional => simulate_wealth_power_logform_path(
                    &tables,
                    &strategy,
                    &drivers,
                    p,
                    x0,
                    &ZeroFeedback,
                ),
            })
            .collect::<Result<_>>()?;
        let wealth = WealthPath {
            bankrupt: singles.iter().map(|s| s.bankrupt).collect(),
            x: singles.into_iter().map(|s| s.x).collect(),
        };

        let sweep = backward_sweep(
            &tables,
            mortality,
            contract,
            utility,
            regression,
            picard.damping,
            boxes,
            &wealth,
            &drivers,
            &fits,
        )?;
        saturated |= sweep.saturated;
        regression_flagged |= sweep.flagged;
        trace.push(sweep.sup_diff);
        fits = Arc::new(sweep.fits.clone());
        let done = sweep.sup_diff < picard.tolerance;
        last = Some((sweep, wealth));
        if done {
            converged = true;
            break;
        }
    }

    let (sweep, wealth) = last.expect("at least one Picard iteration ran");
    let solution = BsdeSolution {
        mode: SolutionMode::PerPath,
        y: sweep.y,
        z1: sweep.z1,
        z2: sweep.z2,
        z3: sweep.z3,
        upsilon: sweep.upsilon,
        fits: sweep.fits,
        converged,
        saturated,
        regression_flagged,
        picard_trace: trace,
    };
    Ok((solution, wealth))
}

/// Exponential-family forward-backward solve; see `solve_fbsde`.
#[allow(clippy::too_many_arguments)]
pub fn solve_fbsde_exponential(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    delta: f64,
    grid: TimeGrid,
    n_paths: usize,
    regression: &RegressionSpec,
    picard: &PicardSettings,
    seed: u64,
    x0: f64,
    boxes: &ControlBoxes,
) -> Result<(BsdeSolution, WealthPath)> {
    solve_fbsde(
        scenario,
        mortality,
        contract,
        UtilitySpec::Exponential { delta },
        grid,
        n_paths,
        regression,
        picard,
        seed,
        x0,
        boxes,
    )
}

/// Power-family regression solve; with deterministic coefficients the
/// per-path backward component concentrates on the ODE solution.
#[allow(clippy::too_many_arguments)]
pub fn solve_fbsde_power(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    kappa: f64,
    grid: TimeGrid,
    n_paths: usize,
    regression: &RegressionSpec,
    picard: &PicardSettings,
    seed: u64,
    x0: f64,
    boxes: &ControlBoxes,
) -> Result<(BsdeSolution, WealthPath)> {
    solve_fbsde(
        scenario,
        mortality,
        contract,
        UtilitySpec::Power { kappa },
        grid,
        n_paths,
        regression,
        picard,
        seed,
        x0,
        boxes,
    )
}

/// Optimal feedback strategy built from a solved backward equation.
pub fn optimal_strategy(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    utility: UtilitySpec,
    grid: TimeGrid,
    solution: &BsdeSolution,
    boxes: &ControlBoxes,
) -> Result<StrategyRule> {
    utility.validate()?;
    let tables = Arc::new(build_tables(scenario, grid)?);
    if solution.fits.len() != grid.n_nodes() {
        return Err(Error::InvalidInput(format!(
            "solution has {} node fits for a grid of {} nodes",
            solution.fits.len(),
            grid.n_nodes()
        )));
    }
    let n_atoms = scenario.jumps.len();
    for i in 0..grid.n_nodes() {
        let t = grid.node(i);
        let probe = GeneratorInputs::new(t, 1.0, 0.0, [0.0; 3], vec![0.0; n_atoms]);
        controls_value(utility, &probe, &tables.coeffs[i], mortality, contract, boxes)?;
    }
    Ok(make_optimal_rule(
        &tables,
        mortality,
        contract,
        utility,
        &Arc::new(solution.fits.clone()),
        boxes,
    ))
}
