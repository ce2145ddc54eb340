//! Backward-equation generators for the two utility families and the inner
//! portfolio optimization they contain.
//!
//! Each generator exists in two algebraic forms. The inf-form assembles the
//! value from three scalar/vector extrema evaluated numerically and is the
//! authoritative implementation; the closed form is a cross-checked algebraic
//! variant that agrees with the inf-form up to a known offset reported by
//! the discrepancy functions. Invariants:
//! - exponential scalar objectives are strictly convex; power ones are
//!   strictly concave for exponents in (0,1) and strictly convex for
//!   negative exponents; extrema are box projections of the stationary
//!   points, which do not depend on the exponent regime
//! - the portfolio extremum contributes exactly zero at an interior
//!   stationary point when the jump measure is empty
//! - all jump integrals are finite weighted sums over the atom list
//! - exponentials are capped at argument 700 and the cap is flagged

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::market::MarketCoefficients;
use crate::mortality::{InsuranceContract, MortalityCurve};
use crate::optimize::{minimize_box, Objective3};
use crate::paths::{ControlBoxes, ControlPoint};

/// Largest exponent passed to `exp`; larger arguments saturate.
pub const EXP_CAP: f64 = 700.0;

/// Utility family selector with its risk parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilitySpec {
    /// U(x) = -exp(-delta x), delta > 0.
    Exponential { delta: f64 },
    /// U(x) = x^kappa / kappa, kappa < 1, kappa != 0.
    Power { kappa: f64 },
}

impl UtilitySpec {
    /// Checks the risk parameter range.
    pub fn validate(&self) -> Result<()> {
        match *self {
            UtilitySpec::Exponential { delta } => {
                if !(delta > 0.0) || !delta.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "exponential risk aversion must be positive and finite, got {delta}"
                    )));
                }
            }
            UtilitySpec::Power { kappa } => {
                if !(kappa < 1.0) || kappa == 0.0 || !kappa.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "power exponent must lie in (-inf, 1) excluding 0, got {kappa}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pointwise arguments of a generator evaluation.
#[derive(Debug, Clone)]
pub struct GeneratorInputs {
    /// Evaluation time.
    pub t: f64,
    /// Wealth level; read by the exponential generator only.
    pub x: f64,
    /// Backward-component value.
    pub y: f64,
    /// Diffusion loadings of the backward component.
    pub z: [f64; 3],
    /// Jump loading of the backward component, one entry per atom.
    pub upsilon: Vec<f64>,
}

impl GeneratorInputs {
    /// Bundles the pointwise arguments.
    pub fn new(t: f64, x: f64, y: f64, z: [f64; 3], upsilon: Vec<f64>) -> Self {
        Self { t, x, y, z, upsilon }
    }
}

/// Which algebraic form of the generator to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorMode {
    /// Assembled from numerically evaluated extrema; authoritative.
    InfForm,
    /// Algebraic variant; differs from the inf-form by a known offset.
    ClosedForm,
}

/// A generator value together with an exponent-saturation flag.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorValue {
    pub value: f64,
    pub saturated: bool,
}

/// Result of the inner portfolio optimization.
#[derive(Debug, Clone, Copy)]
pub struct PortfolioSolution {
    pub portfolio: [f64; 3],
    /// Value of the portfolio objective at `portfolio`.
    pub objective_value: f64,
    /// Projected gradient sup-norm at the solution.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub saturated: bool,
}

/// Closed-form portfolio in the no-jump regime, in two algebraic variants.
#[derive(Debug, Clone, Copy)]
pub struct ClosedFormComparison {
    /// Solution of the first-order conditions of the portfolio objective.
    pub foc: [f64; 3],
    /// Alternate algebraic form. It agrees with `foc` in the first two
    /// coordinates only when the inflation drift vanishes, and in the second
    /// coordinate additionally only at unit exponential risk aversion; the
    /// third coordinates always agree.
    pub alternate: [f64; 3],
}

/// A scalar control value with a flag set when a box edge replaced a
/// degenerate or out-of-box stationary point.
#[derive(Debug, Clone, Copy)]
pub struct ClampedValue {
    pub value: f64,
    pub clamped: bool,
}

/// Optimal consumption and insurance fractions for the power family.
#[derive(Debug, Clone, Copy)]
pub struct PowerFractions {
    pub xi: f64,
    pub zeta: f64,
    /// Legacy ratio `1 + zeta / eta` carried in product form: it stays
    /// strictly positive even when `zeta` itself rounds to exactly `-eta`.
    pub ratio: f64,
    /// Set when a vanishing mortality rate degenerates the insurance formula.
    pub zeta_clamped: bool,
}

/// Full optimal control bundle at one evaluation point.
#[derive(Debug, Clone)]
pub struct OptimalControls {
    /// Absolute positions (exponential) or wealth fractions (power).
    pub portfolio: [f64; 3],
    /// Consumption rate (exponential) or consumption fraction (power).
    pub consumption: f64,
    /// Premium rate (exponential) or premium fraction (power).
    pub insurance: f64,
    /// Portfolio objective value at the optimum.
    pub objective_value: f64,
    pub converged: bool,
    pub saturated: bool,
    pub clamped_consumption: bool,
    pub clamped_insurance: bool,
}

/// Side-by-side evaluation of the two generator forms.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorDiscrepancy {
    pub inf_form: f64,
    pub closed_form: f64,
    /// inf_form - closed_form.
    pub difference: f64,
    /// Known algebraic offset between the forms when no box clamps bind.
    pub predicted_difference: f64,
}

/// Convex penalty (e^(delta x) - 1 - delta x) / delta; zero at the origin.
pub fn m_function(x: f64, delta: f64) -> f64 {
    let a = delta * x;
    (f64::exp_m1(a) - a) / delta
}

fn exp_capped(a: f64, saturated: &Cell<bool>) -> f64 {
    if a > EXP_CAP {
        saturated.set(true);
        EXP_CAP.exp()
    } else {
        a.exp()
    }
}

/// Consumption objective of the exponential inf-form generator.
pub fn consumption_objective_exponential(c: f64, x: f64, y: f64, delta: f64) -> (f64, bool) {
    let saturated = Cell::new(false);
    let v = exp_capped(delta * (x - y - c), &saturated) / delta + c;
    (v, saturated.get())
}

/// Premium objective of the exponential inf-form generator; `lambda` and
/// `eta` are the mortality rate and premium ratio at the evaluation time.
pub fn premium_objective_exponential(
    p: f64,
    y: f64,
    delta: f64,
    lambda: f64,
    eta: f64,
) -> (f64, bool) {
    if lambda == 0.0 {
        return (p, false);
    }
    let saturated = Cell::new(false);
    let v = lambda / delta * exp_capped(-delta * (y + p / eta), &saturated) + p;
    (v, saturated.get())
}

/// Consumption-fraction objective of the power inf-form generator; fractions
/// outside the domain evaluate to the infinitely unfavorable sign (the block
/// is maximized for exponents in (0,1), minimized for negative exponents).
pub fn consumption_objective_power(xi: f64, y: f64, kappa: f64) -> (f64, bool) {
    let bad = if kappa > 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
    if xi < 0.0 {
        return (bad, false);
    }
    if xi == 0.0 {
        return if kappa > 0.0 { (0.0, false) } else { (bad, false) };
    }
    let saturated = Cell::new(false);
    let v = exp_capped(-y + kappa * xi.ln(), &saturated) - kappa * xi;
    (v, saturated.get())
}

/// Insurance-fraction objective of the power inf-form generator; requires
/// `zeta > -eta`.
pub fn insurance_objective_power(
    zeta: f64,
    y: f64,
    kappa: f64,
    lambda: f64,
    eta: f64,
) -> (f64, bool) {
    insurance_objective_power_ratio(1.0 + zeta / eta, zeta, y, kappa, lambda)
}

/// Insurance objective with the legacy ratio `1 + zeta / eta` passed
/// directly, avoiding the cancellation that rounds near-boundary optima onto
/// the excluded edge.
pub fn insurance_objective_power_ratio(
    ratio: f64,
    zeta: f64,
    y: f64,
    kappa: f64,
    lambda: f64,
) -> (f64, bool) {
    if lambda == 0.0 {
        return (-kappa * zeta, false);
    }
    let bad = if kappa > 0.0 { f64::NEG_INFINITY } else { f64::INFINITY };
    if ratio < 0.0 {
        return (bad, false);
    }
    if ratio == 0.0 {
        return if kappa > 0.0 { (-kappa * zeta, false) } else { (bad, false) };
    }
    let saturated = Cell::new(false);
    let v = lambda * exp_capped(-y + kappa * ratio.ln(), &saturated) - kappa * zeta;
    (v, saturated.get())
}

fn check_upsilon(inputs: &GeneratorInputs, co: &MarketCoefficients) -> Result<()> {
    if co.phi_degenerate {
        return Err(Error::DegenerateMarket(
            "market prices of risk are undefined: zero volatility against a nonzero excess return"
                .into(),
        ));
    }
    if inputs.upsilon.len() != co.n_atoms() {
        return Err(Error::InvalidInput(format!(
            "jump loading has {} entries but the scenario has {} atoms",
            inputs.upsilon.len(),
            co.n_atoms()
        )));
    }
    Ok(())
}

/// Loading targets z_i + phi_i / delta of the exponential portfolio objective.
fn exp_targets(inputs: &GeneratorInputs, co: &MarketCoefficients, delta: f64) -> [f64; 3] {
    let phi = co.phi.as_array();
    [
        inputs.z[0] + phi[0] / delta,
        inputs.z[1] + phi[1] / delta,
        inputs.z[2] + phi[2] / delta,
    ]
}

struct ExpPortfolioObjective<'a> {
    co: &'a MarketCoefficients,
    targets: [f64; 3],
    upsilon: &'a [f64],
    delta: f64,
    saturated: Cell<bool>,
}

impl ExpPortfolioObjective<'_> {
    fn loading_gaps(&self, theta: [f64; 3]) -> [f64; 3] {
        let v = self.co.portfolio_loadings(theta);
        [v[0] - self.targets[0], v[1] - self.targets[1], v[2] - self.targets[2]]
    }
}

impl Objective3 for ExpPortfolioObjective<'_> {
    fn value(&self, theta: [f64; 3]) -> f64 {
        let d = self.loading_gaps(theta);
        let mut v = 0.5 * self.delta * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        for (z, &u) in self.upsilon.iter().enumerate() {
            let w = self.co.weights[z];
            if w == 0.0 {
                continue;
            }
            let a = self.delta * (u - self.co.portfolio_jump(theta, z));
            v += w * (exp_capped(a, &self.saturated) - 1.0 - a) / self.delta;
        }
        v
    }

    fn gradient(&self, theta: [f64; 3]) -> [f64; 3] {
        let d = self.loading_gaps(theta);
        let (b, si, ss) = (self.co.real_bond.b, self.co.sigma_i, self.co.sigma_s);
        let mut g = [
            self.delta * (d[0] * b + d[1] * si),
            self.delta * d[1] * si,
            self.delta * d[2] * ss,
        ];
        for (z, &u) in self.upsilon.iter().enumerate() {
            let w = self.co.weights[z];
            if w == 0.0 {
                continue;
            }
            let gh = self.co.gamma_hat(z);
            let a = self.delta * (u - self.co.portfolio_jump(theta, z));
            let slope = exp_capped(a, &self.saturated) - 1.0;
            for i in 0..3 {
                g[i] -= w * slope * gh[i];
            }
        }
        g
    }

    fn hessian(&self, theta: [f64; 3]) -> [[f64; 3]; 3] {
        let (b, si, ss) = (self.co.real_bond.b, self.co.sigma_i, self.co.sigma_s);
        let mut h = [
            [self.delta * (b * b + si * si), self.delta * si * si, 0.0],
            [self.delta * si * si, self.delta * si * si, 0.0],
            [0.0, 0.0, self.delta * ss * ss],
        ];
        for (z, &u) in self.upsilon.iter().enumerate() {
            let w = self.co.weights[z];
            if w == 0.0 {
                continue;
            }
            let gh = self.co.gamma_hat(z);
            let a = self.delta * (u - self.co.portfolio_jump(theta, z));
            let curv = w * self.delta * exp_capped(a, &self.saturated);
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] += curv * gh[i] * gh[j];
                }
            }
        }
        h
    }
}

/// Portfolio objective of the exponential generator at a given position.
pub fn theta_minimand_exponential(
    theta: [f64; 3],
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    delta: f64,
) -> Result<GeneratorValue> {
    check_upsilon(inputs, co)?;
    let obj = ExpPortfolioObjective {
        co,
        targets: exp_targets(inputs, co, delta),
        upsilon: &inputs.upsilon,
        delta,
        saturated: Cell::new(false),
    };
    let value = obj.value(theta);
    Ok(GeneratorValue { value, saturated: obj.saturated.get() })
}

fn box_contains(b: &[[f64; 2]; 3], x: [f64; 3]) -> bool {
    (0..3).all(|i| x[i] >= b[i][0] && x[i] <= b[i][1])
}

fn jump_free(co: &MarketCoefficients) -> bool {
    co.weights.iter().all(|&w| w == 0.0)
}

/// Minimizer of the exponential portfolio objective over the box.
///
/// Without jump atoms and with all three loadings nonzero, an in-box
/// first-order-condition point is returned directly with objective value
/// exactly zero; otherwise projected damped Newton runs from the box
/// projection of the origin, which also selects the smallest-norm minimizer
/// along any flat directions of a degenerate loading matrix.
pub fn argmin_theta_exponential(
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    delta: f64,
    portfolio_box: [[f64; 2]; 3],
) -> Result<PortfolioSolution> {
    check_upsilon(inputs, co)?;
    let targets = exp_targets(inputs, co, delta);
    let (b, si, ss) = (co.real_bond.b, co.sigma_i, co.sigma_s);
    if jump_free(co) && b != 0.0 && si != 0.0 && ss != 0.0 {
        let t1 = targets[0] / b;
        let candidate = [t1, targets[1] / si - t1, targets[2] / ss];
        if box_contains(&portfolio_box, candidate) {
            return Ok(PortfolioSolution {
                portfolio: candidate,
                objective_value: 0.0,
                gradient_norm: 0.0,
                iterations: 0,
                converged: true,
                saturated: false,
            });
        }
    }
    let obj = ExpPortfolioObjective {
        co,
        targets,
        upsilon: &inputs.upsilon,
        delta,
        saturated: Cell::new(false),
    };
    let r = minimize_box(&obj, portfolio_box, None, 1e-10, 100);
    Ok(PortfolioSolution {
        portfolio: r.x,
        objective_value: r.value,
        gradient_norm: r.gradient_norm,
        iterations: r.iterations,
        converged: r.converged,
        saturated: obj.saturated.get(),
    })
}

fn require_no_jumps(co: &MarketCoefficients, what: &str) -> Result<()> {
    if !jump_free(co) {
        return Err(Error::InvalidInput(format!(
            "{what} is defined only without jump atoms"
        )));
    }
    Ok(())
}

fn require_nonzero_loadings(co: &MarketCoefficients) -> Result<(f64, f64, f64)> {
    let (b, si, ss) = (co.real_bond.b, co.sigma_i, co.sigma_s);
    if b == 0.0 || si == 0.0 || ss == 0.0 {
        return Err(Error::DegenerateMarket(format!(
            "closed-form portfolio needs nonzero loadings, got b={b}, sigma_I={si}, sigma_S={ss}"
        )));
    }
    Ok((b, si, ss))
}

/// No-jump closed-form portfolio for the exponential family.
pub fn closed_form_theta_nojump_exponential(
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    delta: f64,
) -> Result<ClosedFormComparison> {
    require_no_jumps(co, "the no-jump closed form")?;
    let (b, si, ss) = require_nonzero_loadings(co)?;
    let targets = exp_targets(inputs, co, delta);
    let t1 = targets[0] / b;
    let foc = [t1, targets[1] / si - t1, targets[2] / ss];

    let excess = co.a_tilde - co.r_real;
    let z = inputs.z;
    let alternate = [
        (excess - co.mu_i) / (delta * b * b) + z[0] / b,
        ((1.0 / (si * si) + 1.0 / (b * b)) * co.mu_i - excess / (b * b) + z[1] / si - z[0] / b)
            / delta,
        (co.mu_s - co.r_real) / (delta * ss * ss) + z[2] / ss,
    ];
    Ok(ClosedFormComparison { foc, alternate })
}

/// Closed-form optimal consumption rate for the exponential family.
pub fn optimal_consumption_exponential(x: f64, y: f64, _delta: f64) -> f64 {
    x - y
}

/// Closed-form optimal premium rate for the exponential family. A vanishing
/// mortality rate sends the formula to negative infinity, so the lower edge
/// of the insurance box is returned with the clamp flag set.
pub fn optimal_premium_exponential(
    y: f64,
    t: f64,
    delta: f64,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    insurance_box: [f64; 2],
) -> Result<ClampedValue> {
    let lambda = mortality.rate(t)?;
    let eta = contract.ratio(t)?;
    if lambda == 0.0 {
        return Ok(ClampedValue { value: insurance_box[0], clamped: true });
    }
    let value = eta * ((lambda / eta).ln() / delta - y);
    Ok(ClampedValue { value, clamped: false })
}

/// Market-price-of-risk tail common to both exponential generator forms.
fn exp_tail(inputs: &GeneratorInputs, co: &MarketCoefficients, delta: f64) -> f64 {
    let phi = co.phi.as_array();
    let dot = phi[0] * inputs.z[0] + phi[1] * inputs.z[1] + phi[2] * inputs.z[2];
    let norm2 = phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2];
    -dot - norm2 / (2.0 * delta)
}

/// Exponential-family generator in the requested form.
pub fn generator_exponential(
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    delta: f64,
    boxes: &ControlBoxes,
    mode: GeneratorMode,
) -> Result<GeneratorValue> {
    check_upsilon(inputs, co)?;
    let lambda = mortality.rate(inputs.t)?;
    let eta = contract.ratio(inputs.t)?;
    let rho = co.discount;
    let theta = argmin_theta_exponential(inputs, co, delta, boxes.portfolio)?;
    let mut saturated = theta.saturated;
    let tail = exp_tail(inputs, co, delta);

    let value = match mode {
        GeneratorMode::InfForm => {
            let c_star = optimal_consumption_exponential(inputs.x, inputs.y, delta);
            let c_hat = c_star.clamp(boxes.consumption[0], boxes.consumption[1]);
            let p =
                optimal_premium_exponential(inputs.y, inputs.t, delta, mortality, contract, boxes.insurance)?;
            let p_hat = p.value.clamp(boxes.insurance[0], boxes.insurance[1]);
            let (fc, sc) = consumption_objective_exponential(c_hat, inputs.x, inputs.y, delta);
            let (fp, sp) = premium_objective_exponential(p_hat, inputs.y, delta, lambda, eta);
            saturated |= sc | sp;
            fc + fp - (rho + lambda) / delta - co.r_real * inputs.x + theta.objective_value + tail
        }
        GeneratorMode::ClosedForm => {
            if lambda <= 0.0 {
                return Err(Error::InvalidInput(
                    "the closed-form exponential generator needs a positive mortality rate".into(),
                ));
            }
            let constant = (1.0 + eta - rho - lambda
                + delta.ln()
                + eta * (delta * lambda / eta).ln())
                / delta;
            (1.0 - co.r_real) * inputs.x + constant - (1.0 + eta / delta) * inputs.y
                + theta.objective_value
                + tail
        }
    };
    Ok(GeneratorValue { value, saturated })
}

/// Loading targets (z_i + phi_i)/(kappa - 1) of the power portfolio objective.
fn power_targets(inputs: &GeneratorInputs, co: &MarketCoefficients, kappa: f64) -> [f64; 3] {
    let phi = co.phi.as_array();
    [
        (inputs.z[0] + phi[0]) / (kappa - 1.0),
        (inputs.z[1] + phi[1]) / (kappa - 1.0),
        (inputs.z[2] + phi[2]) / (kappa - 1.0),
    ]
}

/// Power portfolio expression with an extremum-orientation sign: the block is
/// concave for exponents in (0,1) (maximized, so the negation is minimized)
/// and convex for negative exponents (minimized directly).
struct PowerPortfolioObjective<'a> {
    co: &'a MarketCoefficients,
    targets: [f64; 3],
    upsilon: &'a [f64],
    kappa: f64,
    /// -1 for exponents in (0,1), +1 for negative exponents.
    sign: f64,
    saturated: Cell<bool>,
}

impl PowerPortfolioObjective<'_> {
    fn shifted_loadings(&self, pi: [f64; 3]) -> [f64; 3] {
        let v = self.co.portfolio_loadings(pi);
        [v[0] + self.targets[0], v[1] + self.targets[1], v[2] + self.targets[2]]
    }

    /// Value of the unsigned portfolio expression.
    fn raw_value(&self, pi: [f64; 3]) -> f64 {
        let d = self.shifted_loadings(pi);
        let k = self.kappa;
        let mut v = 0.5 * k * (k - 1.0) * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        for (z, &u) in self.upsilon.iter().enumerate() {
            let w = self.co.weights[z];
            if w == 0.0 {
                continue;
            }
            let s = self.co.portfolio_jump(pi, z);
            let growth = exp_capped(k * (1.0 + s).ln() + u, &self.saturated);
            v += w * (growth - 1.0 - k * s - u);
        }
        v
    }
}

impl Objective3 for PowerPortfolioObjective<'_> {
    fn value(&self, pi: [f64; 3]) -> f64 {
        self.sign * self.raw_value(pi)
    }

    fn gradient(&self, pi: [f64; 3]) -> [f64; 3] {
        let d = self.shifted_loadings(pi);
        let k = self.kappa;
        let (b, si, ss) = (self.co.real_bond.b, self.co.sigma_i, self.co.sigma_s);
        let mut g = [
            k * (k - 1.0) * (d[0] * b + d[1] * si),
            k * (k - 1.0) * d[1] * si,
            k * (k - 1.0) * d[2] * ss,
        ];
        for (z, &u) in self.upsilon.iter().enumerate() {
            let w = self.co.weights[z];
            if w == 0.0 {
                continue;
            }
            let gh = self.co.gamma_hat(z);
            let s = self.co.portfolio_jump(pi, z);
            let growth = exp_capped(k * (1.0 + s).ln() + u, &self.saturated);
            let slope = w * k * (growth / (1.0 + s) - 1.0);
            for i in 0..3 {
                g[i] += slope * gh[i];
            }
        }
        [self.sign * g[0], self.sign * g[1], self.sign * g[2]]
    }

    fn hessian(&self, pi: [f64; 3]) -> [[f64; 3]; 3] {
        let k = self.kappa;
        let (b, si, ss) = (self.co.real_bond.b, self.co.sigma_i, self.co.sigma_s);
        // sign * k * (k - 1) is |k| * (1 - k) > 0 in both exponent regimes.
        let scale = self.sign * k * (k - 1.0);
        let mut h = [
            [scale * (b * b + si * si), scale * si * si, 0.0],
            [scale * si * si, scale * si * si, 0.0],
            [0.0, 0.0, scale * ss * ss],
        ];
        for (z, &u) in self.upsilon.iter().enumerate() {
            let w = self.co.weights[z];
            if w == 0.0 {
                continue;
            }
            let gh = self.co.gamma_hat(z);
            let s = self.co.portfolio_jump(pi, z);
            let growth = exp_capped(k * (1.0 + s).ln() + u, &self.saturated);
            let curv = scale * w * growth / ((1.0 + s) * (1.0 + s));
            for i in 0..3 {
                for j in 0..3 {
                    h[i][j] += curv * gh[i] * gh[j];
                }
            }
        }
        h
    }

    fn feasible(&self, pi: [f64; 3]) -> bool {
        self.upsilon.iter().enumerate().all(|(z, _)| {
            self.co.weights[z] == 0.0 || 1.0 + self.co.portfolio_jump(pi, z) > 0.0
        })
    }
}

/// Portfolio expression of the power generator at a given fraction vector.
pub fn theta_minimand_power(
    pi: [f64; 3],
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    kappa: f64,
) -> Result<GeneratorValue> {
    check_upsilon(inputs, co)?;
    let obj = PowerPortfolioObjective {
        co,
        targets: power_targets(inputs, co, kappa),
        upsilon: &inputs.upsilon,
        kappa,
        sign: if kappa > 0.0 { -1.0 } else { 1.0 },
        saturated: Cell::new(false),
    };
    if !obj.feasible(pi) {
        return Err(Error::JumpFactorTooSmall(format!(
            "portfolio {pi:?} drives a jump factor of the wealth to or below zero"
        )));
    }
    let value = obj.raw_value(pi);
    Ok(GeneratorValue { value, saturated: obj.saturated.get() })
}

/// Box extremum of the power portfolio expression: its maximum for exponents
/// in (0,1), its minimum for negative exponents.
///
/// Both regimes reduce to minimizing the sign-adjusted expression, and
/// `objective_value` reports the expression itself at the extremum. Jump
/// feasibility (every wealth jump factor positive) is kept throughout; the
/// origin is always jump-feasible and serves as the starting point after box
/// projection.
pub fn argmin_theta_power(
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    kappa: f64,
    portfolio_box: [[f64; 2]; 3],
) -> Result<PortfolioSolution> {
    check_upsilon(inputs, co)?;
    let targets = power_targets(inputs, co, kappa);
    let (b, si, ss) = (co.real_bond.b, co.sigma_i, co.sigma_s);
    if jump_free(co) && b != 0.0 && si != 0.0 && ss != 0.0 {
        let p1 = -targets[0] / b;
        let candidate = [p1, -targets[1] / si - p1, -targets[2] / ss];
        if box_contains(&portfolio_box, candidate) {
            return Ok(PortfolioSolution {
                portfolio: candidate,
                objective_value: 0.0,
                gradient_norm: 0.0,
                iterations: 0,
                converged: true,
                saturated: false,
            });
        }
    }
    let obj = PowerPortfolioObjective {
        co,
        targets,
        upsilon: &inputs.upsilon,
        kappa,
        sign: if kappa > 0.0 { -1.0 } else { 1.0 },
        saturated: Cell::new(false),
    };
    let start = feasible_start(&obj, &portfolio_box)?;
    let r = minimize_box(&obj, portfolio_box, Some(start), 1e-10, 100);
    Ok(PortfolioSolution {
        portfolio: r.x,
        objective_value: obj.sign * r.value,
        gradient_norm: r.gradient_norm,
        iterations: r.iterations,
        converged: r.converged,
        saturated: obj.saturated.get(),
    })
}

/// Smallest-norm jump-feasible point of the box, scanning a coarse lattice
/// when the projected origin is infeasible.
fn feasible_start(obj: &PowerPortfolioObjective<'_>, bounds: &[[f64; 2]; 3]) -> Result<[f64; 3]> {
    let origin = [
        0.0f64.clamp(bounds[0][0], bounds[0][1]),
        0.0f64.clamp(bounds[1][0], bounds[1][1]),
        0.0f64.clamp(bounds[2][0], bounds[2][1]),
    ];
    if obj.feasible(origin) {
        return Ok(origin);
    }
    let mut best: Option<([f64; 3], f64)> = None;
    let n = 5;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let frac = |idx: usize, lo: f64, hi: f64| lo + (hi - lo) * idx as f64 / (n - 1) as f64;
                let p = [
                    frac(i, bounds[0][0], bounds[0][1]),
                    frac(j, bounds[1][0], bounds[1][1]),
                    frac(k, bounds[2][0], bounds[2][1]),
                ];
                if obj.feasible(p) {
                    let norm = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
                    if best.map_or(true, |(_, bn)| norm < bn) {
                        best = Some((p, norm));
                    }
                }
            }
        }
    }
    best.map(|(p, _)| p).ok_or_else(|| {
        Error::InvalidInput("no jump-feasible portfolio fraction found in the box".into())
    })
}

/// No-jump closed-form portfolio fractions for the power family.
pub fn closed_form_pi_nojump_power(
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    kappa: f64,
) -> Result<ClosedFormComparison> {
    require_no_jumps(co, "the no-jump closed form")?;
    let (b, si, ss) = require_nonzero_loadings(co)?;
    let targets = power_targets(inputs, co, kappa);
    let p1 = -targets[0] / b;
    let foc = [p1, -targets[1] / si - p1, -targets[2] / ss];

    let pre = 1.0 / (1.0 - kappa);
    let excess = co.a_tilde - co.r_real;
    let z = inputs.z;
    let alternate = [
        pre * ((excess - co.mu_i) / (b * b) + z[0] / b),
        pre * ((1.0 / (si * si) + 1.0 / (b * b)) * co.mu_i - excess / (b * b) + z[1] / si
            - z[0] / b),
        pre * ((co.mu_s - co.r_real) / (ss * ss) + z[2] / ss),
    ];
    Ok(ClosedFormComparison { foc, alternate })
}

/// Closed-form optimal consumption and insurance fractions for the power
/// family. A vanishing mortality rate sends the insurance formula to its
/// limit -eta, below any admissible box, so the lower box edge is returned
/// with the clamp flag set.
pub fn optimal_fractions_power(
    y: f64,
    t: f64,
    kappa: f64,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    insurance_box: [f64; 2],
) -> Result<PowerFractions> {
    let lambda = mortality.rate(t)?;
    let eta = contract.ratio(t)?;
    let xi = (-y / (1.0 - kappa)).exp();
    if lambda == 0.0 {
        let zeta = (-eta).clamp(insurance_box[0], insurance_box[1]);
        return Ok(PowerFractions {
            xi,
            zeta,
            ratio: 1.0 + zeta / eta,
            zeta_clamped: true,
        });
    }
    let ratio = (eta / lambda).powf(-1.0 / (1.0 - kappa)) * xi;
    let zeta = eta * (ratio - 1.0);
    Ok(PowerFractions { xi, zeta, ratio, zeta_clamped: false })
}

/// Quadratic tail common to both power generator forms.
fn power_tail(inputs: &GeneratorInputs, co: &MarketCoefficients, kappa: f64) -> f64 {
    let phi = co.phi.as_array();
    let z = inputs.z;
    let shifted: f64 = (0..3).map(|i| (z[i] + phi[i]).powi(2)).sum();
    let znorm: f64 = z.iter().map(|zi| zi * zi).sum();
    kappa * shifted / (2.0 * (1.0 - kappa)) + znorm / 2.0
}

/// Power-family generator in the requested form.
pub fn generator_power(
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    kappa: f64,
    boxes: &ControlBoxes,
    mode: GeneratorMode,
) -> Result<GeneratorValue> {
    check_upsilon(inputs, co)?;
    let lambda = mortality.rate(inputs.t)?;
    let eta = contract.ratio(inputs.t)?;
    let rho = co.discount;
    let pi = argmin_theta_power(inputs, co, kappa, boxes.portfolio)?;
    let mut saturated = pi.saturated;
    let base = pi.objective_value + power_tail(inputs, co, kappa) - (rho + lambda)
        + kappa * co.r_real;

    let value = match mode {
        GeneratorMode::InfForm => {
            let fr = optimal_fractions_power(inputs.y, inputs.t, kappa, mortality, contract, boxes.insurance)?;
            let xi_hat = fr.xi.clamp(boxes.consumption[0], boxes.consumption[1]);
            let zeta_hat = fr.zeta.clamp(boxes.insurance[0], boxes.insurance[1]);
            // The unclamped optimum carries a strictly positive ratio, so
            // only a box edge below -eta can leave the legacy domain.
            let ratio_hat =
                if zeta_hat == fr.zeta { fr.ratio } else { 1.0 + zeta_hat / eta };
            if ratio_hat < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "insurance fraction {zeta_hat} breaches the legacy-positivity bound -eta"
                )));
            }
            let (fx, sx) = consumption_objective_power(xi_hat, inputs.y, kappa);
            let (fz, sz) =
                insurance_objective_power_ratio(ratio_hat, zeta_hat, inputs.y, kappa, lambda);
            saturated |= sx | sz;
            fx + fz + base
        }
        GeneratorMode::ClosedForm => {
            let survival_scale = if lambda > 0.0 {
                lambda * (eta / lambda).powf(-kappa / (1.0 - kappa))
            } else {
                0.0
            };
            let legacy_scale = if lambda > 0.0 {
                eta * (eta / lambda).powf(-1.0 / (1.0 - kappa))
            } else {
                0.0
            };
            let brace = (1.0 + survival_scale) - kappa * (1.0 + legacy_scale);
            let sat = Cell::new(false);
            let level = exp_capped(-inputs.y / (1.0 - kappa), &sat);
            saturated |= sat.get();
            brace * level + base
        }
    };
    Ok(GeneratorValue { value, saturated })
}

/// Gap between the exponential inf-form generator and the same assembly at
/// the given admissible controls; nonpositive, and zero exactly at the
/// optimal controls (up to solver tolerance). Shared terms cancel
/// structurally, so no catastrophic cancellation occurs.
pub fn drift_gap_exponential(
    controls: &ControlPoint,
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    delta: f64,
    boxes: &ControlBoxes,
) -> Result<GeneratorValue> {
    check_upsilon(inputs, co)?;
    let lambda = mortality.rate(inputs.t)?;
    let eta = contract.ratio(inputs.t)?;
    let theta = argmin_theta_exponential(inputs, co, delta, boxes.portfolio)?;
    let at_controls = theta_minimand_exponential(controls.portfolio, inputs, co, delta)?;

    let c_star = optimal_consumption_exponential(inputs.x, inputs.y, delta)
        .clamp(boxes.consumption[0], boxes.consumption[1]);
    let p_star = optimal_premium_exponential(inputs.y, inputs.t, delta, mortality, contract, boxes.insurance)?
        .value
        .clamp(boxes.insurance[0], boxes.insurance[1]);
    let (fc_opt, s1) = consumption_objective_exponential(c_star, inputs.x, inputs.y, delta);
    let (fc_ctl, s2) =
        consumption_objective_exponential(controls.consumption, inputs.x, inputs.y, delta);
    let (fp_opt, s3) = premium_objective_exponential(p_star, inputs.y, delta, lambda, eta);
    let (fp_ctl, s4) = premium_objective_exponential(controls.insurance, inputs.y, delta, lambda, eta);

    Ok(GeneratorValue {
        value: (fc_opt - fc_ctl) + (fp_opt - fp_ctl)
            + (theta.objective_value - at_controls.value),
        saturated: theta.saturated
            | at_controls.saturated
            | s1
            | s2
            | s3
            | s4,
    })
}

/// Signed gap between the same assembly at the given admissible fractions
/// and the power inf-form generator, oriented by the exponent sign so that
/// it is nonpositive in both regimes (matching the drift sign of the wealth
/// value process) and zero exactly at the optimal fractions.
pub fn drift_gap_power(
    controls: &ControlPoint,
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    kappa: f64,
    boxes: &ControlBoxes,
) -> Result<GeneratorValue> {
    check_upsilon(inputs, co)?;
    let lambda = mortality.rate(inputs.t)?;
    let eta = contract.ratio(inputs.t)?;
    let pi = argmin_theta_power(inputs, co, kappa, boxes.portfolio)?;
    let at_controls = theta_minimand_power(controls.portfolio, inputs, co, kappa)?;

    let fr = optimal_fractions_power(inputs.y, inputs.t, kappa, mortality, contract, boxes.insurance)?;
    let xi_hat = fr.xi.clamp(boxes.consumption[0], boxes.consumption[1]);
    let zeta_hat = fr.zeta.clamp(boxes.insurance[0], boxes.insurance[1]);
    let ratio_hat = if zeta_hat == fr.zeta { fr.ratio } else { 1.0 + zeta_hat / eta };
    let (fx_opt, s1) = consumption_objective_power(xi_hat, inputs.y, kappa);
    let (fx_ctl, s2) = consumption_objective_power(controls.consumption, inputs.y, kappa);
    let (fz_opt, s3) =
        insurance_objective_power_ratio(ratio_hat, zeta_hat, inputs.y, kappa, lambda);
    let (fz_ctl, s4) = insurance_objective_power(controls.insurance, inputs.y, kappa, lambda, eta);

    let raw =
        (fx_ctl - fx_opt) + (fz_ctl - fz_opt) + (at_controls.value - pi.objective_value);
    Ok(GeneratorValue {
        value: kappa.signum() * raw,
        saturated: pi.saturated | at_controls.saturated | s1 | s2 | s3 | s4,
    })
}

/// Optimal control bundle for the exponential family, box-clamped.
pub fn optimal_controls_exponential(
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    delta: f64,
    boxes: &ControlBoxes,
) -> Result<OptimalControls> {
    let theta = argmin_theta_exponential(inputs, co, delta, boxes.portfolio)?;
    let c_raw = optimal_consumption_exponential(inputs.x, inputs.y, delta);
    let consumption = c_raw.clamp(boxes.consumption[0], boxes.consumption[1]);
    let p = optimal_premium_exponential(inputs.y, inputs.t, delta, mortality, contract, boxes.insurance)?;
    let insurance = p.value.clamp(boxes.insurance[0], boxes.insurance[1]);
    Ok(OptimalControls {
        portfolio: theta.portfolio,
        consumption,
        insurance,
        objective_value: theta.objective_value,
        converged: theta.converged,
        saturated: theta.saturated,
        clamped_consumption: consumption != c_raw,
        clamped_insurance: p.clamped || insurance != p.value,
    })
}

/// Optimal control bundle for the power family, box-clamped.
pub fn optimal_controls_power(
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    kappa: f64,
    boxes: &ControlBoxes,
) -> Result<OptimalControls> {
    let pi = argmin_theta_power(inputs, co, kappa, boxes.portfolio)?;
    let fr = optimal_fractions_power(inputs.y, inputs.t, kappa, mortality, contract, boxes.insurance)?;
    let consumption = fr.xi.clamp(boxes.consumption[0], boxes.consumption[1]);
    let insurance = fr.zeta.clamp(boxes.insurance[0], boxes.insurance[1]);
    Ok(OptimalControls {
        portfolio: pi.portfolio,
        consumption,
        insurance,
        objective_value: pi.objective_value,
        converged: pi.converged,
        saturated: pi.saturated,
        clamped_consumption: consumption != fr.xi,
        clamped_insurance: fr.zeta_clamped || insurance != fr.zeta,
    })
}

/// Evaluates both exponential generator forms and the known offset between
/// them when no box clamps bind:
/// eta (1 - delta) / delta * y - (1 + eta) ln(delta) / delta,
/// which vanishes exactly at delta = 1.
pub fn generator_discrepancy_exponential(
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    delta: f64,
    boxes: &ControlBoxes,
) -> Result<GeneratorDiscrepancy> {
    let inf = generator_exponential(inputs, co, mortality, contract, delta, boxes, GeneratorMode::InfForm)?;
    let closed =
        generator_exponential(inputs, co, mortality, contract, delta, boxes, GeneratorMode::ClosedForm)?;
    let eta = contract.ratio(inputs.t)?;
    Ok(GeneratorDiscrepancy {
        inf_form: inf.value,
        closed_form: closed.value,
        difference: inf.value - closed.value,
        predicted_difference: eta * (1.0 - delta) / delta * inputs.y
            - (1.0 + eta) * delta.ln() / delta,
    })
}

/// Evaluates both power generator forms and the known offset between them,
/// kappa * eta exactly when no box clamps bind: the closed form drops the
/// standalone kappa * eta constant left over when the insurance optimum is
/// substituted back into its objective.
pub fn generator_discrepancy_power(
    inputs: &GeneratorInputs,
    co: &MarketCoefficients,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    kappa: f64,
    boxes: &ControlBoxes,
) -> Result<GeneratorDiscrepancy> {
    let inf = generator_power(inputs, co, mortality, contract, kappa, boxes, GeneratorMode::InfForm)?;
    let closed = generator_power(inputs, co, mortality, contract, kappa, boxes, GeneratorMode::ClosedForm)?;
    let eta = contract.ratio(inputs.t)?;
    Ok(GeneratorDiscrepancy {
        inf_form: inf.value,
        closed_form: closed.value,
        difference: inf.value - closed.value,
        predicted_difference: kappa * eta,
    })
}
