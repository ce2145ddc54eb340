//! Monte Carlo functional estimation and optimality verification.
//!
//! Every comparison reuses one driver object, so strategies are measured on
//! common random numbers. Invariants:
//! - discount and survival integrals are exact over the piecewise tables;
//!   only the running utility integral is trapezoidal
//! - path aggregation is ordered pairwise summation, independent of the
//!   thread count
//! - drift residuals are assembled from generator gap terms, so shared
//!   quantities cancel structurally instead of numerically

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::generator::{
    drift_gap_exponential, drift_gap_power, GeneratorInputs, UtilitySpec, EXP_CAP,
};
use crate::market::MarketScenario;
use crate::mortality::{InsuranceContract, MortalityCurve};
use crate::paths::{
    build_tables, simulate_wealth, simulate_wealth_power_logform, ControlBoxes, ControlMode,
    ControlPoint, Drivers, StrategyRule, WealthPath, ZeroFeedback,
};
use crate::solver::BsdeSolution;

/// Overflow-guarded exponential; underflow to zero is harmless.
fn capped_exp(a: f64) -> f64 {
    a.min(EXP_CAP).exp()
}

/// Ordered pairwise summation.
fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = pairwise_sum(samples) / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = samples.iter().map(|s| (s - mean) * (s - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo estimate of an objective functional.
#[derive(Debug, Clone, Copy)]
pub struct ValueEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n_paths: usize,
    /// Proportion of bankruptcy-flagged paths (included in the mean).
    pub flagged_fraction: f64,
}

/// Exact discount-and-survival factor table per node.
fn discount_factors(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    grid: crate::paths::TimeGrid,
) -> Result<Vec<f64>> {
    (0..grid.n_nodes())
        .map(|i| {
            let t = grid.node(i);
            Ok((-(scenario.discount.integral(0.0, t)? + mortality.integrated_hazard(t)?)).exp())
        })
        .collect()
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let interior = pairwise_sum(&values[1..values.len() - 1]);
    dt * (0.5 * (values[0] + values[values.len() - 1]) + interior)
}

/// Monte Carlo value of the absolute-control objective: running utility of
/// consumption plus mortality-weighted utility of the legacy, plus terminal
/// wealth utility, all exponential with risk aversion `delta`.
pub fn estimate_value_exponential(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    strategy: &StrategyRule,
    delta: f64,
    x0: f64,
    drivers: &dyn Drivers,
) -> Result<ValueEstimate> {
    if strategy.mode != ControlMode::Absolute {
        return Err(Error::InvalidInput(
            "the exponential functional needs an absolute-mode strategy".into(),
        ));
    }
    UtilitySpec::Exponential { delta }.validate()?;
    let grid = drivers.grid();
    let dt = grid.dt();
    let n = grid.n_nodes();
    let disc = discount_factors(scenario, mortality, grid)?;
    let lambda: Result<Vec<f64>> = (0..n).map(|i| mortality.rate(grid.node(i))).collect();
    let lambda = lambda?;
    let eta: Result<Vec<f64>> = (0..n).map(|i| contract.ratio(grid.node(i))).collect();
    let eta = eta?;
    let wealth = simulate_wealth(scenario, strategy, drivers, x0, &ZeroFeedback)?;

    let samples: Vec<f64> = (0..wealth.x.len())
        .into_par_iter()
        .map(|p| {
            let xp = &wealth.x[p];
            let integrand: Vec<f64> = (0..n)
                .map(|i| {
                    let u = strategy.controls_at(i, grid.node(i), xp[i], 0.0);
                    let legacy = xp[i] + u.insurance / eta[i];
                    disc[i]
                        * (capped_exp(-delta * u.consumption)
                            + lambda[i] * capped_exp(-delta * legacy))
                })
                .collect();
            -trapezoid(&integrand, dt) - disc[n - 1] * capped_exp(-delta * xp[n - 1])
        })
        .collect();

    let (mean, standard_error) = mean_and_se(&samples);
    Ok(ValueEstimate {
        mean,
        standard_error,
        n_paths: samples.len(),
        flagged_fraction: wealth.flagged_fraction(),
    })
}

/// Monte Carlo value of the fractional-control objective: power utility of
/// consumed wealth and of the legacy fraction, plus terminal power utility,
/// on positive log-form wealth paths.
pub fn estimate_value_power(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    strategy: &StrategyRule,
    kappa: f64,
    x0: f64,
    drivers: &dyn Drivers,
) -> Result<ValueEstimate> {
    if strategy.mode != ControlMode::Fractional {
        return Err(Error::InvalidInput(
            "the power functional needs a fractional-mode strategy".into(),
        ));
    }
    UtilitySpec::Power { kappa }.validate()?;
    if !(x0 > 0.0) {
        return Err(Error::InvalidInput("initial wealth must be positive".into()));
    }
    let grid = drivers.grid();
    let dt = grid.dt();
    let n = grid.n_nodes();
    let disc = discount_factors(scenario, mortality, grid)?;
    let lambda: Result<Vec<f64>> = (0..n).map(|i| mortality.rate(grid.node(i))).collect();
    let lambda = lambda?;
    let eta: Result<Vec<f64>> = (0..n).map(|i| contract.ratio(grid.node(i))).collect();
    let eta = eta?;
    let wealth = simulate_wealth_power_logform(scenario, strategy, drivers, x0, &ZeroFeedback)?;

    let samples: Vec<Result<f64>> = (0..wealth.x.len())
        .into_par_iter()
        .map(|p| {
            let xp = &wealth.x[p];
            let mut integrand = Vec::with_capacity(n);
            for i in 0..n {
                let u = strategy.controls_at(i, grid.node(i), xp[i], 0.0);
                let xi = u.consumption;
                let ratio = 1.0 + u.insurance / eta[i];
                if xi < 0.0 || ratio < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "inadmissible fractions at node {i}: consumption {xi}, legacy ratio {ratio}"
                    )));
                }
                let cons = if xi == 0.0 {
                    if kappa > 0.0 {
                        0.0
                    } else {
                        return Err(Error::InvalidInput(
                            "zero consumption fraction with negative exponent".into(),
                        ));
                    }
                } else {
                    xi.powf(kappa)
                };
                let legacy = if lambda[i] == 0.0 {
                    0.0
                } else if ratio == 0.0 {
                    if kappa > 0.0 {
                        0.0
                    } else {
                        return Err(Error::InvalidInput(
                            "zero legacy ratio with negative exponent".into(),
                        ));
                    }
                } else {
                    lambda[i] * ratio.powf(kappa)
                };
                integrand.push(disc[i] * (cons + legacy) * xp[i].powf(kappa) / kappa);
            }
            Ok(trapezoid(&integrand, dt) + disc[n - 1] * xp[n - 1].powf(kappa) / kappa)
        })
        .collect();
    let samples: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;

    let (mean, standard_error) = mean_and_se(&samples);
    Ok(ValueEstimate {
        mean,
        standard_error,
        n_paths: samples.len(),
        flagged_fraction: wealth.flagged_fraction(),
    })
}

/// Theorem-form value at time zero from the solved backward component.
pub fn value_formula(utility: UtilitySpec, x0: f64, y0: f64) -> f64 {
    match utility {
        UtilitySpec::Exponential { delta } => -capped_exp(-delta * (x0 - y0)),
        UtilitySpec::Power { kappa } => x0.powf(kappa) / kappa * capped_exp(y0),
    }
}

/// Sampled drift of the verification family under a strategy.
#[derive(Debug, Clone)]
pub struct DriftReport {
    /// Mean sampled drift per node (last node excluded).
    pub sampled: Vec<f64>,
    pub max_positive_excursion: f64,
    /// Root mean square over all samples; near zero when the strategy is
    /// the computed optimum.
    pub rms_residual_at_optimum: f64,
}

fn column_value(columns: &[Vec<f64>], node: usize, path: usize) -> f64 {
    let col = &columns[node];
    if col.len() == 1 {
        col[0]
    } else {
        col[path]
    }
}

/// Analytic drift of the verification family at sampled path states.
///
/// The drift is the generator gap at the strategy's controls times a
/// positive state prefactor, so it is nonpositive for every admissible
/// strategy and vanishes at the optimal controls.
#[allow(clippy::too_many_arguments)]
pub fn drift_residual(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    utility: UtilitySpec,
    solution: &BsdeSolution,
    wealth: &WealthPath,
    strategy: &StrategyRule,
    boxes: &ControlBoxes,
    grid: crate::paths::TimeGrid,
    max_samples_per_node: usize,
) -> Result<DriftReport> {
    utility.validate()?;
    if solution.y.len() != grid.n_nodes() {
        return Err(Error::InvalidInput("solution and grid node counts differ".into()));
    }
    let tables = build_tables(scenario, grid)?;
    let disc = discount_factors(scenario, mortality, grid)?;
    let n = grid.n_nodes();
    let n_paths = wealth.x.len();
    let stride = (n_paths / max_samples_per_node.max(1)).max(1);

    let mut sampled = Vec::with_capacity(n - 1);
    let mut max_positive = f64::NEG_INFINITY;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for i in 0..n - 1 {
        let t = grid.node(i);
        let co = &tables.coeffs[i];
        let mut node_sum = 0.0;
        let mut node_count = 0usize;
        for p in (0..n_paths).step_by(stride) {
            let x = wealth.x[p][i];
            let y = column_value(&solution.y, i, p);
            let z = [
                column_value(&solution.z1, i, p),
                column_value(&solution.z2, i, p),
                column_value(&solution.z3, i, p),
            ];
            let upsilon: Vec<f64> = (0..co.n_atoms())
                .map(|a| column_value(&solution.upsilon[i], a, p))
                .collect();
            let u = strategy.controls_at(i, t, x, y);
            let controls = ControlPoint {
                portfolio: u.portfolio,
                consumption: u.consumption,
                insurance: u.insurance,
            };
            let inputs = GeneratorInputs::new(t, x, y, z, upsilon);
            let gap = match utility {
                UtilitySpec::Exponential { delta } => {
                    drift_gap_exponential(&controls, &inputs, co, mortality, contract, delta, boxes)?
                        .value
                }
                UtilitySpec::Power { kappa } => {
                    drift_gap_power(&controls, &inputs, co, mortality, contract, kappa, boxes)?
                        .value
                }
            };
            let prefactor = match utility {
                UtilitySpec::Exponential { delta } => {
                    delta * disc[i] * capped_exp(-delta * (x - y))
                }
                UtilitySpec::Power { kappa } => {
                    disc[i] * x.powf(kappa) * capped_exp(y) / kappa.abs()
                }
            };
            let drift = prefactor * gap;
            node_sum += drift;
            node_count += 1;
            max_positive = max_positive.max(drift);
            sum_sq += drift * drift;
            count += 1;
        }
        sampled.push(node_sum / node_count as f64);
    }
    Ok(DriftReport {
        sampled,
        max_positive_excursion: max_positive,
        rms_residual_at_optimum: (sum_sq / count.max(1) as f64).sqrt(),
    })
}

/// Super-martingale gap of one strategy.
#[derive(Debug, Clone, Copy)]
pub struct GapEntry {
    /// Estimated terminal mean of the verification family minus its initial
    /// value; zero at the optimum, negative for suboptimal strategies.
    pub gap: f64,
    pub standard_error: f64,
    pub flagged_fraction: f64,
}

/// Full verification summary.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub supermartingale_gaps: Vec<GapEntry>,
    /// |formula value minus Monte Carlo| in standard-error units for the
    /// first strategy, by convention the computed optimum.
    pub value_consistency: f64,
    pub bmo_constant_estimate: f64,
    pub positivity_violations: usize,
}

/// Formula-vs-simulation comparison at time zero.
#[derive(Debug, Clone, Copy)]
pub struct ValueConsistency {
    pub formula_value: f64,
    pub estimate: ValueEstimate,
    /// Absolute discrepancy in standard-error units.
    pub se_units: f64,
}

fn dispatch_estimate(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    strategy: &StrategyRule,
    utility: UtilitySpec,
    x0: f64,
    drivers: &dyn Drivers,
) -> Result<ValueEstimate> {
    match utility {
        UtilitySpec::Exponential { delta } => {
            estimate_value_exponential(scenario, mortality, contract, strategy, delta, x0, drivers)
        }
        UtilitySpec::Power { kappa } => {
            estimate_value_power(scenario, mortality, contract, strategy, kappa, x0, drivers)
        }
    }
}

fn se_units(gap: f64, se: f64) -> f64 {
    if se > 0.0 {
        gap.abs() / se
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Compares the theorem value with the simulated objective at the strategy.
pub fn value_consistency(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    utility: UtilitySpec,
    solution: &BsdeSolution,
    strategy: &StrategyRule,
    x0: f64,
    drivers: &dyn Drivers,
) -> Result<ValueConsistency> {
    let formula_value = value_formula(utility, x0, solution.y0());
    let estimate =
        dispatch_estimate(scenario, mortality, contract, strategy, utility, x0, drivers)?;
    Ok(ValueConsistency {
        formula_value,
        estimate,
        se_units: se_units(estimate.mean - formula_value, estimate.standard_error),
    })
}

/// Quadratic-variation diagnostic of the strategy's martingale exposure.
#[derive(Debug, Clone, Copy)]
pub struct BmoDiagnostics {
    /// Sup over nodes of the mean remaining quadratic variation.
    pub bmo_constant_estimate: f64,
    /// Portfolio jump exposures at or below -1 across all path-node-atom
    /// triples; must be zero for admissible strategies.
    pub positivity_violations: usize,
}

/// Empirical bounded-mean-oscillation surrogate along simulated paths.
pub fn bmo_diagnostics(
    scenario: &MarketScenario,
    strategy: &StrategyRule,
    x0: f64,
    drivers: &dyn Drivers,
) -> Result<BmoDiagnostics> {
    let grid = drivers.grid();
    let dt = grid.dt();
    let n = grid.n_nodes();
    let tables = build_tables(scenario, grid)?;
    let wealth = match strategy.mode {
        ControlMode::Absolute => simulate_wealth(scenario, strategy, drivers, x0, &ZeroFeedback)?,
        ControlMode::Fractional => {
            simulate_wealth_power_logform(scenario, strategy, drivers, x0, &ZeroFeedback)?
        }
    };
    let n_paths = wealth.x.len();

    let per_path: Vec<(Vec<f64>, usize)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut qv_step = vec![0.0f64; n - 1];
            let mut violations = 0usize;
            for i in 0..n - 1 {
                let co = &tables.coeffs[i];
                let u = strategy.controls_at(i, grid.node(i), wealth.x[p][i], 0.0);
                let loads = co.portfolio_loadings(u.portfolio);
                let mut q: f64 = loads.iter().map(|l| l * l).sum();
                for (a, &w) in co.weights.iter().enumerate() {
                    if w > 0.0 {
                        let expo = co.portfolio_jump(u.portfolio, a);
                        if expo <= -1.0 {
                            violations += 1;
                        }
                        q += w * expo * expo;
                    }
                }
                qv_step[i] = q * dt;
            }
            (qv_step, violations)
        })
        .collect();

    // Mean remaining quadratic variation from each node, then sup.
    let mut estimate = 0.0f64;
    for i in 0..n.saturating_sub(1) {
        let mean_remaining = per_path
            .iter()
            .map(|(qv, _)| qv[i..].iter().sum::<f64>())
            .sum::<f64>()
            / n_paths as f64;
        estimate = estimate.max(mean_remaining);
    }
    let positivity_violations = per_path.iter().map(|(_, v)| v).sum();
    Ok(BmoDiagnostics { bmo_constant_estimate: estimate, positivity_violations })
}

/// Estimates the super-martingale gap of each strategy on common random
/// numbers; the first strategy also feeds the value-consistency figure and
/// the quadratic-variation diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn supermartingale_check(
    scenario: &MarketScenario,
    mortality: &MortalityCurve,
    contract: &InsuranceContract,
    utility: UtilitySpec,
    solution: &BsdeSolution,
    strategies: &[StrategyRule],
    x0: f64,
    drivers: &dyn Drivers,
) -> Result<VerificationReport> {
    if strategies.is_empty() {
        return Err(Error::InvalidInput("at least one strategy required".into()));
    }
    let formula = value_formula(utility, x0, solution.y0());
    let mut gaps = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let est =
            dispatch_estimate(scenario, mortality, contract, strategy, utility, x0, drivers)?;
        gaps.push(GapEntry {
            gap: est.mean - formula,
            standard_error: est.standard_error,
            flagged_fraction: est.flagged_fraction,
        });
    }
    let value_consistency = se_units(gaps[0].gap, gaps[0].standard_error);
    let bmo = bmo_diagnostics(scenario, &strategies[0], x0, drivers)?;
    Ok(VerificationReport {
        supermartingale_gaps: gaps,
        value_consistency,
        bmo_constant_estimate: bmo.bmo_constant_estimate,
        positivity_violations: bmo.positivity_violations,
    })
}
