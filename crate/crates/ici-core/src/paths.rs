//! Path simulation: drivers, market assets, and controlled wealth.
//!
//! Driver increments are pure functions of `(seed, path, driver, step)`, so
//! per-path simulation is embarrassingly parallel and bit-reproducible for
//! any thread count. Diffusive updates use one Euler step per interval;
//! jump factors multiply in at the end of the step with their compensator
//! folded into the drift.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::{MarketCoefficients, MarketScenario};
use crate::rng::{CounterRng, Driver};

/// Uniform grid of `steps` intervals on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    /// Validates a positive horizon and at least one step.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::InvalidInput(
                "time grid needs a positive horizon and at least one step".into(),
            ));
        }
        Ok(Self { horizon, steps })
    }

    /// Step width.
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node time `t_i`; the last node is exactly the horizon.
    pub fn node(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    /// Number of intervals.
    pub fn n_steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `steps + 1`.
    pub fn n_nodes(&self) -> usize {
        self.steps + 1
    }

    /// Terminal time.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Read access to driver increments and jump counts per path and step.
pub trait Drivers: Sync {
    /// Number of simulated paths.
    fn n_paths(&self) -> usize;
    /// Underlying time grid.
    fn grid(&self) -> TimeGrid;
    /// Number of jump atoms.
    fn n_atoms(&self) -> usize;
    /// Brownian increment of the given driver over step `i`.
    fn dw(&self, path: usize, driver: Driver, step: usize) -> f64;
    /// Jump count of the given atom over step `i`.
    fn count(&self, path: usize, atom: usize, step: usize) -> u32;
}

/// Lazily evaluated driver paths backed by the counter generator.
///
/// No storage: every increment is recomputed from its key on demand, so any
/// path may be visited in any order on any thread.
#[derive(Debug, Clone)]
pub struct DriverPaths {
    rng: CounterRng,
    grid: TimeGrid,
    n_paths: usize,
    intensities: Vec<f64>,
}

/// Samples all driver paths for the scenario's jump measure.
pub fn simulate_drivers(
    grid: TimeGrid,
    intensities: Vec<f64>,
    seed: u64,
    n_paths: usize,
) -> Result<DriverPaths> {
    if n_paths == 0 {
        return Err(Error::InvalidInput("at least one path required".into()));
    }
    Ok(DriverPaths { rng: CounterRng::new(seed), grid, n_paths, intensities })
}

impl Drivers for DriverPaths {
    fn n_paths(&self) -> usize {
        self.n_paths
    }

    fn grid(&self) -> TimeGrid {
        self.grid
    }

    fn n_atoms(&self) -> usize {
        self.intensities.len()
    }

    fn dw(&self, path: usize, driver: Driver, step: usize) -> f64 {
        self.grid.dt().sqrt() * self.rng.normal(path as u64, driver, step as u64)
    }

    fn count(&self, path: usize, atom: usize, step: usize) -> u32 {
        let mean = self.intensities[atom] * self.grid.dt();
        self.rng
            .poisson(path as u64, Driver::JumpAtom(atom), step as u64, mean)
    }
}

const BROWNIANS: [Driver; 4] = [
    Driver::RealCurve,
    Driver::NominalCurve,
    Driver::Inflation,
    Driver::Risky,
];

fn brownian_slot(driver: Driver) -> usize {
    match driver {
        Driver::RealCurve => 0,
        Driver::NominalCurve => 1,
        Driver::Inflation => 2,
        Driver::Risky => 3,
        Driver::JumpAtom(_) => panic!("jump streams are not Brownian drivers"),
    }
}

/// Driver paths stored in memory, either copied from another source or
/// aggregated onto a coarser grid for step-refinement studies.
#[derive(Debug, Clone)]
pub struct MaterializedDrivers {
    grid: TimeGrid,
    /// Indexed `[brownian][path][step]`.
    dw: Vec<Vec<Vec<f64>>>,
    /// Indexed `[atom][path][step]`.
    counts: Vec<Vec<Vec<u32>>>,
}

impl MaterializedDrivers {
    /// Copies every increment of the source into memory.
    pub fn from_drivers(src: &dyn Drivers) -> Self {
        Self::aggregate(src, 1).expect("factor 1 always divides the grid")
    }

    /// Sums consecutive increments in groups of `factor`, producing the same
    /// randomness on a grid `factor` times coarser. The source step count
    /// must be divisible by `factor`.
    pub fn aggregate(src: &dyn Drivers, factor: usize) -> Result<Self> {
        let fine = src.grid();
        if factor == 0 || fine.n_steps() % factor != 0 {
            return Err(Error::InvalidInput(
                "aggregation factor must divide the step count".into(),
            ));
        }
        let steps = fine.n_steps() / factor;
        let grid = TimeGrid::new(fine.horizon(), steps)?;
        let n_paths = src.n_paths();
        let dw = BROWNIANS
            .iter()
            .map(|&d| {
                (0..n_paths)
                    .map(|p| {
                        (0..steps)
                            .map(|i| {
                                (0..factor).map(|k| src.dw(p, d, i * factor + k)).sum()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let counts = (0..src.n_atoms())
            .map(|z| {
                (0..n_paths)
                    .map(|p| {
                        (0..steps)
                            .map(|i| {
                                (0..factor).map(|k| src.count(p, z, i * factor + k)).sum()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { grid, dw, counts })
    }
}

impl Drivers for MaterializedDrivers {
    fn n_paths(&self) -> usize {
        self.dw[0].len()
    }

    fn grid(&self) -> TimeGrid {
        self.grid
    }

    fn n_atoms(&self) -> usize {
        self.counts.len()
    }

    fn dw(&self, path: usize, driver: Driver, step: usize) -> f64 {
        self.dw[brownian_slot(driver)][path][step]
    }

    fn count(&self, path: usize, atom: usize, step: usize) -> u32 {
        self.counts[atom][path][step]
    }
}

/// Whether portfolio, consumption and insurance controls are money amounts
/// or fractions of wealth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Absolute,
    Fractional,
}

/// Compact admissible boxes for the three control groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBoxes {
    /// Per-coordinate `[lo, hi]` for the portfolio 3-vector.
    pub portfolio: [[f64; 2]; 3],
    /// `[lo, hi]` for consumption.
    pub consumption: [f64; 2],
    /// `[lo, hi]` for the insurance control.
    pub insurance: [f64; 2],
}

impl ControlBoxes {
    /// Validates ordered, finite bounds.
    pub fn new(
        portfolio: [[f64; 2]; 3],
        consumption: [f64; 2],
        insurance: [f64; 2],
    ) -> Result<Self> {
        let ordered = |b: [f64; 2]| b[0].is_finite() && b[1].is_finite() && b[0] <= b[1];
        if !portfolio.iter().all(|&b| ordered(b)) || !ordered(consumption) || !ordered(insurance) {
            return Err(Error::InvalidInput(
                "control boxes need finite ordered bounds".into(),
            ));
        }
        Ok(Self { portfolio, consumption, insurance })
    }

    /// Projects a control point onto the boxes.
    pub fn clamp(&self, point: ControlPoint) -> ControlPoint {
        let mut portfolio = point.portfolio;
        for (v, b) in portfolio.iter_mut().zip(&self.portfolio) {
            *v = v.clamp(b[0], b[1]);
        }
        ControlPoint {
            portfolio,
            consumption: point.consumption.clamp(self.consumption[0], self.consumption[1]),
            insurance: point.insurance.clamp(self.insurance[0], self.insurance[1]),
        }
    }

    /// Projects a portfolio vector onto the portfolio box.
    pub fn clamp_portfolio(&self, mut theta: [f64; 3]) -> [f64; 3] {
        for (v, b) in theta.iter_mut().zip(&self.portfolio) {
            *v = v.clamp(b[0], b[1]);
        }
        theta
    }
}

/// One evaluation of a strategy: portfolio vector plus the consumption and
/// insurance scalars (money amounts or fractions depending on the mode).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    pub portfolio: [f64; 3],
    pub consumption: f64,
    pub insurance: f64,
}

impl ControlPoint {
    /// All-zero controls.
    pub fn zero() -> Self {
        Self { portfolio: [0.0; 3], consumption: 0.0, insurance: 0.0 }
    }
}

type RuleFn = dyn Fn(usize, f64, f64, f64) -> ControlPoint + Send + Sync;

/// Feedback control rule evaluated at `(node, t, x, y)`, with output always
/// projected onto the admissible boxes.
pub struct StrategyRule {
    pub mode: ControlMode,
    pub boxes: ControlBoxes,
    rule: Box<RuleFn>,
}

impl StrategyRule {
    /// Rule from a feedback closure.
    pub fn feedback(
        mode: ControlMode,
        boxes: ControlBoxes,
        rule: impl Fn(usize, f64, f64, f64) -> ControlPoint + Send + Sync + 'static,
    ) -> Self {
        Self { mode, boxes, rule: Box::new(rule) }
    }

    /// Constant rule.
    pub fn constant(mode: ControlMode, boxes: ControlBoxes, point: ControlPoint) -> Self {
        Self::feedback(mode, boxes, move |_, _, _, _| point)
    }

    /// Controls at a node, clamped into the boxes.
    pub fn controls_at(&self, node: usize, t: f64, x: f64, y: f64) -> ControlPoint {
        self.boxes.clamp((self.rule)(node, t, x, y))
    }
}

impl std::fmt::Debug for StrategyRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StrategyRule")
            .field("mode", &self.mode)
            .field("boxes", &self.boxes)
            .finish()
    }
}

/// Backward-solution feedback supplying `y` to wealth simulation.
pub trait YFeedback: Sync {
    /// Value of the backward component at a node given current wealth.
    fn y_at(&self, node: usize, x: f64) -> f64;
}

/// Constant-zero feedback for strategies that ignore `y`.
pub struct ZeroFeedback;

impl YFeedback for ZeroFeedback {
    fn y_at(&self, _node: usize, _x: f64) -> f64 {
        0.0
    }
}

/// Precomputed per-node tables used by every path.
#[derive(Debug, Clone)]
pub struct SimulationTables {
    pub grid: TimeGrid,
    /// Coefficients at each node.
    pub coeffs: Vec<MarketCoefficients>,
    /// Riskless real account `exp` of the exact rate integral, per node.
    pub bank_real: Vec<f64>,
    /// Riskless nominal account, per node.
    pub bank_nominal: Vec<f64>,
    pub initial_index: f64,
    pub initial_price: f64,
}

/// Evaluates every node table once so path loops touch no curve math.
pub fn build_tables(scenario: &MarketScenario, grid: TimeGrid) -> Result<SimulationTables> {
    if grid.horizon() > scenario.horizon {
        return Err(Error::InvalidInput(
            "grid horizon exceeds the scenario horizon".into(),
        ));
    }
    let mut coeffs = Vec::with_capacity(grid.n_nodes());
    let mut bank_real = Vec::with_capacity(grid.n_nodes());
    let mut bank_nominal = Vec::with_capacity(grid.n_nodes());
    for i in 0..grid.n_nodes() {
        let t = grid.node(i);
        coeffs.push(scenario.coefficients_at(t)?);
        bank_real.push(scenario.real_curve.rate_integral(t)?.exp());
        bank_nominal.push(scenario.nominal_curve.rate_integral(t)?.exp());
    }
    Ok(SimulationTables {
        grid,
        coeffs,
        bank_real,
        bank_nominal,
        initial_index: scenario.inflation.initial_index,
        initial_price: scenario.risky.initial_price,
    })
}

/// All simulated series of one path, one value per node.
#[derive(Debug, Clone)]
pub struct MarketPathSingle {
    /// Consumer price index.
    pub index: Vec<f64>,
    /// Real zero-coupon bond.
    pub real_bond: Vec<f64>,
    /// Nominal zero-coupon bond.
    pub nominal_bond: Vec<f64>,
    /// Inflation-linked bond simulated from its own dynamics.
    pub linked_bond_direct: Vec<f64>,
    /// Inflation-linked bond as the product of index and real bond.
    pub linked_bond_product: Vec<f64>,
    /// Riskless real account.
    pub bank_real: Vec<f64>,
    /// Riskless nominal account.
    pub bank_nominal: Vec<f64>,
    /// Inflation-linked account simulated from its own dynamics.
    pub linked_bank_direct: Vec<f64>,
    /// Inflation-linked account as the product of index and real account.
    pub linked_bank_product: Vec<f64>,
    /// Risky asset.
    pub risky: Vec<f64>,
}

/// One multiplicative Euler step: diffusive bracket with compensated drift,
/// then one jump factor per event.
fn multiplicative_step(
    level: f64,
    drift: f64,
    diffusion: f64,
    jump_loadings: &[f64],
    weights: &[f64],
    counts: &[u32],
    dt: f64,
    label: &str,
) -> Result<f64> {
    let compensator: f64 = jump_loadings
        .iter()
        .zip(weights)
        .map(|(g, w)| g * w)
        .sum();
    let mut next = level * (1.0 + (drift - compensator) * dt + diffusion);
    for (g, &n) in jump_loadings.iter().zip(counts) {
        if n > 0 {
            if *g <= -1.0 {
                return Err(Error::JumpFactorTooSmall(format!("{label}: loading {g}")));
            }
            next *= (1.0 + g).powi(n as i32);
        }
    }
    if next <= 0.0 {
        return Err(Error::NonpositiveState(format!("{label} reached {next}")));
    }
    Ok(next)
}

/// Simulates every market series for one path.
pub fn simulate_market_path(
    tables: &SimulationTables,
    drivers: &dyn Drivers,
    path: usize,
) -> Result<MarketPathSingle> {
    let grid = tables.grid;
    let n = grid.n_nodes();
    let dt = grid.dt();
    let n_atoms = drivers.n_atoms();

    let mut out = MarketPathSingle {
        index: Vec::with_capacity(n),
        real_bond: Vec::with_capacity(n),
        nominal_bond: Vec::with_capacity(n),
        linked_bond_direct: Vec::with_capacity(n),
        linked_bond_product: Vec::with_capacity(n),
        bank_real: tables.bank_real.clone(),
        bank_nominal: tables.bank_nominal.clone(),
        linked_bank_direct: Vec::with_capacity(n),
        linked_bank_product: Vec::with_capacity(n),
        risky: Vec::with_capacity(n),
    };

    let mut index = tables.initial_index;
    let mut real_bond = 1.0;
    let mut nominal_bond = 1.0;
    let mut linked_bond = tables.initial_index;
    let mut linked_bank = tables.initial_index;
    let mut risky = tables.initial_price;

    let mut counts = vec![0u32; n_atoms];
    for i in 0..n {
        out.index.push(index);
        out.real_bond.push(real_bond);
        out.nominal_bond.push(nominal_bond);
        out.linked_bond_direct.push(linked_bond);
        out.linked_bond_product.push(index * real_bond);
        out.linked_bank_direct.push(linked_bank);
        out.linked_bank_product.push(index * tables.bank_real[i]);
        out.risky.push(risky);
        if i + 1 == n {
            break;
        }

        let co = &tables.coeffs[i];
        let dwr = drivers.dw(path, Driver::RealCurve, i);
        let dwn = drivers.dw(path, Driver::NominalCurve, i);
        let dwi = drivers.dw(path, Driver::Inflation, i);
        let dws = drivers.dw(path, Driver::Risky, i);
        for (z, c) in counts.iter_mut().enumerate() {
            *c = drivers.count(path, z, i);
        }

        index = multiplicative_step(
            index,
            co.mu_i,
            co.sigma_i * dwi,
            &co.gamma_i,
            &co.weights,
            &counts,
            dt,
            "price index",
        )?;
        real_bond = multiplicative_step(
            real_bond,
            co.real_bond.a,
            co.real_bond.b * dwr,
            &co.real_bond.c,
            &co.weights,
            &counts,
            dt,
            "real bond",
        )?;
        nominal_bond = multiplicative_step(
            nominal_bond,
            co.nominal_bond.a,
            co.nominal_bond.b * dwn,
            &co.nominal_bond.c,
            &co.weights,
            &counts,
            dt,
            "nominal bond",
        )?;
        linked_bond = multiplicative_step(
            linked_bond,
            co.a_tilde,
            co.real_bond.b * dwr + co.sigma_i * dwi,
            &co.c_tilde,
            &co.weights,
            &counts,
            dt,
            "inflation-linked bond",
        )?;
        linked_bank = multiplicative_step(
            linked_bank,
            co.r_real + co.mu_i,
            co.sigma_i * dwi,
            &co.gamma_i,
            &co.weights,
            &counts,
            dt,
            "inflation-linked account",
        )?;
        risky = multiplicative_step(
            risky,
            co.mu_s,
            co.sigma_s * dws,
            &co.gamma_s,
            &co.weights,
            &counts,
            dt,
            "risky asset",
        )?;
    }
    Ok(out)
}

/// Materialized market paths, one entry per path.
#[derive(Debug, Clone)]
pub struct MarketPaths {
    pub paths: Vec<MarketPathSingle>,
}

/// Simulates all market series for every path in parallel.
pub fn simulate_market(scenario: &MarketScenario, drivers: &dyn Drivers) -> Result<MarketPaths> {
    let tables = build_tables(scenario, drivers.grid())?;
    let paths = (0..drivers.n_paths())
        .into_par_iter()
        .map(|p| simulate_market_path(&tables, drivers, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(MarketPaths { paths })
}

/// One wealth path with its bankruptcy flag.
#[derive(Debug, Clone)]
pub struct WealthPathSingle {
    pub x: Vec<f64>,
    /// Set at the first node with negative wealth; the path is frozen there.
    pub bankrupt: bool,
}

/// Materialized wealth paths.
#[derive(Debug, Clone)]
pub struct WealthPath {
    /// Indexed `[path][node]`.
    pub x: Vec<Vec<f64>>,
    pub bankrupt: Vec<bool>,
}

impl WealthPath {
    /// Fraction of bankruptcy-flagged paths.
    pub fn flagged_fraction(&self) -> f64 {
        if self.bankrupt.is_empty() {
            0.0
        } else {
            self.bankrupt.iter().filter(|&&b| b).count() as f64 / self.bankrupt.len() as f64
        }
    }
}

/// Simulates one controlled wealth path with an Euler scheme.
///
/// Absolute mode updates wealth additively; fractional mode updates it
/// multiplicatively. In absolute mode the path is frozen and flagged at its
/// first negative node. Fractional mode requires every portfolio jump
/// factor to stay above -1.
pub fn simulate_wealth_path(
    tables: &SimulationTables,
    strategy: &StrategyRule,
    drivers: &dyn Drivers,
    path: usize,
    x0: f64,
    feedback: &dyn YFeedback,
) -> Result<WealthPathSingle> {
    let grid = tables.grid;
    let dt = grid.dt();
    let n_atoms = drivers.n_atoms();
    let mut x = Vec::with_capacity(grid.n_nodes());
    let mut level = x0;
    let mut bankrupt = false;
    let mut counts = vec![0u32; n_atoms];

    for i in 0..grid.n_nodes() {
        x.push(level);
        if i + 1 == grid.n_nodes() {
            break;
        }
        if bankrupt {
            continue;
        }
        let t = grid.node(i);
        let co = &tables.coeffs[i];
        let y = feedback.y_at(i, level);
        let u = strategy.controls_at(i, t, level, y);
        let mu_hat = co.mu_hat();
        let excess: f64 = u.portfolio.iter().zip(&mu_hat).map(|(a, m)| a * m).sum();
        let loads = co.portfolio_loadings(u.portfolio);
        let dwr = drivers.dw(path, Driver::RealCurve, i);
        let dwi = drivers.dw(path, Driver::Inflation, i);
        let dws = drivers.dw(path, Driver::Risky, i);
        let noise = loads[0] * dwr + loads[1] * dwi + loads[2] * dws;
        for (z, c) in counts.iter_mut().enumerate() {
            *c = drivers.count(path, z, i);
        }
        let mut compensator = 0.0;
        for (z, &w) in co.weights.iter().enumerate() {
            compensator += co.portfolio_jump(u.portfolio, z) * w;
        }

        match strategy.mode {
            ControlMode::Absolute => {
                let drift =
                    co.r_real * level + excess - u.consumption - u.insurance - compensator;
                let mut next = level + drift * dt + noise;
                for (z, &n) in counts.iter().enumerate() {
                    if n > 0 {
                        next += co.portfolio_jump(u.portfolio, z) * n as f64;
                    }
                }
                if next < 0.0 {
                    bankrupt = true;
                }
                level = next;
            }
            ControlMode::Fractional => {
                for z in 0..n_atoms {
                    if co.weights[z] > 0.0 && 1.0 + co.portfolio_jump(u.portfolio, z) <= 0.0 {
                        return Err(Error::JumpFactorTooSmall(format!(
                            "portfolio jump exposure at atom {z}"
                        )));
                    }
                }
                let drift =
                    co.r_real + excess - u.consumption - u.insurance - compensator;
                let mut next = level * (1.0 + drift * dt + noise);
                for (z, &n) in counts.iter().enumerate() {
                    if n > 0 {
                        next *= (1.0 + co.portfolio_jump(u.portfolio, z)).powi(n as i32);
                    }
                }
                if next <= 0.0 {
                    return Err(Error::NonpositiveState(format!(
                        "fractional wealth reached {next}"
                    )));
                }
                level = next;
            }
        }
    }
    Ok(WealthPathSingle { x, bankrupt })
}

/// Simulates all wealth paths in parallel.
pub fn simulate_wealth(
    scenario: &MarketScenario,
    strategy: &StrategyRule,
    drivers: &dyn Drivers,
    x0: f64,
    feedback: &dyn YFeedback,
) -> Result<WealthPath> {
    let tables = build_tables(scenario, drivers.grid())?;
    let singles = (0..drivers.n_paths())
        .into_par_iter()
        .map(|p| simulate_wealth_path(&tables, strategy, drivers, p, x0, feedback))
        .collect::<Result<Vec<_>>>()?;
    let bankrupt = singles.iter().map(|s| s.bankrupt).collect();
    Ok(WealthPath { x: singles.into_iter().map(|s| s.x).collect(), bankrupt })
}

/// Simulates one fractional-strategy wealth path in log form.
///
/// The log increment carries the exact quadratic compensation of the
/// diffusion and one `ln(1 + jump exposure)` per event, so the path is
/// positive by construction.
pub fn simulate_wealth_power_logform_path(
    tables: &SimulationTables,
    strategy: &StrategyRule,
    drivers: &dyn Drivers,
    path: usize,
    x0: f64,
    feedback: &dyn YFeedback,
) -> Result<WealthPathSingle> {
    if strategy.mode != ControlMode::Fractional {
        return Err(Error::InvalidInput(
            "log-form simulation needs a fractional strategy".into(),
        ));
    }
    if !(x0 > 0.0) {
        return Err(Error::InvalidInput("initial wealth must be positive".into()));
    }
    let grid = tables.grid;
    let dt = grid.dt();
    let n_atoms = drivers.n_atoms();
    let mut x = Vec::with_capacity(grid.n_nodes());
    let mut log_x = x0.ln();

    for i in 0..grid.n_nodes() {
        x.push(log_x.exp());
        if i + 1 == grid.n_nodes() {
            break;
        }
        let t = grid.node(i);
        let co = &tables.coeffs[i];
        let level = x[i];
        let y = feedback.y_at(i, level);
        let u = strategy.controls_at(i, t, level, y);
        let mu_hat = co.mu_hat();
        let excess: f64 = u.portfolio.iter().zip(&mu_hat).map(|(a, m)| a * m).sum();
        let loads = co.portfolio_loadings(u.portfolio);
        let quad = loads.iter().map(|l| l * l).sum::<f64>();
        let mut compensator = 0.0;
        for (z, &w) in co.weights.iter().enumerate() {
            let expo = co.portfolio_jump(u.portfolio, z);
            if w > 0.0 && 1.0 + expo <= 0.0 {
                return Err(Error::JumpFactorTooSmall(format!(
                    "portfolio jump exposure at atom {z}"
                )));
            }
            compensator += expo * w;
        }
        let noise = loads[0] * drivers.dw(path, Driver::RealCurve, i)
            + loads[1] * drivers.dw(path, Driver::Inflation, i)
            + loads[2] * drivers.dw(path, Driver::Risky, i);
        let mut dlog = (co.r_real + excess - u.consumption - u.insurance
            - 0.5 * quad
            - compensator)
            * dt
            + noise;
        for z in 0..n_atoms {
            let n = drivers.count(path, z, i);
            if n > 0 {
                let expo = co.portfolio_jump(u.portfolio, z);
                if 1.0 + expo <= 0.0 {
                    return Err(Error::JumpFactorTooSmall(format!(
                        "portfolio jump exposure at atom {z}"
                    )));
                }
                dlog += n as f64 * (1.0 + expo).ln();
            }
        }
        log_x += dlog;
    }
    Ok(WealthPathSingle { x, bankrupt: false })
}

/// Simulates all log-form wealth paths in parallel.
pub fn simulate_wealth_power_logform(
    scenario: &MarketScenario,
    strategy: &StrategyRule,
    drivers: &dyn Drivers,
    x0: f64,
    feedback: &dyn YFeedback,
) -> Result<WealthPath> {
    let tables = build_tables(scenario, drivers.grid())?;
    let singles = (0..drivers.n_paths())
        .into_par_iter()
        .map(|p| simulate_wealth_power_logform_path(&tables, strategy, drivers, p, x0, feedback))
        .collect::<Result<Vec<_>>>()?;
    let bankrupt = singles.iter().map(|s| s.bankrupt).collect();
    Ok(WealthPath { x: singles.into_iter().map(|s| s.x).collect(), bankrupt })
}

/// Path of the stochastic exponential of a local martingale given its
/// continuous increments, predictable quadratic-variation increments, and
/// jump sizes per step.
///
/// The log path accumulates the continuous part minus half its quadratic
/// variation plus `ln(1 + jump)` per jump, so positivity holds whenever all
/// jumps exceed -1.
pub fn stochastic_exponential(
    continuous: &[f64],
    quadratic_variation: &[f64],
    jumps: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if continuous.len() != quadratic_variation.len() || continuous.len() != jumps.len() {
        return Err(Error::InvalidInput(
            "increment arrays must share one length".into(),
        ));
    }
    let mut out = Vec::with_capacity(continuous.len() + 1);
    let mut log_e = 0.0;
    out.push(1.0);
    for ((dm, dq), step_jumps) in continuous.iter().zip(quadratic_variation).zip(jumps) {
        if *dq < 0.0 {
            return Err(Error::InvalidInput(
                "quadratic variation increments must be nonnegative".into(),
            ));
        }
        log_e += dm - 0.5 * dq;
        for j in step_jumps {
            if *j <= -1.0 {
                return Err(Error::JumpFactorTooSmall(format!("martingale jump {j}")));
            }
            log_e += (1.0 + j).ln();
        }
        out.push(log_e.exp());
    }
    Ok(out)
}
