//! Market primitives and derived coefficient bundles.
//!
//! The economy has two forward-rate curves (real and nominal), a consumer
//! price index, a risky asset, and a finite-activity jump measure shared by
//! all of them. Everything is driven by deterministic piecewise-constant
//! tables, so derived quantities (bond loadings, real-bond drift, market
//! prices of risk) are exact finite sums.

use crate::error::{Error, Result};
use crate::piecewise::{Piecewise, PiecewiseSurface};

/// One jump mark with its arrival intensity per unit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpAtom {
    pub mark: f64,
    pub intensity: f64,
}

/// Finite-activity jump measure given by finitely many atoms.
///
/// An empty atom list encodes a pure-diffusion market.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMeasure {
    pub atoms: Vec<JumpAtom>,
}

impl JumpMeasure {
    /// Validates pairwise-distinct marks and nonnegative finite intensities.
    pub fn new(atoms: Vec<JumpAtom>) -> Result<Self> {
        for (i, a) in atoms.iter().enumerate() {
            if !a.mark.is_finite() || !a.intensity.is_finite() || a.intensity < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "jump atom {i} needs a finite mark and a nonnegative intensity"
                )));
            }
            for b in &atoms[..i] {
                if b.mark == a.mark {
                    return Err(Error::InvalidInput(format!(
                        "duplicate jump mark {}",
                        a.mark
                    )));
                }
            }
        }
        Ok(Self { atoms })
    }

    /// Pure-diffusion market.
    pub fn none() -> Self {
        Self { atoms: Vec::new() }
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    /// True when the measure is zero.
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total arrival intensity.
    pub fn total_intensity(&self) -> f64 {
        self.atoms.iter().map(|a| a.intensity).sum()
    }

    /// Intensities in atom order.
    pub fn intensities(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.intensity).collect()
    }
}

/// Forward-rate curve with drift, diffusion and per-atom jump loadings.
///
/// `initial_forward` maps maturity to the time-zero forward rate. The
/// surfaces map `(t, s)` with `t` calendar time and `s` running maturity.
/// `gamma` holds one surface per jump atom, in atom order.
#[derive(Debug, Clone)]
pub struct HjmCurve {
    pub initial_forward: Piecewise,
    pub alpha: PiecewiseSurface,
    pub sigma: PiecewiseSurface,
    pub gamma: Vec<PiecewiseSurface>,
}

impl HjmCurve {
    /// Short rate at `t`: the initial forward at `t` plus the accumulated
    /// drift of the forward curve. In the deterministic-coefficient regime
    /// this is the model's short rate.
    pub fn spot_rate(&self, t: f64) -> Result<f64> {
        Ok(self.initial_forward.value(t)? + self.alpha.integral_t(t, 0.0, t)?)
    }

    /// Exact integral of the short rate over `[0, t]`.
    pub fn rate_integral(&self, t: f64) -> Result<f64> {
        Ok(self.initial_forward.integral(0.0, t)? + self.alpha.integral_triangle(t)?)
    }
}

/// Consumer price index model with drift, volatility and jump loadings per
/// atom (`gamma` in atom order; each value must stay above -1).
#[derive(Debug, Clone)]
pub struct InflationModel {
    pub initial_index: f64,
    pub mu: Piecewise,
    pub sigma: Piecewise,
    pub gamma: Vec<Piecewise>,
}

/// Risky asset model; same layout as the index.
#[derive(Debug, Clone)]
pub struct RiskyAssetModel {
    pub initial_price: f64,
    pub mu: Piecewise,
    pub sigma: Piecewise,
    pub gamma: Vec<Piecewise>,
}

/// Drift, diffusion loading and per-atom jump loadings of a zero-coupon
/// bond at one evaluation time, together with the short rate there.
#[derive(Debug, Clone, PartialEq)]
pub struct BondCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: Vec<f64>,
    pub spot_rate: f64,
}

/// Drift and jump loadings of the inflation-linked real bond.
#[derive(Debug, Clone, PartialEq)]
pub struct RealBondDynamics {
    pub a_tilde: f64,
    pub c_tilde: Vec<f64>,
}

/// The three market prices of risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketPricesOfRisk {
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
}

impl MarketPricesOfRisk {
    /// Prices as an array in driver order.
    pub fn as_array(&self) -> [f64; 3] {
        [self.phi1, self.phi2, self.phi3]
    }
}

/// Drift, diffusion loading and jump loadings of a bond with the given
/// maturity, read off the curve at time `t`.
///
/// The loadings are the negated maturity integrals of the curve tables and
/// the drift restores the short rate plus the convexity and jump
/// compensation terms. Maturity integrals are exact piecewise sums.
pub fn bond_loading_coefficients(
    curve: &HjmCurve,
    jumps: &JumpMeasure,
    t: f64,
    maturity: f64,
) -> Result<BondCoefficients> {
    if t > maturity {
        return Err(Error::InvalidInput(format!(
            "evaluation time {t} past bond maturity {maturity}"
        )));
    }
    if curve.gamma.len() != jumps.len() {
        return Err(Error::InvalidInput(
            "curve jump loadings must match the atom count".into(),
        ));
    }
    let b = -curve.sigma.integral_s(t, t, maturity)?;
    let mut c = Vec::with_capacity(jumps.len());
    for g in &curve.gamma {
        c.push(-g.integral_s(t, t, maturity)?);
    }
    let spot_rate = curve.spot_rate(t)?;
    let alpha_int = curve.alpha.integral_s(t, t, maturity)?;
    let jump_comp: f64 = c
        .iter()
        .zip(&jumps.atoms)
        .map(|(ci, atom)| ci * atom.intensity)
        .sum();
    let a = spot_rate - alpha_int + 0.5 * b * b - jump_comp;
    Ok(BondCoefficients { a, b, c, spot_rate })
}

/// Drift and jump loadings of the index-times-real-bond product.
///
/// The jump loading obeys the multiplicative identity
/// `1 + C = (1 + c_r)(1 + gamma_I)` atom by atom.
pub fn real_bond_dynamics(
    real_bond: &BondCoefficients,
    inflation: &InflationModel,
    jumps: &JumpMeasure,
    t: f64,
) -> Result<RealBondDynamics> {
    if real_bond.c.len() != jumps.len() || inflation.gamma.len() != jumps.len() {
        return Err(Error::InvalidInput(
            "jump loadings must match the atom count".into(),
        ));
    }
    let mu_i = inflation.mu.value(t)?;
    let mut a_tilde = real_bond.a + mu_i;
    let mut c_tilde = Vec::with_capacity(jumps.len());
    for (z, atom) in jumps.atoms.iter().enumerate() {
        let gi = inflation.gamma[z].value(t)?;
        let cr = real_bond.c[z];
        a_tilde += cr * gi * atom.intensity;
        c_tilde.push(cr + gi + cr * gi);
    }
    Ok(RealBondDynamics { a_tilde, c_tilde })
}

/// Divides an excess return by its volatility loading.
///
/// A zero loading with zero excess return is a removable degeneracy and
/// yields zero; a zero loading with nonzero excess return is an arbitrage
/// and is reported as a degenerate market.
fn price_of_risk(excess: f64, loading: f64, label: &str) -> Result<f64> {
    if loading == 0.0 {
        if excess == 0.0 {
            Ok(0.0)
        } else {
            Err(Error::DegenerateMarket(format!(
                "{label}: zero volatility against excess return {excess}"
            )))
        }
    } else {
        Ok(excess / loading)
    }
}

/// Lenient variant used while assembling coefficient tables: a zero loading
/// yields a zero component and a flag telling whether an excess return was
/// dropped.  Simulation never reads the dropped component; control and
/// verification entry points refuse flagged coefficients.
fn price_of_risk_lenient(excess: f64, loading: f64) -> (f64, bool) {
    if loading == 0.0 {
        (0.0, excess != 0.0)
    } else {
        (excess / loading, false)
    }
}

/// Complete market scenario: both curves, index, risky asset, jump measure,
/// discount rate, planning horizon, and the traded bond maturity.
#[derive(Debug, Clone)]
pub struct MarketScenario {
    pub real_curve: HjmCurve,
    pub nominal_curve: HjmCurve,
    pub inflation: InflationModel,
    pub risky: RiskyAssetModel,
    pub jumps: JumpMeasure,
    pub discount: Piecewise,
    pub horizon: f64,
    pub bond_maturity: f64,
}

impl MarketScenario {
    /// Structural checks: positive horizon, bond maturity past the horizon,
    /// jump-loading vectors sized to the atom count, tables covering the
    /// needed time and maturity ranges, positive initial levels.
    pub fn new(
        real_curve: HjmCurve,
        nominal_curve: HjmCurve,
        inflation: InflationModel,
        risky: RiskyAssetModel,
        jumps: JumpMeasure,
        discount: Piecewise,
        horizon: f64,
        bond_maturity: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        if bond_maturity < horizon {
            return Err(Error::InvalidInput(
                "bond maturity must not precede the horizon".into(),
            ));
        }
        let n = jumps.len();
        for (name, len) in [
            ("real curve", real_curve.gamma.len()),
            ("nominal curve", nominal_curve.gamma.len()),
            ("inflation", inflation.gamma.len()),
            ("risky asset", risky.gamma.len()),
        ] {
            if len != n {
                return Err(Error::InvalidInput(format!(
                    "{name} has {len} jump loadings for {n} atoms"
                )));
            }
        }
        if !(inflation.initial_index > 0.0) {
            return Err(Error::InvalidInput("initial index must be positive".into()));
        }
        if !(risky.initial_price > 0.0) {
            return Err(Error::InvalidInput("initial price must be positive".into()));
        }
        if discount.end() < horizon {
            return Err(Error::InvalidInput(
                "discount table must cover the horizon".into(),
            ));
        }
        let scenario = Self {
            real_curve,
            nominal_curve,
            inflation,
            risky,
            jumps,
            discount,
            horizon,
            bond_maturity,
        };
        scenario.check_table_coverage()?;
        Ok(scenario)
    }

    fn check_table_coverage(&self) -> Result<()> {
        for (name, curve) in [("real", &self.real_curve), ("nominal", &self.nominal_curve)] {
            if curve.initial_forward.end() < self.bond_maturity {
                return Err(Error::InvalidInput(format!(
                    "{name} initial forward table must cover the bond maturity"
                )));
            }
            let mut surfaces = vec![&curve.alpha, &curve.sigma];
            surfaces.extend(curve.gamma.iter());
            for s in surfaces {
                // t up to the horizon, maturity up to the bond maturity.
                s.value(self.horizon, self.bond_maturity).map_err(|_| {
                    Error::InvalidInput(format!(
                        "{name} curve table must cover [0, horizon] x [0, bond maturity]"
                    ))
                })?;
            }
        }
        for (name, tables) in [
            ("inflation", {
                let mut v = vec![&self.inflation.mu, &self.inflation.sigma];
                v.extend(self.inflation.gamma.iter());
                v
            }),
            ("risky asset", {
                let mut v = vec![&self.risky.mu, &self.risky.sigma];
                v.extend(self.risky.gamma.iter());
                v
            }),
        ] {
            for t in tables {
                if t.end() < self.horizon {
                    return Err(Error::InvalidInput(format!(
                        "{name} tables must cover the horizon"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Real-bond coefficients at `t` for the traded maturity.
    pub fn real_bond_at(&self, t: f64) -> Result<BondCoefficients> {
        bond_loading_coefficients(&self.real_curve, &self.jumps, t, self.bond_maturity)
    }

    /// Nominal-bond coefficients at `t` for the traded maturity.
    pub fn nominal_bond_at(&self, t: f64) -> Result<BondCoefficients> {
        bond_loading_coefficients(&self.nominal_curve, &self.jumps, t, self.bond_maturity)
    }

    /// Every coefficient the simulators and generators need at one time.
    pub fn coefficients_at(&self, t: f64) -> Result<MarketCoefficients> {
        let real = self.real_bond_at(t)?;
        let nominal = self.nominal_bond_at(t)?;
        let tilde = real_bond_dynamics(&real, &self.inflation, &self.jumps, t)?;
        let mu_i = self.inflation.mu.value(t)?;
        let sigma_i = self.inflation.sigma.value(t)?;
        let mu_s = self.risky.mu.value(t)?;
        let sigma_s = self.risky.sigma.value(t)?;
        let gamma_i: Vec<f64> = self
            .inflation
            .gamma
            .iter()
            .map(|g| g.value(t))
            .collect::<Result<_>>()?;
        let gamma_s: Vec<f64> = self
            .risky
            .gamma
            .iter()
            .map(|g| g.value(t))
            .collect::<Result<_>>()?;
        let (phi1, bad1) = price_of_risk_lenient(tilde.a_tilde - real.spot_rate, real.b);
        let (phi2, bad2) = price_of_risk_lenient(mu_i, sigma_i);
        let (phi3, bad3) = price_of_risk_lenient(mu_s - real.spot_rate, sigma_s);
        let phi = MarketPricesOfRisk { phi1, phi2, phi3 };
        Ok(MarketCoefficients {
            r_real: real.spot_rate,
            r_nominal: nominal.spot_rate,
            real_bond: real,
            nominal_bond: nominal,
            a_tilde: tilde.a_tilde,
            c_tilde: tilde.c_tilde,
            mu_i,
            sigma_i,
            gamma_i,
            mu_s,
            sigma_s,
            gamma_s,
            phi,
            phi_degenerate: bad1 || bad2 || bad3,
            weights: self.jumps.intensities(),
            discount: self.discount.value(t)?,
        })
    }
}

/// Market prices of risk at `t` for the scenario's traded bond maturity.
///
/// Unlike `coefficients_at`, a zero volatility against a nonzero excess
/// return is an error here: there is no finite price of risk to report.
pub fn market_prices_of_risk(scenario: &MarketScenario, t: f64) -> Result<MarketPricesOfRisk> {
    let co = scenario.coefficients_at(t)?;
    if co.phi_degenerate {
        price_of_risk(co.a_tilde - co.r_real, co.real_bond.b, "real bond")?;
        price_of_risk(co.mu_i, co.sigma_i, "price index")?;
        price_of_risk(co.mu_s - co.r_real, co.sigma_s, "risky asset")?;
    }
    Ok(co.phi)
}

/// Snapshot of all model coefficients at one time.
#[derive(Debug, Clone)]
pub struct MarketCoefficients {
    pub r_real: f64,
    pub r_nominal: f64,
    pub real_bond: BondCoefficients,
    pub nominal_bond: BondCoefficients,
    pub a_tilde: f64,
    pub c_tilde: Vec<f64>,
    pub mu_i: f64,
    pub sigma_i: f64,
    pub gamma_i: Vec<f64>,
    pub mu_s: f64,
    pub sigma_s: f64,
    pub gamma_s: Vec<f64>,
    pub phi: MarketPricesOfRisk,
    /// True when some zero volatility faces a nonzero excess return; `phi`
    /// then carries a zero in that slot and must not drive controls.
    pub phi_degenerate: bool,
    pub weights: Vec<f64>,
    pub discount: f64,
}

impl MarketCoefficients {
    /// Number of jump atoms.
    pub fn n_atoms(&self) -> usize {
        self.weights.len()
    }

    /// Excess-return vector of the three traded assets.
    pub fn mu_hat(&self) -> [f64; 3] {
        [
            self.a_tilde - self.r_real,
            self.mu_i,
            self.mu_s - self.r_real,
        ]
    }

    /// Jump-loading vector of the three traded assets at atom `z`.
    pub fn gamma_hat(&self, z: usize) -> [f64; 3] {
        [self.c_tilde[z], self.gamma_i[z], self.gamma_s[z]]
    }

    /// Diffusion loadings of a portfolio `v = (th1*b_r, (th1+th2)*sig_I, th3*sig_S)`.
    pub fn portfolio_loadings(&self, theta: [f64; 3]) -> [f64; 3] {
        [
            theta[0] * self.real_bond.b,
            (theta[0] + theta[1]) * self.sigma_i,
            theta[2] * self.sigma_s,
        ]
    }

    /// Jump exposure of a portfolio at atom `z`.
    pub fn portfolio_jump(&self, theta: [f64; 3], z: usize) -> f64 {
        let g = self.gamma_hat(z);
        theta[0] * g[0] + theta[1] * g[1] + theta[2] * g[2]
    }
}

/// Outcome of scenario validation: hard violations and advisory warnings.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    /// True when no hard violation was found.
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Kink points of the bond loading coefficients as functions of `t`: table
/// breaks of both axes restricted to `[0, horizon]`, plus the endpoints.
fn probe_times(scenario: &MarketScenario) -> Vec<f64> {
    let mut ts = vec![0.0, scenario.horizon];
    let mut push = |b: &[f64]| {
        for &t in b {
            if t > 0.0 && t < scenario.horizon {
                ts.push(t);
            }
        }
    };
    push(scenario.inflation.mu.breaks());
    push(scenario.inflation.sigma.breaks());
    for g in &scenario.inflation.gamma {
        push(g.breaks());
    }
    push(scenario.risky.mu.breaks());
    push(scenario.risky.sigma.breaks());
    for g in &scenario.risky.gamma {
        push(g.breaks());
    }
    // Dense fallback lattice to cover surface kinks.
    let n = 64;
    for i in 1..n {
        ts.push(scenario.horizon * i as f64 / n as f64);
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup();
    ts
}

/// Report-only scenario validation.
///
/// Checks jump loadings above -1 (including the real-bond product loading),
/// bounded tables, finite integrability sums, and flags zero risky-asset or
/// index volatility as warnings since the market prices of risk degenerate
/// there.
pub fn validate_scenario(scenario: &MarketScenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    let jumps = &scenario.jumps;
    for (z, atom) in jumps.atoms.iter().enumerate() {
        if atom.intensity < 0.0 {
            report
                .violations
                .push(format!("atom {z}: negative intensity {}", atom.intensity));
        }
    }
    if !jumps.total_intensity().is_finite() {
        report.violations.push("total jump intensity not finite".into());
    }

    for t in probe_times(scenario) {
        for (z, g) in scenario.inflation.gamma.iter().enumerate() {
            let v = g.value_clamped(t);
            if v <= -1.0 {
                report.violations.push(format!(
                    "index jump loading at atom {z}, t={t}: {v} not greater than -1"
                ));
            }
        }
        for (z, g) in scenario.risky.gamma.iter().enumerate() {
            let v = g.value_clamped(t);
            if v <= -1.0 {
                report.violations.push(format!(
                    "risky jump loading at atom {z}, t={t}: {v} not greater than -1"
                ));
            }
        }
        match scenario.coefficients_at(t) {
            Ok(coeffs) => {
                for (z, &ct) in coeffs.c_tilde.iter().enumerate() {
                    if ct <= -1.0 {
                        report.violations.push(format!(
                            "real-bond product jump loading at atom {z}, t={t}: {ct} not greater than -1"
                        ));
                    }
                }
            }
            Err(Error::DegenerateMarket(_)) => {
                // Degenerate prices of risk are reported once below.
            }
            Err(e) => report.violations.push(format!("coefficients at t={t}: {e}")),
        }
        if scenario.discount.value_clamped(t) < 0.0 {
            report
                .violations
                .push(format!("negative discount rate at t={t}"));
        }
    }

    // Integrability: the boundedness of every table plus finite total
    // intensity makes the drift/variance/jump sums finite; surface tables
    // reject non-finite entries at construction, so only totals remain.
    for (name, curve) in [("real", &scenario.real_curve), ("nominal", &scenario.nominal_curve)] {
        let sum = curve.alpha.sup_abs()
            + curve.sigma.sup_abs().powi(2)
            + curve
                .gamma
                .iter()
                .zip(&jumps.atoms)
                .map(|(g, a)| g.sup_abs().powi(2) * a.intensity)
                .sum::<f64>();
        if !sum.is_finite() {
            report
                .violations
                .push(format!("{name} curve integrability sum not finite"));
        }
    }

    let mut vol_warning = |name: &str, table: &Piecewise| {
        if table.values().iter().any(|&v| v == 0.0) {
            report.warnings.push(format!(
                "{name} volatility vanishes on some piece; the matching price of risk degenerates there"
            ));
        }
    };
    vol_warning("index", &scenario.inflation.sigma);
    vol_warning("risky asset", &scenario.risky.sigma);
    for t in [0.0, 0.5 * scenario.horizon, scenario.horizon] {
        if let Err(Error::DegenerateMarket(msg)) = scenario.coefficients_at(t) {
            report.warnings.push(format!("t={t}: {msg}"));
            break;
        }
    }

    report
}
