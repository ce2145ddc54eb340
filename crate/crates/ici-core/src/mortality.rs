//! Mortality law and life-insurance contract quantities.
//!
//! The hazard rate is a piecewise-constant table, so survival probabilities
//! are exact products of exponentials rather than quadrature output.

use crate::error::{Error, Result};
use crate::piecewise::Piecewise;

/// Instantaneous force of mortality on `[0, T]`.
#[derive(Debug, Clone)]
pub struct MortalityCurve {
    pub hazard: Piecewise,
}

impl MortalityCurve {
    /// Validates a nonnegative bounded hazard table.
    pub fn new(hazard: Piecewise) -> Result<Self> {
        if hazard.min_value() < 0.0 {
            return Err(Error::InvalidInput("hazard rate must be nonnegative".into()));
        }
        Ok(Self { hazard })
    }

    /// Constant hazard on `[0, end]`.
    pub fn constant(rate: f64, end: f64) -> Result<Self> {
        Self::new(Piecewise::constant(rate, end))
    }

    /// Hazard rate at `t`.
    pub fn rate(&self, t: f64) -> Result<f64> {
        self.hazard.value(t)
    }

    /// Exact integrated hazard over `[0, t]`.
    pub fn integrated_hazard(&self, t: f64) -> Result<f64> {
        self.hazard.integral(0.0, t)
    }
}

/// Premium-to-benefit ratio of the instantaneous term-insurance contract.
#[derive(Debug, Clone)]
pub struct InsuranceContract {
    pub premium_ratio: Piecewise,
}

impl InsuranceContract {
    /// Validates a strictly positive bounded ratio table.
    pub fn new(premium_ratio: Piecewise) -> Result<Self> {
        if premium_ratio.min_value() <= 0.0 {
            return Err(Error::InvalidInput(
                "insurance premium ratio must be positive".into(),
            ));
        }
        Ok(Self { premium_ratio })
    }

    /// Constant ratio on `[0, end]`.
    pub fn constant(ratio: f64, end: f64) -> Result<Self> {
        Self::new(Piecewise::constant(ratio, end))
    }

    /// Ratio at `t`.
    pub fn ratio(&self, t: f64) -> Result<f64> {
        self.premium_ratio.value(t)
    }
}

/// Probability of surviving to `t`, `exp` of the exact integrated hazard.
pub fn survival_probability(mort: &MortalityCurve, t: f64) -> Result<f64> {
    Ok((-mort.integrated_hazard(t)?).exp())
}

/// Density of death time at `t`: hazard times survival.
pub fn death_density(mort: &MortalityCurve, t: f64) -> Result<f64> {
    Ok(mort.rate(t)? * survival_probability(mort, t)?)
}

/// Wealth left to the beneficiary when paying premiums at rate `p`:
/// current wealth plus the purchased benefit `p / eta(t)`.
pub fn legacy(x: f64, p: f64, contract: &InsuranceContract, t: f64) -> Result<f64> {
    let eta = contract.ratio(t)?;
    Ok(x + p / eta)
}
