//! Portfolio accounting: wealth, wealth fractions, trade values and fees.
//!
//! Wealth is the scalar product of prices and held quantities,
//!
//! ```text
//! W = sum_i S_i * q_i,          f_i = S_i * q_i / W,
//! ```
//!
//! and a proportional fee charges `alpha * sum_i |V_i|` on the traded
//! values `V_i = S_i * (q_i_before - q_i_after)` (positive `V_i` means
//! asset `i` was sold). These pure functions are shared by every strategy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for monetary identities; double precision leaves
/// ample headroom at the magnitudes the engine works with.
pub const MONEY_REL_TOL: f64 = 1e-12;

fn check_same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Target wealth fractions: non-negative, summing to one.
///
/// Negative fractions (short positions) are rejected; the self-financing
/// identity and every experiment in this crate assume the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionVector(Vec<f64>);

impl FractionVector {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.is_empty() {
            return Err(Error::Config("fraction vector cannot be empty".into()));
        }
        if let Some(bad) = fractions.iter().find(|f| !f.is_finite() || **f < 0.0 || **f > 1.0) {
            return Err(Error::Domain(format!(
                "wealth fractions must lie in [0, 1], found {bad}"
            )));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > MONEY_REL_TOL {
            return Err(Error::Domain(format!(
                "wealth fractions must sum to 1, got {sum}"
            )));
        }
        Ok(Self(fractions))
    }

    /// Equal split over `n` assets.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("fraction vector cannot be empty".into()));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Proportional transaction fee model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeModel {
    /// Fee rate `alpha` in `[0, 1)` applied to traded value.
    pub alpha: f64,
    /// Charge `alpha * W(0)` when the portfolio is first assembled.
    /// Off by default: the initial allocation is treated as a given.
    pub charge_initial_purchase: bool,
}

impl FeeModel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "fee rate alpha must lie in [0, 1), got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            charge_initial_purchase: false,
        })
    }

    /// A fee-free model.
    pub fn free() -> Self {
        Self {
            alpha: 0.0,
            charge_initial_purchase: false,
        }
    }

    pub fn with_initial_purchase_fee(mut self, charge: bool) -> Self {
        self.charge_initial_purchase = charge;
        self
    }
}

/// Portfolio state at one grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    /// Held quantities per asset; fractional holdings are allowed.
    pub quantities: Vec<f64>,
    /// Grid step `k` this state belongs to.
    pub step_index: usize,
    /// Wealth at the step's prices.
    pub wealth: f64,
    /// Total fees paid so far, including this step.
    pub cumulative_fees: f64,
}

/// The trades a rebalance charged fees on.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeReport {
    /// Traded value per asset, positive when selling.
    pub trade_values: Vec<f64>,
    /// Fee on those trades: `alpha * sum |V_i|`.
    pub total_fee: f64,
}

impl TradeReport {
    pub fn empty(n: usize) -> Self {
        Self {
            trade_values: vec![0.0; n],
            total_fee: 0.0,
        }
    }
}

/// Wealth `W = sum_i S_i * q_i`.
pub fn wealth(prices: &[f64], quantities: &[f64]) -> Result<f64> {
    check_same_len("prices vs quantities", prices.len(), quantities.len())?;
    if prices.is_empty() {
        return Err(Error::Dimension("wealth of an empty portfolio".into()));
    }
    Ok(prices.iter().zip(quantities).map(|(s, q)| s * q).sum())
}

/// Wealth fractions `f_i = S_i * q_i / W`; requires positive wealth.
pub fn fractions(prices: &[f64], quantities: &[f64]) -> Result<FractionVector> {
    let w = wealth(prices, quantities)?;
    if w <= 0.0 {
        return Err(Error::Domain(format!(
            "wealth fractions are undefined for non-positive wealth {w}"
        )));
    }
    FractionVector::new(
        prices
            .iter()
            .zip(quantities)
            .map(|(s, q)| s * q / w)
            .collect(),
    )
}

/// Per-asset wealth components `W_i = S_i * q_i`.
pub fn wealth_components(prices: &[f64], quantities: &[f64]) -> Result<Vec<f64>> {
    check_same_len("prices vs quantities", prices.len(), quantities.len())?;
    Ok(prices.iter().zip(quantities).map(|(s, q)| s * q).collect())
}

/// Traded values `V_i = S_i * (q_i_before - q_i_after)`; positive = sell.
pub fn trade_values(prices: &[f64], q_before: &[f64], q_after: &[f64]) -> Result<Vec<f64>> {
    check_same_len("prices vs quantities", prices.len(), q_before.len())?;
    check_same_len("old vs new quantities", q_before.len(), q_after.len())?;
    Ok(prices
        .iter()
        .zip(q_before.iter().zip(q_after))
        .map(|(s, (old, new))| s * (old - new))
        .collect())
}

/// Total proportional fee `alpha * sum_i |V_i|`.
pub fn total_fee(trade_values: &[f64], fee: &FeeModel) -> f64 {
    fee.alpha * trade_values.iter().map(|v| v.abs()).sum::<f64>()
}
