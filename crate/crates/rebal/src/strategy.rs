//! Rebalancing strategies and their per-step quantity updates.
//!
//! All strategies share one step skeleton. At step `k` the portfolio is
//! revalued at the new prices with last step's quantities (the *temporary*
//! wealth `W_temp`), then the strategy decides the new quantities:
//!
//! * passive: hold, `q_i(k) = q_i(k-1)`;
//! * balanced: `q_i = f_i (W_temp - F) / S_i`, restoring the target
//!   fractions `f_i` after paying the fee `F`;
//! * periodically balanced: balanced when `k mod m = 0`, passive otherwise;
//! * partially balanced: only a fraction `D` of the balancing trade is
//!   executed,
//!   `q_i = [W_temp_i + D (f_i W_temp - W_temp_i - f_i F)] / S_i`;
//! * combined: the partial update applied every `m`-th step.
//!
//! With `alpha = 0` every update is self-financing: post-trade wealth
//! equals `W_temp` exactly. With fees, balanced steps lose `F` and partial
//! steps lose `D * F` — the partial update rule deducts only the executed
//! share of the fee, which is preserved here as written; the per-step fee
//! ledger records what was actually deducted so the behaviour is
//! auditable.
//!
//! The fee is circular (it depends on the trades, which depend on the
//! fee). [`FeeResolution::SinglePass`] prices the fee off the no-fee trade
//! plan, which is cheap and deterministic and differs from the exact
//! solution only at order `alpha^2`. [`FeeResolution::FixedPoint`] solves
//! `F = alpha D sum_i |d_i + f_i F|` to machine precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::market::{format_float, Market};
use crate::portfolio::{
    fractions, total_fee, wealth, wealth_components, FeeModel, FractionVector, PortfolioState,
    TradeReport,
};

/// How the circular fee equation is resolved on rebalance steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeeResolution {
    /// Fee computed once, from the trades that would restore the targets
    /// with no fee. The default.
    SinglePass,
    /// Iterate the fee map until successive values differ by less than
    /// `tolerance`, then polish to machine precision.
    FixedPoint { tolerance: f64, max_iterations: usize },
}

impl FeeResolution {
    /// The fixed-point mode with its default parameters.
    pub fn fixed_point() -> Self {
        FeeResolution::FixedPoint {
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

impl Default for FeeResolution {
    fn default() -> Self {
        FeeResolution::SinglePass
    }
}

/// Which update rule a strategy applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StrategyKind {
    Passive,
    Balanced,
    /// Balanced every `period`-th step, passive in between.
    PeriodicBalanced { period: u32 },
    /// Fraction `coefficient` of the balancing trade, every step.
    PartialBalanced { coefficient: f64 },
    /// Partial update applied every `period`-th step.
    PeriodicPartial { period: u32, coefficient: f64 },
}

/// A strategy choice plus the fee-resolution mode it runs with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub fee_resolution: FeeResolution,
}

impl StrategySpec {
    pub fn passive() -> Self {
        Self::of(StrategyKind::Passive)
    }

    pub fn balanced() -> Self {
        Self::of(StrategyKind::Balanced)
    }

    pub fn periodic(period: u32) -> Self {
        Self::of(StrategyKind::PeriodicBalanced { period })
    }

    pub fn partial(coefficient: f64) -> Self {
        Self::of(StrategyKind::PartialBalanced { coefficient })
    }

    pub fn combined(period: u32, coefficient: f64) -> Self {
        Self::of(StrategyKind::PeriodicPartial { period, coefficient })
    }

    fn of(kind: StrategyKind) -> Self {
        Self {
            kind,
            fee_resolution: FeeResolution::default(),
        }
    }

    pub fn with_fee_resolution(mut self, resolution: FeeResolution) -> Self {
        self.fee_resolution = resolution;
        self
    }

    /// `period = 1` is accepted and reduces to the fully balanced strategy.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            StrategyKind::PeriodicBalanced { period } | StrategyKind::PeriodicPartial { period, .. }
                if period == 0 =>
            {
                return Err(Error::Config("rebalance period m must be >= 1".into()))
            }
            _ => {}
        }
        match self.kind {
            StrategyKind::PartialBalanced { coefficient }
            | StrategyKind::PeriodicPartial { coefficient, .. }
                if !coefficient.is_finite() || !(0.0..=1.0).contains(&coefficient) =>
            {
                return Err(Error::Config(format!(
                    "partial rebalance coefficient D must lie in [0, 1], got {coefficient}"
                )))
            }
            _ => {}
        }
        if let FeeResolution::FixedPoint {
            tolerance,
            max_iterations,
        } = self.fee_resolution
        {
            if !(tolerance > 0.0) || max_iterations == 0 {
                return Err(Error::Config(
                    "fixed-point fee resolution needs a positive tolerance and at least one iteration"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Stable label used for output file names.
    pub fn label(&self) -> String {
        match self.kind {
            StrategyKind::Passive => "passive".into(),
            StrategyKind::Balanced => "balanced".into(),
            StrategyKind::PeriodicBalanced { period } => format!("periodic_m{period}"),
            StrategyKind::PartialBalanced { coefficient } => format!("partial_d{coefficient}"),
            StrategyKind::PeriodicPartial { period, coefficient } => {
                format!("combined_m{period}_d{coefficient}")
            }
        }
    }
}

impl std::fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// How the portfolio is assembled at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialAllocation {
    /// Start from explicit quantities; targets are the resulting fractions.
    GivenQuantities(Vec<f64>),
    /// Start from a cash amount split by the target fractions.
    GivenWealth { wealth: f64, fractions: FractionVector },
}

/// Wealth and fee ledger of one strategy run along a market.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthTrajectory {
    grid: TimeGrid,
    /// `W(t_0), .., W(t_K)`.
    wealth: Vec<f64>,
    /// Fee deducted at each step; zero at non-rebalance steps.
    fees_paid: Vec<f64>,
    /// Holdings after the final step.
    quantities_final: Vec<f64>,
    /// Total of `fees_paid`, accumulated in step order.
    cumulative_fees: f64,
}

impl WealthTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn wealth(&self) -> &[f64] {
        &self.wealth
    }

    pub fn fees_paid(&self) -> &[f64] {
        &self.fees_paid
    }

    pub fn quantities_final(&self) -> &[f64] {
        &self.quantities_final
    }

    pub fn cumulative_fees(&self) -> f64 {
        self.cumulative_fees
    }

    pub fn initial_wealth(&self) -> f64 {
        self.wealth[0]
    }

    pub fn final_wealth(&self) -> f64 {
        *self.wealth.last().unwrap()
    }

    /// Dump as CSV with header `t,wealth,fee_paid`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,wealth,fee_paid")?;
        for k in 0..self.grid.point_count() {
            writeln!(
                out,
                "{},{},{}",
                format_float(self.grid.time(k)),
                format_float(self.wealth[k]),
                format_float(self.fees_paid[k]),
            )?;
        }
        Ok(())
    }
}

/// Build the starting state and the target fractions.
///
/// `GivenWealth` hits the targets exactly: `q_i(0) = f_i W_0 / S_i(0)`.
/// `GivenQuantities` takes the holdings as they are and derives the
/// targets from them. An initial purchase fee of `alpha * W_0` is deducted
/// first when the fee model asks for it.
pub fn initial_state(
    prices: &[f64],
    alloc: &InitialAllocation,
    fee: &FeeModel,
) -> Result<(PortfolioState, FractionVector)> {
    if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::Domain("initial prices must be positive".into()));
    }
    match alloc {
        InitialAllocation::GivenWealth { wealth: w0, fractions: targets } => {
            if !w0.is_finite() || *w0 <= 0.0 {
                return Err(Error::Config(format!(
                    "initial wealth must be positive, got {w0}"
                )));
            }
            if targets.len() != prices.len() {
                return Err(Error::Dimension(format!(
                    "{} target fractions for {} assets",
                    targets.len(),
                    prices.len()
                )));
            }
            let initial_fee = if fee.charge_initial_purchase {
                fee.alpha * w0
            } else {
                0.0
            };
            let budget = w0 - initial_fee;
            let quantities: Vec<f64> = targets
                .as_slice()
                .iter()
                .zip(prices)
                .map(|(f, s)| f * budget / s)
                .collect();
            let wealth_now = wealth(prices, &quantities)?;
            Ok((
                PortfolioState {
                    quantities,
                    step_index: 0,
                    wealth: wealth_now,
                    cumulative_fees: initial_fee,
                },
                targets.clone(),
            ))
        }
        InitialAllocation::GivenQuantities(q0) => {
            let w0 = wealth(prices, q0)?;
            if w0 <= 0.0 {
                return Err(Error::Config(format!(
                    "given quantities produce non-positive initial wealth {w0}"
                )));
            }
            let targets = fractions(prices, q0)?;
            let (quantities, initial_fee) = if fee.charge_initial_purchase {
                let scale = 1.0 - fee.alpha;
                (q0.iter().map(|q| q * scale).collect(), fee.alpha * w0)
            } else {
                (q0.clone(), 0.0)
            };
            let wealth_now = wealth(prices, &quantities)?;
            Ok((
                PortfolioState {
                    quantities,
                    step_index: 0,
                    wealth: wealth_now,
                    cumulative_fees: initial_fee,
                },
                targets,
            ))
        }
    }
}

/// Hold: revalue the same quantities at the new prices.
pub fn step_passive(state: &PortfolioState, prices: &[f64]) -> Result<PortfolioState> {
    let w = wealth(prices, &state.quantities)?;
    if w <= 0.0 {
        return Err(Error::Bankruptcy {
            step: state.step_index + 1,
            wealth: w,
        });
    }
    Ok(PortfolioState {
        quantities: state.quantities.clone(),
        step_index: state.step_index + 1,
        wealth: w,
        cumulative_fees: state.cumulative_fees,
    })
}

/// Solve `F = alpha_d * sum_i |d_i + f_i F|` for the converged fee.
///
/// The map is a piecewise-linear contraction (slope at most `alpha_d < 1`).
/// Each iteration solves the linear regime picked out by the current sign
/// pattern exactly, so convergence is finite; the tolerance check matches
/// successive iterates.
fn solve_fee_fixed_point(
    deviations: &[f64],
    targets: &[f64],
    alpha_d: f64,
    tolerance: f64,
    max_iterations: usize,
    step: usize,
) -> Result<f64> {
    let eval = |f: f64| {
        alpha_d
            * deviations
                .iter()
                .zip(targets)
                .map(|(d, t)| (d + t * f).abs())
                .sum::<f64>()
    };
    let mut current = eval(0.0);
    for _ in 0..max_iterations {
        let mut signed_dev = 0.0;
        let mut signed_frac = 0.0;
        for (d, t) in deviations.iter().zip(targets) {
            let sign = if d + t * current >= 0.0 { 1.0 } else { -1.0 };
            signed_dev += sign * d;
            signed_frac += sign * t;
        }
        // denominator >= 1 - alpha_d > 0
        let candidate = alpha_d * signed_dev / (1.0 - alpha_d * signed_frac);
        let next = if candidate.is_finite() && candidate >= 0.0 {
            candidate
        } else {
            eval(current)
        };
        if (next - current).abs() <= tolerance {
            return Ok(next);
        }
        current = next;
    }
    Err(Error::FeeNonConvergence {
        step,
        iterations: max_iterations,
    })
}

/// Shared rebalance step. `coefficient` is the executed share `D`;
/// `1.0` gives the fully balanced update. Returns the new state, the trade
/// report the fee was charged on, and the amount deducted from wealth.
fn rebalance(
    state: &PortfolioState,
    prices: &[f64],
    targets: &FractionVector,
    fee: &FeeModel,
    coefficient: f64,
    resolution: FeeResolution,
    new_step: usize,
) -> Result<(PortfolioState, TradeReport, f64)> {
    let n = prices.len();
    if targets.len() != n {
        return Err(Error::Dimension(format!(
            "{} target fractions for {} assets",
            targets.len(),
            n
        )));
    }
    let components = wealth_components(prices, &state.quantities)?;
    let w_temp: f64 = components.iter().sum();
    if w_temp <= 0.0 {
        return Err(Error::Bankruptcy {
            step: new_step,
            wealth: w_temp,
        });
    }
    let target_fractions = targets.as_slice();
    // Signed full-trade values: positive entries would be sold.
    let deviations: Vec<f64> = components
        .iter()
        .zip(target_fractions)
        .map(|(w_i, f_i)| w_i - f_i * w_temp)
        .collect();

    // Nothing to trade: act passively so degenerate markets (one asset,
    // identical paths) reproduce the passive trajectory bit for bit.
    if deviations.iter().all(|d| *d == 0.0) {
        return Ok((
            PortfolioState {
                quantities: state.quantities.clone(),
                step_index: new_step,
                wealth: w_temp,
                cumulative_fees: state.cumulative_fees,
            },
            TradeReport::empty(n),
            0.0,
        ));
    }

    let (trades, fee_total) = match resolution {
        FeeResolution::SinglePass => {
            let trades: Vec<f64> = deviations.iter().map(|d| coefficient * d).collect();
            let fee_total = total_fee(&trades, fee);
            (trades, fee_total)
        }
        FeeResolution::FixedPoint {
            tolerance,
            max_iterations,
        } => {
            let solved = solve_fee_fixed_point(
                &deviations,
                target_fractions,
                fee.alpha * coefficient,
                tolerance,
                max_iterations,
                new_step,
            )?;
            let trades: Vec<f64> = deviations
                .iter()
                .zip(target_fractions)
                .map(|(d, f_i)| coefficient * (d + f_i * solved))
                .collect();
            let fee_total = total_fee(&trades, fee);
            (trades, fee_total)
        }
    };

    let charged = if coefficient == 1.0 {
        fee_total
    } else {
        coefficient * fee_total
    };
    if w_temp - charged <= 0.0 {
        return Err(Error::Bankruptcy {
            step: new_step,
            wealth: w_temp - charged,
        });
    }

    let quantities: Vec<f64> = if coefficient == 1.0 {
        // Fully balanced update: q_i = f_i (W_temp - F) / S_i.
        target_fractions
            .iter()
            .zip(prices)
            .map(|(f_i, s_i)| f_i * (w_temp - fee_total) / s_i)
            .collect()
    } else {
        // Partial update, as written:
        // q_i = [W_i + D (f_i W_temp - W_i - f_i F)] / S_i.
        components
            .iter()
            .zip(target_fractions.iter().zip(prices))
            .map(|(w_i, (f_i, s_i))| {
                (w_i + coefficient * (f_i * w_temp - w_i - f_i * fee_total)) / s_i
            })
            .collect()
    };
    if quantities.iter().any(|q| !q.is_finite() || *q < 0.0) {
        return Err(Error::Domain(format!(
            "rebalance at step {new_step} would require a short position"
        )));
    }
    let new_wealth = wealth(prices, &quantities)?;
    Ok((
        PortfolioState {
            quantities,
            step_index: new_step,
            wealth: new_wealth,
            cumulative_fees: state.cumulative_fees + charged,
        },
        TradeReport {
            trade_values: trades,
            total_fee: fee_total,
        },
        charged,
    ))
}

/// Fully balanced step: restore the target fractions, paying the fee.
pub fn step_balanced(
    state: &PortfolioState,
    prices: &[f64],
    targets: &FractionVector,
    fee: &FeeModel,
    resolution: FeeResolution,
) -> Result<(PortfolioState, TradeReport)> {
    let (state, report, _) = rebalance(state, prices, targets, fee, 1.0, resolution, state.step_index + 1)?;
    Ok((state, report))
}

/// Partial step: execute fraction `coefficient` of the balancing trade.
/// `coefficient = 0` holds; `coefficient = 1` is the balanced step.
pub fn step_partial(
    state: &PortfolioState,
    prices: &[f64],
    targets: &FractionVector,
    fee: &FeeModel,
    coefficient: f64,
    resolution: FeeResolution,
) -> Result<(PortfolioState, TradeReport)> {
    let (state, report, _) =
        partial_with_charge(state, prices, targets, fee, coefficient, resolution, state.step_index + 1)?;
    Ok((state, report))
}

fn partial_with_charge(
    state: &PortfolioState,
    prices: &[f64],
    targets: &FractionVector,
    fee: &FeeModel,
    coefficient: f64,
    resolution: FeeResolution,
    new_step: usize,
) -> Result<(PortfolioState, TradeReport, f64)> {
    if !coefficient.is_finite() || !(0.0..=1.0).contains(&coefficient) {
        return Err(Error::Config(format!(
            "partial rebalance coefficient D must lie in [0, 1], got {coefficient}"
        )));
    }
    if coefficient == 0.0 {
        // Reduces to the passive portfolio, bit for bit.
        let state = step_passive_at(state, prices, new_step)?;
        let n = prices.len();
        return Ok((state, TradeReport::empty(n), 0.0));
    }
    rebalance(state, prices, targets, fee, coefficient, resolution, new_step)
}

fn step_passive_at(state: &PortfolioState, prices: &[f64], new_step: usize) -> Result<PortfolioState> {
    let w = wealth(prices, &state.quantities)?;
    if w <= 0.0 {
        return Err(Error::Bankruptcy {
            step: new_step,
            wealth: w,
        });
    }
    Ok(PortfolioState {
        quantities: state.quantities.clone(),
        step_index: new_step,
        wealth: w,
        cumulative_fees: state.cumulative_fees,
    })
}

/// Periodic step: balanced when `k mod m = 0`, passive otherwise.
pub fn step_periodic(
    state: &PortfolioState,
    prices: &[f64],
    targets: &FractionVector,
    fee: &FeeModel,
    period: u32,
    k: usize,
    resolution: FeeResolution,
) -> Result<(PortfolioState, TradeReport)> {
    let (state, report, _) = periodic_with_charge(state, prices, targets, fee, period, k, resolution)?;
    Ok((state, report))
}

fn periodic_with_charge(
    state: &PortfolioState,
    prices: &[f64],
    targets: &FractionVector,
    fee: &FeeModel,
    period: u32,
    k: usize,
    resolution: FeeResolution,
) -> Result<(PortfolioState, TradeReport, f64)> {
    check_period_step(period, k)?;
    if k % period as usize == 0 {
        rebalance(state, prices, targets, fee, 1.0, resolution, k)
    } else {
        Ok((step_passive_at(state, prices, k)?, TradeReport::empty(prices.len()), 0.0))
    }
}

/// Combined step: the partial update applied every `period`-th step.
/// `step_periodic(m)` is `step_combined(m, 1)`; `step_partial(d)` is
/// `step_combined(1, d)`.
pub fn step_combined(
    state: &PortfolioState,
    prices: &[f64],
    targets: &FractionVector,
    fee: &FeeModel,
    period: u32,
    coefficient: f64,
    k: usize,
    resolution: FeeResolution,
) -> Result<(PortfolioState, TradeReport)> {
    let (state, report, _) =
        combined_with_charge(state, prices, targets, fee, period, coefficient, k, resolution)?;
    Ok((state, report))
}

#[allow(clippy::too_many_arguments)]
fn combined_with_charge(
    state: &PortfolioState,
    prices: &[f64],
    targets: &FractionVector,
    fee: &FeeModel,
    period: u32,
    coefficient: f64,
    k: usize,
    resolution: FeeResolution,
) -> Result<(PortfolioState, TradeReport, f64)> {
    check_period_step(period, k)?;
    if k % period as usize == 0 {
        partial_with_charge(state, prices, targets, fee, coefficient, resolution, k)
    } else {
        Ok((step_passive_at(state, prices, k)?, TradeReport::empty(prices.len()), 0.0))
    }
}

fn check_period_step(period: u32, k: usize) -> Result<()> {
    if period == 0 {
        return Err(Error::Config("rebalance period m must be >= 1".into()));
    }
    if k == 0 {
        return Err(Error::Domain(
            "rebalance steps start at k = 1; no rebalance happens at k = 0".into(),
        ));
    }
    Ok(())
}

/// Run a strategy along a market: apply its step rule for `k = 1..=K` and
/// record the wealth and fee ledger. Pure in its inputs.
pub fn run_strategy(
    market: &Market,
    spec: &StrategySpec,
    alloc: &InitialAllocation,
    fee: &FeeModel,
) -> Result<WealthTrajectory> {
    spec.validate()?;
    let n = market.asset_count();
    let steps = market.grid().step_count();
    let mut prices = vec![0.0; n];
    market.prices_at_into(0, &mut prices);
    let (mut state, targets) = initial_state(&prices, alloc, fee)?;

    let mut wealth_series = Vec::with_capacity(steps + 1);
    let mut fees_paid = Vec::with_capacity(steps + 1);
    wealth_series.push(state.wealth);
    fees_paid.push(state.cumulative_fees);

    for k in 1..=steps {
        market.prices_at_into(k, &mut prices);
        let (next, _, charged) = match spec.kind {
            StrategyKind::Passive => (step_passive_at(&state, &prices, k)?, TradeReport::empty(n), 0.0),
            StrategyKind::Balanced => {
                rebalance(&state, &prices, &targets, fee, 1.0, spec.fee_resolution, k)?
            }
            StrategyKind::PeriodicBalanced { period } => {
                periodic_with_charge(&state, &prices, &targets, fee, period, k, spec.fee_resolution)?
            }
            StrategyKind::PartialBalanced { coefficient } => {
                partial_with_charge(&state, &prices, &targets, fee, coefficient, spec.fee_resolution, k)?
            }
            StrategyKind::PeriodicPartial { period, coefficient } => combined_with_charge(
                &state,
                &prices,
                &targets,
                fee,
                period,
                coefficient,
                k,
                spec.fee_resolution,
            )?,
        };
        state = next;
        wealth_series.push(state.wealth);
        fees_paid.push(charged);
    }

    Ok(WealthTrajectory {
        grid: *market.grid(),
        wealth: wealth_series,
        fees_paid,
        quantities_final: state.quantities,
        cumulative_fees: state.cumulative_fees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::market::{simulate_market, GbmParams};
    use crate::portfolio::MONEY_REL_TOL;
    use crate::rng::{stream, uniform_unit};
    use proptest::prelude::*;

    fn half_half() -> FractionVector {
        FractionVector::new(vec![0.5, 0.5]).unwrap()
    }

    fn state(quantities: Vec<f64>, prices: &[f64]) -> PortfolioState {
        let w = wealth(prices, &quantities).unwrap();
        PortfolioState {
            quantities,
            step_index: 0,
            wealth: w,
            cumulative_fees: 0.0,
        }
    }

    #[test]
    fn balanced_step_without_fee() {
        let prices = [2.0, 1.0];
        let st = state(vec![1.0, 1.0], &[1.0, 1.0]);
        let (next, report) = step_balanced(
            &st,
            &prices,
            &half_half(),
            &FeeModel::free(),
            FeeResolution::SinglePass,
        )
        .unwrap();
        assert!((next.quantities[0] - 0.75).abs() < 1e-15);
        assert!((next.quantities[1] - 1.5).abs() < 1e-15);
        assert!((next.wealth - 3.0).abs() <= MONEY_REL_TOL * 3.0);
        assert_eq!(report.total_fee, 0.0);
    }

    #[test]
    fn balanced_step_with_fee() {
        let prices = [2.0, 1.0];
        let st = state(vec![1.0, 1.0], &[1.0, 1.0]);
        let fee = FeeModel::new(0.03).unwrap();
        let (next, report) =
            step_balanced(&st, &prices, &half_half(), &fee, FeeResolution::SinglePass).unwrap();
        assert!((report.total_fee - 0.03).abs() < 1e-15);
        assert_eq!(report.trade_values.len(), 2);
        assert!((report.trade_values[0] - 0.5).abs() < 1e-15);
        assert!((report.trade_values[1] + 0.5).abs() < 1e-15);
        assert!((next.quantities[0] - 0.7425).abs() < 1e-15);
        assert!((next.quantities[1] - 1.485).abs() < 1e-15);
        assert!((next.wealth - 2.97).abs() <= MONEY_REL_TOL * 2.97);
        assert!((next.cumulative_fees - 0.03).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_matches_single_pass_on_symmetric_trades() {
        // With f = (1/2, 1/2) the fee map is constant, so both resolutions
        // agree exactly.
        let prices = [2.0, 1.0];
        let st = state(vec![1.0, 1.0], &[1.0, 1.0]);
        let fee = FeeModel::new(0.03).unwrap();
        let (single, _) =
            step_balanced(&st, &prices, &half_half(), &fee, FeeResolution::SinglePass).unwrap();
        let (fixed, report) =
            step_balanced(&st, &prices, &half_half(), &fee, FeeResolution::fixed_point()).unwrap();
        assert!((single.wealth - fixed.wealth).abs() <= 1e-12 * single.wealth);
        assert!((report.total_fee - 0.03).abs() <= 1e-12);
    }

    #[test]
    fn fixed_point_fee_is_consistent_with_its_trades() {
        let prices = [3.0, 1.0, 0.5];
        let st = state(vec![2.0, 1.0, 8.0], &prices);
        let targets = FractionVector::new(vec![0.6, 0.3, 0.1]).unwrap();
        let fee = FeeModel::new(0.05).unwrap();
        let (next, report) =
            step_balanced(&st, &prices, &targets, &fee, FeeResolution::fixed_point()).unwrap();
        let w_temp = st.wealth;
        // F = alpha * sum |V_i| holds at the fixed point.
        let recomputed = total_fee(&report.trade_values, &fee);
        assert!((recomputed - report.total_fee).abs() <= 1e-12 * report.total_fee.max(1e-30));
        // Wealth conservation: post = W_temp - F.
        assert!((next.wealth - (w_temp - report.total_fee)).abs() <= MONEY_REL_TOL * w_temp);
        // Fractions restored.
        let f = fractions(&prices, &next.quantities).unwrap();
        for (got, want) in f.as_slice().iter().zip(targets.as_slice()) {
            assert!((got - want).abs() <= MONEY_REL_TOL);
        }
        // The executed trades differ from the single-pass plan at order alpha^2.
        let (sp_state, sp_report) =
            step_balanced(&st, &prices, &targets, &fee, FeeResolution::SinglePass).unwrap();
        assert!(report.total_fee > sp_report.total_fee * (1.0 - 2.0 * fee.alpha));
        assert!((sp_state.wealth - next.wealth).abs() <= fee.alpha * fee.alpha * w_temp);
    }

    #[test]
    fn partial_step_half_without_fee() {
        let prices = [2.0, 1.0];
        let st = state(vec![1.0, 1.0], &[1.0, 1.0]);
        let (next, _) = step_partial(
            &st,
            &prices,
            &half_half(),
            &FeeModel::free(),
            0.5,
            FeeResolution::SinglePass,
        )
        .unwrap();
        assert!((next.quantities[0] - 0.875).abs() < 1e-15);
        assert!((next.quantities[1] - 1.25).abs() < 1e-15);
        assert!((next.wealth - 3.0).abs() <= MONEY_REL_TOL * 3.0);
    }

    #[test]
    fn partial_zero_is_passive_bit_for_bit() {
        let prices = [2.3, 0.7];
        let st = state(vec![1.1, 4.2], &[1.0, 1.0]);
        let fee = FeeModel::new(0.02).unwrap();
        let passive = step_passive(&st, &prices).unwrap();
        let (partial, report) =
            step_partial(&st, &prices, &half_half(), &fee, 0.0, FeeResolution::SinglePass).unwrap();
        assert_eq!(passive.wealth.to_bits(), partial.wealth.to_bits());
        assert_eq!(passive.quantities, partial.quantities);
        assert_eq!(report.total_fee, 0.0);
    }

    #[test]
    fn partial_one_is_balanced_bit_for_bit() {
        let prices = [2.3, 0.7];
        let st = state(vec![1.1, 4.2], &[1.0, 1.0]);
        let fee = FeeModel::new(0.02).unwrap();
        for resolution in [FeeResolution::SinglePass, FeeResolution::fixed_point()] {
            let (balanced, _) = step_balanced(&st, &prices, &half_half(), &fee, resolution).unwrap();
            let (partial, _) =
                step_partial(&st, &prices, &half_half(), &fee, 1.0, resolution).unwrap();
            assert_eq!(balanced.wealth.to_bits(), partial.wealth.to_bits());
            assert_eq!(balanced.quantities, partial.quantities);
        }
    }

    #[test]
    fn periodic_rebalances_only_on_multiples() {
        let prices = [2.0, 1.0];
        let st = state(vec![1.0, 1.0], &[1.0, 1.0]);
        let fee = FeeModel::free();
        for k in [1usize, 2] {
            let (next, report) = step_periodic(
                &st,
                &prices,
                &half_half(),
                &fee,
                3,
                k,
                FeeResolution::SinglePass,
            )
            .unwrap();
            assert_eq!(next.quantities, st.quantities, "k = {k} should hold");
            assert_eq!(report.total_fee, 0.0);
        }
        let (next, _) = step_periodic(
            &st,
            &prices,
            &half_half(),
            &fee,
            3,
            3,
            FeeResolution::SinglePass,
        )
        .unwrap();
        assert!((next.quantities[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn period_one_is_balanced_every_step() {
        let prices = [2.0, 1.0];
        let st = state(vec![1.0, 1.0], &[1.0, 1.0]);
        let fee = FeeModel::new(0.01).unwrap();
        let (balanced, _) =
            step_balanced(&st, &prices, &half_half(), &fee, FeeResolution::SinglePass).unwrap();
        for k in 1..=4 {
            let (periodic, _) = step_periodic(
                &st,
                &prices,
                &half_half(),
                &fee,
                1,
                k,
                FeeResolution::SinglePass,
            )
            .unwrap();
            assert_eq!(periodic.wealth.to_bits(), balanced.wealth.to_bits());
        }
    }

    #[test]
    fn step_at_k_zero_is_rejected() {
        let prices = [2.0, 1.0];
        let st = state(vec![1.0, 1.0], &[1.0, 1.0]);
        let err = step_periodic(
            &st,
            &prices,
            &half_half(),
            &FeeModel::free(),
            3,
            0,
            FeeResolution::SinglePass,
        );
        assert!(err.is_err());
    }

    #[test]
    fn bankruptcy_is_reported_with_step_index() {
        // All wealth in asset 0, target all in asset 1: the full swap trades
        // twice the wealth, so alpha = 0.6 charges more than the portfolio
        // is worth.
        let prices = [1.0, 1.0];
        let mut st = state(vec![2.0, 0.0], &prices);
        st.step_index = 4;
        let targets = FractionVector::new(vec![0.0, 1.0]).unwrap();
        let fee = FeeModel::new(0.6).unwrap();
        let err = step_balanced(&st, &prices, &targets, &fee, FeeResolution::SinglePass)
            .unwrap_err();
        match err {
            Error::Bankruptcy { step, wealth } => {
                assert_eq!(step, 5);
                assert!(wealth <= 0.0);
            }
            other => panic!("expected bankruptcy, got {other}"),
        }
    }

    #[test]
    fn initial_state_given_wealth() {
        let (st, targets) = initial_state(
            &[1.0, 1.0],
            &InitialAllocation::GivenWealth {
                wealth: 2.0,
                fractions: half_half(),
            },
            &FeeModel::free(),
        )
        .unwrap();
        assert_eq!(st.quantities, vec![1.0, 1.0]);
        assert_eq!(targets, half_half());
        assert_eq!(st.cumulative_fees, 0.0);
    }

    #[test]
    fn initial_state_given_quantities_derives_targets() {
        let (st, targets) = initial_state(
            &[1.0, 1.0],
            &InitialAllocation::GivenQuantities(vec![1.0, 1.0]),
            &FeeModel::free(),
        )
        .unwrap();
        assert_eq!(targets.as_slice(), &[0.5, 0.5]);
        assert_eq!(st.wealth, 2.0);
    }

    #[test]
    fn initial_state_single_asset() {
        let (st, targets) = initial_state(
            &[4.0],
            &InitialAllocation::GivenWealth {
                wealth: 1.0,
                fractions: FractionVector::new(vec![1.0]).unwrap(),
            },
            &FeeModel::free(),
        )
        .unwrap();
        assert_eq!(st.quantities, vec![0.25]);
        assert_eq!(targets.as_slice(), &[1.0]);
    }

    #[test]
    fn initial_purchase_fee_is_optional() {
        let fee = FeeModel::new(0.03).unwrap().with_initial_purchase_fee(true);
        let (st, _) = initial_state(
            &[1.0, 1.0],
            &InitialAllocation::GivenWealth {
                wealth: 1.0,
                fractions: half_half(),
            },
            &fee,
        )
        .unwrap();
        assert!((st.cumulative_fees - 0.03).abs() < 1e-15);
        assert!((st.wealth - 0.97).abs() <= MONEY_REL_TOL);
    }

    #[test]
    fn run_passive_on_deterministic_exponential() {
        let grid = TimeGrid::new(2.0, 0.25).unwrap();
        let params = GbmParams::new(0.5, 0.0, 1.0).unwrap();
        let market = simulate_market(1, &params, grid, 1).unwrap();
        let alloc = InitialAllocation::GivenWealth {
            wealth: 1.0,
            fractions: FractionVector::new(vec![1.0]).unwrap(),
        };
        let traj = run_strategy(&market, &StrategySpec::passive(), &alloc, &FeeModel::free()).unwrap();
        for (k, w) in traj.wealth().iter().enumerate() {
            let expected = (0.5 * grid.time(k)).exp();
            assert!((w - expected).abs() <= 1e-12 * expected, "k = {k}");
        }
        assert_eq!(traj.quantities_final(), &[1.0]);
    }

    #[test]
    fn one_asset_strategies_all_match_passive_exactly() {
        let grid = TimeGrid::new(3.0, 0.1).unwrap();
        let params = GbmParams::new(0.1, 0.6, 1.0).unwrap();
        let market = simulate_market(1, &params, grid, 21).unwrap();
        let alloc = InitialAllocation::GivenWealth {
            wealth: 1.0,
            fractions: FractionVector::new(vec![1.0]).unwrap(),
        };
        let fee = FeeModel::free();
        let passive = run_strategy(&market, &StrategySpec::passive(), &alloc, &fee).unwrap();
        for spec in [
            StrategySpec::balanced(),
            StrategySpec::periodic(4),
            StrategySpec::partial(0.7),
            StrategySpec::combined(3, 0.4),
        ] {
            let traj = run_strategy(&market, &spec, &alloc, &fee).unwrap();
            for (a, b) in passive.wealth().iter().zip(traj.wealth()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{spec} diverged");
            }
        }
    }

    #[test]
    fn identical_paths_make_balanced_equal_passive() {
        // sigma = 0 makes every path the same exponential; rebalancing
        // trades vanish up to rounding.
        let grid = TimeGrid::new(5.0, 0.5).unwrap();
        let params = GbmParams::new(0.2, 0.0, 1.0).unwrap();
        let market = simulate_market(3, &params, grid, 3).unwrap();
        let alloc = InitialAllocation::GivenWealth {
            wealth: 1.0,
            fractions: FractionVector::uniform(3).unwrap(),
        };
        let fee = FeeModel::free();
        let passive = run_strategy(&market, &StrategySpec::passive(), &alloc, &fee).unwrap();
        let balanced = run_strategy(&market, &StrategySpec::balanced(), &alloc, &fee).unwrap();
        for (a, b) in passive.wealth().iter().zip(balanced.wealth()) {
            assert!((a - b).abs() <= MONEY_REL_TOL * a);
        }
    }

    #[test]
    fn combined_equals_partial_applied_on_multiples() {
        // Oracle: compose the evolution by hand, applying the partial step
        // only at k in {5, 10, ..} and passive steps elsewhere.
        let grid = TimeGrid::new(2.0, 0.1).unwrap();
        let params = GbmParams::new(0.1, 0.4, 1.0).unwrap();
        let market = simulate_market(2, &params, grid, 99).unwrap();
        let alloc = InitialAllocation::GivenWealth {
            wealth: 1.0,
            fractions: FractionVector::uniform(2).unwrap(),
        };
        let fee = FeeModel::new(0.01).unwrap();
        let combined = run_strategy(&market, &StrategySpec::combined(5, 0.5), &alloc, &fee).unwrap();

        let mut prices = vec![0.0; 2];
        market.prices_at_into(0, &mut prices);
        let (mut st, targets) = initial_state(&prices, &alloc, &fee).unwrap();
        let mut manual = vec![st.wealth];
        for k in 1..=grid.step_count() {
            market.prices_at_into(k, &mut prices);
            st = if k % 5 == 0 {
                step_partial(&st, &prices, &targets, &fee, 0.5, FeeResolution::SinglePass)
                    .unwrap()
                    .0
            } else {
                step_passive(&st, &prices).unwrap()
            };
            manual.push(st.wealth);
        }
        for (a, b) in combined.wealth().iter().zip(&manual) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn alpha_monotonicity_of_balanced_final_wealth() {
        let grid = TimeGrid::new(5.0, 0.1).unwrap();
        let params = GbmParams::new(0.1, 0.5, 1.0).unwrap();
        let market = simulate_market(3, &params, grid, 8).unwrap();
        let alloc = InitialAllocation::GivenWealth {
            wealth: 1.0,
            fractions: FractionVector::uniform(3).unwrap(),
        };
        let mut previous = f64::INFINITY;
        for alpha in [0.0, 0.01, 0.02, 0.05, 0.1] {
            let fee = FeeModel::new(alpha).unwrap();
            let traj = run_strategy(&market, &StrategySpec::balanced(), &alloc, &fee).unwrap();
            assert!(
                traj.final_wealth() <= previous,
                "final wealth increased when alpha rose to {alpha}"
            );
            previous = traj.final_wealth();
        }
    }

    #[test]
    fn fee_ledger_matches_per_step_fees() {
        let grid = TimeGrid::new(3.0, 0.1).unwrap();
        let params = GbmParams::new(0.1, 0.5, 1.0).unwrap();
        let market = simulate_market(2, &params, grid, 15).unwrap();
        let alloc = InitialAllocation::GivenWealth {
            wealth: 1.0,
            fractions: FractionVector::uniform(2).unwrap(),
        };
        let fee = FeeModel::new(0.03).unwrap();
        for spec in [
            StrategySpec::balanced(),
            StrategySpec::partial(0.5),
            StrategySpec::periodic(4),
        ] {
            let traj = run_strategy(&market, &spec, &alloc, &fee).unwrap();
            let summed = traj.fees_paid().iter().fold(0.0, |acc, f| acc + f);
            assert_eq!(summed.to_bits(), traj.cumulative_fees().to_bits(), "{spec}");
            assert!(traj.fees_paid().iter().all(|f| *f >= 0.0));
        }
    }

    #[test]
    fn strategy_labels_are_stable() {
        assert_eq!(StrategySpec::passive().label(), "passive");
        assert_eq!(StrategySpec::periodic(10).label(), "periodic_m10");
        assert_eq!(StrategySpec::partial(0.5).label(), "partial_d0.5");
        assert_eq!(StrategySpec::combined(10, 0.5).label(), "combined_m10_d0.5");
    }

    #[test]
    fn spec_validation_rejects_bad_parameters() {
        assert!(StrategySpec::periodic(0).validate().is_err());
        assert!(StrategySpec::partial(1.5).validate().is_err());
        assert!(StrategySpec::partial(-0.1).validate().is_err());
        assert!(StrategySpec::combined(0, 0.5).validate().is_err());
        assert!(StrategySpec::partial(1.0).validate().is_ok());
        assert!(StrategySpec::periodic(1).validate().is_ok());
    }

    /// Random simplex vector with `n` entries.
    fn random_targets(rng: &mut rand_chacha::ChaCha12Rng, n: usize) -> FractionVector {
        let raw: Vec<f64> = (0..n).map(|_| uniform_unit(rng) + 1e-3).collect();
        let sum: f64 = raw.iter().sum();
        FractionVector::new(raw.iter().map(|x| x / sum).collect()).unwrap()
    }

    #[test]
    fn self_financing_and_fee_conservation_randomised() {
        let mut rng = stream(2024);
        for case in 0..500 {
            let n = 2 + (case % 5);
            let prices: Vec<f64> = (0..n).map(|_| 0.1 + 9.9 * uniform_unit(&mut rng)).collect();
            let quantities: Vec<f64> = (0..n).map(|_| 0.1 + 9.9 * uniform_unit(&mut rng)).collect();
            let targets = random_targets(&mut rng, n);
            let st = state(quantities, &prices);
            let w_temp = st.wealth;

            // alpha = 0: wealth preserved exactly by every update rule.
            let free = FeeModel::free();
            let (b, _) =
                step_balanced(&st, &prices, &targets, &free, FeeResolution::SinglePass).unwrap();
            assert!((b.wealth - w_temp).abs() <= MONEY_REL_TOL * w_temp);
            let d = uniform_unit(&mut rng);
            let (p, _) =
                step_partial(&st, &prices, &targets, &free, d, FeeResolution::SinglePass).unwrap();
            assert!((p.wealth - w_temp).abs() <= MONEY_REL_TOL * w_temp);

            // alpha > 0: balanced loses F, partial loses D * F.
            for alpha in [0.01, 0.03] {
                let fee = FeeModel::new(alpha).unwrap();
                for resolution in [FeeResolution::SinglePass, FeeResolution::fixed_point()] {
                    let (b, report) =
                        step_balanced(&st, &prices, &targets, &fee, resolution).unwrap();
                    assert!(
                        (b.wealth - (w_temp - report.total_fee)).abs() <= MONEY_REL_TOL * w_temp
                    );
                    let (p, report) =
                        step_partial(&st, &prices, &targets, &fee, d, resolution).unwrap();
                    assert!(
                        (p.wealth - (w_temp - d * report.total_fee)).abs()
                            <= MONEY_REL_TOL * w_temp
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn balanced_restores_targets_for_any_alpha(
            prices in proptest::collection::vec(0.1f64..10.0, 3),
            quantities in proptest::collection::vec(0.1f64..10.0, 3),
            raw_targets in proptest::collection::vec(0.05f64..1.0, 3),
            alpha in 0.0f64..0.2,
        ) {
            let sum: f64 = raw_targets.iter().sum();
            let targets = FractionVector::new(raw_targets.iter().map(|x| x / sum).collect()).unwrap();
            let st = state(quantities, &prices);
            let fee = FeeModel::new(alpha).unwrap();
            for resolution in [FeeResolution::SinglePass, FeeResolution::fixed_point()] {
                let (next, _) = step_balanced(&st, &prices, &targets, &fee, resolution).unwrap();
                let achieved = fractions(&prices, &next.quantities).unwrap();
                for (got, want) in achieved.as_slice().iter().zip(targets.as_slice()) {
                    prop_assert!((got - want).abs() <= MONEY_REL_TOL);
                }
            }
        }
    }
}
