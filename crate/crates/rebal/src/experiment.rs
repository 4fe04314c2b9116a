//! Experiment protocols: Monte Carlo strategy comparison, parameter
//! sweeps, and subset sampling from a finite asset universe.
//!
//! Three disciplines hold everywhere:
//!
//! * **Common random numbers** — within a sweep, every cell sees exactly
//!   the same simulated markets, so differences between cells are caused
//!   by the parameters alone. Within a comparison, every strategy runs on
//!   the same market realisation (paired comparison).
//! * **Scheduling invariance** — run `r` derives all of its randomness
//!   from `(master_seed, r)`, and results are folded in run order, so
//!   serial and parallel execution produce bit-identical results.
//! * **No silent dropping** — a failed run (e.g. bankruptcy) aborts the
//!   whole experiment, carrying the run index; skipping failures would
//!   bias the averages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::market::{format_float, simulate_market, GbmParams, Market};
use crate::metrics::{growth_at, GrowthSeries};
use crate::portfolio::{FeeModel, FractionVector};
use crate::rng::{derive_seed, sample_subset, stream};
use crate::strategy::{run_strategy, InitialAllocation, StrategyKind, StrategySpec};

/// How per-run results are combined into one reported series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Mean of the per-run growth series (the default: it matches the
    /// per-run definition of the metric).
    Growth,
    /// Growth of the pointwise mean wealth trajectory.
    Wealth,
}

impl Default for Averaging {
    fn default() -> Self {
        Averaging::Growth
    }
}

/// Full description of a reproducible experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub grid: TimeGrid,
    pub model: GbmParams,
    /// Number of assets in each portfolio (`n`).
    pub assets: usize,
    /// Size of the asset universe for subset protocols (`N`).
    pub universe_size: Option<usize>,
    /// Monte Carlo iterations.
    pub runs: usize,
    pub fee: FeeModel,
    pub strategies: Vec<StrategySpec>,
    pub master_seed: u64,
    pub allocation: InitialAllocation,
    pub averaging: Averaging,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.assets == 0 {
            return Err(Error::Config("a portfolio needs at least one asset".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("an experiment needs at least one run".into()));
        }
        if let Some(universe) = self.universe_size {
            if self.assets > universe {
                return Err(Error::Config(format!(
                    "cannot draw {} assets from a universe of {universe}",
                    self.assets
                )));
            }
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        for spec in &self.strategies {
            spec.validate()?;
        }
        let alloc_len = match &self.allocation {
            InitialAllocation::GivenQuantities(q) => q.len(),
            InitialAllocation::GivenWealth { fractions, .. } => fractions.len(),
        };
        if alloc_len != self.assets {
            return Err(Error::Config(format!(
                "initial allocation covers {alloc_len} assets, portfolio has {}",
                self.assets
            )));
        }
        Ok(())
    }

    /// Uniform allocation of unit wealth over `n` assets.
    pub fn uniform_allocation(n: usize) -> Result<InitialAllocation> {
        Ok(InitialAllocation::GivenWealth {
            wealth: 1.0,
            fractions: FractionVector::uniform(n)?,
        })
    }
}

/// Mean, sample standard error and run count of one reported number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub mean: f64,
    pub std_err: f64,
    pub runs: usize,
}

/// Result of one strategy in a comparison experiment.
#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub spec: StrategySpec,
    /// Averaged growth series over all runs.
    pub series: GrowthSeries,
    /// Statistics of the per-run final growth `g(T)`.
    pub final_growth: CellStats,
}

/// Run `worker` for every run index, folding results in run order.
///
/// Work is dispatched in fixed chunks; within a chunk runs execute in
/// parallel but results are collected back into index order before being
/// folded, which keeps the outcome independent of scheduling.
fn for_each_run_ordered<T, W, F>(runs: usize, worker: W, mut fold: F) -> Result<()>
where
    T: Send,
    W: Fn(usize) -> Result<T> + Sync,
    F: FnMut(T),
{
    const CHUNK: usize = 64;
    let mut start = 0;
    while start < runs {
        let end = (start + CHUNK).min(runs);
        let chunk: Vec<Result<T>> = (start..end)
            .into_par_iter()
            .map(|r| worker(r).map_err(|e| e.in_run(r)))
            .collect();
        for result in chunk {
            fold(result?);
        }
        start = end;
    }
    Ok(())
}

/// Per-strategy accumulator for series and final-growth statistics.
struct Accumulator {
    averaging: Averaging,
    sums: Vec<f64>,
    final_sum: f64,
    final_sum_sq: f64,
    count: usize,
}

impl Accumulator {
    fn new(grid: &TimeGrid, averaging: Averaging) -> Self {
        let len = match averaging {
            Averaging::Growth => grid.step_count(),
            Averaging::Wealth => grid.point_count(),
        };
        Self {
            averaging,
            sums: vec![0.0; len],
            final_sum: 0.0,
            final_sum_sq: 0.0,
            count: 0,
        }
    }

    fn add(&mut self, series: &[f64], final_growth: f64) {
        for (acc, v) in self.sums.iter_mut().zip(series) {
            *acc += v;
        }
        self.final_sum += final_growth;
        self.final_sum_sq += final_growth * final_growth;
        self.count += 1;
    }

    fn finish(self, grid: TimeGrid) -> Result<(GrowthSeries, CellStats)> {
        let count = self.count as f64;
        let mean: Vec<f64> = self.sums.iter().map(|s| s / count).collect();
        let series = match self.averaging {
            Averaging::Growth => GrowthSeries::from_values(grid, mean, self.count)?,
            Averaging::Wealth => GrowthSeries::from_wealth_points(grid, &mean, self.count)?,
        };
        Ok((series, stats_of(self.final_sum, self.final_sum_sq, self.count)))
    }
}

fn stats_of(sum: f64, sum_sq: f64, count: usize) -> CellStats {
    let n = count as f64;
    let mean = sum / n;
    let std_err = if count > 1 {
        let var = ((sum_sq - sum * sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    CellStats {
        mean,
        std_err,
        runs: count,
    }
}

/// One strategy's contribution from a single run: the series values to be
/// averaged plus the final growth.
fn run_one(
    market: &Market,
    spec: &StrategySpec,
    alloc: &InitialAllocation,
    fee: &FeeModel,
    averaging: Averaging,
) -> Result<(Vec<f64>, f64)> {
    let traj = run_strategy(market, spec, alloc, fee)?;
    let grid = traj.grid();
    let final_growth = growth_at(
        traj.final_wealth(),
        traj.initial_wealth(),
        grid.time(grid.step_count()),
    )?;
    let values = match averaging {
        Averaging::Growth => crate::metrics::growth_series(&traj)?.values().to_vec(),
        Averaging::Wealth => traj.wealth().to_vec(),
    };
    Ok((values, final_growth))
}

fn run_all_strategies(
    market: &Market,
    strategies: &[StrategySpec],
    alloc: &InitialAllocation,
    fee: &FeeModel,
    averaging: Averaging,
) -> Result<Vec<(Vec<f64>, f64)>> {
    strategies
        .iter()
        .map(|spec| run_one(market, spec, alloc, fee, averaging))
        .collect()
}

/// Monte Carlo strategy comparison: simulate a fresh `n`-asset market per
/// run, run every strategy on the same market, and average per strategy.
pub fn compare_strategies(config: &ExperimentConfig) -> Result<Vec<StrategyOutcome>> {
    config.validate()?;
    let mut accumulators: Vec<Accumulator> = config
        .strategies
        .iter()
        .map(|_| Accumulator::new(&config.grid, config.averaging))
        .collect();
    for_each_run_ordered(
        config.runs,
        |r| {
            let market = simulate_market(
                config.assets,
                &config.model,
                config.grid,
                derive_seed(config.master_seed, r as u64),
            )?;
            run_all_strategies(
                &market,
                &config.strategies,
                &config.allocation,
                &config.fee,
                config.averaging,
            )
        },
        |per_strategy| {
            for (acc, (series, final_growth)) in accumulators.iter_mut().zip(&per_strategy) {
                acc.add(series, *final_growth);
            }
        },
    )?;
    config
        .strategies
        .iter()
        .zip(accumulators)
        .map(|(spec, acc)| {
            let (series, final_growth) = acc.finish(config.grid)?;
            Ok(StrategyOutcome {
                spec: *spec,
                series,
                final_growth,
            })
        })
        .collect()
}

/// One axis of a sweep.
#[derive(Debug, Clone)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<f64>,
}

/// Final average growth `g(T)` over a two-parameter grid, with common
/// random numbers across all cells.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis1: SweepAxis,
    pub axis2: SweepAxis,
    /// Row-major: `cells[i * axis2.len() + j]` belongs to
    /// `(axis1.values[i], axis2.values[j])`.
    pub cells: Vec<CellStats>,
}

impl SweepResult {
    pub fn cell(&self, i: usize, j: usize) -> &CellStats {
        &self.cells[i * self.axis2.values.len() + j]
    }

    /// Dump as CSV: `<axis1>,<axis2>,final_growth,std_err,runs`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{},{},final_growth,std_err,runs",
            self.axis1.name, self.axis2.name
        )?;
        for (i, a) in self.axis1.values.iter().enumerate() {
            for (j, b) in self.axis2.values.iter().enumerate() {
                let cell = self.cell(i, j);
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    a,
                    b,
                    format_float(cell.mean),
                    format_float(cell.std_err),
                    cell.runs
                )?;
            }
        }
        Ok(())
    }

    /// Dump as a dense grid: axis2 values across the header row, axis1
    /// values down the first column, mean growth in the cells.
    pub fn write_grid<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "{}\\{}", self.axis1.name, self.axis2.name)?;
        for b in &self.axis2.values {
            write!(out, ",{b}")?;
        }
        writeln!(out)?;
        for (i, a) in self.axis1.values.iter().enumerate() {
            write!(out, "{a}")?;
            for j in 0..self.axis2.values.len() {
                write!(out, ",{}", format_float(self.cell(i, j).mean))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Generic sweep engine: every run simulates one market and evaluates all
/// cells on it.
fn sweep<FCell>(config: &ExperimentConfig, cell_count: usize, eval: FCell) -> Result<Vec<CellStats>>
where
    FCell: Fn(&Market) -> Result<Vec<f64>> + Sync,
{
    config.validate()?;
    let mut sums = vec![0.0; cell_count];
    let mut sums_sq = vec![0.0; cell_count];
    let mut count = 0usize;
    for_each_run_ordered(
        config.runs,
        |r| {
            let market = simulate_market(
                config.assets,
                &config.model,
                config.grid,
                derive_seed(config.master_seed, r as u64),
            )?;
            eval(&market)
        },
        |finals| {
            for ((sum, sum_sq), g) in sums.iter_mut().zip(sums_sq.iter_mut()).zip(&finals) {
                *sum += g;
                *sum_sq += g * g;
            }
            count += 1;
        },
    )?;
    Ok(sums
        .iter()
        .zip(&sums_sq)
        .map(|(s, sq)| stats_of(*s, *sq, count))
        .collect())
}

fn final_growth_of(
    market: &Market,
    spec: &StrategySpec,
    alloc: &InitialAllocation,
    fee: &FeeModel,
) -> Result<f64> {
    let traj = run_strategy(market, spec, alloc, fee)?;
    let grid = traj.grid();
    growth_at(
        traj.final_wealth(),
        traj.initial_wealth(),
        grid.time(grid.step_count()),
    )
}

fn selected_resolution(config: &ExperimentConfig, wanted: &str) -> Result<crate::strategy::FeeResolution> {
    let found = config.strategies.iter().find_map(|s| match (wanted, s.kind) {
        ("periodic", StrategyKind::PeriodicBalanced { .. }) => Some(s.fee_resolution),
        ("partial", StrategyKind::PartialBalanced { .. }) => Some(s.fee_resolution),
        ("combined", StrategyKind::PeriodicPartial { .. }) => Some(s.fee_resolution),
        _ => None,
    });
    found.ok_or_else(|| {
        Error::Config(format!(
            "this sweep needs a {wanted} strategy in the strategy list"
        ))
    })
}

fn validate_alphas(alpha_values: &[f64]) -> Result<()> {
    if alpha_values.is_empty() {
        return Err(Error::Config("sweep needs at least one alpha value".into()));
    }
    for a in alpha_values {
        FeeModel::new(*a)?;
    }
    Ok(())
}

/// Sweep final growth over rebalance periods and fee rates for the
/// periodically balanced strategy.
pub fn sweep_rebalance_period(
    config: &ExperimentConfig,
    m_values: &[u32],
    alpha_values: &[f64],
) -> Result<SweepResult> {
    if m_values.is_empty() || m_values.iter().any(|m| *m == 0) {
        return Err(Error::Config("period axis needs values >= 1".into()));
    }
    validate_alphas(alpha_values)?;
    let resolution = selected_resolution(config, "periodic")?;
    let fees: Vec<FeeModel> = alpha_values
        .iter()
        .map(|a| {
            FeeModel::new(*a).map(|f| f.with_initial_purchase_fee(config.fee.charge_initial_purchase))
        })
        .collect::<Result<_>>()?;
    let cells = sweep(config, m_values.len() * fees.len(), |market| {
        let mut finals = Vec::with_capacity(m_values.len() * fees.len());
        for m in m_values {
            let spec = StrategySpec::periodic(*m).with_fee_resolution(resolution);
            for fee in &fees {
                finals.push(final_growth_of(market, &spec, &config.allocation, fee)?);
            }
        }
        Ok(finals)
    })?;
    Ok(SweepResult {
        axis1: SweepAxis {
            name: "m".into(),
            values: m_values.iter().map(|m| *m as f64).collect(),
        },
        axis2: SweepAxis {
            name: "alpha".into(),
            values: alpha_values.to_vec(),
        },
        cells,
    })
}

/// Sweep final growth over partial-rebalance coefficients and fee rates.
pub fn sweep_partial_coefficient(
    config: &ExperimentConfig,
    d_values: &[f64],
    alpha_values: &[f64],
) -> Result<SweepResult> {
    if d_values.is_empty() {
        return Err(Error::Config("coefficient axis needs at least one value".into()));
    }
    for d in d_values {
        if !d.is_finite() || !(0.0..=1.0).contains(d) {
            return Err(Error::Config(format!(
                "partial rebalance coefficient D must lie in [0, 1], got {d}"
            )));
        }
    }
    validate_alphas(alpha_values)?;
    let resolution = selected_resolution(config, "partial")?;
    let fees: Vec<FeeModel> = alpha_values
        .iter()
        .map(|a| {
            FeeModel::new(*a).map(|f| f.with_initial_purchase_fee(config.fee.charge_initial_purchase))
        })
        .collect::<Result<_>>()?;
    let cells = sweep(config, d_values.len() * fees.len(), |market| {
        let mut finals = Vec::with_capacity(d_values.len() * fees.len());
        for d in d_values {
            let spec = StrategySpec::partial(*d).with_fee_resolution(resolution);
            for fee in &fees {
                finals.push(final_growth_of(market, &spec, &config.allocation, fee)?);
            }
        }
        Ok(finals)
    })?;
    Ok(SweepResult {
        axis1: SweepAxis {
            name: "D".into(),
            values: d_values.to_vec(),
        },
        axis2: SweepAxis {
            name: "alpha".into(),
            values: alpha_values.to_vec(),
        },
        cells,
    })
}

/// Sweep final growth over the `m x D` grid of the combined strategy at
/// the single fee rate of `config.fee`.
pub fn sweep_heatmap(
    config: &ExperimentConfig,
    m_values: &[u32],
    d_values: &[f64],
) -> Result<SweepResult> {
    if m_values.is_empty() || m_values.iter().any(|m| *m == 0) {
        return Err(Error::Config("period axis needs values >= 1".into()));
    }
    if d_values.is_empty() {
        return Err(Error::Config("coefficient axis needs at least one value".into()));
    }
    for d in d_values {
        if !d.is_finite() || !(0.0..=1.0).contains(d) {
            return Err(Error::Config(format!(
                "partial rebalance coefficient D must lie in [0, 1], got {d}"
            )));
        }
    }
    let resolution = selected_resolution(config, "combined")?;
    let cells = sweep(config, m_values.len() * d_values.len(), |market| {
        let mut finals = Vec::with_capacity(m_values.len() * d_values.len());
        for m in m_values {
            for d in d_values {
                let spec = StrategySpec::combined(*m, *d).with_fee_resolution(resolution);
                finals.push(final_growth_of(market, &spec, &config.allocation, &config.fee)?);
            }
        }
        Ok(finals)
    })?;
    Ok(SweepResult {
        axis1: SweepAxis {
            name: "m".into(),
            values: m_values.iter().map(|m| *m as f64).collect(),
        },
        axis2: SweepAxis {
            name: "D".into(),
            values: d_values.to_vec(),
        },
        cells,
    })
}

/// One subset draw: which universe assets run `run_index` invests in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetDraw {
    pub run_index: usize,
    /// Sorted, distinct indices into the universe.
    pub asset_indices: Vec<usize>,
}

/// Number of distinct `n`-element subsets of an `N`-element universe.
pub fn subset_count(universe_size: usize, n: usize) -> Result<u128> {
    if n > universe_size {
        return Err(Error::Config(format!(
            "cannot choose {n} assets from a universe of {universe_size}"
        )));
    }
    let k = n.min(universe_size - n) as u128;
    let mut result: u128 = 1;
    for i in 1..=k {
        result = result
            .checked_mul(universe_size as u128 - k + i)
            .ok_or_else(|| Error::Config("subset count overflows".into()))?
            / i;
    }
    Ok(result)
}

/// Draw `runs` independent uniform `n`-element subsets of the universe.
/// Subsets may repeat across runs; each run is seeded by `(seed, run)`.
pub fn draw_subsets(
    universe_size: usize,
    n: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<SubsetDraw>> {
    if n == 0 || universe_size == 0 {
        return Err(Error::Config("subset draws need n >= 1 and N >= 1".into()));
    }
    if n > universe_size {
        return Err(Error::Config(format!(
            "cannot draw {n} assets from a universe of {universe_size}"
        )));
    }
    Ok((0..runs)
        .map(|r| SubsetDraw {
            run_index: r,
            asset_indices: subset_for_run(seed, r, n, universe_size),
        })
        .collect())
}

fn subset_for_run(seed: u64, run: usize, n: usize, universe_size: usize) -> Vec<usize> {
    let mut rng = stream(derive_seed(seed, run as u64));
    sample_subset(&mut rng, n, universe_size)
}

/// Subset-sampling experiment on a fixed market: per run, restrict the
/// market to a fresh uniform `n`-asset subset, run all strategies, and
/// average per strategy. Works identically for simulated universes and
/// ingested real data.
#[allow(clippy::too_many_arguments)]
pub fn subset_experiment(
    market: &Market,
    n: usize,
    runs: usize,
    strategies: &[StrategySpec],
    fee: &FeeModel,
    alloc: &InitialAllocation,
    averaging: Averaging,
    seed: u64,
) -> Result<Vec<StrategyOutcome>> {
    if n == 0 || n > market.asset_count() {
        return Err(Error::Config(format!(
            "cannot draw {n}-asset portfolios from a market of {} assets",
            market.asset_count()
        )));
    }
    if runs == 0 {
        return Err(Error::Config("an experiment needs at least one run".into()));
    }
    if strategies.is_empty() {
        return Err(Error::Config("no strategies selected".into()));
    }
    let grid = *market.grid();
    let mut accumulators: Vec<Accumulator> =
        strategies.iter().map(|_| Accumulator::new(&grid, averaging)).collect();
    for_each_run_ordered(
        runs,
        |r| {
            let indices = subset_for_run(seed, r, n, market.asset_count());
            let restricted = market.restrict(&indices)?;
            run_all_strategies(&restricted, strategies, alloc, fee, averaging)
        },
        |per_strategy| {
            for (acc, (series, final_growth)) in accumulators.iter_mut().zip(&per_strategy) {
                acc.add(series, *final_growth);
            }
        },
    )?;
    strategies
        .iter()
        .zip(accumulators)
        .map(|(spec, acc)| {
            let (series, final_growth) = acc.finish(grid)?;
            Ok(StrategyOutcome {
                spec: *spec,
                series,
                final_growth,
            })
        })
        .collect()
}
