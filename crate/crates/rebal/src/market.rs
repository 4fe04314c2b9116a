//! Price path simulation and market assembly.
//!
//! A market is a set of per-asset price paths on one shared [`TimeGrid`].
//! Simulated paths follow geometric Brownian motion,
//!
//! ```text
//! S(t_k) = s0 * exp((mu - sigma^2 / 2) * t_k + sigma * B(t_k)),
//! ```
//!
//! where `B` is a discrete Brownian path built from independent
//! `N(0, dt)` increments. Path `i` of a market is a deterministic function
//! of `(seed, i)` alone, so markets can be generated in any order, or in
//! parallel, without changing a single bit of the result.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{derive_seed, NormalSource};

/// Significant digits used when dumping floats; enough for exact round-trip.
pub(crate) const FLOAT_DIGITS: usize = 16; // {:.16e} prints 17 significant digits

pub(crate) fn format_float(x: f64) -> String {
    format!("{x:.FLOAT_DIGITS$e}")
}

/// A discrete Brownian motion path: `B(0) = 0`, independent `N(0, dt)`
/// increments.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl BrownianPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Values `B(t_0), .., B(t_K)`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Sample a Brownian path on `grid`, deterministically from `seed`.
pub fn sample_brownian_path(grid: TimeGrid, seed: u64) -> BrownianPath {
    let mut source = NormalSource::new(seed);
    let sqrt_dt = grid.dt().sqrt();
    let mut values = Vec::with_capacity(grid.point_count());
    values.push(0.0);
    let mut current = 0.0;
    for _ in 1..=grid.step_count() {
        current += sqrt_dt * source.next_normal();
        values.push(current);
    }
    BrownianPath { grid, values }
}

/// Parameters of geometric Brownian motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    /// Drift, per year.
    pub drift: f64,
    /// Volatility, per square-root year.
    pub volatility: f64,
    /// Initial price `s0 > 0`.
    pub initial_price: f64,
}

impl GbmParams {
    pub fn new(drift: f64, volatility: f64, initial_price: f64) -> Result<Self> {
        if !drift.is_finite() {
            return Err(Error::Config(format!("drift must be finite, got {drift}")));
        }
        if !volatility.is_finite() || volatility < 0.0 {
            return Err(Error::Config(format!(
                "volatility must be finite and non-negative, got {volatility}"
            )));
        }
        if !initial_price.is_finite() || initial_price <= 0.0 {
            return Err(Error::Config(format!(
                "initial price must be positive, got {initial_price}"
            )));
        }
        Ok(Self {
            drift,
            volatility,
            initial_price,
        })
    }
}

/// One asset's prices on a grid; strictly positive everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    grid: TimeGrid,
    prices: Vec<f64>,
}

impl PricePath {
    /// Wrap externally produced prices, validating positivity.
    pub fn new(grid: TimeGrid, prices: Vec<f64>) -> Result<Self> {
        if prices.len() != grid.point_count() {
            return Err(Error::Dimension(format!(
                "price path has {} points but the grid has {}",
                prices.len(),
                grid.point_count()
            )));
        }
        if let Some(bad) = prices.iter().find(|p| !p.is_finite() || **p <= 0.0) {
            return Err(Error::Domain(format!(
                "prices must be positive and finite, found {bad}"
            )));
        }
        Ok(Self { grid, prices })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }
}

/// Map a Brownian path through the closed-form GBM solution.
pub fn gbm_path(params: &GbmParams, brownian: &BrownianPath) -> PricePath {
    let grid = *brownian.grid();
    let log_drift = params.drift - 0.5 * params.volatility * params.volatility;
    let prices = brownian
        .values()
        .iter()
        .enumerate()
        .map(|(k, b)| params.initial_price * (log_drift * grid.time(k) + params.volatility * b).exp())
        .collect();
    PricePath { grid, prices }
}

/// A set of asset price paths sharing one grid, with unique labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    grid: TimeGrid,
    assets: Vec<PricePath>,
    labels: Vec<String>,
}

impl Market {
    pub fn new(assets: Vec<PricePath>, labels: Vec<String>) -> Result<Self> {
        if assets.is_empty() {
            return Err(Error::Config("a market needs at least one asset".into()));
        }
        if assets.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} paths but {} labels",
                assets.len(),
                labels.len()
            )));
        }
        let grid = *assets[0].grid();
        if assets.iter().any(|a| *a.grid() != grid) {
            return Err(Error::Config(
                "all asset paths in a market must share one time grid".into(),
            ));
        }
        let mut seen = labels.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != labels.len() {
            return Err(Error::Config("asset labels must be unique".into()));
        }
        Ok(Self {
            grid,
            assets,
            labels,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn asset_count(&self) -> usize {
        self.assets.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn asset(&self, i: usize) -> &PricePath {
        &self.assets[i]
    }

    /// Price of asset `i` at grid point `k`.
    pub fn price(&self, i: usize, k: usize) -> f64 {
        self.assets[i].prices[k]
    }

    /// Fill `out` with all asset prices at grid point `k`.
    pub fn prices_at_into(&self, k: usize, out: &mut [f64]) {
        for (slot, asset) in out.iter_mut().zip(&self.assets) {
            *slot = asset.prices[k];
        }
    }

    /// A new market consisting of the selected assets, in the given order.
    pub fn restrict(&self, indices: &[usize]) -> Result<Market> {
        if indices.is_empty() {
            return Err(Error::Config("cannot restrict a market to zero assets".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.asset_count()) {
            return Err(Error::Config(format!(
                "asset index {bad} out of range for a market of {} assets",
                self.asset_count()
            )));
        }
        Market::new(
            indices.iter().map(|&i| self.assets[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i].clone()).collect(),
        )
    }

    /// Dump as CSV: header `t,<label_0>,..`, one row per grid point, floats
    /// with 17 significant digits so the file re-parses bit-exactly.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "t")?;
        for label in &self.labels {
            write!(out, ",{label}")?;
        }
        writeln!(out)?;
        for k in 0..self.grid.point_count() {
            write!(out, "{}", format_float(self.grid.time(k)))?;
            for asset in &self.assets {
                write!(out, ",{}", format_float(asset.prices[k]))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Parse a market dumped by [`Market::write_csv`].
    pub fn read_csv<R: BufRead>(input: R, source_name: &str) -> Result<Market> {
        let parse_err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut lines = input.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?;
        let header = header?;
        let mut columns = header.split(',');
        if columns.next() != Some("t") {
            return Err(parse_err(1, "expected header starting with 't'".into()));
        }
        let labels: Vec<String> = columns.map(str::to_string).collect();
        if labels.is_empty() {
            return Err(parse_err(1, "no asset columns in header".into()));
        }

        let mut times = Vec::new();
        let mut columns_data: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let t: f64 = fields
                .next()
                .unwrap()
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad time value: {e}")))?;
            times.push(t);
            for column in columns_data.iter_mut() {
                let field = fields
                    .next()
                    .ok_or_else(|| parse_err(line_no, "missing price field".into()))?;
                let price: f64 = field
                    .parse()
                    .map_err(|e| parse_err(line_no, format!("bad price value: {e}")))?;
                column.push(price);
            }
            if fields.next().is_some() {
                return Err(parse_err(line_no, "extra fields in row".into()));
            }
        }
        if times.len() < 2 {
            return Err(parse_err(times.len() + 1, "need at least two grid points".into()));
        }
        let dt = times[1] - times[0];
        let grid = TimeGrid::new(*times.last().unwrap(), dt)?;
        let assets = columns_data
            .into_iter()
            .map(|prices| PricePath::new(grid, prices))
            .collect::<Result<Vec<_>>>()?;
        Market::new(assets, labels)
    }
}

/// Simulate `n_assets` independent GBM paths on `grid`.
///
/// Asset `i` uses the derived seed `derive_seed(seed, i)`, so the market is
/// reproducible and independent of generation order.
pub fn simulate_market(
    n_assets: usize,
    params: &GbmParams,
    grid: TimeGrid,
    seed: u64,
) -> Result<Market> {
    if n_assets == 0 {
        return Err(Error::Config("a market needs at least one asset".into()));
    }
    let assets = (0..n_assets)
        .map(|i| gbm_path(params, &sample_brownian_path(grid, derive_seed(seed, i as u64))))
        .collect();
    let labels = (0..n_assets).map(|i| format!("asset_{i}")).collect();
    Market::new(assets, labels)
}
