//! The growth-of-wealth metric and cross-run averaging.
//!
//! Growth at time `t != 0` is `g(t) = log(W(t) / W(0)) / t`: scale-free in
//! the initial wealth and flattened by the logarithm, so runs of different
//! sizes and horizons are comparable. `t = 0` is excluded from every
//! series.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::market::format_float;
use crate::strategy::WealthTrajectory;

/// Growth values `g(t_1), .., g(t_K)` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSeries {
    grid: TimeGrid,
    values: Vec<f64>,
    run_count: usize,
}

impl GrowthSeries {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `values()[k - 1]` is `g(t_k)` for `k = 1..=K`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of runs this series aggregates; 1 for a single run.
    pub fn run_count(&self) -> usize {
        self.run_count
    }

    /// Growth at the horizon, `g(T)`.
    pub fn final_growth(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Wrap precomputed growth values `g(t_1), .., g(t_K)`.
    pub fn from_values(grid: TimeGrid, values: Vec<f64>, run_count: usize) -> Result<Self> {
        if values.len() != grid.step_count() {
            return Err(Error::Dimension(format!(
                "{} growth values for a grid of {} steps",
                values.len(),
                grid.step_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("growth values must be finite".into()));
        }
        Ok(Self {
            grid,
            values,
            run_count,
        })
    }

    /// Derive a series from wealth values on all `K + 1` grid points.
    pub fn from_wealth_points(grid: TimeGrid, wealth: &[f64], run_count: usize) -> Result<Self> {
        if wealth.len() != grid.point_count() {
            return Err(Error::Dimension(format!(
                "{} wealth points for a grid of {}",
                wealth.len(),
                grid.point_count()
            )));
        }
        let w0 = wealth[0];
        let values = wealth[1..]
            .iter()
            .enumerate()
            .map(|(i, w)| growth_at(*w, w0, grid.time(i + 1)))
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("at grid point: {msg}")),
                other => other,
            })?;
        Ok(Self {
            grid,
            values,
            run_count,
        })
    }

    /// Dump as CSV with header `t,growth,run_count`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,growth,run_count")?;
        for (i, g) in self.values.iter().enumerate() {
            writeln!(
                out,
                "{},{},{}",
                format_float(self.grid.time(i + 1)),
                format_float(*g),
                self.run_count
            )?;
        }
        Ok(())
    }
}

/// Growth of wealth `log(W_t / W_0) / t`.
pub fn growth_at(w_t: f64, w_0: f64, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Err(Error::Domain("growth of wealth is undefined at t = 0".into()));
    }
    if !(w_t > 0.0) || !(w_0 > 0.0) {
        return Err(Error::Domain(format!(
            "growth of wealth needs positive wealth, got W_t = {w_t}, W_0 = {w_0}"
        )));
    }
    Ok((w_t / w_0).ln() / t)
}

/// Growth series of a single wealth trajectory.
pub fn growth_series(trajectory: &WealthTrajectory) -> Result<GrowthSeries> {
    GrowthSeries::from_wealth_points(*trajectory.grid(), trajectory.wealth(), 1)
}

/// Pointwise arithmetic mean of growth series on identical grids.
/// The result's run count is the sum of the inputs' run counts.
pub fn average_series(series: &[GrowthSeries]) -> Result<GrowthSeries> {
    let first = series
        .first()
        .ok_or_else(|| Error::Config("cannot average an empty collection of series".into()))?;
    if series.iter().any(|s| s.grid != first.grid) {
        return Err(Error::Config(
            "all series in an average must share one time grid".into(),
        ));
    }
    let mut values = vec![0.0; first.values.len()];
    for s in series {
        for (acc, v) in values.iter_mut().zip(&s.values) {
            *acc += v;
        }
    }
    let count = series.len() as f64;
    for v in values.iter_mut() {
        *v /= count;
    }
    Ok(GrowthSeries {
        grid: first.grid,
        values,
        run_count: series.iter().map(|s| s.run_count).sum(),
    })
}
