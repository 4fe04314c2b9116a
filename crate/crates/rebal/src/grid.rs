//! Uniform time grids.
//!
//! Everything in the engine happens at the discrete moments
//! `t_k = k * dt`, `k = 0..=K`, with `K * dt` equal to the horizon `T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to decide whether `T / dt` is an integer.
pub const GRID_INTEGRALITY_TOL: f64 = 1e-9;

/// A uniform grid of `K + 1` time points spanning `[0, T]` in years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    /// Build a grid from a horizon and a step, both in years.
    ///
    /// Fails when `T / dt` is not an integer to within
    /// [`GRID_INTEGRALITY_TOL`] relative tolerance: a silently rounded step
    /// count would shift the horizon.
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::Config(format!(
                "horizon must be a positive number of years, got {horizon}"
            )));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::Config(format!(
                "dt must be a positive number of years, got {dt}"
            )));
        }
        if dt > horizon {
            return Err(Error::Config(format!(
                "dt = {dt} exceeds the horizon T = {horizon}"
            )));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > GRID_INTEGRALITY_TOL * ratio {
            return Err(Error::Config(format!(
                "horizon T = {horizon} is not an integer multiple of dt = {dt} \
                 (T/dt = {ratio})"
            )));
        }
        Ok(Self {
            horizon,
            dt,
            steps: steps as usize,
        })
    }

    /// Horizon `T` in years.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Step length in years.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps `K`; the grid has `K + 1` points.
    pub fn step_count(&self) -> usize {
        self.steps
    }

    /// Number of grid points, `K + 1`.
    pub fn point_count(&self) -> usize {
        self.steps + 1
    }

    /// The time `t_k = k * dt`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Iterator over `t_0, .., t_K`.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.time(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_year_half_steps() {
        let g = TimeGrid::new(1.0, 0.5).unwrap();
        assert_eq!(g.step_count(), 2);
        let times: Vec<f64> = g.times().collect();
        assert_eq!(times, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn long_horizon_step_count() {
        let g = TimeGrid::new(300.0, 0.1).unwrap();
        assert_eq!(g.step_count(), 3000);
        assert_eq!(g.point_count(), 3001);
        assert!((g.time(3000) - 300.0).abs() <= 1e-9 * 300.0);
    }

    #[test]
    fn non_integer_ratio_is_rejected() {
        let err = TimeGrid::new(1.0, 0.3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('1') && msg.contains("0.3"), "message: {msg}");
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(TimeGrid::new(0.0, 0.1).is_err());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        assert!(TimeGrid::new(1.0, -0.1).is_err());
        assert!(TimeGrid::new(1.0, 2.0).is_err());
    }

    #[test]
    fn times_are_strictly_increasing_from_zero() {
        let g = TimeGrid::new(2.5, 0.25).unwrap();
        let times: Vec<f64> = g.times().collect();
        assert_eq!(times[0], 0.0);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(times.len(), g.point_count());
    }
}
