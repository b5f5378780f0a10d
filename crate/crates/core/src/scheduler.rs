//! Time discretization, the region/global phase switch, and the reference
//! forward-noising trajectory.
//!
//! Time is normalized: `s = 1` is pure noise and `s = 0` the clean image.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::{lerp, Grid, NoiseField};

/// Strictly decreasing grid from 1.0 to 0.0 inclusive, `steps + 1` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    steps: usize,
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid, `times[i] = 1 - i/T`.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(CoreError::Config("steps must be at least 1".into()));
        }
        // (T - i) / T is the correctly rounded value of 1 - i/T, so grid points
        // compare equal to the decimal literal of the same ratio.
        let t = steps as f64;
        let times = (0..=steps).map(|i| (steps - i) as f64 / t).collect();
        Ok(Self { steps, times })
    }

    /// Uniform grid warped by `s' = k·s / (1 + (k - 1)·s)`, the resolution
    /// shift some flow-matching backbones advertise. `k = 1` is uniform.
    pub fn shifted(steps: usize, shift: f64) -> Result<Self> {
        if !(shift.is_finite() && shift > 0.0) {
            return Err(CoreError::Config(format!("schedule shift {shift} must be positive")));
        }
        let mut grid = Self::uniform(steps)?;
        for s in grid.times.iter_mut().skip(1).take(steps - 1) {
            *s = shift * *s / (1.0 + (shift - 1.0) * *s);
        }
        Ok(grid)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, index: usize) -> f64 {
        self.times[index]
    }

    /// Step size taken from grid point `index` to `index + 1`.
    pub fn step_size(&self, index: usize) -> f64 {
        self.times[index] - self.times[index + 1]
    }
}

/// Switch ratio ρ. Steps taken at `s > ρ` are region-phase; `s ≤ ρ` is global.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SwitchPolicy {
    rho: f64,
}

impl SwitchPolicy {
    pub fn new(rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(CoreError::Config(format!("rho {rho} outside [0, 1]")));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

impl TryFrom<f64> for SwitchPolicy {
    type Error = CoreError;

    fn try_from(rho: f64) -> Result<Self> {
        Self::new(rho)
    }
}

impl From<SwitchPolicy> for f64 {
    fn from(p: SwitchPolicy) -> f64 {
        p.rho
    }
}

pub fn is_region_phase(s: f64, policy: SwitchPolicy) -> bool {
    s > policy.rho
}

/// Number of leading steps (out of `T`) that run in the region phase.
pub fn region_phase_steps(grid: &TimeGrid, policy: SwitchPolicy) -> usize {
    grid.times[..grid.steps]
        .iter()
        .take_while(|&&s| is_region_phase(s, policy))
        .count()
}

/// Rectified-flow interpolant `(1 - s)·z0 + s·ε`.
pub fn reference_latent<S: Scalar>(z0: &Grid<S>, eps: &NoiseField<S>, s: f64) -> Result<Grid<S>> {
    lerp(z0, &eps.grid, s)
}

/// One Euler step toward `s = 0`: `z - ds·v`.
pub fn euler_step<S: Scalar>(z: &Grid<S>, velocity: &Grid<S>, ds: f64) -> Result<Grid<S>> {
    if !(ds > 0.0 && ds.is_finite()) {
        return Err(CoreError::Config(format!("step size {ds} must be positive")));
    }
    let ds = S::of(ds);
    z.zip_map(velocity, |a, v| a - ds * v)
}
