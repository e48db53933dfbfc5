//! Discretization of the unit resource interval.
//!
//! Every allocation share, sample threshold and query point is an integer
//! number of grid units in `0..=resolution`. "Strictly above a threshold"
//! therefore means one unit above it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A position on the grid, in units of `1 / resolution`.
pub type Units = u32;

/// Absolute tolerance used for every utility comparison.
pub const UTILITY_TOL: f64 = 1e-9;

pub const DEFAULT_RESOLUTION: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    resolution: u32,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl Grid {
    pub fn new(resolution: u32) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::domain("grid resolution must be positive"));
        }
        Ok(Grid { resolution })
    }

    /// Number of units spanning the whole resource.
    #[inline]
    pub fn resolution(self) -> u32 {
        self.resolution
    }

    #[inline]
    pub fn to_real(self, units: Units) -> f64 {
        units as f64 / self.resolution as f64
    }

    /// Converts a real fraction to grid units, rejecting points that are not
    /// within half a part-per-million of a grid point.
    pub fn from_real(self, x: f64) -> Result<Units> {
        if !(0.0..=1.0 + 1e-12).contains(&x) {
            return Err(Error::domain(format!("{x} is outside [0, 1]")));
        }
        let scaled = x * self.resolution as f64;
        let units = scaled.round();
        if (scaled - units).abs() > 1e-6 {
            return Err(Error::domain(format!(
                "{x} is not on the grid of resolution {}",
                self.resolution
            )));
        }
        Ok((units as u32).min(self.resolution))
    }

    /// Rounds a real fraction to the nearest grid point.
    pub fn snap(self, x: f64) -> Units {
        let x = x.clamp(0.0, 1.0);
        ((x * self.resolution as f64).round() as u32).min(self.resolution)
    }

    pub fn check(self, units: Units) -> Result<Units> {
        if units > self.resolution {
            return Err(Error::domain(format!(
                "{units} exceeds grid resolution {}",
                self.resolution
            )));
        }
        Ok(units)
    }
}
