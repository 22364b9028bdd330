//! The discrete set of admissible forecast values.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Tolerance, in grid steps, for deciding that a real value sits on a grid point.
const ON_GRID_TOLERANCE: f64 = 1e-7;

/// Largest supported number of grid steps over `[0, 1]`.
pub const MAX_DIVISIONS: u32 = 1_000_000;

/// A uniform grid over `[0, 1]` with `divisions` steps, i.e. the points `k / divisions`.
///
/// Serialized as its step size (`0.01` for percentage points).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Grid {
    divisions: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("grid step {0} does not evenly divide [0, 1]")]
pub struct InvalidGrid(pub f64);

impl Grid {
    pub const PERCENT: Grid = Grid { divisions: 100 };

    pub fn with_divisions(divisions: u32) -> Result<Self, InvalidGrid> {
        if divisions == 0 || divisions > MAX_DIVISIONS {
            return Err(InvalidGrid(if divisions == 0 { f64::INFINITY } else { 1.0 / divisions as f64 }));
        }
        Ok(Grid { divisions })
    }

    /// Builds a grid from its step size. The step must divide 1 into a whole number of parts.
    pub fn from_step(step: f64) -> Result<Self, InvalidGrid> {
        if !step.is_finite() || step <= 0.0 || step > 1.0 {
            return Err(InvalidGrid(step));
        }
        let parts = (1.0 / step).round();
        if parts < 1.0 || parts > MAX_DIVISIONS as f64 || (parts * step - 1.0).abs() > 1e-9 {
            return Err(InvalidGrid(step));
        }
        Ok(Grid { divisions: parts as u32 })
    }

    pub fn divisions(&self) -> u32 {
        self.divisions
    }

    pub fn step(&self) -> f64 {
        1.0 / self.divisions as f64
    }

    /// The value of grid point `k`. Division is correctly rounded, so `point(38)` on the
    /// percent grid is bit-identical to the literal `0.38`.
    pub fn point(&self, k: u32) -> f64 {
        k as f64 / self.divisions as f64
    }

    /// Index of `value` on the grid, if it lies on one.
    pub fn index_of(&self, value: f64) -> Option<u32> {
        if !(0.0..=1.0).contains(&value) {
            return None;
        }
        let scaled = value * self.divisions as f64;
        let k = scaled.round();
        ((scaled - k).abs() <= ON_GRID_TOLERANCE).then_some(k as u32)
    }

    pub fn contains(&self, value: f64) -> bool {
        self.index_of(value).is_some()
    }

    /// Nearest grid point to `value` (clamped into `[0, 1]`).
    pub fn snap(&self, value: f64) -> f64 {
        let clamped = value.clamp(0.0, 1.0);
        self.point((clamped * self.divisions as f64).round() as u32)
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.divisions).map(move |k| self.point(k))
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid::PERCENT
    }
}

impl TryFrom<f64> for Grid {
    type Error = InvalidGrid;

    fn try_from(step: f64) -> Result<Self, Self::Error> {
        Grid::from_step(step)
    }
}

impl From<Grid> for f64 {
    fn from(grid: Grid) -> f64 {
        grid.step()
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.step())
    }
}
