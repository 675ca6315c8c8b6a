use super::grid::{gradient, SpaceGrid};
use crate::error::ModelError;

/// A function sampled on a [`SpaceGrid`].
///
/// Values are interpolated linearly; the derivative is the linear interpolant of
/// nodal centered differences, so a convex table has a nondecreasing derivative.
/// Beyond the grid the table is continued quadratically from its end curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    grid: SpaceGrid,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Tabulated {
    pub fn new(grid: SpaceGrid, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != grid.len() {
            return Err(ModelError::GridMismatch(format!(
                "table has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Domain("tabulated function"));
        }
        let slopes = gradient(&values, grid.dx());
        Ok(Self {
            grid,
            values,
            slopes,
        })
    }

    pub fn from_fn(grid: SpaceGrid, f: impl Fn(f64) -> f64) -> Result<Self, ModelError> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn end_curvatures(&self) -> (f64, f64) {
        let n = self.slopes.len();
        let dx = self.grid.dx();
        (
            (self.slopes[1] - self.slopes[0]) / dx,
            (self.slopes[n - 1] - self.slopes[n - 2]) / dx,
        )
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.values.len();
        let (k_lo, k_hi) = self.end_curvatures();
        if x < self.grid.x_min() {
            let d = x - self.grid.x_min();
            self.values[0] + self.slopes[0] * d + 0.5 * k_lo * d * d
        } else if x > self.grid.x_max() {
            let d = x - self.grid.x_max();
            self.values[n - 1] + self.slopes[n - 1] * d + 0.5 * k_hi * d * d
        } else {
            self.grid.interpolate(&self.values, x)
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.slopes.len();
        let (k_lo, k_hi) = self.end_curvatures();
        if x < self.grid.x_min() {
            self.slopes[0] + k_lo * (x - self.grid.x_min())
        } else if x > self.grid.x_max() {
            self.slopes[n - 1] + k_hi * (x - self.grid.x_max())
        } else {
            self.grid.interpolate(&self.slopes, x)
        }
    }

    /// Nodal slopes (centered inside, one-sided at the ends).
    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }
}
