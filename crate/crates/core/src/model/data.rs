use super::grid::{second_difference, SpaceGrid};
use super::tabulated::Tabulated;
use crate::error::{param, ModelError};

/// Terminal cost `ū` charged at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalCost {
    /// `(gamma / 2) (y - zeta)²`
    Quadratic { gamma: f64, zeta: f64 },
    Tabulated(Tabulated),
}

impl TerminalCost {
    pub fn quadratic(gamma: f64, zeta: f64) -> Result<Self, ModelError> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(param("gamma", format!("must be finite and >= 0, got {gamma}")));
        }
        if !zeta.is_finite() {
            return Err(param("zeta", "must be finite"));
        }
        Ok(Self::Quadratic { gamma, zeta })
    }

    pub fn zero() -> Self {
        Self::Quadratic {
            gamma: 0.0,
            zeta: 0.0,
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        match self {
            Self::Quadratic { gamma, zeta } => 0.5 * gamma * (y - zeta).powi(2),
            Self::Tabulated(t) => t.value(y),
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        match self {
            Self::Quadratic { gamma, zeta } => gamma * (y - zeta),
            Self::Tabulated(t) => t.derivative(y),
        }
    }

    /// Nodal samples on `grid`.
    pub fn samples(&self, grid: &SpaceGrid) -> Vec<f64> {
        match self {
            Self::Tabulated(t) if t.grid() == grid => t.values().to_vec(),
            _ => grid.nodes().into_iter().map(|y| self.value(y)).collect(),
        }
    }

    /// Convexity by nonnegative second differences on `grid`.
    pub fn is_convex_on(&self, grid: &SpaceGrid, tol: f64) -> bool {
        match self {
            Self::Quadratic { gamma, .. } => *gamma >= 0.0,
            Self::Tabulated(_) => {
                let v = self.samples(grid);
                second_difference(&v, grid.dx()).iter().all(|&d| d >= -tol)
            }
        }
    }
}

/// Initial agent density `m̄` on a [`SpaceGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDensity {
    grid: SpaceGrid,
    values: Vec<f64>,
    mean: f64,
}

/// Normalization tolerance for the trapezoidal mass.
pub const DENSITY_MASS_TOL: f64 = 1e-12;

impl InitialDensity {
    /// Checks nonnegativity, unit trapezoidal mass and negligible density at the
    /// grid ends.
    pub fn new(grid: SpaceGrid, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != grid.len() {
            return Err(ModelError::GridMismatch(format!(
                "density has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Density("non-finite value".into()));
        }
        if let Some(v) = values.iter().find(|&&v| v < 0.0) {
            return Err(ModelError::Density(format!("negative value {v}")));
        }
        let mass = grid.integrate(&values);
        if (mass - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(ModelError::Density(format!("mass {mass} differs from 1")));
        }
        let peak = values.iter().cloned().fold(0.0, f64::max);
        let n = values.len();
        if values[0] > 1e-6 * peak || values[n - 1] > 1e-6 * peak {
            return Err(ModelError::Density(
                "density does not vanish at the grid ends; widen [x_min, x_max]".into(),
            ));
        }
        let mean = grid.integrate_with(&values, |_, x| x);
        Ok(Self { grid, values, mean })
    }

    /// Rescales nonnegative samples to unit mass.
    pub fn normalized(grid: SpaceGrid, mut values: Vec<f64>) -> Result<Self, ModelError> {
        let mass = grid.integrate(&values);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(ModelError::Density(format!("cannot normalize mass {mass}")));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Self::new(grid, values)
    }

    /// Gaussian bump with the given mean and standard deviation, renormalized on the grid.
    pub fn gaussian(grid: SpaceGrid, mean: f64, std: f64) -> Result<Self, ModelError> {
        if !(std.is_finite() && std > 0.0) {
            return Err(param("std", "must be positive"));
        }
        let values = grid
            .nodes()
            .into_iter()
            .map(|x| (-0.5 * ((x - mean) / std).powi(2)).exp())
            .collect();
        Self::normalized(grid, values)
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean charge `x̄ = ∫ x m̄ dx`.
    pub fn mean(&self) -> f64 {
        self.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SpaceGrid {
        SpaceGrid::new(-5.0, 5.0, 201).unwrap()
    }

    #[test]
    fn gaussian_is_normalized_with_mean() {
        let m = InitialDensity::gaussian(grid(), 0.7, 0.5).unwrap();
        assert!((grid().integrate(m.values()) - 1.0).abs() < 1e-12);
        assert!((m.mean() - 0.7).abs() < 1e-10);
    }

    #[test]
    fn rejects_negative_and_unnormalized() {
        let mut v = vec![0.0; 201];
        v[100] = 1.0 / grid().dx();
        assert!(InitialDensity::new(grid(), v.clone()).is_ok());
        v[99] = -1e-3;
        assert!(InitialDensity::new(grid(), v).is_err());
        assert!(InitialDensity::new(grid(), vec![0.0; 201]).is_err());
    }

    #[test]
    fn rejects_mass_at_boundary() {
        assert!(InitialDensity::gaussian(grid(), 4.9, 1.0).is_err());
    }

    #[test]
    fn terminal_convexity_flag() {
        let g = grid();
        assert!(TerminalCost::quadratic(1.0, 0.0).unwrap().is_convex_on(&g, 0.0));
        let concave = TerminalCost::Tabulated(Tabulated::from_fn(g, |x| -x * x).unwrap());
        assert!(!concave.is_convex_on(&g, 1e-9));
    }
}
