use super::grid::{gradient, second_difference, SpaceGrid, TimeGrid};
use crate::error::ModelError;

/// Price `ϖ(t)` at the nodes of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct PricePath {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl PricePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != grid.len() {
            return Err(ModelError::GridMismatch(format!(
                "price has {} values, time grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Domain("price path"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self, ModelError> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Linear interpolation between nodes; clamped outside `[0, T]`.
    pub fn at(&self, t: f64) -> f64 {
        let dt = self.grid.dt();
        let pos = (t / dt).clamp(0.0, self.grid.steps() as f64);
        let k = (pos.floor() as usize).min(self.grid.steps() - 1);
        let s = pos - k as f64;
        self.values[k] * (1.0 - s) + self.values[k + 1] * s
    }

    /// Discrete Lipschitz constant `max |Δϖ| / dt`.
    pub fn lipschitz_estimate(&self) -> f64 {
        let dt = self.grid.dt();
        self.values
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / dt)
            .fold(0.0, f64::max)
    }

    /// `max ϖ - min ϖ`.
    pub fn peak_to_peak(&self) -> f64 {
        let max = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }

    pub fn sup_distance(&self, other: &PricePath) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Nodal values on `SpaceGrid × TimeGrid`, stored time-major.
#[derive(Debug, Clone, PartialEq)]
struct SpaceTime {
    space: SpaceGrid,
    time: TimeGrid,
    values: Vec<f64>,
}

impl SpaceTime {
    fn new(space: SpaceGrid, time: TimeGrid, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != space.len() * time.len() {
            return Err(ModelError::GridMismatch(format!(
                "{} values for a {}x{} grid",
                values.len(),
                space.len(),
                time.len()
            )));
        }
        Ok(Self {
            space,
            time,
            values,
        })
    }

    fn slice(&self, k: usize) -> &[f64] {
        let n = self.space.len();
        &self.values[k * n..(k + 1) * n]
    }
}

/// Value function `u(x_i, t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField(SpaceTime);

impl ValueField {
    pub fn new(space: SpaceGrid, time: TimeGrid, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Domain("value field"));
        }
        SpaceTime::new(space, time, values).map(Self)
    }

    pub fn from_fn(
        space: SpaceGrid,
        time: TimeGrid,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, ModelError> {
        let xs = space.nodes();
        let values = time
            .nodes()
            .into_iter()
            .flat_map(|t| xs.iter().map(move |&x| (x, t)))
            .map(|(x, t)| f(x, t))
            .collect();
        Self::new(space, time, values)
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.0.space
    }

    pub fn time(&self) -> &TimeGrid {
        &self.0.time
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        self.0.slice(k)
    }

    /// `u_x` at time node `k`: centered inside, one-sided at the ends.
    pub fn gradient(&self, k: usize) -> Vec<f64> {
        gradient(self.slice(k), self.space().dx())
    }

    pub fn second_difference(&self, k: usize) -> Vec<f64> {
        second_difference(self.slice(k), self.space().dx())
    }

    /// Largest one-sided difference quotient of slice `k`.
    pub fn lipschitz(&self, k: usize) -> f64 {
        let dx = self.space().dx();
        self.slice(k)
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / dx)
            .fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        self.values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Agent density `m(x_i, t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField(SpaceTime);

impl DensityField {
    pub fn new(space: SpaceGrid, time: TimeGrid, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Domain("density field"));
        }
        SpaceTime::new(space, time, values).map(Self)
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.0.space
    }

    pub fn time(&self) -> &TimeGrid {
        &self.0.time
    }

    pub fn values(&self) -> &[f64] {
        &self.0.values
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        self.0.slice(k)
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.space().integrate(self.slice(k))
    }

    /// `∫ x m(x, t_k) dx`.
    pub fn mean(&self, k: usize) -> f64 {
        self.space().integrate_with(self.slice(k), |_, x| x)
    }

    pub fn min(&self) -> f64 {
        self.values().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Largest `|mass(t_k) - 1|` over all time nodes.
    pub fn max_mass_error(&self) -> f64 {
        (0..self.time().len())
            .map(|k| (self.mass(k) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest mass sitting in the two end cells over all time nodes.
    pub fn boundary_mass(&self) -> f64 {
        let w = self.space().weights();
        let n = w.len();
        (0..self.time().len())
            .map(|k| {
                let s = self.slice(k);
                w[0] * s[0] + w[n - 1] * s[n - 1]
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn price_lipschitz_and_interpolation() {
        let g = TimeGrid::new(2.0, 4).unwrap();
        let p = PricePath::new(g, vec![0.0, 1.0, 1.0, 0.0, 0.5]).unwrap();
        assert_eq!(p.lipschitz_estimate(), 2.0);
        assert_eq!(p.at(0.25), 0.5);
        assert_eq!(p.at(5.0), 0.5);
        assert_eq!(p.peak_to_peak(), 1.0);
        assert!(PricePath::new(g, vec![0.0; 4]).is_err());
        assert!(PricePath::new(g, vec![0.0, f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn value_field_layout() {
        let s = SpaceGrid::new(0.0, 1.0, 5).unwrap();
        let t = TimeGrid::new(1.0, 2).unwrap();
        let u = ValueField::from_fn(s, t, |x, t| x + 10.0 * t).unwrap();
        assert_eq!(u.slice(2)[4], 11.0);
        assert!(u.gradient(1).iter().all(|g| (g - 1.0).abs() < 1e-12));
        assert!((u.lipschitz(0) - 1.0).abs() < 1e-12);
    }
}
