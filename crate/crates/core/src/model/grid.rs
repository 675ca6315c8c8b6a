use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Uniform time grid on `[0, horizon]` with `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, ModelError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::Grid(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(ModelError::Grid(format!("need at least 2 time steps, got {steps}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    /// Same horizon, `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            horizon: self.horizon,
            steps: self.steps * factor.max(1),
        }
    }
}

/// Uniform spatial grid on `[x_min, x_max]` with `nodes` points (endpoints included).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    nodes: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, nodes: usize) -> Result<Self, ModelError> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(ModelError::Grid(format!("need x_min < x_max, got [{x_min}, {x_max}]")));
        }
        if nodes < 3 {
            return Err(ModelError::Grid(format!("need at least 3 space nodes, got {nodes}")));
        }
        Ok(Self { x_min, x_max, nodes })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.nodes - 1 {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nodes).map(|i| self.node(i)).collect()
    }

    /// Trapezoidal quadrature weights; also the control-volume widths of the
    /// finite-volume density update (half cells at both ends).
    pub fn weights(&self) -> Vec<f64> {
        let dx = self.dx();
        let mut w = vec![dx; self.nodes];
        w[0] = 0.5 * dx;
        w[self.nodes - 1] = 0.5 * dx;
        w
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.nodes);
        let dx = self.dx();
        let n = values.len();
        let interior: f64 = values[1..n - 1].iter().sum();
        dx * (interior + 0.5 * (values[0] + values[n - 1]))
    }

    /// Integral of `f(x_i) * values[i]` with trapezoidal weights.
    pub fn integrate_with<F: Fn(usize, f64) -> f64>(&self, values: &[f64], f: F) -> f64 {
        let w = self.weights();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| w[i] * f(i, self.node(i)) * v)
            .sum()
    }

    /// Same interval, `factor` times finer.
    pub fn refined(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        Self {
            x_min: self.x_min,
            x_max: self.x_max,
            nodes: (self.nodes - 1) * factor + 1,
        }
    }

    /// Piecewise-linear interpolation of nodal values; constant beyond the ends.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let (i, s) = self.locate(x);
        values[i] * (1.0 - s) + values[i + 1] * s
    }

    /// Cell index `i` and local coordinate `s ∈ [0,1]` with `x ≈ x_i + s·dx`,
    /// clamped to the grid.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let dx = self.dx();
        let pos = ((x - self.x_min) / dx).clamp(0.0, (self.nodes - 1) as f64);
        let i = (pos.floor() as usize).min(self.nodes - 2);
        (i, pos - i as f64)
    }
}

/// First derivative by centered differences inside, one-sided at the ends.
pub fn gradient(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    let mut g = vec![0.0; n];
    g[0] = (values[1] - values[0]) / dx;
    g[n - 1] = (values[n - 1] - values[n - 2]) / dx;
    for i in 1..n - 1 {
        g[i] = (values[i + 1] - values[i - 1]) / (2.0 * dx);
    }
    g
}

/// Second differences `(v[i+1] - 2v[i] + v[i-1]) / dx²` at interior nodes, with the
/// neighbouring interior value copied to the ends.
pub fn second_difference(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (dx * dx);
    }
    d[0] = d[1];
    d[n - 1] = d[n - 2];
    d
}
