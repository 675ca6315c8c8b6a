//! Forward solver for `m_t - (D_pH(x, ϖ + u_x) m)_x = ε m_xx`, `m(·, 0) = m̄`.
//!
//! Transport is a first-order conservative upwind finite-volume update on the
//! trapezoidal control volumes of the grid, with zero flux through both ends.
//! It is the exact adjoint of the Godunov linearization used for the value
//! function, so mass is conserved to rounding and `m` stays nonnegative.

use thiserror::Error;

use crate::error::ModelError;
use crate::hjb::upwind_momenta;
use crate::model::{
    DensityField, HamiltonianSpec, InitialDensity, PricePath, SpaceGrid, TimeGrid, ValueField,
};

/// Mass conservation tolerance for a whole run.
pub const MASS_TOL: f64 = 1e-10;

/// Agent velocities `α* = -D_pH(x, ϖ + u_x)` on the space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    space: SpaceGrid,
    time: TimeGrid,
    values: Vec<f64>,
}

impl DriftField {
    pub fn new(space: SpaceGrid, time: TimeGrid, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != space.len() * time.len() {
            return Err(ModelError::GridMismatch(format!(
                "{} drift values for a {}x{} grid",
                values.len(),
                space.len(),
                time.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Domain("drift field"));
        }
        Ok(Self {
            space,
            time,
            values,
        })
    }

    pub fn constant(space: SpaceGrid, time: TimeGrid, velocity: f64) -> Self {
        Self {
            space,
            time,
            values: vec![velocity; space.len() * time.len()],
        }
    }

    /// Optimal feedback from a value function, using the same upwind momenta as
    /// the Godunov flux.
    pub fn from_value_field(
        spec: &HamiltonianSpec,
        u: &ValueField,
        price: &PricePath,
    ) -> Result<Self, ModelError> {
        if u.time() != price.grid() {
            return Err(ModelError::GridMismatch("value field and price differ in time".into()));
        }
        let dx = u.space().dx();
        let values = (0..u.time().len())
            .flat_map(|k| {
                upwind_momenta(u.slice(k), dx, price.values()[k])
                    .into_iter()
                    .map(|q| -spec.dp(q))
            })
            .collect();
        Self::new(*u.space(), *u.time(), values)
    }

    pub fn space(&self) -> &SpaceGrid {
        &self.space
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.space.len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn max_speed(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpConfig {
    pub cfl_safety: f64,
    /// Sub-step budget per time interval.
    pub max_substeps: usize,
}

impl Default for FpConfig {
    fn default() -> Self {
        Self {
            cfl_safety: 0.9,
            max_substeps: 20_000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FpError {
    #[error("invalid FP configuration: {0}")]
    Config(String),
    #[error("CFL condition needs more than {budget} sub-steps in interval {time_index}")]
    Cfl { time_index: usize, budget: usize },
    #[error("mass drifted by {error:e}; widen the spatial domain")]
    MassLeak { error: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Rate of change `dm/dt` of the transport part for nodal velocities `drift`.
///
/// Node `i` sends mass toward its upwind neighbour at rate `|v_i| / dx`; nothing
/// leaves through the ends.
pub fn transport_rate(drift: &[f64], m: &[f64], space: &SpaceGrid) -> Vec<f64> {
    let n = m.len();
    let dx = space.dx();
    let w = space.weights();
    let mut dmass = vec![0.0; n];
    for i in 0..n {
        let v = drift[i];
        let flow = v.abs() / dx * w[i] * m[i];
        if v < 0.0 && i > 0 {
            dmass[i] -= flow;
            dmass[i - 1] += flow;
        } else if v > 0.0 && i < n - 1 {
            dmass[i] -= flow;
            dmass[i + 1] += flow;
        }
    }
    dmass.iter().zip(&w).map(|(d, wi)| d / wi).collect()
}

/// Linearization of the Godunov Hamiltonian around the state that produced
/// `drift`, applied to a perturbation `v`: `a_i D⁻v_i + b_i D⁺v_i`, with the
/// outward coefficients dropped at the ends.
pub fn linearized_hjb_advection(drift: &[f64], v: &[f64], dx: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let b = drift[i];
            if b < 0.0 && i > 0 {
                -b * (v[i] - v[i - 1]) / dx
            } else if b > 0.0 && i < n - 1 {
                -b * (v[i + 1] - v[i]) / dx
            } else {
                0.0
            }
        })
        .collect()
}

/// Solves `(W/h + ε K) x = (W/h) rhs` where `K` is the zero-flux stiffness matrix.
fn implicit_diffusion_neumann(m: &mut [f64], weights: &[f64], h: f64, eps: f64, dx: f64) {
    let n = m.len();
    let g = eps / dx;
    let lower: Vec<f64> = (0..n).map(|i| if i > 0 { -g } else { 0.0 }).collect();
    let upper: Vec<f64> = (0..n).map(|i| if i < n - 1 { -g } else { 0.0 }).collect();
    let diag: Vec<f64> = (0..n)
        .map(|i| weights[i] / h - lower[i] - upper[i])
        .collect();
    let rhs: Vec<f64> = m.iter().zip(weights).map(|(v, w)| v * w / h).collect();
    let x = solve_tridiagonal(&lower, &diag, &upper, &rhs);
    m.copy_from_slice(&x);
}

/// Thomas algorithm; `lower[0]` and `upper[n-1]` are ignored.
pub(crate) fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * c[i - 1];
        c[i] = if i < n - 1 { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// Advances the initial density through the drift field.
pub fn solve_fp(
    drift: &DriftField,
    initial: &InitialDensity,
    epsilon: f64,
    config: &FpConfig,
) -> Result<DensityField, FpError> {
    if !(config.cfl_safety > 0.0 && config.cfl_safety <= 1.0) || config.max_substeps == 0 {
        return Err(FpError::Config(format!("{config:?}")));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(FpError::Config(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let space = *drift.space();
    let time = *drift.time();
    if initial.grid() != &space {
        return Err(ModelError::GridMismatch("initial density and drift differ in space".into()).into());
    }
    let nx = space.len();
    let nt = time.len();
    let dx = space.dx();
    let w = space.weights();
    let dt = time.dt();
    let mut values = Vec::with_capacity(nx * nt);
    let mut m = initial.values().to_vec();
    values.extend_from_slice(&m);
    let mut velocity = vec![0.0; nx];
    for k in 0..nt - 1 {
        let (v0, v1) = (drift.slice(k), drift.slice(k + 1));
        let mut elapsed = 0.0;
        let mut steps = 0;
        while dt - elapsed > 1e-14 * dt {
            if steps == config.max_substeps {
                return Err(FpError::Cfl {
                    time_index: k,
                    budget: config.max_substeps,
                });
            }
            let s = elapsed / dt;
            for i in 0..nx {
                velocity[i] = (1.0 - s) * v0[i] + s * v1[i];
            }
            let speed = velocity.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let h = if speed > 0.0 {
                (config.cfl_safety * dx / speed).min(dt - elapsed)
            } else {
                dt - elapsed
            };
            let rate = transport_rate(&velocity, &m, &space);
            for i in 0..nx {
                m[i] += h * rate[i];
            }
            if epsilon > 0.0 {
                implicit_diffusion_neumann(&mut m, &w, h, epsilon, dx);
            }
            elapsed += h;
            steps += 1;
        }
        values.extend_from_slice(&m);
    }
    let field = DensityField::new(space, time, values)?;
    let error = field.max_mass_error();
    if error > MASS_TOL {
        return Err(FpError::MassLeak { error });
    }
    Ok(field)
}

/// Cumulative distribution by trapezoidal integration.
fn cdf(space: &SpaceGrid, m: &[f64]) -> Vec<f64> {
    let dx = space.dx();
    let mut f = vec![0.0; m.len()];
    for i in 1..m.len() {
        f[i] = f[i - 1] + 0.5 * dx * (m[i - 1] + m[i]);
    }
    f
}

/// 1-Wasserstein distance of two densities on the same grid: the L¹ distance of
/// their distribution functions.
pub fn wasserstein1(space: &SpaceGrid, a: &[f64], b: &[f64]) -> f64 {
    let fa = cdf(space, a);
    let fb = cdf(space, b);
    let diff: Vec<f64> = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).collect();
    space.integrate(&diff)
}

/// `max_k d₁(m(t_k), m(t_{k+1})) / √dt`, the discrete Hölder-½ quotient in time.
pub fn wasserstein1_continuity(m: &DensityField) -> f64 {
    let dt = m.time().dt();
    (0..m.time().len() - 1)
        .map(|k| wasserstein1(m.space(), m.slice(k), m.slice(k + 1)) / dt.sqrt())
        .fold(0.0, f64::max)
}

/// Smooth test function with the derivatives the weak form needs.
pub struct TestFunction<'a> {
    pub value: &'a dyn Fn(f64, f64) -> f64,
    pub dt: &'a dyn Fn(f64, f64) -> f64,
    pub dx: &'a dyn Fn(f64, f64) -> f64,
    pub dxx: &'a dyn Fn(f64, f64) -> f64,
}

/// Residual of the weak formulation
/// `∫∫ (ψ_t + b ψ_x + ε ψ_xx) m - [∫ ψ m]_0^T` with `b = -D_pH`.
pub fn weak_form_residual(
    m: &DensityField,
    drift: &DriftField,
    epsilon: f64,
    psi: &TestFunction<'_>,
) -> f64 {
    let space = m.space();
    let time = m.time();
    let xs = space.nodes();
    let slice_integral = |k: usize| {
        let t = time.node(k);
        let b = drift.slice(k);
        space.integrate_with(m.slice(k), |i, x| {
            (psi.dt)(x, t) + b[i] * (psi.dx)(x, t) + epsilon * (psi.dxx)(x, t)
        })
    };
    let nt = time.len();
    let dt = time.dt();
    let bulk: f64 = (0..nt)
        .map(|k| {
            let w = if k == 0 || k == nt - 1 { 0.5 } else { 1.0 };
            w * dt * slice_integral(k)
        })
        .sum();
    let boundary = |k: usize| {
        let t = time.node(k);
        let vals: Vec<f64> = xs.iter().map(|&x| (psi.value)(x, t)).collect();
        space.integrate_with(m.slice(k), |i, _| vals[i])
    };
    bulk - (boundary(nt - 1) - boundary(0))
}
