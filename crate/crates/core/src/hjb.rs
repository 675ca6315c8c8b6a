//! Backward solver for `-u_t + H(x, ϖ(t) + u_x) = ε u_xx`, `u(·, T) = ū`.
//!
//! The first-order part uses a monotone scheme (Godunov upwinding or a
//! semi-Lagrangian step), so it converges to the viscosity solution when
//! `ε = 0`. Diffusion is treated implicitly.

use thiserror::Error;

use crate::error::ModelError;
use crate::model::{HamiltonianSpec, PricePath, SpaceGrid, TerminalCost, TimeGrid, ValueField};

/// Attempts at matching the sub-step to the CFL limit at its midpoint price.
const MIDPOINT_TRIES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HjbScheme {
    UpwindGodunov,
    SemiLagrangian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbConfig {
    pub scheme: HjbScheme,
    /// Fraction of the CFL limit used for explicit sub-steps, in `(0, 1]`.
    pub cfl_safety: f64,
    /// Sub-step budget per time interval.
    pub max_substeps: usize,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self {
            scheme: HjbScheme::UpwindGodunov,
            cfl_safety: 0.9,
            max_substeps: 20_000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HjbError {
    #[error("invalid HJB configuration: {0}")]
    Config(String),
    #[error("CFL condition needs more than {budget} sub-steps in interval {time_index}")]
    Cfl { time_index: usize, budget: usize },
    #[error("non-finite value function at time index {time_index}")]
    BlowUp { time_index: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Momentum selected by the Godunov flux for a convex kinetic part with its
/// minimum at zero, given the shifted one-sided momenta `q⁻ = ϖ + D⁻u` and
/// `q⁺ = ϖ + D⁺u`. The numerical Hamiltonian is `H₀(selected)`.
#[inline]
pub fn upwind_momentum(q_minus: f64, q_plus: f64) -> f64 {
    let a = q_minus.max(0.0);
    let b = q_plus.min(0.0);
    if a >= -b {
        a
    } else {
        b
    }
}

/// Backward and forward differences of `u`. Outside the grid `u` is continued
/// flat, so the outward difference at each end vanishes.
pub fn one_sided_gradients(u: &[f64], dx: f64) -> (Vec<f64>, Vec<f64>) {
    let n = u.len();
    let ghost_lo = u[0];
    let ghost_hi = u[n - 1];
    let mut back = vec![0.0; n];
    let mut fwd = vec![0.0; n];
    for i in 0..n {
        let left = if i == 0 { ghost_lo } else { u[i - 1] };
        let right = if i == n - 1 { ghost_hi } else { u[i + 1] };
        back[i] = (u[i] - left) / dx;
        fwd[i] = (right - u[i]) / dx;
    }
    (back, fwd)
}

/// Upwind momenta `ϖ + u_x` chosen by the Godunov flux at every node.
pub fn upwind_momenta(u: &[f64], dx: f64, price: f64) -> Vec<f64> {
    let (back, fwd) = one_sided_gradients(u, dx);
    back.iter()
        .zip(&fwd)
        .map(|(b, f)| upwind_momentum(price + b, price + f))
        .collect()
}

/// One-sided gradient picked by the Godunov flux at `price`; the discrete `u_x`
/// behind the optimal feedback.
pub fn upwind_gradient(u: &[f64], dx: f64, price: f64) -> Vec<f64> {
    upwind_momenta(u, dx, price).into_iter().map(|q| q - price).collect()
}

/// Solves `(I - r Δ) x = rhs` on interior nodes with Dirichlet ends taken from
/// `rhs[0]`, `rhs[n-1]`.
pub(crate) fn implicit_diffusion_dirichlet(rhs: &mut [f64], r: f64) {
    let n = rhs.len();
    if n < 3 || r == 0.0 {
        return;
    }
    let m = n - 2;
    let diag = 1.0 + 2.0 * r;
    let off = -r;
    let mut d: Vec<f64> = rhs[1..n - 1].to_vec();
    d[0] -= off * rhs[0];
    d[m - 1] -= off * rhs[n - 1];
    let mut c_prime = vec![0.0; m];
    c_prime[0] = off / diag;
    d[0] /= diag;
    for i in 1..m {
        let denom = diag - off * c_prime[i - 1];
        c_prime[i] = off / denom;
        d[i] = (d[i] - off * d[i - 1]) / denom;
    }
    for i in (0..m - 1).rev() {
        d[i] -= c_prime[i] * d[i + 1];
    }
    rhs[1..n - 1].copy_from_slice(&d);
}

struct Stepper<'a> {
    spec: &'a HamiltonianSpec,
    potential: Vec<f64>,
    xs: Vec<f64>,
    dx: f64,
    config: HjbConfig,
}

impl Stepper<'_> {
    /// One explicit Godunov step of length `h` backward in time; returns the
    /// largest admissible step for the current slice when `h` is `None`.
    fn max_step(&self, u: &[f64], price: f64) -> f64 {
        let speed = upwind_momenta(u, self.dx, price)
            .iter()
            .fold(0.0_f64, |a, q| a.max(self.spec.dp(*q).abs()));
        if speed == 0.0 {
            f64::INFINITY
        } else {
            self.config.cfl_safety * self.dx / speed
        }
    }

    fn godunov_step(&self, u: &mut [f64], price: f64, h: f64) {
        let q = upwind_momenta(u, self.dx, price);
        for i in 0..u.len() {
            u[i] += h * (self.potential[i] - self.spec.kinetic(q[i]));
        }
        self.diffuse(u, h);
    }

    fn semi_lagrangian_step(&self, u: &mut [f64], price: f64, h: f64) {
        let c = self.spec.c();
        let n = u.len();
        let dx = self.dx;
        let (x_min, x_max) = (self.xs[0], self.xs[n - 1]);
        let slopes: Vec<f64> = u.windows(2).map(|w| (w[1] - w[0]) / dx).collect();
        let reach = h * (slopes.iter().fold(0.0_f64, |a, s| a.max(s.abs())) + price.abs()) / c;
        let old = u.to_vec();
        for i in 0..n {
            let x = self.xs[i];
            let lo = ((((x - reach).max(x_min) - x_min) / dx).floor() as usize).min(n - 2);
            let hi = ((((x + reach).min(x_max) - x_min) / dx).ceil() as usize).clamp(lo + 1, n - 1);
            let mut best = f64::INFINITY;
            for j in lo..hi {
                // end cells continue linearly past the grid
                let lower = if j == 0 { f64::NEG_INFINITY } else { self.xs[j] };
                let upper = if j == n - 2 { f64::INFINITY } else { self.xs[j + 1] };
                let y = (x - h * (slopes[j] + price) / c).clamp(lower, upper);
                let interp = old[j] + slopes[j] * (y - self.xs[j]);
                let a = (y - x) / h;
                let cost = interp + h * (0.5 * c * a * a + price * a);
                best = best.min(cost);
            }
            u[i] = best + h * self.potential[i];
        }
        self.diffuse(u, h);
    }

    /// Implicit diffusion on interior nodes; the end nodes carry none.
    fn diffuse(&self, u: &mut [f64], h: f64) {
        let eps = self.spec.epsilon();
        if eps == 0.0 {
            return;
        }
        implicit_diffusion_dirichlet(u, h * eps / (self.dx * self.dx));
    }
}

/// Solves the value-function equation backward from `u(·, T) = ū` under a given price path.
pub fn solve_hjb(
    spec: &HamiltonianSpec,
    terminal: &TerminalCost,
    price: &PricePath,
    space: &SpaceGrid,
    time: &TimeGrid,
    config: &HjbConfig,
) -> Result<ValueField, HjbError> {
    if !(config.cfl_safety > 0.0 && config.cfl_safety <= 1.0) {
        return Err(HjbError::Config(format!(
            "cfl_safety must lie in (0, 1], got {}",
            config.cfl_safety
        )));
    }
    if config.max_substeps == 0 {
        return Err(HjbError::Config("max_substeps must be positive".into()));
    }
    if price.grid() != time {
        return Err(ModelError::GridMismatch("price path and time grid differ".into()).into());
    }
    let nx = space.len();
    let nt = time.len();
    let xs = space.nodes();
    let stepper = Stepper {
        spec,
        potential: xs.iter().map(|&x| spec.potential().value(x)).collect(),
        xs,
        dx: space.dx(),
        config: *config,
    };
    let mut values = vec![0.0; nx * nt];
    let mut u = terminal.samples(space);
    values[(nt - 1) * nx..].copy_from_slice(&u);
    let dt = time.dt();
    for k in (0..nt - 1).rev() {
        let t_hi = time.node(k + 1);
        match config.scheme {
            HjbScheme::SemiLagrangian => {
                stepper.semi_lagrangian_step(&mut u, price.at(t_hi - 0.5 * dt), dt)
            }
            HjbScheme::UpwindGodunov => {
                let mut remaining = dt;
                let mut t = t_hi;
                let mut steps = 0;
                while remaining > 1e-14 * dt {
                    if steps == config.max_substeps {
                        return Err(HjbError::Cfl {
                            time_index: k,
                            budget: config.max_substeps,
                        });
                    }
                    // price at the sub-step midpoint; the step length is continuous in the data
                    let mut h = remaining;
                    let mut p = price.at(t - 0.5 * h);
                    for _ in 0..MIDPOINT_TRIES {
                        let limit = stepper.max_step(&u, p);
                        if h <= limit {
                            break;
                        }
                        h = limit;
                        p = price.at(t - 0.5 * h);
                    }
                    h = h.min(stepper.max_step(&u, p));
                    stepper.godunov_step(&mut u, p, h);
                    remaining -= h;
                    t -= h;
                    steps += 1;
                }
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(HjbError::BlowUp { time_index: k });
        }
        values[k * nx..(k + 1) * nx].copy_from_slice(&u);
    }
    Ok(ValueField::new(*space, *time, values)?)
}

/// Largest interior second difference `(u(x+h) - 2u(x) + u(x-h)) / h²` per time slice.
pub fn semiconcavity_report(u: &ValueField) -> Vec<f64> {
    let dx = u.space().dx();
    (0..u.time().len())
        .map(|k| {
            u.slice(k)
                .windows(3)
                .map(|w| (w[2] - 2.0 * w[1] + w[0]) / (dx * dx))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Discrete Lipschitz constant of every time slice.
pub fn lipschitz_profile(u: &ValueField) -> Vec<f64> {
    (0..u.time().len()).map(|k| u.lipschitz(k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Potential;

    fn grids() -> (SpaceGrid, TimeGrid) {
        (SpaceGrid::new(-4.0, 4.0, 81).unwrap(), TimeGrid::new(2.0, 40).unwrap())
    }

    #[test]
    fn godunov_selection() {
        assert_eq!(upwind_momentum(1.0, 2.0), 1.0);
        assert_eq!(upwind_momentum(-1.0, -2.0), -2.0);
        assert_eq!(upwind_momentum(-1.0, 1.0), 0.0);
        assert_eq!(upwind_momentum(3.0, -1.0), 3.0);
        assert_eq!(upwind_momentum(1.0, -3.0), -3.0);
    }

    #[test]
    fn zero_data_gives_zero() {
        let (s, t) = grids();
        let spec = HamiltonianSpec::new(1.0, 0.0, Potential::Zero).unwrap();
        for scheme in [HjbScheme::UpwindGodunov, HjbScheme::SemiLagrangian] {
            let cfg = HjbConfig { scheme, ..Default::default() };
            let u = solve_hjb(&spec, &TerminalCost::zero(), &PricePath::constant(t, 0.0), &s, &t, &cfg).unwrap();
            assert!(u.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_price_shifts_linearly_in_time() {
        let (s, t) = grids();
        let c = 2.0;
        let p0 = 1.5;
        for eps in [0.0, 0.01] {
            let spec = HamiltonianSpec::new(c, eps, Potential::Zero).unwrap();
            for scheme in [HjbScheme::UpwindGodunov, HjbScheme::SemiLagrangian] {
                let cfg = HjbConfig { scheme, ..Default::default() };
                let u = solve_hjb(&spec, &TerminalCost::zero(), &PricePath::constant(t, p0), &s, &t, &cfg).unwrap();
                for k in 0..t.len() {
                    let exact = -(t.horizon() - t.node(k)) * p0 * p0 / (2.0 * c);
                    for v in u.slice(k) {
                        assert!((v - exact).abs() < 1e-10, "{scheme:?} eps={eps}: {v} vs {exact}");
                    }
                }
            }
        }
    }

    #[test]
    fn terminal_condition_is_exact() {
        let (s, t) = grids();
        let spec = HamiltonianSpec::new(1.0, 0.0, Potential::quadratic(1.0, 0.0).unwrap()).unwrap();
        let ub = TerminalCost::quadratic(0.7, 0.3).unwrap();
        let u = solve_hjb(&spec, &ub, &PricePath::constant(t, 0.2), &s, &t, &HjbConfig::default()).unwrap();
        assert_eq!(u.slice(t.len() - 1), ub.samples(&s).as_slice());
    }

    #[test]
    fn rejects_bad_config() {
        let (s, t) = grids();
        let spec = HamiltonianSpec::new(1.0, 0.0, Potential::Zero).unwrap();
        let cfg = HjbConfig { cfl_safety: 1.5, ..Default::default() };
        assert!(matches!(
            solve_hjb(&spec, &TerminalCost::zero(), &PricePath::constant(t, 0.0), &s, &t, &cfg),
            Err(HjbError::Config(_))
        ));
        let cfg = HjbConfig { max_substeps: 1, ..Default::default() };
        let steep = TerminalCost::quadratic(50.0, 0.0).unwrap();
        assert!(matches!(
            solve_hjb(&spec, &steep, &PricePath::constant(t, 0.0), &s, &t, &cfg),
            Err(HjbError::Cfl { .. })
        ));
    }

    #[test]
    fn tridiagonal_solve_matches_direct_product() {
        let x = vec![1.0, 2.0, -1.0, 0.5, 3.0, 4.0];
        let r = 0.7;
        let mut rhs = x.clone();
        for i in 1..5 {
            rhs[i] = x[i] * (1.0 + 2.0 * r) - r * (x[i - 1] + x[i + 1]);
        }
        implicit_diffusion_dirichlet(&mut rhs, r);
        for (a, b) in rhs.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
