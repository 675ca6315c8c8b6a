//! Linear-quadratic models with closed or semi-closed solutions.
//!
//! Without a potential the equilibrium price is affine in the supply,
//! `ϖ(t) = Θ - c Q(t)`, and every agent's momentum is constant along its path.
//! With a quadratic potential the averaged dynamics reduce to a Volterra
//! equation for the price, see [`potential`].

pub mod potential;
pub mod volterra;

use thiserror::Error;

use crate::error::{param, ModelError};
use crate::model::{DensityField, HamiltonianSpec, InitialDensity, PricePath, SupplySchedule, TerminalCost, TimeGrid, ValueField};

pub use potential::{solve_potential_model, PotentialModelState, PotentialParams, VolterraMethod};
pub use volterra::{Forcing, ForcingTerm};

const ROOT_ITERS: usize = 300;
const BRACKET_EXPANSIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("terminal cost is not convex, so the terminal momentum is not unique")]
    NonConvex,
    #[error("no sign change for {0} within the bracket budget")]
    NoBracket(&'static str),
    #[error("closure residual is not monotone in the initial momentum")]
    ClosureNotMonotone,
    #[error("time step too large for the potential: ω·dt = {omega_dt}; refine the time grid")]
    StepTooLarge { omega_dt: f64 },
    #[error("Volterra solve disagrees with the moment equations by {mismatch:e}; refine the time grid")]
    VolterraUnstable { mismatch: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum MomentumRule {
    /// Closed form for `ū = (γ/2)(y - ζ)²`.
    Quadratic { gamma: f64, zeta: f64 },
    /// Root of `μ + ū'(x + μ(T - t)/c + K(t)) = -Θ`.
    Implicit(TerminalCost),
}

/// Equilibrium of the model without potential and without diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct LqSolution {
    pub theta: f64,
    pub price: PricePath,
    /// `x̄(t) = x̄ + ∫_0^t Q` on the price grid.
    pub mean_path: Vec<f64>,
    c: f64,
    horizon: f64,
    supply: SupplySchedule,
    rule: MomentumRule,
}

fn check_c(c: f64) -> Result<(), ModelError> {
    if c.is_finite() && c > 0.0 {
        Ok(())
    } else {
        Err(param("c", format!("must be finite and > 0, got {c}")))
    }
}

fn check_supply(supply: &SupplySchedule, time: &TimeGrid) -> Result<(), ModelError> {
    if supply.covers(time.horizon()) {
        Ok(())
    } else {
        Err(ModelError::Supply(format!(
            "samples span [{}, {}], need [0, {}]",
            supply.start(),
            supply.end(),
            time.horizon()
        )))
    }
}

fn mean_path(supply: &SupplySchedule, time: &TimeGrid, xbar: f64) -> Vec<f64> {
    time.nodes().into_iter().map(|t| xbar + supply.integral(0.0, t)).collect()
}

/// Closed form for a quadratic terminal cost: `Θ = -γ(K(0) + x̄ - ζ)`.
pub fn solve_lq_quadratic_terminal(
    c: f64,
    gamma: f64,
    zeta: f64,
    xbar: f64,
    supply: &SupplySchedule,
    time: TimeGrid,
) -> Result<LqSolution, LqError> {
    check_c(c)?;
    TerminalCost::quadratic(gamma, zeta)?;
    check_supply(supply, &time)?;
    let horizon = time.horizon();
    let theta = -gamma * (supply.tail(0.0, horizon) + xbar - zeta);
    let price = PricePath::from_fn(time, |t| theta - c * supply.value(t))?;
    Ok(LqSolution {
        theta,
        price,
        mean_path: mean_path(supply, &time, xbar),
        c,
        horizon,
        supply: supply.clone(),
        rule: MomentumRule::Quadratic { gamma, zeta },
    })
}

/// Increasing scalar root by bracket expansion and bisection to machine resolution.
fn increasing_root(f: impl Fn(f64) -> f64, guess: f64, what: &'static str) -> Result<f64, LqError> {
    let mut step = 1.0_f64.max(guess.abs());
    let (mut lo, mut hi) = (guess - step, guess + step);
    let mut expansions = 0;
    while f(lo) > 0.0 || f(hi) < 0.0 {
        if expansions == BRACKET_EXPANSIONS || !step.is_finite() {
            return Err(LqError::NoBracket(what));
        }
        step *= 2.0;
        if f(lo) > 0.0 {
            lo = guess - step;
        }
        if f(hi) < 0.0 {
            hi = guess + step;
        }
        expansions += 1;
    }
    for _ in 0..ROOT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v == 0.0 {
            return Ok(mid);
        }
        if v > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(if f(hi).abs() < f(lo).abs() { hi } else { lo })
}

fn implicit_momentum(
    terminal: &TerminalCost,
    c: f64,
    tau: f64,
    tail: f64,
    theta: f64,
    x: f64,
) -> Result<f64, LqError> {
    let residual = |mu: f64| mu + terminal.derivative(x + mu * tau / c + tail) + theta;
    increasing_root(residual, -theta - terminal.derivative(x + tail), "terminal momentum")
}

/// General convex terminal cost: `Θ` is the root of `Θ = -∫ u_x^Θ(x, 0) m₀ dx`.
pub fn lq_general_terminal(
    c: f64,
    terminal: &TerminalCost,
    initial: &InitialDensity,
    supply: &SupplySchedule,
    time: TimeGrid,
) -> Result<LqSolution, LqError> {
    check_c(c)?;
    check_supply(supply, &time)?;
    let grid = initial.grid();
    if !terminal.is_convex_on(grid, crate::model::CONVEXITY_TOL) {
        return Err(LqError::NonConvex);
    }
    let horizon = time.horizon();
    let tail0 = supply.tail(0.0, horizon);
    let xs = grid.nodes();
    let m0 = initial.values();
    // Θ + ∫ ū'(x(T)) m₀ = -∫ μ m₀, increasing in Θ
    let closure = |theta: f64| -> Result<f64, LqError> {
        let mut mus = Vec::with_capacity(xs.len());
        for &x in &xs {
            mus.push(implicit_momentum(terminal, c, horizon, tail0, theta, x)?);
        }
        Ok(-grid.integrate_with(m0, |i, _| mus[i]))
    };
    let failed = std::cell::Cell::new(None);
    let f = |theta: f64| match closure(theta) {
        Ok(v) => v,
        Err(e) => {
            failed.set(Some(e));
            f64::NAN
        }
    };
    let guess = -terminal.derivative(initial.mean() + tail0);
    let theta = increasing_root(f, guess, "Θ")?;
    if let Some(e) = failed.take() {
        return Err(e);
    }
    let price = PricePath::from_fn(time, |t| theta - c * supply.value(t))?;
    Ok(LqSolution {
        theta,
        price,
        mean_path: mean_path(supply, &time, initial.mean()),
        c,
        horizon,
        supply: supply.clone(),
        rule: MomentumRule::Implicit(terminal.clone()),
    })
}

impl LqSolution {
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Terminal momentum offset `μ(x, t)`; the agent trades at rate `μ/c + Q`.
    pub fn mu(&self, x: f64, t: f64) -> Result<f64, LqError> {
        let tau = self.horizon - t;
        let tail = self.supply.tail(t, self.horizon);
        match &self.rule {
            MomentumRule::Quadratic { gamma, zeta } => {
                Ok(-(gamma * (tail + x - zeta) + self.theta) / (1.0 + gamma * tau / self.c))
            }
            MomentumRule::Implicit(terminal) => implicit_momentum(terminal, self.c, tau, tail, self.theta, x),
        }
    }

    /// `u_x(x, t) = -μ - Θ`.
    pub fn value_x(&self, x: f64, t: f64) -> Result<f64, LqError> {
        Ok(-self.mu(x, t)? - self.theta)
    }

    /// `u(x, t) = τμ²/(2c) + τΘμ/c + ΘK(t) - (c/2)∫_t^T Q² + ū(x + μτ/c + K(t))`.
    pub fn value(&self, x: f64, t: f64) -> Result<f64, LqError> {
        let mu = self.mu(x, t)?;
        let tau = self.horizon - t;
        let tail = self.supply.tail(t, self.horizon);
        let c = self.c;
        let running = tau * mu * mu / (2.0 * c) + tau * self.theta * mu / c + self.theta * tail
            - 0.5 * c * self.supply.square_integral(t, self.horizon);
        let terminal = match &self.rule {
            MomentumRule::Quadratic { gamma, zeta } => 0.5 * gamma * (x + mu * tau / c + tail - zeta).powi(2),
            MomentumRule::Implicit(cost) => cost.value(x + mu * tau / c + tail),
        };
        Ok(running + terminal)
    }

    /// Samples of `u` on a space-time grid.
    pub fn value_field(&self, space: crate::model::SpaceGrid, time: TimeGrid) -> Result<ValueField, LqError> {
        let mut values = Vec::with_capacity(space.len() * time.len());
        for t in time.nodes() {
            for x in space.nodes() {
                values.push(self.value(x, t)?);
            }
        }
        Ok(ValueField::new(space, time, values)?)
    }

    /// Optimal path from `x0`, integrated by RK4 on the feedback `ẋ = -(ϖ + u_x)/c`.
    pub fn trajectory(&self, x0: f64, time: &TimeGrid) -> Result<Vec<f64>, LqError> {
        let c = self.c;
        let rate = |x: f64, t: f64| -> Result<f64, LqError> {
            let price = self.theta - c * self.supply.value(t);
            Ok(-(price + self.value_x(x, t)?) / c)
        };
        let dt = time.dt();
        let mut path = Vec::with_capacity(time.len());
        let mut x = x0;
        path.push(x);
        for k in 0..time.steps() {
            let t = time.node(k);
            let k1 = rate(x, t)?;
            let k2 = rate(x + 0.5 * dt * k1, t + 0.5 * dt)?;
            let k3 = rate(x + 0.5 * dt * k2, t + 0.5 * dt)?;
            let k4 = rate(x + dt * k3, t + dt)?;
            x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            path.push(x);
        }
        Ok(path)
    }
}

/// Paths of an agent and of the mean under the closed system
/// `ẋ = (x̄ - x) γ / (1 + (T - t)γ/c) + Q`, `x̄' = Q`, integrated by RK4.
pub fn agent_trajectory(
    c: f64,
    gamma: f64,
    supply: &SupplySchedule,
    x0: f64,
    xbar: f64,
    time: &TimeGrid,
) -> Result<(Vec<f64>, Vec<f64>), LqError> {
    check_c(c)?;
    TerminalCost::quadratic(gamma, 0.0)?;
    check_supply(supply, time)?;
    let horizon = time.horizon();
    let rate = |x: f64, m: f64, t: f64| {
        let q = supply.value(t);
        ((m - x) * gamma / (1.0 + (horizon - t) * gamma / c) + q, q)
    };
    let dt = time.dt();
    let (mut x, mut m) = (x0, xbar);
    let mut xs = vec![x];
    let mut ms = vec![m];
    for k in 0..time.steps() {
        let t = time.node(k);
        let (a1, b1) = rate(x, m, t);
        let (a2, b2) = rate(x + 0.5 * dt * a1, m + 0.5 * dt * b1, t + 0.5 * dt);
        let (a3, b3) = rate(x + 0.5 * dt * a2, m + 0.5 * dt * b2, t + 0.5 * dt);
        let (a4, b4) = rate(x + dt * a3, m + dt * b3, t + dt);
        x += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        m += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        xs.push(x);
        ms.push(m);
    }
    Ok((xs, ms))
}

/// Sup-norm residuals of the averaged dynamics computed from fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentResiduals {
    /// `sup |Π̇ + ∫V'(x) m|`.
    pub pi: f64,
    /// `sup |Ξ̇ + (ϖ + Π)/c|`.
    pub xi: f64,
}

/// Checks `Π̇ = -∫V'm` and `Ξ̇ = -(ϖ + Π)/c` for `Π = ∫u_x m` and `Ξ = ∫x m`.
pub fn moment_consistency(
    spec: &HamiltonianSpec,
    u: &ValueField,
    m: &DensityField,
    price: &PricePath,
) -> Result<MomentResiduals, ModelError> {
    if u.space() != m.space() || u.time() != m.time() || u.time() != price.grid() {
        return Err(ModelError::GridMismatch("moment fields use different grids".into()));
    }
    let space = u.space();
    let time = u.time();
    let nt = time.len();
    let pi: Vec<f64> = (0..nt)
        .map(|k| {
            let ux = u.gradient(k);
            space.integrate_with(m.slice(k), |i, _| ux[i])
        })
        .collect();
    let xi: Vec<f64> = (0..nt).map(|k| m.mean(k)).collect();
    let force: Vec<f64> = (0..nt)
        .map(|k| space.integrate_with(m.slice(k), |_, x| spec.potential().derivative(x)))
        .collect();
    let pi_dot = crate::model::gradient(&pi, time.dt());
    let xi_dot = crate::model::gradient(&xi, time.dt());
    let c = spec.c();
    let mut res = MomentResiduals { pi: 0.0, xi: 0.0 };
    for k in 0..nt {
        res.pi = res.pi.max((pi_dot[k] + force[k]).abs());
        res.xi = res.xi.max((xi_dot[k] + (price.values()[k] + pi[k]) / c).abs());
    }
    Ok(res)
}
