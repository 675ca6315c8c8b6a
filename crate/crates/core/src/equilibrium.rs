//! Equilibrium price by fixed-point iteration on the price map.
//!
//! For a trial price `ϖ` the map solves the value function backward, transports
//! the density forward, fixes `ϑ(0)` from the initial balance and integrates the
//! price ODE. The fixed point is found by damped iteration with Anderson mixing.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::error::ModelError;
use crate::fp::{solve_fp, DriftField, FpConfig, FpError};
use crate::hjb::{solve_hjb, upwind_gradient, HjbConfig, HjbError};
use crate::model::{
    gradient, DensityField, HamiltonianSpec, InitialDensity, Model, PricePath, SupplySchedule,
    ValueField,
};

const BRACKET_EXPANSIONS: usize = 200;
const NEWTON_ITERS: usize = 50;
/// Target for the initial balance residual.
pub const INITIAL_BALANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointConfig {
    /// Mixing weight `λ_fp ∈ (0, 1]`, halved whenever the residual grows.
    pub damping: f64,
    pub max_iters: usize,
    pub tol_price: f64,
    pub tol_balance: f64,
    /// Number of past iterates used for Anderson mixing; 0 gives plain damped iteration.
    pub anderson_depth: usize,
    pub hjb: HjbConfig,
    pub fp: FpConfig,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iters: 200,
            tol_price: 1e-8,
            tol_balance: 1e-3,
            anderson_depth: 5,
            hjb: HjbConfig::default(),
            fp: FpConfig::default(),
        }
    }
}

impl FixedPointConfig {
    fn validate(&self) -> Result<(), EquilibriumError> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(EquilibriumError::Config(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_iters == 0 {
            return Err(EquilibriumError::Config("max_iters must be at least 1".into()));
        }
        if !(self.tol_price > 0.0 && self.tol_balance > 0.0) {
            return Err(EquilibriumError::Config("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("invalid fixed-point configuration: {0}")]
    Config(String),
    #[error("value function: {0}")]
    Hjb(#[from] HjbError),
    #[error("density: {0}")]
    Fp(#[from] FpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no sign change of the initial balance after {0} bracket expansions")]
    NoBracket(usize),
    #[error("initial balance residual {0:e} above tolerance")]
    InitialBalance(f64),
    #[error("degenerate mass {value:e} at time index {time_index}")]
    DegenerateMass { time_index: usize, value: f64 },
    #[error("no convergence after {iterations} iterations (last price change {last:e})")]
    NotConverged {
        iterations: usize,
        last: f64,
        history: Vec<IterationRecord>,
    },
    #[error("price converged but balance residual {residual:e} exceeds {tol:e}")]
    Inconsistent { residual: f64, tol: f64 },
}

impl EquilibriumError {
    pub fn is_blow_up(&self) -> bool {
        matches!(
            self,
            EquilibriumError::Hjb(HjbError::BlowUp { .. }) | EquilibriumError::Fp(FpError::MassLeak { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `sup |Φ(ϖ_n) - ϖ_n|`.
    pub price_change: f64,
    pub balance_residual: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSolution {
    pub u: ValueField,
    pub m: DensityField,
    pub varpi: PricePath,
    pub balance_residual: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
}

impl EquilibriumSolution {
    pub fn max_balance_residual(&self) -> f64 {
        sup(&self.balance_residual)
    }
}

fn sup(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Unique root of `F(ϑ) = ∫ D_pH(x, ϑ + u_x(x, 0)) m̄ dx + Q(0)`.
pub fn initial_price(
    spec: &HamiltonianSpec,
    gradient0: &[f64],
    initial: &InitialDensity,
    q0: f64,
) -> Result<f64, EquilibriumError> {
    let grid = initial.grid();
    if gradient0.len() != grid.len() {
        return Err(ModelError::GridMismatch("gradient and density lengths differ".into()).into());
    }
    let m = initial.values();
    let balance = |theta: f64| grid.integrate_with(m, |i, _| spec.dp(theta + gradient0[i])) + q0;
    let slope = grid.integrate(m) * spec.dpp();

    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut expansions = 0;
    while balance(lo) > 0.0 {
        if expansions == BRACKET_EXPANSIONS {
            return Err(EquilibriumError::NoBracket(expansions));
        }
        lo *= 2.0;
        expansions += 1;
    }
    while balance(hi) < 0.0 {
        if expansions == BRACKET_EXPANSIONS {
            return Err(EquilibriumError::NoBracket(expansions));
        }
        hi *= 2.0;
        expansions += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = balance(mid);
        if f.abs() <= INITIAL_BALANCE_TOL {
            return Ok(mid);
        }
        if hi - lo <= 1e-6 * (1.0 + mid.abs()) {
            break;
        }
        if f > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    let mut f = balance(theta);
    for _ in 0..NEWTON_ITERS {
        if f.abs() <= INITIAL_BALANCE_TOL {
            break;
        }
        let next = theta - f / slope;
        let fn_ = balance(next);
        if fn_.abs() >= f.abs() {
            break;
        }
        theta = next;
        f = fn_;
    }
    // rounding floor of the quadrature itself
    let scale = grid.integrate_with(m, |i, _| spec.dp(theta + gradient0[i]).abs()) + q0.abs();
    if f.abs() > INITIAL_BALANCE_TOL.max(1e-14 * scale) {
        return Err(EquilibriumError::InitialBalance(f));
    }
    Ok(theta)
}

/// Right-hand side of the price ODE without the supply term, and its denominator.
fn price_ode_terms(spec: &HamiltonianSpec, u: &ValueField, m: &DensityField, k: usize) -> (f64, f64) {
    let space = u.space();
    let uxx = u.second_difference(k);
    let dppp = spec.dppp();
    let eps = spec.epsilon();
    let mk = m.slice(k);
    let numer = space.integrate_with(mk, |i, x| {
        spec.dpp() * spec.dx(x) + eps * dppp * uxx[i] * uxx[i]
    });
    let denom = space.integrate_with(mk, |_, _| spec.dpp());
    (numer, denom)
}

/// Integrates `ϑ̇ = [-Q̇ - ∫(D²_ppH D_xH + ε D³_pppH u_xx²) m] / ∫D²_ppH m` from `ϑ(0) = ϑ₀`.
///
/// The state enters only through `m` and `u`, so the fourth-order step reduces
/// to Simpson weights with midpoint values interpolated linearly in time. The
/// supply term is integrated exactly from the interpolant of `Q`.
pub fn integrate_price_ode(
    spec: &HamiltonianSpec,
    u: &ValueField,
    m: &DensityField,
    supply: &SupplySchedule,
    theta0: f64,
) -> Result<PricePath, EquilibriumError> {
    if u.space() != m.space() || u.time() != m.time() {
        return Err(ModelError::GridMismatch("value and density grids differ".into()).into());
    }
    let time = *u.time();
    let theta_floor = 0.5 * spec.dpp();
    let mut terms = Vec::with_capacity(time.len());
    for k in 0..time.len() {
        let (numer, denom) = price_ode_terms(spec, u, m, k);
        if denom < theta_floor {
            return Err(EquilibriumError::DegenerateMass {
                time_index: k,
                value: denom,
            });
        }
        terms.push((numer, denom));
    }
    let dt = time.dt();
    let mut values = Vec::with_capacity(time.len());
    let mut theta = theta0;
    values.push(theta);
    for k in 0..time.steps() {
        let (n0, d0) = terms[k];
        let (n1, d1) = terms[k + 1];
        let (nm, dm) = (0.5 * (n0 + n1), 0.5 * (d0 + d1));
        let (ta, tb) = (time.node(k), time.node(k + 1));
        let supply_part = -(supply.value(tb) - supply.value(ta)) / dm;
        let potential_part = dt / 6.0 * (-n0 / d0 - 4.0 * nm / dm - n1 / d1);
        theta += supply_part + potential_part;
        values.push(theta);
    }
    Ok(PricePath::new(time, values)?)
}

/// Balance residual `∫ D_pH(x, ϖ + u_x) m dx + Q(t)` at every time node.
pub fn balance_residual(
    spec: &HamiltonianSpec,
    u: &ValueField,
    m: &DensityField,
    price: &PricePath,
    supply: &SupplySchedule,
) -> Vec<f64> {
    let space = u.space();
    (0..u.time().len())
        .map(|k| {
            let ux = u.gradient(k);
            let p = price.values()[k];
            space.integrate_with(m.slice(k), |i, _| spec.dp(p + ux[i])) + supply.value(u.time().node(k))
        })
        .collect()
}

/// Output of one application of the price map.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceMapOutput {
    pub u: ValueField,
    pub m: DensityField,
    pub theta: PricePath,
}

/// `ϖ ↦ ϑ(ϖ)`.
pub fn price_map(
    model: &Model,
    price: &PricePath,
    config: &FixedPointConfig,
) -> Result<PriceMapOutput, EquilibriumError> {
    let spec = &model.hamiltonian;
    let u = solve_hjb(spec, &model.terminal, price, &model.space, &model.time, &config.hjb)?;
    let drift = DriftField::from_value_field(spec, &u, price)?;
    let m = solve_fp(&drift, &model.initial, spec.epsilon(), &config.fp)?;
    // anchor on the one-sided gradients the drift uses, so the initial flow is exact
    let grad0 = upwind_gradient(u.slice(0), model.space.dx(), price.values()[0]);
    let theta0 = initial_price(spec, &grad0, &model.initial, model.supply.value(0.0))?;
    let theta = integrate_price_ode(spec, &u, &m, &model.supply, theta0)?;
    Ok(PriceMapOutput { u, m, theta })
}

/// Starting iterate `-c Q(t)` shifted so that the initial balance holds for `u = ū`.
pub fn default_initial_guess(model: &Model) -> Result<PricePath, EquilibriumError> {
    let spec = &model.hamiltonian;
    let c = spec.c();
    let grad = gradient(&model.terminal.samples(&model.space), model.space.dx());
    let q0 = model.supply.value(0.0);
    let theta0 = initial_price(spec, &grad, &model.initial, q0)?;
    Ok(PricePath::from_fn(model.time, |t| theta0 - c * (model.supply.value(t) - q0))?)
}

struct Anderson {
    depth: usize,
    xs: Vec<DVector<f64>>,
    gs: Vec<DVector<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            xs: Vec::new(),
            gs: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.xs.clear();
        self.gs.clear();
    }

    /// Next iterate from the current point `x` and residual `g = Φ(x) - x`.
    fn next(&mut self, x: DVector<f64>, g: DVector<f64>, beta: f64) -> DVector<f64> {
        self.xs.push(x.clone());
        self.gs.push(g.clone());
        if self.xs.len() > self.depth + 1 {
            self.xs.remove(0);
            self.gs.remove(0);
        }
        let plain = &x + beta * &g;
        let cols = self.xs.len() - 1;
        if cols == 0 {
            return plain;
        }
        let n = x.len();
        let mut dx = DMatrix::zeros(n, cols);
        let mut dg = DMatrix::zeros(n, cols);
        for j in 0..cols {
            dx.set_column(j, &(&self.xs[j + 1] - &self.xs[j]));
            dg.set_column(j, &(&self.gs[j + 1] - &self.gs[j]));
        }
        let svd = dg.clone().svd(true, true);
        let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
        match svd.solve(&g, tol) {
            Ok(gamma) if gamma.iter().all(|v| v.is_finite()) => plain - (dx + beta * dg) * gamma,
            _ => {
                self.reset();
                plain
            }
        }
    }
}

/// Damped, Anderson-accelerated iteration of the price map from the default guess.
pub fn solve_equilibrium(
    model: &Model,
    config: &FixedPointConfig,
) -> Result<EquilibriumSolution, EquilibriumError> {
    let guess = default_initial_guess(model)?;
    solve_equilibrium_from(model, config, guess)
}

pub fn solve_equilibrium_from(
    model: &Model,
    config: &FixedPointConfig,
    guess: PricePath,
) -> Result<EquilibriumSolution, EquilibriumError> {
    config.validate()?;
    if guess.grid() != &model.time {
        return Err(ModelError::GridMismatch("initial guess and model time grids differ".into()).into());
    }
    let spec = &model.hamiltonian;
    let time = model.time;
    let mut beta = config.damping;
    let mut mixer = Anderson::new(config.anderson_depth);
    let mut x = DVector::from_vec(guess.into_values());
    let mut history = Vec::new();
    let mut previous = f64::INFINITY;
    for iteration in 1..=config.max_iters {
        let price = PricePath::new(time, x.iter().copied().collect())?;
        let out = price_map(model, &price, config)?;
        let g = DVector::from_vec(out.theta.values().to_vec()) - &x;
        let change = g.amax();
        let balance = balance_residual(spec, &out.u, &out.m, &price, &model.supply);
        history.push(IterationRecord {
            iteration,
            price_change: change,
            balance_residual: sup(&balance),
            damping: beta,
        });
        if change <= config.tol_price {
            let residual = sup(&balance);
            if residual > config.tol_balance {
                return Err(EquilibriumError::Inconsistent {
                    residual,
                    tol: config.tol_balance,
                });
            }
            return Ok(EquilibriumSolution {
                u: out.u,
                m: out.m,
                varpi: price,
                balance_residual: balance,
                iterations: iteration,
                history,
            });
        }
        if change > previous {
            beta = (0.5 * beta).max(1.0 / 64.0);
            mixer.reset();
        }
        previous = change;
        x = mixer.next(x, g, beta);
    }
    Err(EquilibriumError::NotConverged {
        iterations: config.max_iters,
        last: previous,
        history,
    })
}

/// `∫∫ H(x, ϖ + u_x)(m̄ + m) dx dt`, trapezoidal in time.
pub fn energy_estimate_diagnostic(spec: &HamiltonianSpec, solution: &EquilibriumSolution) -> f64 {
    let u = &solution.u;
    let space = u.space();
    let time = u.time();
    let m0 = solution.m.slice(0);
    let per_slice: Vec<f64> = (0..time.len())
        .map(|k| {
            let ux = u.gradient(k);
            let p = solution.varpi.values()[k];
            let mk = solution.m.slice(k);
            let sum: Vec<f64> = mk.iter().zip(m0).map(|(a, b)| a + b).collect();
            space.integrate_with(&sum, |i, x| spec.h(x, p + ux[i]))
        })
        .collect();
    trapezoid_in_time(&per_slice, time.dt())
}

/// `∫∫ D²_ppH u_xx² m dx dt`, monitored for boundedness under vanishing viscosity.
pub fn second_order_diagnostic(spec: &HamiltonianSpec, u: &ValueField, m: &DensityField) -> f64 {
    let space = u.space();
    let per_slice: Vec<f64> = (0..u.time().len())
        .map(|k| {
            let uxx = u.second_difference(k);
            space.integrate_with(m.slice(k), |i, _| spec.dpp() * uxx[i] * uxx[i])
        })
        .collect();
    trapezoid_in_time(&per_slice, u.time().dt())
}

fn trapezoid_in_time(values: &[f64], dt: f64) -> f64 {
    let n = values.len();
    dt * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}
