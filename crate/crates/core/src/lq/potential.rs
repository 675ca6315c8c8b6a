//! Model with running potential `V(x) = (η/2)(x - κ)²` and quadratic terminal cost.
//!
//! With `Π = ∫u_x m` and `Ξ = ∫x m`, the balance gives `ϖ = -Π - cQ`, and
//! `Π̈ = ω²(Π + ϖ)` with `ω = √(η/c)`. Variation of constants turns this into
//! `ϖ = f - λ(k ∗ ϖ)` with `k = -ω sinh(ω·)`, `λ = -1` and
//! `f = -C₁e^{ωt} - C₂e^{-ωt} - cQ`. The value function is quadratic in `x`
//! with coefficients `θ₀, θ₁, θ₂`, and `Π(0) = θ₁(0) + 2θ₂(0)x̄` closes the system.

use super::volterra::{laplace_solution, potential_kernel, solve_volterra_trapezoid, Forcing, ForcingTerm, LAMBDA};
use super::{check_c, check_supply, LqError};
use crate::error::param;
use crate::model::{PricePath, SupplySchedule, TimeGrid};

const CLOSURE_ITERS: usize = 100;
const BRACKET_EXPANSIONS: usize = 60;
/// Relative disagreement between the Volterra price and the direct moment route
/// above which the solve is rejected.
pub const MOMENT_MISMATCH_TOL: f64 = 1e-3;
/// Largest `ω·dt` accepted by the trapezoidal route.
pub const MAX_OMEGA_DT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    pub c: f64,
    pub eta: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub xbar: f64,
}

impl PotentialParams {
    fn validate(&self) -> Result<(), LqError> {
        check_c(self.c)?;
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(param("eta", format!("must be finite and >= 0, got {}", self.eta)).into());
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(param("gamma", format!("must be finite and >= 0, got {}", self.gamma)).into());
        }
        for (name, v) in [("kappa", self.kappa), ("zeta", self.zeta), ("xbar", self.xbar)] {
            if !v.is_finite() {
                return Err(param(name, "must be finite").into());
            }
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        (self.eta / self.c).sqrt()
    }
}

/// How the Volterra equation is solved.
#[derive(Debug, Clone, PartialEq)]
pub enum VolterraMethod {
    /// Trapezoidal product integration on the time grid.
    Trapezoid,
    /// Analytic inversion; the forcing must describe `Q` exactly.
    Laplace(Forcing),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModelState {
    pub time: TimeGrid,
    pub pi: Vec<f64>,
    pub xi: Vec<f64>,
    pub pi0: f64,
    pub pi_dot0: f64,
    pub c1: f64,
    pub c2: f64,
    pub omega: f64,
    pub lambda: f64,
    pub kernel: Vec<f64>,
    pub forcing: Vec<f64>,
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    /// Price and `(θ₁, θ₂)` at the midpoint of each step.
    pub mid_price: Vec<f64>,
    pub mid_theta1: Vec<f64>,
    pub mid_theta2: Vec<f64>,
    pub c: f64,
    pub closure_residual: f64,
    /// `sup |ϖ + Π_direct + cQ|` with `Π_direct = Π(0) - η∫_0^t (Ξ - κ)`.
    pub moment_mismatch: f64,
}

impl PotentialModelState {
    /// `u(x, t_k) = θ₀ + θ₁x + θ₂x²`.
    pub fn value(&self, k: usize, x: f64) -> f64 {
        self.theta0[k] + self.theta1[k] * x + self.theta2[k] * x * x
    }

    pub fn value_x(&self, k: usize, x: f64) -> f64 {
        self.theta1[k] + 2.0 * self.theta2[k] * x
    }

    /// Optimal path from `x0`, integrated by RK4 on the feedback `ẋ = -(ϖ + u_x)/c`.
    pub fn trajectory(&self, price: &PricePath, x0: f64) -> Vec<f64> {
        let p = price.values();
        let rate = |pv: f64, t1: f64, t2: f64, x: f64| -(pv + t1 + 2.0 * t2 * x) / self.c;
        let dt = self.time.dt();
        let mut x = x0;
        let mut path = Vec::with_capacity(self.time.len());
        path.push(x);
        for k in 0..self.time.steps() {
            let (pm, m1, m2) = (self.mid_price[k], self.mid_theta1[k], self.mid_theta2[k]);
            let k1 = rate(p[k], self.theta1[k], self.theta2[k], x);
            let k2 = rate(pm, m1, m2, x + 0.5 * dt * k1);
            let k3 = rate(pm, m1, m2, x + 0.5 * dt * k2);
            let k4 = rate(p[k + 1], self.theta1[k + 1], self.theta2[k + 1], x + dt * k3);
            x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            path.push(x);
        }
        path
    }
}

/// Access to `Q` and its integrals from `0`.
enum SupplyView<'a> {
    Sampled(&'a SupplySchedule),
    Analytic(&'a Forcing),
}

impl SupplyView<'_> {
    fn value(&self, t: f64) -> f64 {
        match self {
            SupplyView::Sampled(s) => s.value(t),
            SupplyView::Analytic(f) => f.eval(t),
        }
    }

    fn integral(&self, t: f64) -> f64 {
        match self {
            SupplyView::Sampled(s) => s.integral(0.0, t),
            SupplyView::Analytic(f) => f.integral(t),
        }
    }

    /// `∫_0^t (t - s) Q(s) ds` on the nodes `j·h`, Simpson per pair of half steps.
    fn double_integrals(&self, h: f64, nodes: usize) -> Vec<f64> {
        match self {
            SupplyView::Analytic(f) => (0..nodes).map(|j| f.double_integral(j as f64 * h)).collect(),
            SupplyView::Sampled(_) => {
                // d/dt of the target is ∫_0^t Q, which is exact for the interpolant
                let mut out = vec![0.0; nodes];
                for j in 1..nodes {
                    let (a, b) = ((j - 1) as f64 * h, j as f64 * h);
                    let mid = 0.5 * (a + b);
                    out[j] = out[j - 1]
                        + h / 6.0 * (self.integral(a) + 4.0 * self.integral(mid) + self.integral(b));
                }
                out
            }
        }
    }
}

struct Trial {
    fine_price: Vec<f64>,
    forcing: Vec<f64>,
    c1: f64,
    c2: f64,
    theta: [Vec<f64>; 3],
    mid_theta: [Vec<f64>; 2],
    residual: f64,
}

struct Solver<'a> {
    params: PotentialParams,
    q: SupplyView<'a>,
    method: &'a VolterraMethod,
    time: TimeGrid,
    omega: f64,
    pi_dot0: f64,
    /// Trapezoidal response to `-cQ` on the half-step grid; empty for the Laplace route.
    supply_response: Vec<f64>,
}

/// Half-step nodes of `time`, with the last one pinned to the horizon.
fn fine_nodes(time: &TimeGrid) -> Vec<f64> {
    let fine = 2 * time.steps() + 1;
    let h = 0.5 * time.dt();
    (0..fine).map(|j| if j == fine - 1 { time.horizon() } else { j as f64 * h }).collect()
}

impl Solver<'_> {
    fn coefficients(&self, pi0: f64) -> (f64, f64) {
        if self.omega > 0.0 {
            let r = self.pi_dot0 / self.omega;
            (0.5 * (pi0 + r), 0.5 * (pi0 - r))
        } else {
            (0.5 * pi0, 0.5 * pi0)
        }
    }

    fn trial(&self, pi0: f64) -> Trial {
        let PotentialParams { c, eta, kappa, gamma, zeta, xbar } = self.params;
        let omega = self.omega;
        let (c1, c2) = self.coefficients(pi0);
        let steps = self.time.steps();
        let nodes = fine_nodes(&self.time);
        let f_at = |t: f64| -c1 * (omega * t).exp() - c2 * (-omega * t).exp() - c * self.q.value(t);
        let fine_price: Vec<f64> = match self.method {
            // the responses to e^{±ωt} are exactly 1 ± ωt
            VolterraMethod::Trapezoid => nodes
                .iter()
                .zip(&self.supply_response)
                .map(|(&t, r)| r - c1 * (1.0 + omega * t) - c2 * (1.0 - omega * t))
                .collect(),
            VolterraMethod::Laplace(qf) => {
                let forcing = qf
                    .scaled(-c)
                    .with(ForcingTerm::Exp { coeff: -c1, rate: omega })
                    .with(ForcingTerm::Exp { coeff: -c2, rate: -omega });
                nodes.iter().map(|&t| laplace_solution(&forcing, omega, t)).collect()
            }
        };
        let forcing = (0..=steps).map(|k| f_at(self.time.node(k))).collect();

        // backward RK4 for (θ₂, θ₁, θ₀)
        let rhs = |th: [f64; 3], p: f64| {
            let [t2, t1, _] = th;
            [
                2.0 * t2 * t2 / c - 0.5 * eta,
                2.0 * t2 * (p + t1) / c + eta * kappa,
                (p + t1).powi(2) / (2.0 * c) - 0.5 * eta * kappa * kappa,
            ]
        };
        let axpy = |a: [f64; 3], s: f64, b: [f64; 3]| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
        let mut th = [0.5 * gamma, -gamma * zeta, 0.5 * gamma * zeta * zeta];
        let mut out = [vec![0.0; steps + 1], vec![0.0; steps + 1], vec![0.0; steps + 1]];
        let dt = self.time.dt();
        for (i, o) in out.iter_mut().enumerate() {
            o[steps] = th[i];
        }
        for k in (0..steps).rev() {
            let (p_hi, p_mid, p_lo) = (fine_price[2 * k + 2], fine_price[2 * k + 1], fine_price[2 * k]);
            let k1 = rhs(th, p_hi);
            let k2 = rhs(axpy(th, -0.5 * dt, k1), p_mid);
            let k3 = rhs(axpy(th, -0.5 * dt, k2), p_mid);
            let k4 = rhs(axpy(th, -dt, k3), p_lo);
            for i in 0..3 {
                th[i] -= dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                out[i][k] = th[i];
            }
        }
        // cubic Hermite midpoints, slopes from the coefficient equations
        let mut mid = [vec![0.0; steps], vec![0.0; steps]];
        for k in 0..steps {
            let lo = [out[0][k], out[1][k], out[2][k]];
            let hi = [out[0][k + 1], out[1][k + 1], out[2][k + 1]];
            let (d_lo, d_hi) = (rhs(lo, fine_price[2 * k]), rhs(hi, fine_price[2 * k + 2]));
            for i in 0..2 {
                mid[i][k] = 0.5 * (lo[i] + hi[i]) + dt / 8.0 * (d_lo[i] - d_hi[i]);
            }
        }
        let residual = pi0 - out[1][0] - 2.0 * out[0][0] * xbar;
        let [theta2, theta1, theta0] = out;
        let [mid2, mid1] = mid;
        Trial {
            fine_price,
            forcing,
            c1,
            c2,
            theta: [theta0, theta1, theta2],
            mid_theta: [mid1, mid2],
            residual,
        }
    }

    /// Bracketed secant (Illinois variant) on the closure residual.
    fn close(&self, guess: f64) -> Result<(f64, Trial), LqError> {
        let tol = |p: f64| 1e-12 * (1.0 + p.abs());
        let a = guess;
        let ra = self.trial(a).residual;
        if ra.abs() <= tol(a) {
            return Ok((a, self.trial(a)));
        }
        let mut step = 0.1 * (1.0 + a.abs());
        let b = a + step;
        let rb = self.trial(b).residual;
        let slope = (rb - ra) / (b - a);
        if slope == 0.0 || !slope.is_finite() {
            return Err(LqError::ClosureNotMonotone);
        }
        // expand toward the root along the observed slope
        let dir = if ra / slope > 0.0 { -1.0 } else { 1.0 };
        let (mut lo, mut r_lo) = (a, ra);
        let mut hi = a + dir * step;
        let mut r_hi = self.trial(hi).residual;
        let mut expansions = 0;
        while r_lo.signum() == r_hi.signum() {
            if expansions == BRACKET_EXPANSIONS {
                return Err(LqError::NoBracket("initial momentum"));
            }
            if (r_hi - r_lo) * dir * slope.signum() <= 0.0 {
                return Err(LqError::ClosureNotMonotone);
            }
            lo = hi;
            r_lo = r_hi;
            step *= 2.0;
            hi = a + dir * step;
            r_hi = self.trial(hi).residual;
            expansions += 1;
        }
        let mut side = 0;
        for _ in 0..CLOSURE_ITERS {
            let p = hi - r_hi * (hi - lo) / (r_hi - r_lo);
            let trial = self.trial(p);
            let r = trial.residual;
            if r.abs() <= tol(p) || (hi - lo).abs() <= tol(p) {
                return Ok((p, trial));
            }
            if r.signum() == r_hi.signum() {
                hi = p;
                r_hi = r;
                if side == 1 {
                    r_lo *= 0.5;
                }
                side = 1;
            } else {
                lo = p;
                r_lo = r;
                if side == -1 {
                    r_hi *= 0.5;
                }
                side = -1;
            }
        }
        let p = if r_hi.abs() < r_lo.abs() { hi } else { lo };
        Ok((p, self.trial(p)))
    }
}

/// Solves the potential model on `time`, returning the state and the price path.
pub fn solve_potential_model(
    params: PotentialParams,
    supply: &SupplySchedule,
    time: TimeGrid,
    method: &VolterraMethod,
) -> Result<(PotentialModelState, PricePath), LqError> {
    params.validate()?;
    let q = match method {
        VolterraMethod::Trapezoid => {
            check_supply(supply, &time)?;
            SupplyView::Sampled(supply)
        }
        VolterraMethod::Laplace(f) => SupplyView::Analytic(f),
    };
    let omega = params.omega();
    if matches!(method, VolterraMethod::Trapezoid) && omega * time.dt() > MAX_OMEGA_DT {
        return Err(LqError::StepTooLarge {
            omega_dt: omega * time.dt(),
        });
    }
    let pi_dot0 = -params.eta * (params.xbar - params.kappa);
    let supply_response = match &q {
        SupplyView::Sampled(s) => {
            let f: Vec<f64> = fine_nodes(&time).iter().map(|&t| -params.c * s.value(t)).collect();
            solve_volterra_trapezoid(&f, 0.5 * time.dt(), LAMBDA, |t| potential_kernel(omega, t))
        }
        SupplyView::Analytic(_) => Vec::new(),
    };
    let solver = Solver {
        params,
        q,
        method,
        time,
        omega,
        pi_dot0,
        supply_response,
    };
    let horizon = time.horizon();
    let tail0 = solver.q.integral(horizon);
    // without potential, Π ≡ -Θ = γ(K(0) + x̄ - ζ)
    let guess = params.gamma * (tail0 + params.xbar - params.zeta);
    let (pi0, trial) = solver.close(guess)?;

    let c = params.c;
    let steps = time.steps();
    let price: Vec<f64> = (0..=steps).map(|k| trial.fine_price[2 * k]).collect();
    let nodes = time.nodes();
    let qs: Vec<f64> = nodes.iter().map(|&t| solver.q.value(t)).collect();
    let pi: Vec<f64> = price.iter().zip(&qs).map(|(p, q)| -p - c * q).collect();
    let xi: Vec<f64> = nodes.iter().map(|&t| params.xbar + solver.q.integral(t)).collect();
    let dq = solver.q.double_integrals(time.dt(), steps + 1);
    let scale = 1.0 + price.iter().fold(0.0_f64, |a, p| a.max(p.abs()));
    let mut mismatch: f64 = 0.0;
    for k in 0..=steps {
        let t = nodes[k];
        let direct = pi0 - params.eta * ((params.xbar - params.kappa) * t + dq[k]);
        mismatch = mismatch.max((price[k] + direct + c * qs[k]).abs());
    }
    if !(mismatch <= MOMENT_MISMATCH_TOL * scale) {
        return Err(LqError::VolterraUnstable { mismatch });
    }
    let [theta0, theta1, theta2] = trial.theta;
    let [mid_theta1, mid_theta2] = trial.mid_theta;
    let mid_price = (0..steps).map(|k| trial.fine_price[2 * k + 1]).collect();
    let state = PotentialModelState {
        time,
        pi,
        xi,
        pi0,
        pi_dot0,
        c1: trial.c1,
        c2: trial.c2,
        omega,
        lambda: LAMBDA,
        kernel: nodes.iter().map(|&t| potential_kernel(omega, t)).collect(),
        forcing: trial.forcing,
        theta0,
        theta1,
        theta2,
        mid_price,
        mid_theta1,
        mid_theta2,
        c,
        closure_residual: trial.residual,
        moment_mismatch: mismatch,
    };
    Ok((state, PricePath::new(time, price)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lq::solve_lq_quadratic_terminal;
    use crate::model::Interpolation;

    fn day(amplitude: f64) -> (SupplySchedule, Forcing) {
        let w = 2.0 * std::f64::consts::PI / 24.0;
        let s = SupplySchedule::from_fn(|t| amplitude * (w * t).cos(), 24.0, 192, Interpolation::Cubic).unwrap();
        (s, Forcing::new(vec![ForcingTerm::Cos { coeff: amplitude, freq: w }]))
    }

    fn params(eta: f64) -> PotentialParams {
        PotentialParams {
            c: 1.0,
            eta,
            kappa: 0.5,
            gamma: 1.0,
            zeta: 0.2,
            xbar: 0.5,
        }
    }

    #[test]
    fn no_potential_reduces_to_affine_price() {
        let (s, qf) = day(1.0);
        let time = TimeGrid::new(24.0, 480).unwrap();
        let lq = solve_lq_quadratic_terminal(1.0, 1.0, 0.2, 0.5, &s, time).unwrap();
        let (state, price) = solve_potential_model(params(0.0), &s, time, &VolterraMethod::Trapezoid).unwrap();
        // fourth-order error of the backward coefficient ODEs
        assert!(price.sup_distance(&lq.price) < 1e-6, "{}", price.sup_distance(&lq.price));
        assert!(state.kernel.iter().all(|&k| k == 0.0));
        let (_, laplace) = solve_potential_model(params(0.0), &s, time, &VolterraMethod::Laplace(qf)).unwrap();
        let exact = PricePath::from_fn(time, |t| -state.pi0 - (2.0 * std::f64::consts::PI * t / 24.0).cos()).unwrap();
        assert!(laplace.sup_distance(&exact) < 1e-6);
    }

    #[test]
    fn trajectories_without_potential_follow_affine_feedback() {
        let (s, _) = day(1.0);
        let time = TimeGrid::new(24.0, 480).unwrap();
        let lq = solve_lq_quadratic_terminal(1.0, 1.0, 0.2, 0.5, &s, time).unwrap();
        let (state, price) = solve_potential_model(params(0.0), &s, time, &VolterraMethod::Trapezoid).unwrap();
        for x0 in [-1.0, 0.5, 2.0] {
            let a = lq.trajectory(x0, &time).unwrap();
            let b = state.trajectory(&price, x0);
            let err = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "x0 = {x0}: {err}");
        }
    }

    #[test]
    fn symmetric_rest_point() {
        let s = SupplySchedule::constant(0.0, 6.0).unwrap();
        let p = PotentialParams {
            c: 1.0,
            eta: 1.0,
            kappa: 0.3,
            gamma: 2.0,
            zeta: 0.3,
            xbar: 0.3,
        };
        let time = TimeGrid::new(6.0, 60).unwrap();
        let (state, price) = solve_potential_model(p, &s, time, &VolterraMethod::Trapezoid).unwrap();
        assert!(state.xi.iter().all(|&x| (x - 0.3).abs() < 1e-15));
        let p0 = price.values()[0];
        assert!(price.values().iter().all(|v| (v - p0).abs() < 1e-9));
        assert!(state.pi.iter().all(|v| (v - state.pi0).abs() < 1e-9));
    }

    #[test]
    fn ansatz_solves_hjb_and_closes_balance() {
        let (s, qf) = day(0.7);
        let time = TimeGrid::new(24.0, 960).unwrap();
        let p = params(0.05);
        let (state, price) = solve_potential_model(p, &s, time, &VolterraMethod::Laplace(qf)).unwrap();
        assert!(state.closure_residual.abs() < 1e-10);
        assert!((state.pi0 - state.value_x(0, p.xbar)).abs() < 1e-10);
        // −u_t + (ϖ + u_x)²/(2c) − V = 0, with u_t by centered differences
        let dt = time.dt();
        for k in [100, 400, 800] {
            for x in [-1.0, 0.5, 2.0] {
                let ut = (state.value(k + 1, x) - state.value(k - 1, x)) / (2.0 * dt);
                let pv = price.values()[k];
                let v = 0.5 * p.eta * (x - p.kappa).powi(2);
                let r = -ut + (pv + state.value_x(k, x)).powi(2) / (2.0 * p.c) - v;
                assert!(r.abs() < 1e-4, "residual {r}");
            }
        }
    }

    #[test]
    fn trapezoid_and_laplace_routes_agree() {
        let p = params(0.01);
        let gap = |n: usize| {
            let w = 2.0 * std::f64::consts::PI / 24.0;
            let s = SupplySchedule::from_fn(|t| (w * t).cos(), 24.0, 2 * n, Interpolation::Cubic).unwrap();
            let qf = Forcing::new(vec![ForcingTerm::Cos { coeff: 1.0, freq: w }]);
            let time = TimeGrid::new(24.0, n).unwrap();
            let (_, a) = solve_potential_model(p, &s, time, &VolterraMethod::Trapezoid).unwrap();
            let (_, b) = solve_potential_model(p, &s, time, &VolterraMethod::Laplace(qf)).unwrap();
            a.sup_distance(&b)
        };
        let (coarse, fine) = (gap(240), gap(480));
        assert!(fine < 1e-4);
        let ratio = coarse / fine;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn rejects_negative_eta() {
        let (s, _) = day(1.0);
        let time = TimeGrid::new(24.0, 48).unwrap();
        assert!(matches!(
            solve_potential_model(params(-1.0), &s, time, &VolterraMethod::Trapezoid),
            Err(LqError::Model(_))
        ));
    }
}
