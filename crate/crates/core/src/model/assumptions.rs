use serde::Serialize;

use super::data::{InitialDensity, TerminalCost};
use super::grid::{second_difference, SpaceGrid};
use super::hamiltonian::{HamiltonianSpec, Potential};

/// Standing hypotheses on the model data, checked on the discrete grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Assumption {
    /// Convex Lagrangian, potential bounded below.
    A1,
    /// `V` and `ū` Lipschitz.
    A2,
    /// Bounded second derivatives of `V` and `ū`.
    A3,
    /// Bounded second derivatives of `m̄` and `ū`.
    A4,
    /// `D²_ppH ≥ θ > 0` and bounded `D³_pppH`.
    A5,
    /// `V` and `ū` convex.
    A6,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub assumption: Assumption,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn passed(&self, a: Assumption) -> bool {
        self.checks
            .iter()
            .filter(|c| c.assumption == a)
            .all(|c| c.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// A slope jump between adjacent cells larger than this fraction of the slope
/// scale is read as a kink, i.e. a second difference that blows up as `dx → 0`.
pub const KINK_FRACTION: f64 = 0.5;

/// Tolerance on negative second differences for the convexity flag.
pub const CONVEXITY_TOL: f64 = 1e-9;

fn cell_slopes(v: &[f64], dx: f64) -> Vec<f64> {
    v.windows(2).map(|w| (w[1] - w[0]) / dx).collect()
}

fn lipschitz(v: &[f64], dx: f64) -> f64 {
    cell_slopes(v, dx).iter().fold(0.0, |a, s| a.max(s.abs()))
}

/// `Some(jump)` when the table has a resolved kink.
fn kink(v: &[f64], dx: f64) -> Option<f64> {
    let slopes = cell_slopes(v, dx);
    let scale = slopes.iter().fold(1.0_f64, |a, s| a.max(s.abs()));
    let jump = slopes
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    (jump > KINK_FRACTION * scale).then_some(jump)
}

fn max_abs_second_difference(v: &[f64], dx: f64) -> f64 {
    second_difference(v, dx).iter().fold(0.0, |a, d| a.max(d.abs()))
}

fn convex(v: &[f64], dx: f64) -> bool {
    second_difference(v, dx)
        .iter()
        .all(|&d| d >= -CONVEXITY_TOL * (1.0 + d.abs()))
}

fn potential_samples(p: &Potential, grid: &SpaceGrid) -> Vec<f64> {
    grid.nodes().into_iter().map(|x| p.value(x)).collect()
}

/// Checks A1–A6 with discrete difference bounds on the density's grid. Failures
/// are reported, never raised.
pub fn validate_assumptions(
    spec: &HamiltonianSpec,
    terminal: &TerminalCost,
    initial: &InitialDensity,
) -> AssumptionReport {
    let grid = initial.grid();
    let dx = grid.dx();
    let v = potential_samples(spec.potential(), grid);
    let ub = terminal.samples(grid);
    let mb = initial.values();
    let n = v.len();
    let mut checks = Vec::new();
    let mut push = |assumption, passed, detail: String| {
        checks.push(AssumptionCheck {
            assumption,
            passed,
            detail,
        })
    };

    // A1: the minimum of V must not sit on a boundary that keeps descending.
    let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let falls_left = v[0] < v[1] && v[0] <= vmin;
    let falls_right = v[n - 1] < v[n - 2] && v[n - 1] <= vmin;
    let a1 = spec.c() > 0.0 && !(falls_left || falls_right);
    push(
        Assumption::A1,
        a1,
        if a1 {
            format!("c = {} > 0, min V = {vmin:.6e}", spec.c())
        } else {
            "V decreases toward a grid boundary; bounded below only because of truncation".into()
        },
    );

    let (lip_v, lip_u) = (lipschitz(&v, dx), lipschitz(&ub, dx));
    push(
        Assumption::A2,
        lip_v.is_finite() && lip_u.is_finite(),
        format!("Lip(V) = {lip_v:.6e}, Lip(ū) = {lip_u:.6e} on the grid"),
    );

    let (kink_v, kink_u, kink_m) = (kink(&v, dx), kink(&ub, dx), kink(mb, dx));
    let (c_v, c_u, c_m) = (
        max_abs_second_difference(&v, dx),
        max_abs_second_difference(&ub, dx),
        max_abs_second_difference(mb, dx),
    );
    push(
        Assumption::A3,
        kink_v.is_none() && kink_u.is_none(),
        match (kink_v, kink_u) {
            (None, None) => format!("|V''| <= {c_v:.6e}, |ū''| <= {c_u:.6e}"),
            (kv, ku) => format!("slope jump: V {kv:?}, ū {ku:?}; second difference unbounded under refinement"),
        },
    );
    push(
        Assumption::A4,
        kink_m.is_none() && kink_u.is_none(),
        match kink_m {
            None => format!("|m̄''| <= {c_m:.6e}, |ū''| <= {c_u:.6e}"),
            Some(j) => format!("slope jump {j:.3e} in m̄"),
        },
    );

    let theta = spec.dpp();
    push(
        Assumption::A5,
        theta > 0.0 && theta.is_finite() && spec.dppp().abs().is_finite(),
        format!("θ = 1/c = {theta:.6e}, |D³H| = {}", spec.dppp().abs()),
    );

    let (cv_v, cv_u) = (convex(&v, dx), convex(&ub, dx));
    push(
        Assumption::A6,
        cv_v && cv_u,
        format!("V convex: {cv_v}, ū convex: {cv_u}"),
    );

    AssumptionReport { checks }
}
