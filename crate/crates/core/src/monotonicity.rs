//! Discrete monotone operator of the coupled system and its monotonicity gap.
//!
//! For `w = (m, u, ϖ)` with `p = ϖ + D u`:
//!
//! ```text
//! row 1:  D_t⁺u + εΔu - H(x, p)                  paired with m, k = 0..N-1
//! row 2:  D_t⁻m - εΔm - div(m D_pH(x, p))        paired with u, k = 1..N
//! row 3:  ∫ m D_pH(x, p) dx + Q(t)               paired with ϖ
//! ```
//!
//! `Δ` is the zero-flux Laplacian and `div` the negative adjoint of the centered
//! gradient `D`, both in the trapezoidal inner product. With these choices the
//! time and diffusion parts of `⟨A[w] - A[w̃], w - w̃⟩` telescope to zero for pairs
//! sharing `m(·, 0)` and `u(·, T)`, and the rest is a sum of convexity gaps of `H`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::error::ModelError;
use crate::model::{
    gradient, DensityField, HamiltonianSpec, InitialDensity, PricePath, SpaceGrid, SupplySchedule,
    TerminalCost, TimeGrid, ValueField,
};

/// Smallest density value accepted for strictly positive triples.
pub const POSITIVITY_FLOOR: f64 = 1e-8;
/// Gap below which a trial counts as a violation.
pub const GAP_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonotonicityError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("density minimum {min:e} is below the positivity floor")]
    NotPositive { min: f64 },
    #[error("triples do not share {0}")]
    BoundaryMismatch(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub m: DensityField,
    pub u: ValueField,
    pub varpi: PricePath,
}

impl Triple {
    pub fn new(m: DensityField, u: ValueField, varpi: PricePath) -> Result<Self, MonotonicityError> {
        if m.space() != u.space() || m.time() != u.time() || u.time() != varpi.grid() {
            return Err(MonotonicityError::GridMismatch("m, u and ϖ must share grids".into()));
        }
        Ok(Self { m, u, varpi })
    }

    pub fn space(&self) -> &SpaceGrid {
        self.u.space()
    }

    pub fn time(&self) -> &TimeGrid {
        self.u.time()
    }

    pub fn is_positive(&self) -> bool {
        self.m.min() >= POSITIVITY_FLOOR
    }

    /// Same grids, same `m(·, 0)` and same `u(·, T)`.
    pub fn is_compatible_with(&self, other: &Triple) -> bool {
        self.check_pair(other).is_ok()
    }

    fn check_pair(&self, other: &Triple) -> Result<(), MonotonicityError> {
        if self.space() != other.space() || self.time() != other.time() {
            return Err(MonotonicityError::GridMismatch("triples use different grids".into()));
        }
        if self.m.slice(0) != other.m.slice(0) {
            return Err(MonotonicityError::BoundaryMismatch("the initial density"));
        }
        let last = self.time().steps();
        if self.u.slice(last) != other.u.slice(last) {
            return Err(MonotonicityError::BoundaryMismatch("the terminal value"));
        }
        Ok(())
    }
}

/// Image of a triple. `row1` is undefined (zero) at the last time node and `row2`
/// at the first.
#[derive(Debug, Clone, PartialEq)]
pub struct AImage {
    pub row1: Vec<f64>,
    pub row2: Vec<f64>,
    pub row3: Vec<f64>,
    nx: usize,
}

impl AImage {
    pub fn row1_slice(&self, k: usize) -> &[f64] {
        &self.row1[k * self.nx..(k + 1) * self.nx]
    }

    pub fn row2_slice(&self, k: usize) -> &[f64] {
        &self.row2[k * self.nx..(k + 1) * self.nx]
    }

    /// Sup norms of the three rows.
    pub fn sup_norms(&self) -> [f64; 3] {
        let sup = |v: &[f64]| v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        [sup(&self.row1), sup(&self.row2), sup(&self.row3)]
    }
}

/// Zero-flux Laplacian, symmetric in the trapezoidal inner product.
fn laplacian(v: &[f64], w: &[f64], dx: f64) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    for i in 0..n - 1 {
        let flux = (v[i + 1] - v[i]) / dx;
        out[i] += flux;
        out[i + 1] -= flux;
    }
    out.iter().zip(w).map(|(o, wi)| o / wi).collect()
}

/// `div f = -D* f`, the negative adjoint of [`gradient`] in the trapezoidal inner product.
fn divergence(f: &[f64], w: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    // column j of D collects w_i f_i D_ij
    let mut add = |i: usize, j: usize, d: f64| out[j] += w[i] * f[i] * d;
    add(0, 0, -1.0 / dx);
    add(0, 1, 1.0 / dx);
    for i in 1..n - 1 {
        add(i, i - 1, -0.5 / dx);
        add(i, i + 1, 0.5 / dx);
    }
    add(n - 1, n - 2, -1.0 / dx);
    add(n - 1, n - 1, 1.0 / dx);
    out.iter().zip(w).map(|(o, wi)| -o / wi).collect()
}

fn momenta(t: &Triple, k: usize) -> Vec<f64> {
    let p = t.varpi.values()[k];
    gradient(t.u.slice(k), t.space().dx()).into_iter().map(|g| p + g).collect()
}

pub fn apply_a(triple: &Triple, spec: &HamiltonianSpec, supply: &SupplySchedule) -> AImage {
    let space = *triple.space();
    let time = *triple.time();
    let (nx, nt) = (space.len(), time.len());
    let (dx, dt) = (space.dx(), time.dt());
    let w = space.weights();
    let xs = space.nodes();
    let eps = spec.epsilon();
    let mut row1 = vec![0.0; nx * nt];
    let mut row2 = vec![0.0; nx * nt];
    let mut row3 = vec![0.0; nt];
    for k in 0..nt {
        let p = momenta(triple, k);
        let mk = triple.m.slice(k);
        let uk = triple.u.slice(k);
        if k + 1 < nt {
            let next = triple.u.slice(k + 1);
            let lap = laplacian(uk, &w, dx);
            for i in 0..nx {
                row1[k * nx + i] = (next[i] - uk[i]) / dt + eps * lap[i] - spec.h(xs[i], p[i]);
            }
        }
        if k > 0 {
            let prev = triple.m.slice(k - 1);
            let lap = laplacian(mk, &w, dx);
            let flux: Vec<f64> = (0..nx).map(|i| mk[i] * spec.dp(p[i])).collect();
            let div = divergence(&flux, &w, dx);
            for i in 0..nx {
                row2[k * nx + i] = (mk[i] - prev[i]) / dt - eps * lap[i] - div[i];
            }
        }
        row3[k] = space.integrate_with(mk, |i, _| spec.dp(p[i])) + supply.value(time.node(k));
    }
    AImage { row1, row2, row3, nx }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapBreakdown {
    /// Time-derivative and diffusion part; zero up to rounding for compatible pairs.
    pub a1: f64,
    /// Hamiltonian, transport and balance part; a sum of convexity gaps.
    pub a2: f64,
    pub total: f64,
}

/// `⟨A[w] - A[w̃], w - w̃⟩` split into its two parts.
///
/// The price pairs on interior time nodes, where both transport rows are present.
pub fn monotonicity_gap_breakdown(
    w: &Triple,
    w2: &Triple,
    spec: &HamiltonianSpec,
    supply: &SupplySchedule,
) -> Result<GapBreakdown, MonotonicityError> {
    w.check_pair(w2)?;
    for t in [w, w2] {
        if !t.is_positive() {
            return Err(MonotonicityError::NotPositive { min: t.m.min() });
        }
    }
    let space = *w.space();
    let time = *w.time();
    let (nx, nt) = (space.len(), time.len());
    let (dx, dt) = (space.dx(), time.dt());
    let wt = space.weights();
    let eps = spec.epsilon();
    let dm = |k: usize| -> Vec<f64> { w.m.slice(k).iter().zip(w2.m.slice(k)).map(|(a, b)| a - b).collect() };
    let du = |k: usize| -> Vec<f64> { w.u.slice(k).iter().zip(w2.u.slice(k)).map(|(a, b)| a - b).collect() };
    let dot = |a: &[f64], b: &[f64]| (0..nx).map(|i| wt[i] * a[i] * b[i]).sum::<f64>();

    let mut a1 = 0.0;
    for k in 0..nt - 1 {
        let (u0, u1, m0) = (du(k), du(k + 1), dm(k));
        let lap = laplacian(&u0, &wt, dx);
        let r: Vec<f64> = (0..nx).map(|i| (u1[i] - u0[i]) / dt + eps * lap[i]).collect();
        a1 += dt * dot(&r, &m0);
    }
    for k in 1..nt {
        let (m0, m1, u1) = (dm(k - 1), dm(k), du(k));
        let lap = laplacian(&m1, &wt, dx);
        let r: Vec<f64> = (0..nx).map(|i| (m1[i] - m0[i]) / dt - eps * lap[i]).collect();
        a1 += dt * dot(&r, &u1);
    }

    let (img, img2) = (apply_a(w, spec, supply), apply_a(w2, spec, supply));
    let mut total = 0.0;
    for k in 0..nt {
        if k + 1 < nt {
            let r: Vec<f64> = img.row1_slice(k).iter().zip(img2.row1_slice(k)).map(|(a, b)| a - b).collect();
            total += dt * dot(&r, &dm(k));
        }
        if k > 0 {
            let r: Vec<f64> = img.row2_slice(k).iter().zip(img2.row2_slice(k)).map(|(a, b)| a - b).collect();
            total += dt * dot(&r, &du(k));
        }
        if k > 0 && k + 1 < nt {
            let dp = w.varpi.values()[k] - w2.varpi.values()[k];
            total += dt * (img.row3[k] - img2.row3[k]) * dp;
        }
    }
    Ok(GapBreakdown { a1, a2: total - a1, total })
}

pub fn monotonicity_gap(
    w: &Triple,
    w2: &Triple,
    spec: &HamiltonianSpec,
    supply: &SupplySchedule,
) -> Result<f64, MonotonicityError> {
    Ok(monotonicity_gap_breakdown(w, w2, spec, supply)?.total)
}

/// `∫∫ |p - p̃|² (m + m̃) dx dt` on interior time nodes.
pub fn bregman_integrand(w: &Triple, w2: &Triple) -> Result<f64, MonotonicityError> {
    if w.space() != w2.space() || w.time() != w2.time() {
        return Err(MonotonicityError::GridMismatch("triples use different grids".into()));
    }
    let space = w.space();
    let dt = w.time().dt();
    let mut total = 0.0;
    for k in 1..w.time().len() - 1 {
        let (p, q) = (momenta(w, k), momenta(w2, k));
        let sum: Vec<f64> = w.m.slice(k).iter().zip(w2.m.slice(k)).map(|(a, b)| a + b).collect();
        total += dt * space.integrate_with(&sum, |i, _| (p[i] - q[i]).powi(2));
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub min_gap: f64,
    pub violations: usize,
}

/// Setup shared by randomized trials.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSetup {
    pub spec: HamiltonianSpec,
    pub supply: SupplySchedule,
    pub initial: InitialDensity,
    pub terminal: TerminalCost,
    pub time: TimeGrid,
}

impl TrialSetup {
    /// Small default problem: Gaussian initial density on `[-3, 3]`, quadratic terminal cost.
    pub fn standard(spec: HamiltonianSpec) -> Result<Self, ModelError> {
        let space = SpaceGrid::new(-3.0, 3.0, 41)?;
        let horizon = 1.0;
        Ok(Self {
            spec,
            supply: SupplySchedule::from_fn(|t| 0.3 * (3.0 * t).sin(), horizon, 20, Default::default())?,
            // end values near 6e-7 of the peak: negligible mass, still strictly positive
            initial: InitialDensity::gaussian(space, 0.0, 0.56)?,
            terminal: TerminalCost::quadratic(1.0, 0.2)?,
            time: TimeGrid::new(horizon, 20)?,
        })
    }

    /// Random strictly positive triple sharing `m(·, 0) = m̄` and `u(·, T) = ū`.
    pub fn random_triple<R: Rng>(&self, rng: &mut R) -> Result<Triple, MonotonicityError> {
        let space = *self.initial.grid();
        let time = self.time;
        let horizon = time.horizon();
        let (lo, hi) = (space.x_min(), space.x_max());
        let bump = |rng: &mut R| {
            let centre = rng.random_range(lo..hi);
            let width = rng.random_range(0.2..1.5) * (hi - lo) / 6.0;
            let amp = rng.random_range(-1.0..1.0);
            move |x: f64| amp * (-((x - centre) / width).powi(2)).exp()
        };
        let (b1, b2, b3) = (bump(rng), bump(rng), bump(rng));
        let m_amp = rng.random_range(0.0..0.45);
        let u_amp = rng.random_range(-2.0..2.0);
        let freq = rng.random_range(0.5..6.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let shift = rng.random_range(-1.0..1.0);
        let m0 = self.initial.values();
        let xs = space.nodes();
        let mut m = Vec::with_capacity(space.len() * time.len());
        for t in time.nodes() {
            for (i, &x) in xs.iter().enumerate() {
                // |b1 + b2| < 2, so the factor stays above 0.1
                m.push(m0[i] * (1.0 + m_amp * (t / horizon) * (b1(x) + b2(x))));
            }
        }
        let ubar = self.terminal.samples(&space);
        let mut u = Vec::with_capacity(space.len() * time.len());
        for t in time.nodes() {
            for (i, &x) in xs.iter().enumerate() {
                u.push(ubar[i] + (horizon - t) * u_amp * (b3(x) + 0.3 * x * (freq * t).cos()));
            }
        }
        let varpi = PricePath::from_fn(time, |t| shift + (freq * t + phase).sin())?;
        Triple::new(DensityField::new(space, time, m)?, ValueField::new(space, time, u)?, varpi)
    }
}

/// Seeded Monte Carlo over random compatible pairs; trials run in parallel and
/// each uses its own stream, so the report does not depend on thread count.
pub fn run_trials(setup: &TrialSetup, trials: usize, seed: u64) -> Result<MonotonicityReport, MonotonicityError> {
    let gaps: Result<Vec<f64>, MonotonicityError> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let a = setup.random_triple(&mut rng)?;
            let b = setup.random_triple(&mut rng)?;
            monotonicity_gap(&a, &b, &setup.spec, &setup.supply)
        })
        .collect();
    let gaps = gaps?;
    Ok(MonotonicityReport {
        trials,
        min_gap: gaps.iter().copied().fold(f64::INFINITY, f64::min),
        violations: gaps.iter().filter(|&&g| g < -GAP_TOL).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Potential;

    fn setup(eps: f64) -> TrialSetup {
        TrialSetup::standard(HamiltonianSpec::new(1.5, eps, Potential::quadratic(0.5, 0.1).unwrap()).unwrap())
            .unwrap()
    }

    #[test]
    fn static_trivial_triple_is_a_zero() {
        let space = SpaceGrid::new(-4.0, 4.0, 81).unwrap();
        let time = TimeGrid::new(1.0, 10).unwrap();
        let m0 = InitialDensity::gaussian(space, 0.0, 0.5).unwrap();
        let m = DensityField::new(space, time, (0..time.len()).flat_map(|_| m0.values().to_vec()).collect()).unwrap();
        let u = ValueField::from_fn(space, time, |_, _| 0.0).unwrap();
        let spec = HamiltonianSpec::new(2.0, 0.0, Potential::Zero).unwrap();
        let zero = SupplySchedule::constant(0.0, 1.0).unwrap();
        let t = Triple::new(m.clone(), u.clone(), PricePath::constant(time, 0.0)).unwrap();
        let img = apply_a(&t, &spec, &zero);
        assert_eq!(img.sup_norms(), [0.0, 0.0, 0.0]);
        // constraint row is ϖ₀/c + Q
        let q = SupplySchedule::constant(0.25, 1.0).unwrap();
        let t = Triple::new(m, u, PricePath::constant(time, 0.8)).unwrap();
        let img = apply_a(&t, &spec, &q);
        assert!(img.row3.iter().all(|r| (r - (0.8 / 2.0 + 0.25)).abs() < 1e-12));
    }

    #[test]
    fn operators_are_adjoint_pairs() {
        let space = SpaceGrid::new(0.0, 2.0, 21).unwrap();
        let w = space.weights();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..21).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..21).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot = |x: &[f64], y: &[f64]| (0..21).map(|i| w[i] * x[i] * y[i]).sum::<f64>();
        let (la, lb) = (laplacian(&a, &w, space.dx()), laplacian(&b, &w, space.dx()));
        assert!((dot(&la, &b) - dot(&a, &lb)).abs() < 1e-12);
        let div = divergence(&a, &w, space.dx());
        let grad = gradient(&b, space.dx());
        assert!((dot(&div, &b) + dot(&a, &grad)).abs() < 1e-12);
    }

    #[test]
    fn identical_triples_have_zero_gap() {
        let s = setup(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = s.random_triple(&mut rng).unwrap();
        assert_eq!(monotonicity_gap(&t, &t, &s.spec, &s.supply).unwrap(), 0.0);
    }

    #[test]
    fn gap_is_symmetric_and_strict() {
        for eps in [0.0, 0.05] {
            let s = setup(eps);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let a = s.random_triple(&mut rng).unwrap();
            let b = s.random_triple(&mut rng).unwrap();
            let g = monotonicity_gap_breakdown(&a, &b, &s.spec, &s.supply).unwrap();
            let h = monotonicity_gap_breakdown(&b, &a, &s.spec, &s.supply).unwrap();
            assert!((g.total - h.total).abs() <= 1e-12 * g.total.abs().max(1.0));
            assert!(g.a1.abs() < 1e-10, "a1 = {}", g.a1);
            assert!(g.total > 0.0);
            // quadratic kinetic part: the gap is half the weighted Bregman integral over c
            let bregman = bregman_integrand(&a, &b).unwrap();
            assert!((g.a2 - bregman / (2.0 * s.spec.c())).abs() < 1e-9 * bregman.max(1.0));
        }
    }

    #[test]
    fn rejects_incompatible_or_nonpositive_pairs() {
        let s = setup(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = s.random_triple(&mut rng).unwrap();
        let mut vals = a.u.values().to_vec();
        let n = vals.len();
        vals[n - 1] += 1.0;
        let bad = Triple::new(a.m.clone(), ValueField::new(*a.space(), *a.time(), vals).unwrap(), a.varpi.clone()).unwrap();
        assert!(matches!(
            monotonicity_gap(&a, &bad, &s.spec, &s.supply),
            Err(MonotonicityError::BoundaryMismatch(_))
        ));
        let mut vals = a.m.values().to_vec();
        let last = vals.len() - 1;
        vals[last] = 0.0;
        let zero = Triple::new(DensityField::new(*a.space(), *a.time(), vals).unwrap(), a.u.clone(), a.varpi.clone()).unwrap();
        assert!(matches!(
            monotonicity_gap(&zero, &a, &s.spec, &s.supply),
            Err(MonotonicityError::NotPositive { .. })
        ));
    }

    #[test]
    fn trials_are_reproducible() {
        let s = setup(0.01);
        let a = run_trials(&s, 40, 9).unwrap();
        let b = run_trials(&s, 40, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.violations, 0);
        assert!(a.min_gap >= -GAP_TOL);
    }
}
