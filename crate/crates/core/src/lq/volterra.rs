//! Volterra equations of the second kind, `φ(t) = f(t) - λ ∫_0^t k(t - s) φ(s) ds`.

use serde::{Deserialize, Serialize};

/// Sign convention paired with [`potential_kernel`].
pub const LAMBDA: f64 = -1.0;

/// `k(t) = -ω sinh(ωt)`.
pub fn potential_kernel(omega: f64, t: f64) -> f64 {
    -omega * (omega * t).sinh()
}

/// Trapezoidal product integration on a uniform grid; `f[n]` is the forcing at `n·dt`.
pub fn solve_volterra_trapezoid(f: &[f64], dt: f64, lambda: f64, kernel: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = f.len();
    let k: Vec<f64> = (0..n).map(|j| kernel(j as f64 * dt)).collect();
    let mut phi = Vec::with_capacity(n);
    if n == 0 {
        return phi;
    }
    phi.push(f[0]);
    let diag = 1.0 + 0.5 * lambda * dt * k[0];
    for i in 1..n {
        let mut acc = 0.5 * k[i] * phi[0];
        for j in 1..i {
            acc += k[i - j] * phi[j];
        }
        phi.push((f[i] - lambda * dt * acc) / diag);
    }
    phi
}

/// Composite Simpson weights for `n + 1` equally spaced nodes (3/8 rule on the last
/// panel when `n` is odd).
fn simpson_weights(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    match n {
        0 => {}
        1 => {
            w[0] = 0.5;
            w[1] = 0.5;
        }
        _ => {
            let simpson_end = if n % 2 == 0 { n } else { n - 3 };
            for i in (0..simpson_end).step_by(2) {
                w[i] += 1.0 / 3.0;
                w[i + 1] += 4.0 / 3.0;
                w[i + 2] += 1.0 / 3.0;
            }
            if n % 2 == 1 {
                let s = n - 3;
                for (o, c) in [3.0, 9.0, 9.0, 3.0].iter().enumerate() {
                    w[s + o] += c / 8.0;
                }
            }
        }
    }
    w
}

/// `sup_n |φ_n - f_n + λ ∫_0^{t_n} k(t_n - s) φ(s) ds|`, with the integral taken by
/// Simpson's rule so that it is independent of the trapezoidal solve.
pub fn volterra_residual(phi: &[f64], f: &[f64], dt: f64, lambda: f64, kernel: impl Fn(f64) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for n in 1..phi.len() {
        if n < 2 {
            continue;
        }
        let w = simpson_weights(n);
        let integral: f64 = (0..=n).map(|j| w[j] * kernel((n - j) as f64 * dt) * phi[j]).sum::<f64>() * dt;
        worst = worst.max((phi[n] - f[n] + lambda * integral).abs());
    }
    worst
}

/// One term of an analytic forcing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForcingTerm {
    /// `coeff · t^power`
    Power { coeff: f64, power: u32 },
    /// `coeff · e^{rate t}`
    Exp { coeff: f64, rate: f64 },
    /// `coeff · sin(freq t)`
    Sin { coeff: f64, freq: f64 },
    /// `coeff · cos(freq t)`
    Cos { coeff: f64, freq: f64 },
}

const SERIES_CUTOFF: f64 = 1e-2;

impl ForcingTerm {
    fn eval(&self, t: f64) -> f64 {
        match *self {
            ForcingTerm::Power { coeff, power } => coeff * t.powi(power as i32),
            ForcingTerm::Exp { coeff, rate } => coeff * (rate * t).exp(),
            ForcingTerm::Sin { coeff, freq } => coeff * (freq * t).sin(),
            ForcingTerm::Cos { coeff, freq } => coeff * (freq * t).cos(),
        }
    }

    /// `∫_0^t g(s) ds`.
    fn integral(&self, t: f64) -> f64 {
        match *self {
            ForcingTerm::Power { coeff, power } => coeff * t.powi(power as i32 + 1) / (power as f64 + 1.0),
            ForcingTerm::Exp { coeff, rate } if rate == 0.0 => coeff * t,
            ForcingTerm::Exp { coeff, rate } => coeff * (rate * t).exp_m1() / rate,
            ForcingTerm::Sin { coeff, freq } if freq == 0.0 => 0.0 * coeff,
            ForcingTerm::Sin { coeff, freq } => coeff * (1.0 - (freq * t).cos()) / freq,
            ForcingTerm::Cos { coeff, freq } if freq == 0.0 => coeff * t,
            ForcingTerm::Cos { coeff, freq } => coeff * (freq * t).sin() / freq,
        }
    }

    /// `∫_0^t (t - s) g(s) ds`.
    fn double_integral(&self, t: f64) -> f64 {
        let t2 = t * t;
        match *self {
            ForcingTerm::Power { coeff, power } => {
                let p = power as f64;
                coeff * t.powi(power as i32 + 2) / ((p + 1.0) * (p + 2.0))
            }
            ForcingTerm::Exp { coeff, rate } => {
                let x = rate * t;
                if x.abs() < SERIES_CUTOFF {
                    coeff * t2 * (0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x * (1.0 / 120.0 + x / 720.0))))
                } else {
                    coeff * (x.exp_m1() - x) / (rate * rate)
                }
            }
            ForcingTerm::Sin { coeff, freq } => {
                let x = freq * t;
                let x2 = x * x;
                if x.abs() < SERIES_CUTOFF {
                    coeff * t2 * x * (1.0 / 6.0 - x2 * (1.0 / 120.0 - x2 / 5040.0))
                } else {
                    coeff * (x - x.sin()) / (freq * freq)
                }
            }
            ForcingTerm::Cos { coeff, freq } => {
                let x = freq * t;
                let x2 = x * x;
                if x.abs() < SERIES_CUTOFF {
                    coeff * t2 * (0.5 - x2 * (1.0 / 24.0 - x2 * (1.0 / 720.0 - x2 / 40320.0)))
                } else {
                    coeff * (1.0 - x.cos()) / (freq * freq)
                }
            }
        }
    }

    fn scaled(self, s: f64) -> Self {
        match self {
            ForcingTerm::Power { coeff, power } => ForcingTerm::Power { coeff: s * coeff, power },
            ForcingTerm::Exp { coeff, rate } => ForcingTerm::Exp { coeff: s * coeff, rate },
            ForcingTerm::Sin { coeff, freq } => ForcingTerm::Sin { coeff: s * coeff, freq },
            ForcingTerm::Cos { coeff, freq } => ForcingTerm::Cos { coeff: s * coeff, freq },
        }
    }
}

/// Sum of polynomial, exponential and sinusoidal terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Forcing {
    terms: Vec<ForcingTerm>,
}

impl Forcing {
    pub fn new(terms: Vec<ForcingTerm>) -> Self {
        Self { terms }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(vec![ForcingTerm::Power { coeff: value, power: 0 }])
    }

    pub fn terms(&self) -> &[ForcingTerm] {
        &self.terms
    }

    pub fn with(mut self, term: ForcingTerm) -> Self {
        self.terms.push(term);
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.terms.iter().map(|t| t.scaled(s)).collect())
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|g| g.eval(t)).sum()
    }

    pub fn integral(&self, t: f64) -> f64 {
        self.terms.iter().map(|g| g.integral(t)).sum()
    }

    pub fn double_integral(&self, t: f64) -> f64 {
        self.terms.iter().map(|g| g.double_integral(t)).sum()
    }
}

/// Solution of `φ = f - λ (k ∗ φ)` for `k = -ω sinh(ω·)` and `λ = -1`.
///
/// The transfer function is `1 / (1 + λ ℒk) = 1 - ω²/s²`, so
/// `φ(t) = f(t) - ω² ∫_0^t (t - s) f(s) ds`.
pub fn laplace_solution(forcing: &Forcing, omega: f64, t: f64) -> f64 {
    forcing.eval(t) - omega * omega * forcing.double_integral(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_kernel_returns_forcing() {
        let f: Vec<f64> = (0..20).map(|i| (i as f64 * 0.1).cos()).collect();
        let phi = solve_volterra_trapezoid(&f, 0.1, LAMBDA, |t| potential_kernel(0.0, t));
        assert_eq!(phi, f);
    }

    #[test]
    fn constant_forcing_closed_form() {
        let f0 = 1.7;
        let forcing = Forcing::constant(f0);
        for &t in &[0.0, 0.5, 2.0, 3.7] {
            assert!((laplace_solution(&forcing, 1.0, t) - f0 * (1.0 - 0.5 * t * t)).abs() < 1e-13);
        }
    }

    #[test]
    fn double_integrals_match_quadrature() {
        let terms = [
            ForcingTerm::Power { coeff: 0.7, power: 3 },
            ForcingTerm::Exp { coeff: -1.1, rate: 0.8 },
            ForcingTerm::Exp { coeff: 2.0, rate: 1e-4 },
            ForcingTerm::Sin { coeff: 1.3, freq: 2.0 },
            ForcingTerm::Sin { coeff: 1.3, freq: 1e-3 },
            ForcingTerm::Cos { coeff: -0.4, freq: 0.26 },
            ForcingTerm::Cos { coeff: -0.4, freq: 1e-3 },
        ];
        let t = 2.3;
        let n = 2000;
        let h = t / n as f64;
        let w = simpson_weights(n);
        for g in terms {
            let quad: f64 = (0..=n).map(|j| w[j] * (t - j as f64 * h) * g.eval(j as f64 * h)).sum::<f64>() * h;
            assert!((quad - g.double_integral(t)).abs() < 1e-10, "{g:?}");
            let single: f64 = (0..=n).map(|j| w[j] * g.eval(j as f64 * h)).sum::<f64>() * h;
            assert!((single - g.integral(t)).abs() < 1e-10, "{g:?}");
        }
    }

    #[test]
    fn laplace_solution_satisfies_equation() {
        let omega = 0.9;
        let forcing = Forcing::new(vec![
            ForcingTerm::Exp { coeff: -0.3, rate: omega },
            ForcingTerm::Exp { coeff: 0.2, rate: -omega },
            ForcingTerm::Cos { coeff: -1.0, freq: 0.5 },
        ]);
        let dt = 0.002;
        let n = 1501;
        let phi: Vec<f64> = (0..n).map(|j| laplace_solution(&forcing, omega, j as f64 * dt)).collect();
        let f: Vec<f64> = (0..n).map(|j| forcing.eval(j as f64 * dt)).collect();
        let r = volterra_residual(&phi, &f, dt, LAMBDA, |t| potential_kernel(omega, t));
        assert!(r < 1e-9, "{r}");
    }

    #[test]
    fn simpson_weights_sum_to_length() {
        for n in 1..12 {
            let s: f64 = simpson_weights(n).iter().sum();
            assert!((s - n as f64).abs() < 1e-12, "n={n}");
        }
    }
}
