//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use starstab::eos::EquationOfState;
use starstab::equilibrium::{integrate_profile, StellarModel};

pub const TOL: f64 = 1e-10;

pub fn polytrope(gamma: f64) -> EquationOfState {
    EquationOfState::polytrope(1.0, gamma).unwrap()
}

/// The spiral-regime composite law used throughout: `γ₀ = 5/3`, `γ∞ = 1.1`.
pub fn composite() -> EquationOfState {
    EquationOfState::composite(1.0, 5.0 / 3.0, 1.1, 1.0).unwrap()
}

pub fn white_dwarf() -> EquationOfState {
    EquationOfState::white_dwarf(1.0, 1.0).unwrap()
}

pub fn model(eos: &EquationOfState, mu: f64) -> StellarModel {
    integrate_profile(eos, mu, TOL).unwrap()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Least-squares slope of `ys` against `xs`.
pub fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Adaptive Simpson quadrature.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, eps: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, eps, 50)
}

/// Lane–Emden oracle: classical RK4 on `(θ, θ')` from a series start with a
/// fixed step, the first zero located by bisection on the cubic Hermite
/// interpolant of the bracketing step. Returns `(ξ₁, −ξ₁²θ'(ξ₁))`.
pub fn lane_emden_rk4(n: f64, h: f64) -> (f64, f64) {
    let rhs = |s: f64, y: [f64; 2]| -> [f64; 2] { [y[1], -y[0].max(0.0).powf(n) - 2.0 * y[1] / s] };
    let s0: f64 = 1e-3;
    let mut y = [1.0 - s0 * s0 / 6.0 + n * s0.powi(4) / 120.0, -s0 / 3.0 + n * s0.powi(3) / 30.0];
    let mut s = s0;
    loop {
        let k1 = rhs(s, y);
        let k2 = rhs(s + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
        let k3 = rhs(s + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
        let k4 = rhs(s + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        let next = [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        if next[0] <= 0.0 {
            let (t0, t1) = (s, s + h);
            let (f0, f1, d0, d1) = (y[0], next[0], y[1], next[1]);
            let herm = |t: f64| {
                let u = (t - t0) / h;
                let (h00, h10, h01, h11) =
                    (2.0 * u.powi(3) - 3.0 * u * u + 1.0, u.powi(3) - 2.0 * u * u + u, -2.0 * u.powi(3) + 3.0 * u * u, u.powi(3) - u * u);
                h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1
            };
            let (mut a, mut b) = (t0, t1);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if herm(m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            let xi = 0.5 * (a + b);
            let u = (xi - t0) / h;
            let dtheta = (6.0 * u * u - 6.0 * u) / h * f0
                + (3.0 * u * u - 4.0 * u + 1.0) * d0
                + (-6.0 * u * u + 6.0 * u) / h * f1
                + (3.0 * u * u - 2.0 * u) * d1;
            return (xi, -xi * xi * dtheta);
        }
        y = next;
        s += h;
    }
}

/// `∂_μ V_μ` at the given radii by central differences at `μ(1 ± δ)`.
pub fn dmu_potential(eos: &EquationOfState, mu: f64, delta: f64, radii: &[f64]) -> Vec<f64> {
    let lo = model(eos, mu * (1.0 - delta));
    let hi = model(eos, mu * (1.0 + delta));
    let v = |m: &StellarModel, r: f64| m.surface_potential() - m.y_at(r);
    radii.iter().map(|&r| (v(&hi, r) - v(&lo, r)) / (2.0 * delta * mu)).collect()
}

/// Radial density `ρ(r)` and its derivative from a model.
pub fn rho_and_derivative(m: &StellarModel, r: f64) -> (f64, f64) {
    if r >= m.radius {
        return (0.0, 0.0);
    }
    let inv = m.eos.enthalpy_inverse();
    let (y, yp) = (m.y_at(r), m.yprime_at(r));
    (inv.f_plus(y).unwrap(), inv.f_plus_prime(y).unwrap() * yp)
}

pub fn sphere(r: f64) -> f64 {
    4.0 * PI * r * r
}
