//! Equations of state and the enthalpy machinery built on them.
//!
//! For a barotropic law `P(ρ)` the enthalpy `Φ` satisfies `Φ''(ρ) = P'(ρ)/ρ`
//! with `Φ(0) = Φ'(0) = 0`. Equilibria are parametrized by the enthalpy
//! variable `y`, and densities are recovered through `F₊`, the inverse of
//! `Φ'` extended by zero to `y ≤ 0`.
//!
//! Four families are provided: polytropes `P = Kρ^γ`, the zero-temperature
//! white dwarf law, a two-zone composite law with different exponents at low
//! and high density, and a tabulated law interpolated monotonically in
//! log–log space.

use std::path::Path;

use crate::numerics::{brent, gauss, gl20};

/// Lower end of the open exponent interval covered by the stability theory.
pub const GAMMA0_MIN: f64 = 6.0 / 5.0;
/// Upper end of the open exponent interval covered by the stability theory.
pub const GAMMA0_MAX: f64 = 2.0;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EosError {
    #[error("negative density {0}")]
    NegativeDensity(f64),
    #[error("density {rho} outside the table range (max {max})")]
    OutOfTable { rho: f64, max: f64 },
    #[error("enthalpy {y} beyond the range of Φ' (s_max = {s_max})")]
    BeyondRange { y: f64, s_max: f64 },
    #[error("invalid equation of state: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
enum Family {
    Polytrope { k: f64, gamma: f64 },
    WhiteDwarf { a: f64, b: f64 },
    Composite(Composite),
    Tabulated(Table),
}

#[derive(Clone, Debug, PartialEq)]
struct Composite {
    c_minus: f64,
    gamma0: f64,
    gamma_inf: f64,
    rho_blend: f64,
    c_plus: f64,
    d: f64,
    // Φ' at the blend density
    y_blend: f64,
}

/// Monotone cubic (PCHIP) interpolant of `ln P` against `ln ρ`.
#[derive(Clone, Debug, PartialEq)]
struct Table {
    u: Vec<f64>,
    w: Vec<f64>,
    slope: Vec<f64>,
    // Φ' at each knot
    phi1: Vec<f64>,
}

/// A barotropic pressure law. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EquationOfState {
    family: Family,
}

/// The inverse enthalpy `F₊` of an equation of state, with its derivative.
#[derive(Clone, Copy, Debug)]
pub struct EnthalpyInverse<'a> {
    eos: &'a EquationOfState,
    /// Supremum of `Φ'`, possibly infinite.
    pub s_max: f64,
}

impl EnthalpyInverse<'_> {
    /// `F₊(y)`, zero for `y ≤ 0`.
    pub fn f_plus(&self, y: f64) -> Result<f64, EosError> {
        self.check(y)?;
        Ok(self.eos.f_plus(y))
    }

    /// `F₊'(y)`, zero for `y ≤ 0`.
    pub fn f_plus_prime(&self, y: f64) -> Result<f64, EosError> {
        self.check(y)?;
        Ok(self.eos.f_plus_prime(y))
    }

    fn check(&self, y: f64) -> Result<(), EosError> {
        if y.is_nan() || y >= self.s_max {
            return Err(EosError::BeyondRange { y, s_max: self.s_max });
        }
        Ok(())
    }
}

/// The white dwarf function `f(x) = x(2x²−3)√(x²+1) + 3 asinh x`,
/// which equals `8∫₀ˣ u⁴/√(1+u²) du`.
pub fn white_dwarf_f(x: f64) -> f64 {
    if x < 0.5 {
        // the closed form cancels catastrophically here; sum the binomial
        // series 8 Σ C(−1/2, k) x^{2k+5}/(2k+5) instead
        let x2 = x * x;
        let (mut c, mut p, mut sum) = (1.0, x2 * x2 * x, 0.0);
        for k in 0..60 {
            let term = c * p / (2 * k + 5) as f64;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
            c *= -(k as f64 + 0.5) / (k as f64 + 1.0);
            p *= x2;
        }
        8.0 * sum
    } else {
        x * (2.0 * x * x - 3.0) * (x * x + 1.0).sqrt() + 3.0 * x.asinh()
    }
}

fn positive(name: &str, v: f64) -> Result<(), EosError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(EosError::Invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl EquationOfState {
    /// `P = Kρ^γ`.
    pub fn polytrope(k: f64, gamma: f64) -> Result<Self, EosError> {
        positive("K", k)?;
        if !(gamma.is_finite() && gamma > 1.0) {
            return Err(EosError::Invalid(format!("gamma must exceed 1, got {gamma}")));
        }
        Ok(Self { family: Family::Polytrope { k, gamma } })
    }

    /// `P = A f(x)` with `ρ = B x³`.
    pub fn white_dwarf(a: f64, b: f64) -> Result<Self, EosError> {
        positive("A", a)?;
        positive("B", b)?;
        Ok(Self { family: Family::WhiteDwarf { a, b } })
    }

    /// Two-zone law: `c₋ρ^γ₀` up to `ρ_blend`, then `c₊ρ^γ∞ + d`, with `c₊`
    /// and `d` fixed by continuity of `P` and `P'` at the blend density.
    pub fn composite(c_minus: f64, gamma0: f64, gamma_inf: f64, rho_blend: f64) -> Result<Self, EosError> {
        positive("c_minus", c_minus)?;
        positive("gamma_inf", gamma_inf)?;
        positive("rho_blend", rho_blend)?;
        if !(gamma0 > 4.0 / 3.0 && gamma0 < 2.0) {
            return Err(EosError::Invalid(format!("gamma0 must lie in (4/3, 2), got {gamma0}")));
        }
        let c_plus = c_minus * gamma0 * rho_blend.powf(gamma0 - gamma_inf) / gamma_inf;
        let d = c_minus * rho_blend.powf(gamma0) - c_plus * rho_blend.powf(gamma_inf);
        positive("c_plus", c_plus)?;
        let y_blend = c_minus * gamma0 / (gamma0 - 1.0) * rho_blend.powf(gamma0 - 1.0);
        Ok(Self {
            family: Family::Composite(Composite {
                c_minus,
                gamma0,
                gamma_inf,
                rho_blend,
                c_plus,
                d,
                y_blend,
            }),
        })
    }

    /// Monotone table of `(ρ, P)` pairs in ascending `ρ`.
    ///
    /// Below the first sample the law continues as the power law matching
    /// the interpolant's end slope; above the last sample it is undefined.
    pub fn tabulated(rho: &[f64], p: &[f64]) -> Result<Self, EosError> {
        if rho.len() != p.len() || rho.len() < 3 {
            return Err(EosError::Invalid("table needs at least three (rho, P) rows".into()));
        }
        for i in 0..rho.len() {
            positive("table rho", rho[i])?;
            positive("table P", p[i])?;
            if i > 0 && !(rho[i] > rho[i - 1] && p[i] > p[i - 1]) {
                return Err(EosError::Invalid(format!("table not strictly increasing at row {i}")));
            }
        }
        let u: Vec<f64> = rho.iter().map(|r| r.ln()).collect();
        let w: Vec<f64> = p.iter().map(|v| v.ln()).collect();
        let slope = pchip_slopes(&u, &w);
        if slope[0] <= 1.0 {
            return Err(EosError::Invalid(format!(
                "low-density exponent {} must exceed 1",
                slope[0]
            )));
        }
        let mut t = Table { u, w, slope, phi1: Vec::new() };
        let mut phi1 = vec![t.phi1_below(rho[0])];
        for i in 0..rho.len() - 1 {
            let seg = t.phi1_segment(i, t.u[i + 1]);
            phi1.push(phi1[i] + seg);
        }
        t.phi1 = phi1;
        Ok(Self { family: Family::Tabulated(t) })
    }

    /// Reads a two-column `ρ,P` CSV (header lines and `#` comments skipped).
    pub fn tabulated_from_csv(path: &Path) -> Result<Self, EosError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EosError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::tabulated_from_csv_text(&text)
    }

    /// Parses the contents of a two-column `ρ,P` CSV.
    pub fn tabulated_from_csv_text(text: &str) -> Result<Self, EosError> {
        let mut rho = Vec::new();
        let mut p = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(EosError::Invalid(format!("expected two columns: {line}")));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    rho.push(a);
                    p.push(b);
                }
                _ if rho.is_empty() => continue,
                _ => return Err(EosError::Invalid(format!("unparsable row: {line}"))),
            }
        }
        Self::tabulated(&rho, &p)
    }

    /// Short family name.
    pub fn family_name(&self) -> &'static str {
        match self.family {
            Family::Polytrope { .. } => "polytrope",
            Family::WhiteDwarf { .. } => "white_dwarf",
            Family::Composite(_) => "composite",
            Family::Tabulated(_) => "tabulated",
        }
    }

    /// The low-density exponent `γ₀` with `P'(s) ~ s^{γ₀−1}` as `s → 0`.
    pub fn gamma0(&self) -> f64 {
        match &self.family {
            Family::Polytrope { gamma, .. } => *gamma,
            Family::WhiteDwarf { .. } => 5.0 / 3.0,
            Family::Composite(c) => c.gamma0,
            Family::Tabulated(t) => t.slope[0],
        }
    }

    /// Whether `γ₀` lies in the open interval `(6/5, 2)` assumed by the theory.
    pub fn within_theory(&self) -> bool {
        let g = self.gamma0();
        g > GAMMA0_MIN && g < GAMMA0_MAX
    }

    /// Largest density at which the law is defined.
    pub fn rho_max(&self) -> f64 {
        match &self.family {
            Family::Tabulated(t) => t.u.last().unwrap().exp(),
            _ => f64::INFINITY,
        }
    }

    fn check_rho(&self, rho: f64) -> Result<(), EosError> {
        if rho.is_nan() || rho < 0.0 {
            return Err(EosError::NegativeDensity(rho));
        }
        let max = self.rho_max();
        if rho > max {
            return Err(EosError::OutOfTable { rho, max });
        }
        Ok(())
    }

    /// `P(ρ)`.
    pub fn pressure(&self, rho: f64) -> Result<f64, EosError> {
        self.check_rho(rho)?;
        Ok(self.p(rho))
    }

    /// `P'(ρ)`.
    pub fn dpressure(&self, rho: f64) -> Result<f64, EosError> {
        self.check_rho(rho)?;
        Ok(self.dp(rho))
    }

    /// `Φ'(ρ) = ∫₀^ρ P'(s)/s ds`.
    pub fn enthalpy_prime(&self, rho: f64) -> Result<f64, EosError> {
        self.check_rho(rho)?;
        Ok(self.phi1(rho))
    }

    /// `Φ''(ρ) = P'(ρ)/ρ`.
    pub fn enthalpy_second(&self, rho: f64) -> Result<f64, EosError> {
        self.check_rho(rho)?;
        Ok(self.dp(rho) / rho)
    }

    /// Supremum of `Φ'` over the density range.
    pub fn s_max(&self) -> f64 {
        match &self.family {
            Family::Polytrope { .. } | Family::WhiteDwarf { .. } => f64::INFINITY,
            Family::Composite(c) => {
                if c.gamma_inf >= 1.0 {
                    f64::INFINITY
                } else {
                    let g = c.gamma_inf;
                    c.y_blend + c.c_plus * g / (1.0 - g) * c.rho_blend.powf(g - 1.0)
                }
            }
            Family::Tabulated(t) => *t.phi1.last().unwrap(),
        }
    }

    /// `F₊` and `F₊'` bundled with the range of `Φ'`.
    pub fn enthalpy_inverse(&self) -> EnthalpyInverse<'_> {
        EnthalpyInverse { eos: self, s_max: self.s_max() }
    }

    pub(crate) fn p(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        match &self.family {
            Family::Polytrope { k, gamma } => k * rho.powf(*gamma),
            Family::WhiteDwarf { a, b } => a * white_dwarf_f((rho / b).cbrt()),
            Family::Composite(c) => {
                if rho <= c.rho_blend {
                    c.c_minus * rho.powf(c.gamma0)
                } else {
                    c.c_plus * rho.powf(c.gamma_inf) + c.d
                }
            }
            Family::Tabulated(t) => t.eval(rho.ln()).0.exp(),
        }
    }

    pub(crate) fn dp(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        match &self.family {
            Family::Polytrope { k, gamma } => k * gamma * rho.powf(gamma - 1.0),
            Family::WhiteDwarf { a, b } => {
                let x = (rho / b).cbrt();
                8.0 * a * x * x / (3.0 * b * (1.0 + x * x).sqrt())
            }
            Family::Composite(c) => {
                if rho <= c.rho_blend {
                    c.c_minus * c.gamma0 * rho.powf(c.gamma0 - 1.0)
                } else {
                    c.c_plus * c.gamma_inf * rho.powf(c.gamma_inf - 1.0)
                }
            }
            Family::Tabulated(t) => {
                let u = rho.ln();
                let (w, dw) = t.eval(u);
                (w - u).exp() * dw
            }
        }
    }

    pub(crate) fn phi1(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        match &self.family {
            Family::Polytrope { k, gamma } => k * gamma / (gamma - 1.0) * rho.powf(gamma - 1.0),
            Family::WhiteDwarf { a, b } => {
                let x2 = (rho / b).powf(2.0 / 3.0);
                8.0 * a / b * x2 / ((1.0 + x2).sqrt() + 1.0)
            }
            Family::Composite(c) => {
                if rho <= c.rho_blend {
                    c.c_minus * c.gamma0 / (c.gamma0 - 1.0) * rho.powf(c.gamma0 - 1.0)
                } else {
                    let g = c.gamma_inf;
                    if g == 1.0 {
                        c.y_blend + c.c_plus * (rho / c.rho_blend).ln()
                    } else {
                        c.y_blend + c.c_plus * g / (g - 1.0) * (rho.powf(g - 1.0) - c.rho_blend.powf(g - 1.0))
                    }
                }
            }
            Family::Tabulated(t) => {
                let u = rho.ln();
                if u <= t.u[0] {
                    return t.phi1_below(rho);
                }
                let i = t.segment(u);
                t.phi1[i] + t.phi1_segment(i, u)
            }
        }
    }

    /// `F₊(y)`; callers guarantee `y < s_max`.
    pub(crate) fn f_plus(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match &self.family {
            Family::Polytrope { k, gamma } => ((gamma - 1.0) * y / (k * gamma)).powf(1.0 / (gamma - 1.0)),
            Family::WhiteDwarf { a, b } => {
                let z = y * b / (8.0 * a);
                b * (z * (2.0 + z)).powf(1.5)
            }
            Family::Composite(c) => {
                if y <= c.y_blend {
                    ((c.gamma0 - 1.0) * y / (c.c_minus * c.gamma0)).powf(1.0 / (c.gamma0 - 1.0))
                } else {
                    let g = c.gamma_inf;
                    if g == 1.0 {
                        c.rho_blend * ((y - c.y_blend) / c.c_plus).exp()
                    } else {
                        let base = c.rho_blend.powf(g - 1.0) + (y - c.y_blend) * (g - 1.0) / (c.c_plus * g);
                        base.powf(1.0 / (g - 1.0))
                    }
                }
            }
            Family::Tabulated(t) => t.invert(self, y),
        }
    }

    /// `F₊'(y) = 1/Φ''(F₊(y))`; callers guarantee `y < s_max`.
    pub(crate) fn f_plus_prime(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match &self.family {
            Family::Polytrope { k, gamma } => {
                let n = 1.0 / (gamma - 1.0);
                let c = (gamma - 1.0) / (k * gamma);
                n * c * (c * y).powf(n - 1.0)
            }
            Family::WhiteDwarf { a, b } => {
                let z = y * b / (8.0 * a);
                3.0 * b * b / (8.0 * a) * (z * (2.0 + z)).sqrt() * (1.0 + z)
            }
            _ => {
                let rho = self.f_plus(y);
                rho / self.dp(rho)
            }
        }
    }
}

impl Table {
    fn segment(&self, u: f64) -> usize {
        let n = self.u.len();
        match self.u.binary_search_by(|v| v.partial_cmp(&u).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => (i.max(1) - 1).min(n - 2),
        }
    }

    /// `(ln P, d ln P / d ln ρ)` at `u = ln ρ`.
    fn eval(&self, u: f64) -> (f64, f64) {
        if u <= self.u[0] {
            let s = self.slope[0];
            return (self.w[0] + s * (u - self.u[0]), s);
        }
        let i = self.segment(u);
        let h = self.u[i + 1] - self.u[i];
        let t = (u - self.u[i]) / h;
        let (y0, y1, d0, d1) = (self.w[i], self.w[i + 1], self.slope[i], self.slope[i + 1]);
        let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
        let h10 = t * (1.0 - t) * (1.0 - t);
        let h01 = t * t * (3.0 - 2.0 * t);
        let h11 = t * t * (t - 1.0);
        let v = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
        let dh00 = 6.0 * t * (t - 1.0);
        let dh10 = (1.0 - t) * (1.0 - 3.0 * t);
        let dh01 = -dh00;
        let dh11 = t * (3.0 * t - 2.0);
        let dv = (dh00 * y0 + dh01 * y1) / h + dh10 * d0 + dh11 * d1;
        (v, dv)
    }

    fn phi1_below(&self, rho: f64) -> f64 {
        let s = self.slope[0];
        let p0 = self.w[0].exp();
        let r0 = self.u[0].exp();
        p0 * s / (s - 1.0) * (rho / r0).powf(s - 1.0) / r0
    }

    /// `∫ P'(ρ)/ρ dρ` from knot `i` to `ln ρ = u`, in the variable `ln ρ`.
    fn phi1_segment(&self, i: usize, u: f64) -> f64 {
        gauss(gl20(), self.u[i], u, |v| {
            let (w, dw) = self.eval(v);
            (w - v).exp() * dw
        })
    }

    fn invert(&self, eos: &EquationOfState, y: f64) -> f64 {
        if y <= self.phi1[0] {
            let s = self.slope[0];
            let r0 = self.u[0].exp();
            let p0 = self.w[0].exp();
            return r0 * (y * r0 * (s - 1.0) / (p0 * s)).powf(1.0 / (s - 1.0));
        }
        let n = self.u.len();
        let k = match self.phi1.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(i) => return self.u[i].exp(),
            Err(i) => i,
        };
        if k >= n {
            return f64::NAN;
        }
        let (lo, hi) = (self.u[k - 1], self.u[k]);
        let u = brent(|v| eos.phi1(v.exp()) - y, lo, hi, 1e-15 * (1.0 + hi.abs()));
        u.exp()
    }
}

/// Fritsch–Carlson monotone slopes with harmonic-mean interior values.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        if del[i - 1] * del[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
        }
    }
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let mut s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s.signum() != d0.signum() {
            s = 0.0;
        } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
            s = 3.0 * d0;
        }
        s
    };
    d[0] = if n > 2 { end(h[0], h[1], del[0], del[1]) } else { del[0] };
    d[n - 1] = if n > 2 { end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]) } else { del[n - 2] };
    // strict monotonicity of the data keeps every slope positive; guard the
    // one-sided end formula which can collapse to zero
    for (i, s) in d.iter_mut().enumerate() {
        if *s <= 0.0 {
            *s = if i == 0 { del[0] } else { del[(i).min(n - 2)] };
        }
    }
    d
}
