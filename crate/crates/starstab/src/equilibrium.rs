//! Non-rotating equilibria at prescribed center density.
//!
//! With `y = V(R) − V` the enthalpy variable, a static star solves
//! `y'' + (2/r) y' = −4π F₊(y)`, `y(0) = Φ'(μ)`, `y'(0) = 0`, and its support
//! radius `R` is the first zero of `y`. We integrate the equivalent system
//! `y' = −m/r²`, `m' = 4πr² F₊(y)` with an adaptive Dormand–Prince scheme,
//! starting just off the origin on the regular series. When a step crosses
//! `y = 0` it is discarded and the remaining piece is integrated with `y` as
//! the independent variable, which lands exactly on the surface.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::eos::{EosError, EquationOfState};
use crate::numerics::{brent, dopri5, gauss, gl10, tanh_sinh, DenseStep, Flow, OdeError, OdeOptions};

#[derive(Debug, thiserror::Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Eos(#[from] EosError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error("no compact support at mu = {mu}: y = {y} > 0 at r_max = {r}")]
    NoCompactSupport { mu: f64, r: f64, y: f64, m: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("mass mismatch: -R^2 y'(R) = {surface}, quadrature = {quadrature}")]
    MassMismatch { surface: f64, quadrature: f64 },
}

/// Numerical controls for [`integrate_profile_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Relative tolerance of the integrator and of the surface location.
    pub tol: f64,
    /// Number of uniform intervals of the output grid on `[0, R]`.
    pub n_grid: usize,
    /// Give up when `r` exceeds this multiple of the central length scale.
    pub r_max_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, n_grid: 2000, r_max_factor: 1e6 }
    }
}

/// One equilibrium, resampled to a uniform radial grid on `[0, R]`.
#[derive(Clone, Debug)]
pub struct StellarModel {
    /// Center density.
    pub mu: f64,
    /// Central enthalpy `Φ'(μ)`.
    pub alpha: f64,
    /// Support radius.
    pub radius: f64,
    /// Total mass `−R² y'(R)`.
    pub mass: f64,
    pub r: Vec<f64>,
    pub y: Vec<f64>,
    pub rho: Vec<f64>,
    pub yprime: Vec<f64>,
    /// Enclosed mass `m(r) = −r² y'(r)`.
    pub m: Vec<f64>,
    pub eos: EquationOfState,
    pub tol: f64,
    dense: Arc<DenseProfile>,
}

// Continuous extension of the adaptive solution, in scaled units.
#[derive(Debug)]
struct DenseProfile {
    r0: f64,
    b: f64,
    rsteps: Vec<DenseStep<2>>,
    ysteps: Vec<DenseStep<2>>,
    rk: f64,
}

impl DenseProfile {
    fn series(&self, r: f64) -> (f64, f64) {
        let y = 1.0 - r * r + self.b * r.powi(4);
        let dy = -2.0 * r + 4.0 * self.b * r.powi(3);
        (y, -2.0 * PI / 3.0 * r * r * dy)
    }

    /// `(y, m)` at scaled radius `r` inside the star.
    fn eval(&self, r: f64) -> (f64, f64) {
        if r <= self.r0 || self.rsteps.is_empty() && r <= self.rk {
            return self.series(r);
        }
        if r <= self.rk {
            let j = self.rsteps.partition_point(|st| st.x1() < r).min(self.rsteps.len() - 1);
            let v = self.rsteps[j].eval(r);
            return (v[0], v[1]);
        }
        let j = self.ysteps.partition_point(|st| st.y1[0] < r).min(self.ysteps.len() - 1);
        let st = &self.ysteps[j];
        let (ya, yb) = (st.x0, st.x1());
        let y = if (st.y0[0] - r) * (st.y1[0] - r) >= 0.0 {
            if (st.y0[0] - r).abs() < (st.y1[0] - r).abs() { ya } else { yb }
        } else {
            brent(|v| st.eval(v)[0] - r, yb, ya, 1e-16)
        };
        (y, st.eval(y)[1])
    }
}

/// Lane–Emden function `θ'' + (2/s)θ' = −θ₊ⁿ`, `θ(0) = 1`.
#[derive(Clone, Debug)]
pub struct LaneEmdenSolution {
    pub n: f64,
    /// First zero of `θ`.
    pub xi1: f64,
    /// `−ξ₁² θ'(ξ₁)`.
    pub minus_xi2_thetaprime: f64,
    pub s: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Integrates the equilibrium at center density `mu` with default controls.
pub fn integrate_profile(eos: &EquationOfState, mu: f64, tol: f64) -> Result<StellarModel, EquilibriumError> {
    integrate_profile_with(eos, mu, &SolverOptions { tol, ..SolverOptions::default() })
}

// Internally lengths are measured in ℓ = √(3α/(2πμ)), enthalpy in α and
// mass in μℓ³, so that every state component is of order one.
struct Scaled<'a> {
    eos: &'a EquationOfState,
    mu: f64,
    alpha: f64,
}

impl Scaled<'_> {
    fn rhs_r(&self, r: f64, s: &[f64; 2]) -> [f64; 2] {
        let rho = self.eos.f_plus(self.alpha * s[0]) / self.mu;
        [-1.5 / PI * s[1] / (r * r), 4.0 * PI * r * r * rho]
    }

    fn rhs_y(&self, y: f64, s: &[f64; 2]) -> [f64; 2] {
        let (r, m) = (s[0], s[1]);
        let drdy = -2.0 * PI / 3.0 * r * r / m;
        let rho = self.eos.f_plus(self.alpha * y) / self.mu;
        [drdy, 4.0 * PI * r * r * rho * drdy]
    }
}

/// Integrates the equilibrium at center density `mu`.
pub fn integrate_profile_with(
    eos: &EquationOfState,
    mu: f64,
    opts: &SolverOptions,
) -> Result<StellarModel, EquilibriumError> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(EquilibriumError::Invalid(format!("center density must be positive, got {mu}")));
    }
    if !(opts.tol > 0.0 && opts.tol < 1e-2) {
        return Err(EquilibriumError::Invalid(format!("tolerance must lie in (0, 1e-2), got {}", opts.tol)));
    }
    if opts.n_grid < 8 {
        return Err(EquilibriumError::Invalid("output grid needs at least 8 intervals".into()));
    }
    let alpha = eos.enthalpy_prime(mu)?;
    let ell = (3.0 * alpha / (2.0 * PI * mu)).sqrt();
    let sc = Scaled { eos, mu, alpha };

    // regular series y = 1 − r² + b r⁴ in scaled units
    let b = 0.1 * PI * alpha * eos.f_plus_prime(alpha) / mu;
    let r0 = 1e-3;
    let mut dense = DenseProfile { r0, b, rsteps: Vec::new(), ysteps: Vec::new(), rk: r0 };
    let (y0, m0) = dense.series(r0);

    let ode = OdeOptions { rtol: opts.tol, atol: opts.tol, h_init: 1e-2, max_steps: 2_000_000 };
    let mut rsteps: Vec<DenseStep<2>> = Vec::new();
    let mut crossed = false;
    let (r_end, s_end) = dopri5(
        |r, s| sc.rhs_r(r, s),
        r0,
        [y0, m0],
        opts.r_max_factor,
        &ode,
        |st| {
            if st.y1[0] <= 0.0 {
                crossed = true;
                Flow::Stop
            } else {
                rsteps.push(st.clone());
                Flow::Continue
            }
        },
    )?;
    if !crossed {
        return Err(EquilibriumError::NoCompactSupport {
            mu,
            r: r_end * ell,
            y: s_end[0] * alpha,
            m: s_end[1] * mu * ell.powi(3),
        });
    }
    let (rk, yk, mk) = match rsteps.last() {
        Some(st) => (st.x1(), st.y1[0], st.y1[1]),
        None => (r0, y0, m0),
    };

    // land on the surface with y as the independent variable
    let mut ysteps: Vec<DenseStep<2>> = Vec::new();
    let yode = OdeOptions { h_init: -0.1 * yk, ..ode };
    let (_, surf) = dopri5(|y, s| sc.rhs_y(y, s), yk, [rk, mk], 0.0, &yode, |st| {
        ysteps.push(st.clone());
        Flow::Continue
    })?;
    let (big_r, big_m) = (surf[0], surf[1]);

    dense.rsteps = rsteps;
    dense.ysteps = ysteps;
    dense.rk = rk;
    let n = opts.n_grid;
    let mut r = Vec::with_capacity(n + 1);
    let mut y = Vec::with_capacity(n + 1);
    let mut m = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let ri = big_r * i as f64 / n as f64;
        let (yi, mi) = if i == n { (0.0, big_m) } else { dense.eval(ri) };
        r.push(ri * ell);
        y.push(yi * alpha);
        m.push(mi * mu * ell.powi(3));
    }
    let yprime: Vec<f64> = r
        .iter()
        .zip(&m)
        .map(|(&ri, &mi)| if ri == 0.0 { 0.0 } else { -mi / (ri * ri) })
        .collect();
    let rho: Vec<f64> = y.iter().map(|&v| eos.f_plus(v)).collect();
    Ok(StellarModel {
        mu,
        alpha,
        radius: big_r * ell,
        mass: big_m * mu * ell.powi(3),
        r,
        y,
        rho,
        yprime,
        m,
        eos: eos.clone(),
        tol: opts.tol,
        dense: Arc::new(dense),
    })
}

/// Solves the Lane–Emden equation of index `n ∈ (0, 5)`.
pub fn lane_emden(n: f64, tol: f64) -> Result<LaneEmdenSolution, EquilibriumError> {
    if !(n > 0.0 && n < 5.0) {
        return Err(EquilibriumError::Invalid(format!("index must lie in (0, 5), got {n}")));
    }
    // a polytrope with 4πF₊(y) = yⁿ reproduces θ at unit central enthalpy
    let gamma = 1.0 + 1.0 / n;
    let k = (gamma - 1.0) / gamma * (4.0 * PI).powf(1.0 / n);
    let eos = EquationOfState::polytrope(k, gamma)?;
    let mu = 1.0 / (4.0 * PI);
    let model = integrate_profile_with(&eos, mu, &SolverOptions { tol, n_grid: 2000, r_max_factor: 1e6 })?;
    Ok(LaneEmdenSolution {
        n,
        xi1: model.radius,
        minus_xi2_thetaprime: model.mass,
        s: model.r,
        theta: model.y,
    })
}

impl StellarModel {
    /// Grid spacing of the uniform output grid.
    pub fn h(&self) -> f64 {
        self.r[1] - self.r[0]
    }

    /// Surface potential `V(R) = −M/R`.
    pub fn surface_potential(&self) -> f64 {
        -self.mass / self.radius
    }

    /// Potential `V(r) = V(R) − y(r)` on the grid.
    pub fn potential(&self) -> Vec<f64> {
        let vr = self.surface_potential();
        self.y.iter().map(|y| vr - y).collect()
    }

    /// Total mass, cross-checked against `4π∫ρ r² dr`.
    pub fn total_mass(&self) -> Result<f64, EquilibriumError> {
        let q = self.mass_quadrature();
        if (q - self.mass).abs() > 10.0 * self.tol.max(1e-12) * self.mass {
            return Err(EquilibriumError::MassMismatch { surface: self.mass, quadrature: q });
        }
        Ok(self.mass)
    }

    /// `4π∫₀^R ρ r² dr` by composite Gauss rules on the interpolated profile.
    pub fn mass_quadrature(&self) -> f64 {
        let n = self.r.len() - 1;
        let f = |r: f64| 4.0 * PI * r * r * self.rho_at(r);
        let mut s = 0.0;
        for i in 0..n - 1 {
            s += gauss(gl10(), self.r[i], self.r[i + 1], f);
        }
        s + tanh_sinh(self.r[n - 1], self.r[n], 6, f)
    }

    /// Enthalpy variable at any radius; outside the star `y = M/r − M/R`.
    pub fn y_at(&self, r: f64) -> f64 {
        self.hermite(r).0
    }

    /// `y'(r)` at any radius.
    pub fn yprime_at(&self, r: f64) -> f64 {
        self.hermite(r).1
    }

    /// `ρ(r) = F₊(y(r))`.
    pub fn rho_at(&self, r: f64) -> f64 {
        if r >= self.radius {
            0.0
        } else {
            self.eos.f_plus(self.y_at(r))
        }
    }

    /// `(y, y')` from the continuous extension of the integrator.
    pub(crate) fn hermite(&self, r: f64) -> (f64, f64) {
        let big_r = self.radius;
        if r >= big_r {
            let mm = self.mass;
            return (mm / r - mm / big_r, -mm / (r * r));
        }
        let ell = (3.0 * self.alpha / (2.0 * PI * self.mu)).sqrt();
        let (y, m) = self.dense.eval(r / ell);
        let yp = if r == 0.0 { 0.0 } else { -m * self.mu * ell / (r / ell).powi(2) };
        (y * self.alpha, yp)
    }
}
