//! Radial operators of the linearized problem and their spectra.
//!
//! Four discretized operators are provided:
//!
//! * `D⁰` and `Dˡ`: the Schrödinger-type operators
//!   `−Δ + l(l+1)/r² − 4πF₊'(ŷ)` acting on `u = rφ`, discretized as a
//!   quadratic form with second-order finite differences on a sinh-mapped
//!   grid (see [`RadialGrid`]) that extends past the stellar surface. The free exterior is replaced by
//!   its exact Dirichlet-to-Neumann boundary term, so bound states and the
//!   zero-energy mode of `D¹` are not distorted by the truncation.
//! * the Eddington operator, the radial pulsation pencil `K v = ω² A v` for
//!   radial displacements `v`, discretized by P1 finite elements. Its
//!   quadratic form is `⟨L σ, σ⟩` with `σ = −∇·(ρ v)`; for such
//!   mass-preserving perturbations the gravitational energy is local,
//!   `4π∫ρ²v² dx`.
//! * `L_{μ,r}`: the full Hessian of the energy-Casimir functional on radial
//!   densities, in the basis `σ_i = F₊'(ŷ)φ_i` of weighted hat functions,
//!   with the nonlocal gravitational term assembled exactly for that basis.
//!
//! Negative indices come from the inertia of an `LDLᵀ` factorization,
//! eigenvalues from bisection on the inertia, eigenvectors from inverse
//! iteration.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::equilibrium::{integrate_profile, EquilibriumError, StellarModel};
use crate::linalg::{dense_inertia, tridiagonal_inertia, tridiagonal_solve, Inertia};
use crate::numerics::{gauss, gl10, gl20, tanh_sinh, tanh_sinh_rule};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("invalid operator request: {0}")]
    Invalid(String),
    #[error("{0} cells across the star cannot resolve it; at least 100 are needed")]
    Resolution(usize),
    #[error("inverse iteration did not converge for eigenvalue {0}")]
    NoConvergence(f64),
    #[error("neighbouring equilibrium failed: {0}")]
    Equilibrium(#[from] EquilibriumError),
}

/// Which radial operator to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    /// `D⁰`, the `l = 0` operator.
    D0,
    /// `Dˡ` for `l ≥ 1`.
    Dl(u32),
    /// The Eddington radial pulsation operator.
    Eddington,
    /// The radial Hessian `L_{μ,r}`.
    Lr,
}

impl OperatorKind {
    pub fn label(&self) -> String {
        match self {
            OperatorKind::D0 => "D0".into(),
            OperatorKind::Dl(l) => format!("D{l}"),
            OperatorKind::Eddington => "eddington".into(),
            OperatorKind::Lr => "Lr".into(),
        }
    }
}

/// Outer boundary treatment for `Dˡ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Closure {
    /// Exact exterior: the boundary term `β(σ) u(b)²` matching the free
    /// decaying solution outside `b`.
    Exterior,
    /// Homogeneous Dirichlet condition at the outer radius.
    Dirichlet,
}

#[derive(Clone, Debug)]
pub struct SpectralOptions {
    /// Cells across the star, `h = R/n`.
    pub n: usize,
    /// Outer radius of the `Dˡ` grid in units of `R`.
    pub outer_factor: f64,
    pub closure: Closure,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { n: 400, outer_factor: 3.0, closure: Closure::Exterior }
    }
}

#[derive(Clone, Debug)]
enum Stiffness {
    Tridiagonal { diag: Vec<f64>, off: Vec<f64> },
    Dense(DMatrix<f64>),
}

/// A discretized self-adjoint pencil `K(σ) x = σ W x` with diagonal `W > 0`.
///
/// Only the exterior-closed `Dˡ` depend on `σ`, through the boundary term
/// at the last node; for `σ ≥ 0` that term is frozen at its `σ = 0` value.
#[derive(Clone, Debug)]
pub struct RadialOperator {
    pub kind: OperatorKind,
    /// Radii of the unknowns.
    pub nodes: Vec<f64>,
    /// Width of the central cell.
    pub h: f64,
    /// Diagonal of `W`.
    pub weight: Vec<f64>,
    /// Characteristic size of the potential, `max 4πF₊'(ŷ)`.
    pub scale: f64,
    /// Default kernel tolerance, see [`RadialOperator::default_kernel_tol`].
    kernel_tol: f64,
    stiffness: Stiffness,
    dense_spectrum: OnceLock<Vec<f64>>,
    exterior: Option<(u32, f64)>,
    free: Option<FreeTail>,
}

#[derive(Clone, Debug)]
struct FreeTail {
    l: u32,
    closure: Closure,
    grid: RadialGrid,
    well: Vec<f64>,
}

/// Fewest cells across the star accepted by the public builders.
pub const MIN_CELLS: usize = 100;

fn check_resolution(n: usize) -> Result<(), SpectralError> {
    if n < MIN_CELLS {
        return Err(SpectralError::Resolution(n));
    }
    Ok(())
}

/// Gauss rule on interior elements, tanh–sinh on the surface element.
fn element_rule(r0: f64, r1: f64, surface: bool) -> Vec<(f64, f64)> {
    if surface {
        tanh_sinh_rule(r0, r1, 6)
    } else {
        let (x, w) = gl10();
        let (c, s) = (0.5 * (r0 + r1), 0.5 * (r1 - r0));
        x.iter().zip(w).map(|(x, w)| (c + s * x, s * w)).collect()
    }
}

/// Result of a kernel test.
#[derive(Clone, Debug, Serialize)]
pub struct KernelReport {
    pub tol: f64,
    pub dim: usize,
    pub eigenvalues: Vec<f64>,
    /// `W`-normalized eigenvectors, one per kernel eigenvalue.
    #[serde(skip)]
    pub vectors: Vec<Vec<f64>>,
}

/// The low end of a spectrum.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSlice {
    pub kind: OperatorKind,
    /// Lowest eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// `W`-normalized eigenvectors on [`RadialOperator::nodes`].
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<f64>>,
    /// Eigenvalues below `−kernel_tol`, counted by inertia.
    pub neg_count: usize,
    pub kernel_dim: usize,
    pub kernel_tol: f64,
}

/// Lowest eigenvalue on three nested grids and the observed order.
#[derive(Clone, Debug, Serialize)]
pub struct Richardson {
    pub n: [usize; 3],
    pub eigenvalues: [f64; 3],
    /// `(λ_N − λ_2N)/(λ_2N − λ_4N)`, close to 4 for a second-order scheme.
    pub ratio: f64,
    /// Extrapolated value `λ_4N + (λ_4N − λ_2N)/3`.
    pub extrapolated: f64,
    /// Error estimate `|λ_4N − λ_2N|/3` of the finest value.
    pub error: f64,
}

/// Exact exterior boundary coefficient: `−u'(b)/u(b)` for the decaying
/// solution of `−u'' + l(l+1)u/r² = σu` with `σ ≤ 0`.
pub fn exterior_beta(l: u32, sigma: f64, b: f64) -> f64 {
    let kappa = (-sigma).max(0.0).sqrt();
    if l == 0 {
        return kappa;
    }
    // u ∝ e^{−x} Σ_j c_j (2x)^{−j}, x = κr; scaled by x^l to stay finite at κ = 0
    let x = kappa * b;
    let (mut num, mut den) = (0.0, 0.0);
    let mut c = 1.0; // (l+j)!/(j!(l−j)!) at j = 0
    for j in 0..=l {
        let term = c * 0.5f64.powi(j as i32) * x.powi((l - j) as i32);
        den += term;
        num += j as f64 * term;
        let jf = j as f64;
        c *= (l as f64 + jf + 1.0) * (l as f64 - jf) / (jf + 1.0);
    }
    kappa + num / (den * b)
}

/// Node radii `r_i = a·sinh(i·Δs)`, `i = 0..=n`, with `r_n = R`.
///
/// The length `a = 2/√S` is the core scale set by the central potential
/// depth `S = 4πF₊'(α)`. Mildly condensed models get a nearly uniform grid;
/// centrally condensed ones get geometric spacing outside the core.
#[derive(Clone, Debug)]
pub struct RadialGrid {
    pub a: f64,
    pub ds: f64,
    pub nodes: Vec<f64>,
}

impl RadialGrid {
    pub fn new(model: &StellarModel, n: usize) -> Self {
        let s = 4.0 * PI * model.eos.f_plus_prime(model.alpha);
        let a = if s > 0.0 { (2.0 / s.sqrt()).min(model.radius) } else { model.radius };
        let ds = (model.radius / a).asinh() / n as f64;
        let mut nodes: Vec<f64> = (0..=n).map(|i| a * (i as f64 * ds).sinh()).collect();
        nodes[n] = model.radius;
        Self { a, ds, nodes }
    }

    /// Continues the mapping until the last node reaches `b`.
    fn extend_to(&mut self, b: f64) {
        while *self.nodes.last().unwrap() < b * (1.0 - 1e-12) {
            let i = self.nodes.len();
            self.nodes.push(self.a * (i as f64 * self.ds).sinh());
        }
    }
}

impl RadialOperator {
    /// Builds `D⁰` (`l = 0`) or `Dˡ`.
    pub fn schrodinger(model: &StellarModel, l: u32, opts: &SpectralOptions) -> Result<Self, SpectralError> {
        check_resolution(opts.n)?;
        let mut fine = Self::schrodinger_raw(model, l, opts)?;
        let coarse = Self::schrodinger_raw(model, l, &SpectralOptions { n: opts.n / 2, ..opts.clone() })?;
        fine.calibrate(&coarse)?;
        Ok(fine)
    }

    fn schrodinger_raw(model: &StellarModel, l: u32, opts: &SpectralOptions) -> Result<Self, SpectralError> {
        if !(opts.outer_factor >= 1.0) {
            return Err(SpectralError::Invalid(format!("outer factor {} must be ≥ 1", opts.outer_factor)));
        }
        let mut grid = RadialGrid::new(model, opts.n);
        grid.extend_to(opts.outer_factor * model.radius);
        let radius = model.radius;
        let well = |r: f64| if r >= radius { 0.0 } else { 4.0 * PI * model.eos.f_plus_prime(model.y_at(r)) };
        let x = &grid.nodes;
        // the stellar part is averaged against the hat function, which keeps
        // second order across the non-smooth surface layer
        let averaged: Vec<f64> = (1..x.len())
            .map(|i| {
                if x[i - 1] >= radius {
                    return 0.0;
                }
                let (hl, r) = (x[i] - x[i - 1], x[i]);
                let mut v = gauss(gl10(), x[i - 1], r, |s| well(s) * (s - x[i - 1]) / hl);
                let mut c = 0.5 * hl;
                if i + 1 < x.len() {
                    let hr = x[i + 1] - r;
                    v += gauss(gl10(), r, x[i + 1], |s| well(s) * (x[i + 1] - s) / hr);
                    c += 0.5 * hr;
                }
                v / c
            })
            .collect();
        let scale = 4.0 * PI * model.eos.f_plus_prime(model.alpha);
        let scale = grid.nodes[..=opts.n].iter().map(|&r| well(r)).fold(scale, f64::max);
        Ok(Self::from_grid(l, grid, averaged, opts.closure, scale))
    }

    fn from_grid(l: u32, grid: RadialGrid, well: Vec<f64>, closure: Closure, scale: f64) -> Self {
        let x = &grid.nodes;
        let total = x.len() - 1;
        let ll = (l * (l + 1)) as f64;
        let m = match closure {
            Closure::Exterior => total,
            Closure::Dirichlet => total - 1,
        };
        let mut diag = vec![0.0; m];
        let mut weight = vec![0.0; m];
        let mut off = vec![0.0; m - 1];
        for k in 0..m {
            let i = k + 1;
            let hl = x[i] - x[i - 1];
            let potential = ll / (x[i] * x[i]) - well[k];
            let (mut d, mut c) = (1.0 / hl, 0.5 * hl);
            if i < total {
                let hr = x[i + 1] - x[i];
                d += 1.0 / hr;
                c += 0.5 * hr;
                if k + 1 < m {
                    off[k] = -1.0 / hr;
                }
            }
            diag[k] = d + c * potential;
            weight[k] = c;
        }
        let kind = if l == 0 { OperatorKind::D0 } else { OperatorKind::Dl(l) };
        Self {
            kernel_tol: 0.0,
            dense_spectrum: OnceLock::new(),
            kind,
            nodes: x[1..=m].to_vec(),
            h: x[1],
            weight,
            scale,
            stiffness: Stiffness::Tridiagonal { diag, off },
            exterior: (closure == Closure::Exterior).then_some((l, x[total])),
            free: Some(FreeTail { l, closure, grid: grid.clone(), well }),
        }
    }

    /// The same `Dˡ` on a box twice as large; outside the star only the
    /// centrifugal term remains.
    fn doubled(&self) -> Option<Self> {
        let t = self.free.as_ref()?;
        let mut grid = t.grid.clone();
        let b = *grid.nodes.last().unwrap();
        grid.extend_to(2.0 * b);
        let mut well = t.well.clone();
        well.resize(grid.nodes.len() - 1, 0.0);
        let mut d = Self::from_grid(t.l, grid, well, t.closure, self.scale);
        d.kernel_tol = self.kernel_tol;
        Some(d)
    }

    /// Builds the Eddington pencil with `n` elements across the star.
    pub fn eddington(model: &StellarModel, n: usize) -> Result<Self, SpectralError> {
        check_resolution(n)?;
        let mut fine = Self::eddington_raw(model, n)?;
        fine.calibrate(&Self::eddington_raw(model, n / 2)?)?;
        Ok(fine)
    }

    fn eddington_raw(model: &StellarModel, n: usize) -> Result<Self, SpectralError> {
        let grid = RadialGrid::new(model, n);
        let x = &grid.nodes;
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n - 1];
        let mut weight = vec![0.0; n];
        let mut scale: f64 = 4.0 * PI * model.eos.f_plus_prime(model.alpha);
        for e in 1..=n {
            let (r0, r1) = (x[e - 1], x[e]);
            let h = r1 - r0;
            let mut ke = [[0.0; 2]; 2];
            let mut we = [0.0; 2];
            let mut add = |r: f64, w: f64| {
                let (y, yp) = model.hermite(r);
                if y <= 0.0 {
                    return;
                }
                let rho = model.eos.f_plus(y);
                let fp = model.eos.f_plus_prime(y);
                scale = scale.max(4.0 * PI * fp);
                let rho_p = fp * yp;
                let rpp = rho * model.eos.dp(rho);
                let phi = [(r1 - r) / h, (r - r0) / h];
                let dphi = [-1.0 / h, 1.0 / h];
                let a = [2.0 * r * phi[0] + r * r * dphi[0], 2.0 * r * phi[1] + r * r * dphi[1]];
                let r2 = r * r;
                for j in 0..2 {
                    we[j] += w * 4.0 * PI * r2 * rho * phi[j];
                    for k in 0..2 {
                        let local = rpp * a[j] * a[k]
                            + rho * yp * r2 * (a[j] * phi[k] + a[k] * phi[j])
                            + rho_p * yp * r2 * r2 * phi[j] * phi[k];
                        ke[j][k] += w * (4.0 * PI * local / r2 - 16.0 * PI * PI * rho * rho * r2 * phi[j] * phi[k]);
                    }
                }
            };
            for (r, w) in element_rule(r0, r1, e == n) {
                add(r, w);
            }
            // element nodes e−1 and e map to unknowns e−2 and e−1; node 0 is fixed
            let jr = e - 1;
            diag[jr] += ke[1][1];
            weight[jr] += we[1];
            if e >= 2 {
                diag[jr - 1] += ke[0][0];
                weight[jr - 1] += we[0];
                off[jr - 1] += ke[0][1];
            }
        }
        Ok(Self {
            kernel_tol: 0.0,
            dense_spectrum: OnceLock::new(),
            kind: OperatorKind::Eddington,
            nodes: x[1..].to_vec(),
            h: x[1],
            weight,
            scale,
            stiffness: Stiffness::Tridiagonal { diag, off },
            exterior: None,
            free: None,
        })
    }

    /// Builds `L_{μ,r}` with `n` elements across the star.
    pub fn radial_hessian(model: &StellarModel, n: usize) -> Result<Self, SpectralError> {
        check_resolution(n)?;
        let mut fine = Self::radial_hessian_raw(model, n)?;
        fine.calibrate(&Self::radial_hessian_raw(model, n / 2)?)?;
        Ok(fine)
    }

    fn radial_hessian_raw(model: &StellarModel, n: usize) -> Result<Self, SpectralError> {
        let asm = assemble_lr(model, n)?;
        Ok(Self {
            kernel_tol: 0.0,
            dense_spectrum: OnceLock::new(),
            kind: OperatorKind::Lr,
            h: asm.nodes[1],
            nodes: asm.nodes,
            weight: asm.mass,
            scale: asm.scale,
            stiffness: Stiffness::Dense(asm.matrix),
            exterior: None,
            free: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    fn beta(&self, sigma: f64) -> f64 {
        match self.exterior {
            Some((l, b)) => exterior_beta(l, sigma.min(0.0), b),
            None => 0.0,
        }
    }

    /// Dense copy of `K(σ)`.
    pub fn matrix(&self, sigma: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = match &self.stiffness {
            Stiffness::Tridiagonal { diag, off } => {
                let mut m = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
                for i in 0..n - 1 {
                    m[(i, i + 1)] = off[i];
                    m[(i + 1, i)] = off[i];
                }
                m
            }
            Stiffness::Dense(m) => m.clone(),
        };
        m[(n - 1, n - 1)] += self.beta(sigma);
        m
    }

    /// Inertia of `K(σ) − σW`. Pivots below `tiny` count as zero.
    pub fn inertia(&self, sigma: f64, tiny: f64) -> Inertia {
        match &self.stiffness {
            Stiffness::Tridiagonal { diag, off } => {
                let mut d: Vec<f64> = diag.iter().zip(&self.weight).map(|(a, w)| a - sigma * w).collect();
                let last = d.len() - 1;
                d[last] += self.beta(sigma);
                tridiagonal_inertia(&d, off, tiny)
            }
            Stiffness::Dense(m) => {
                let mut s = m.clone();
                for i in 0..self.dim() {
                    s[(i, i)] -= sigma * self.weight[i];
                }
                dense_inertia(&s, tiny)
            }
        }
    }

    /// Number of eigenvalues strictly below `σ`.
    pub fn count_below(&self, sigma: f64) -> usize {
        let i = self.inertia(sigma, 0.0);
        if i.zero == 0 {
            i.negative
        } else {
            // exact zero pivot: count just below σ instead
            self.inertia(sigma - 1e-13 * self.bound().max(1.0), 0.0).negative
        }
    }

    /// Number of eigenvalues below `−tol` for the default kernel tolerance.
    pub fn negative_index(&self) -> usize {
        self.count_below(-self.default_kernel_tol())
    }

    /// Counts of eigenvalues below `−δ` and below `+δ`.
    pub fn index_bracket(&self, delta: f64) -> (usize, usize) {
        (self.count_below(-delta), self.count_below(delta))
    }

    /// Bound on `|λ|` for all eigenvalues (Gershgorin on `W^{-1/2}KW^{-1/2}`).
    pub fn bound(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        lo.abs().max(hi.abs())
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.dim();
        let w = &self.weight;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        match &self.stiffness {
            Stiffness::Tridiagonal { diag, off } => {
                for i in 0..n {
                    let mut r = 0.0;
                    if i > 0 {
                        r += off[i - 1].abs() / (w[i] * w[i - 1]).sqrt();
                    }
                    if i + 1 < n {
                        r += off[i].abs() / (w[i] * w[i + 1]).sqrt();
                    }
                    let mut c = diag[i] / w[i];
                    lo = lo.min(c - r);
                    if i == n - 1 {
                        c += self.beta(0.0) / w[i];
                    }
                    hi = hi.max(c + r);
                }
            }
            Stiffness::Dense(m) => {
                for i in 0..n {
                    let r: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs() / (w[i] * w[j]).sqrt()).sum();
                    let c = m[(i, i)] / w[i];
                    lo = lo.min(c - r);
                    hi = hi.max(c + r);
                }
            }
        }
        (lo, hi)
    }

    /// The `k`-th smallest eigenvalue (from 0) by bisection.
    pub fn eigenvalue(&self, k: usize) -> Result<f64, SpectralError> {
        if k >= self.dim() {
            return Err(SpectralError::Invalid(format!("eigenvalue {k} of a {}-dimensional operator", self.dim())));
        }
        if let Stiffness::Dense(m) = &self.stiffness {
            let ev = self.dense_spectrum.get_or_init(|| {
                let s: Vec<f64> = self.weight.iter().map(|w| 1.0 / w.sqrt()).collect();
                let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s[i] * s[j]);
                let mut ev: Vec<f64> = scaled.symmetric_eigenvalues().iter().cloned().collect();
                ev.sort_by(f64::total_cmp);
                ev
            });
            return Ok(ev[k]);
        }
        let (g_lo, g_hi) = self.gershgorin();
        let pad = 1e-8 * (g_hi - g_lo).abs().max(1.0);
        let (mut lo, mut hi) = (g_lo - pad, g_hi + pad);
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Eigenvector for an eigenvalue by inverse iteration, normalized in the
    /// `W` inner product and orthogonalized against `previous`.
    pub fn eigenvector(&self, lambda: f64, previous: &[Vec<f64>]) -> Result<Vec<f64>, SpectralError> {
        let n = self.dim();
        let shift = lambda + 1e-9 * (lambda.abs() + self.kernel_tol).max(1e-300);
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i as f64) * 0.61).sin()).collect();
        let dense_lu = match &self.stiffness {
            Stiffness::Dense(_) => {
                let mut a = self.matrix(lambda);
                for i in 0..n {
                    a[(i, i)] -= shift * self.weight[i];
                }
                Some(a.lu())
            }
            _ => None,
        };
        let mut last_change = f64::INFINITY;
        for _ in 0..50 {
            let rhs: Vec<f64> = x.iter().zip(&self.weight).map(|(a, w)| a * w).collect();
            let mut y = match (&self.stiffness, &dense_lu) {
                (Stiffness::Tridiagonal { diag, off }, _) => {
                    let mut d: Vec<f64> = diag.iter().zip(&self.weight).map(|(a, w)| a - shift * w).collect();
                    d[n - 1] += self.beta(lambda);
                    tridiagonal_solve(off, &d, off, &rhs)
                }
                (_, Some(lu)) => match lu.solve(&DVector::from_vec(rhs)) {
                    Some(v) => v.as_slice().to_vec(),
                    None => return Err(SpectralError::NoConvergence(lambda)),
                },
                _ => unreachable!(),
            };
            for p in previous {
                let c = self.w_dot(&y, p);
                for i in 0..n {
                    y[i] -= c * p[i];
                }
            }
            let norm = self.w_dot(&y, &y).sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(SpectralError::NoConvergence(lambda));
            }
            y.iter_mut().for_each(|v| *v /= norm);
            let sgn = if self.w_dot(&y, &x) < 0.0 { -1.0 } else { 1.0 };
            y.iter_mut().for_each(|v| *v *= sgn);
            let change: f64 = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            x = y;
            if change < 1e-12 || (change >= last_change && change < 1e-8) {
                return Ok(x);
            }
            last_change = change;
        }
        if last_change < 1e-6 {
            Ok(x)
        } else {
            Err(SpectralError::NoConvergence(lambda))
        }
    }

    /// The `count` lowest eigenpairs.
    pub fn lowest(&self, count: usize) -> Result<Vec<(f64, Vec<f64>)>, SpectralError> {
        let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
        for k in 0..count.min(self.dim()) {
            let lambda = self.eigenvalue(k)?;
            let prev: Vec<Vec<f64>> = out.iter().map(|p| p.1.clone()).collect();
            let v = self.eigenvector(lambda, &prev)?;
            out.push((lambda, v));
        }
        Ok(out)
    }

    /// Lowest `k` eigenpairs with the negative count and kernel dimension.
    pub fn spectrum(&self, k: usize) -> Result<SpectrumSlice, SpectralError> {
        let pairs = self.lowest(k)?;
        let kernel = self.kernel_test(None)?;
        Ok(SpectrumSlice {
            kind: self.kind,
            eigenvalues: pairs.iter().map(|p| p.0).collect(),
            eigenvectors: pairs.into_iter().map(|p| p.1).collect(),
            neg_count: self.negative_index(),
            kernel_dim: kernel.dim,
            kernel_tol: kernel.tol,
        })
    }

    /// Default kernel tolerance: ten times the estimated discretization
    /// error of the eigenvalues adjacent to zero, and at least `10⁻⁸·S`.
    pub fn default_kernel_tol(&self) -> f64 {
        self.kernel_tol
    }

    /// Sets the kernel tolerance from the same operator at half resolution.
    /// For a second-order scheme the error of the fine eigenvalue is about
    /// `|λ_fine − λ_coarse|/3`.
    fn calibrate(&mut self, coarse: &Self) -> Result<(), SpectralError> {
        // the eigenvalue nearest zero decides kernel membership; its
        // neighbours may sit in a poorly resolved continuum
        let c0 = self.count_below(0.0);
        let mut nearest: Option<(usize, f64)> = None;
        for k in [c0.checked_sub(1), Some(c0)].into_iter().flatten() {
            if k < self.dim() && k < coarse.dim() {
                let l = self.eigenvalue(k)?;
                if nearest.is_none_or(|(_, m)| l.abs() < m.abs()) {
                    nearest = Some((k, l));
                }
            }
        }
        let err = match nearest {
            Some((k, l)) => (l - coarse.eigenvalue(k)?).abs() / 3.0,
            None => 0.0,
        };
        self.kernel_tol = (10.0 * err).max(1e-8 * self.scale);
        Ok(())
    }

    /// Eigenvalues in `(−tol, tol)` and their eigenvectors; `None` selects
    /// [`RadialOperator::default_kernel_tol`].
    ///
    /// For `Dˡ` the discretized continuum above zero also enters any fixed
    /// window. Those box modes scale like the inverse square of the outer
    /// radius, so an eigenvalue is kept only if the same operator on a box
    /// of twice the size has an eigenvalue of the same index within half its
    /// magnitude (or within `tol/100`).
    pub fn kernel_test(&self, tol: Option<f64>) -> Result<KernelReport, SpectralError> {
        let tol = tol.unwrap_or_else(|| self.default_kernel_tol());
        let lo = self.count_below(-tol);
        let hi = self.count_below(tol);
        let doubled = self.doubled();
        let mut eigenvalues = Vec::new();
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        let mut candidates = Vec::new();
        for k in lo..hi {
            let lambda = self.eigenvalue(k)?;
            // bound and zero-energy states keep their index and value when the
            // box grows; a box mode with the same index drops by about 4×
            let keep = match &doubled {
                None => true,
                Some(d) => (d.eigenvalue(k)? - lambda).abs() <= (0.5 * lambda.abs()).max(0.01 * tol),
            };
            if keep {
                candidates.push(lambda);
            }
        }
        for lambda in candidates {
            let v = self.eigenvector(lambda, &vectors)?;
            eigenvalues.push(lambda);
            vectors.push(v);
        }
        Ok(KernelReport { tol, dim: eigenvalues.len(), eigenvalues, vectors })
    }

    /// `W`-inner product.
    pub fn w_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.weight).map(|((x, y), w)| x * y * w).sum()
    }

    /// Quadratic form `xᵀK(σ)x`.
    pub fn form(&self, x: &[f64], sigma: f64) -> f64 {
        let v = DVector::from_column_slice(x);
        (v.transpose() * self.matrix(sigma) * &v)[(0, 0)]
    }
}

struct LrAssembly {
    nodes: Vec<f64>,
    matrix: DMatrix<f64>,
    local: DMatrix<f64>,
    gravity: DMatrix<f64>,
    /// Total mass `∫σ_i dx` of each basis function.
    mass: Vec<f64>,
    scale: f64,
}

fn assemble_lr(model: &StellarModel, n: usize) -> Result<LrAssembly, SpectralError> {
    let grid = RadialGrid::new(model, n);
    let x = &grid.nodes;
    let node = |i: usize| x[i];
    let dens = |r: f64| 4.0 * PI * r * r * model.eos.f_plus_prime(model.y_at(r));
    let rule = |e: usize| element_rule(x[e], x[e + 1], e + 1 == n);
    // masses of the two basis functions restricted to element e, from r_e to r
    let partial = |e: usize, r: f64| -> [f64; 2] {
        let (r0, r1) = (x[e], x[e + 1]);
        let h = r1 - r0;
        let mut out = [0.0; 2];
        let inner = if e + 1 < n { element_rule(r0, r, false) } else { tanh_sinh_rule(r0, r, 4) };
        for (s, w) in inner {
            let d = dens(s);
            out[0] += w * d * (r1 - s) / h;
            out[1] += w * d * (s - r0) / h;
        }
        out
    };

    let mut scale: f64 = 0.0;
    let mut local_diag = vec![0.0; n + 1];
    let mut local_off = vec![0.0; n];
    let mut ml = vec![0.0; n];
    let mut mr = vec![0.0; n];
    for e in 0..n {
        let (r0, r1) = (node(e), node(e + 1));
        let h = r1 - r0;
        for (r, w) in rule(e) {
            let fp = model.eos.f_plus_prime(model.y_at(r));
            scale = scale.max(4.0 * PI * fp);
            let d = 4.0 * PI * r * r * fp;
            let (p0, p1) = ((r1 - r) / h, (r - r0) / h);
            local_diag[e] += w * d * p0 * p0;
            local_diag[e + 1] += w * d * p1 * p1;
            local_off[e] += w * d * p0 * p1;
            ml[e] += w * d * p0;
            mr[e] += w * d * p1;
        }
    }
    let mass: Vec<f64> = (0..=n)
        .map(|i| if i == 0 { ml[0] } else if i == n { mr[n - 1] } else { mr[i - 1] + ml[i] })
        .collect();

    let mut g = DMatrix::<f64>::zeros(n + 1, n + 1);
    // both basis functions complete: ∫_{r_{j+1}}^∞ M_i M_j / r² dr
    for i in 0..=n {
        for j in i..=n {
            g[(i, j)] = mass[i] * mass[j] / node((j + 1).min(n));
        }
    }
    for e in 0..n {
        let mut ee = [[0.0; 2]; 2];
        let mut ff = [0.0; 2];
        let before = if e == 0 { 0.0 } else { mr[e - 1] };
        for (r, w) in rule(e) {
            let p = partial(e, r);
            let m = [before + p[0], p[1]];
            let inv = w / (r * r);
            for a in 0..2 {
                ff[a] += inv * m[a];
                for b in 0..2 {
                    ee[a][b] += inv * m[a] * m[b];
                }
            }
        }
        for a in 0..2 {
            for b in a..2 {
                g[(e + a, e + b)] += ee[a][b];
            }
            for i in 0..e {
                g[(i, e + a)] += mass[i] * ff[a];
            }
        }
    }
    let mut local = DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 0..=n {
        local[(i, i)] = local_diag[i];
        if i < n {
            local[(i, i + 1)] = local_off[i];
            local[(i + 1, i)] = local_off[i];
        }
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    let matrix = &local - &g;
    Ok(LrAssembly { nodes: grid.nodes.clone(), matrix, local, gravity: g, mass, scale })
}

/// `L_{μ,r}` restricted to mass-preserving perturbations `Σc_iσ_i` with
/// `Σc_i M_i = 0`, expressed in an orthonormal basis of that hyperplane.
pub fn constrained_hessian(op: &RadialOperator) -> DMatrix<f64> {
    let l = op.matrix(0.0);
    let g = DVector::from_column_slice(&op.weight);
    let n = g.len();
    // Householder reflector mapping g onto e₁
    let mut v = g.clone();
    let alpha = -g[0].signum() * g.norm();
    v[0] -= alpha;
    let vn = v.norm();
    if vn > 0.0 {
        v /= vn;
    }
    let lv = &l * &v;
    let vlv = v.dot(&lv);
    let hlh = &l - 2.0 * &v * lv.transpose() - 2.0 * &lv * v.transpose() + 4.0 * vlv * &v * v.transpose();
    hlh.view((1, 1), (n - 1, n - 1)).into_owned()
}

/// Negative index of `L_{μ,r}` on mass-preserving perturbations.
pub fn constrained_index(op: &RadialOperator) -> usize {
    let m = constrained_hessian(op);
    let tiny = 1e-14 * m.amax();
    dense_inertia(&m, tiny).negative
}

/// Derivatives along the equilibrium family at fixed `μ`.
#[derive(Clone, Debug, Serialize)]
pub struct MuDerivatives {
    pub mu: f64,
    pub dmass: f64,
    pub dradius: f64,
    /// `d(M/R)/dμ`.
    pub dcompactness: f64,
    pub step: f64,
}

/// Equilibria at `μ(1 ± δ)`.
pub fn neighbours(model: &StellarModel, delta: f64) -> Result<(StellarModel, StellarModel), SpectralError> {
    let lo = integrate_profile(&model.eos, model.mu * (1.0 - delta), model.tol)?;
    let hi = integrate_profile(&model.eos, model.mu * (1.0 + delta), model.tol)?;
    Ok((lo, hi))
}

/// Central-difference derivatives of `M`, `R` and `M/R` in `μ`.
pub fn mu_derivatives(model: &StellarModel, delta: f64) -> Result<MuDerivatives, SpectralError> {
    let (lo, hi) = neighbours(model, delta)?;
    let dmu = 2.0 * delta * model.mu;
    Ok(MuDerivatives {
        mu: model.mu,
        dmass: (hi.mass - lo.mass) / dmu,
        dradius: (hi.radius - lo.radius) / dmu,
        dcompactness: (hi.mass / hi.radius - lo.mass / lo.radius) / dmu,
        step: delta,
    })
}

/// `⟨L_{μ,r} ∂_μρ, ∂_μρ⟩` from the assembled `L_{μ,r}` and the identity
/// value `−(M/R)'M'`.
#[derive(Clone, Debug, Serialize)]
pub struct MuDirectionCheck {
    pub quadratic_form: f64,
    pub identity: f64,
    pub relative_error: f64,
}

/// Evaluates the `∂_μρ` direction of `L_{μ,r}` against `−(M/R)'M'`.
pub fn mu_direction_check(model: &StellarModel, n: usize, delta: f64) -> Result<MuDirectionCheck, SpectralError> {
    let op = RadialOperator::radial_hessian(model, n)?;
    let (lo, hi) = neighbours(model, delta)?;
    let dmu = 2.0 * delta * model.mu;
    let c: Vec<f64> = op.nodes.iter().map(|&r| (hi.y_at(r) - lo.y_at(r)) / dmu).collect();
    let q = op.form(&c, 0.0);
    let dm = (hi.mass - lo.mass) / dmu;
    let dc = (hi.mass / hi.radius - lo.mass / lo.radius) / dmu;
    let identity = -dc * dm;
    Ok(MuDirectionCheck { quadratic_form: q, identity, relative_error: (q - identity).abs() / identity.abs() })
}

/// Lowest `k` squared frequencies `ω²` of radial pulsation.
pub fn eddington_spectrum(model: &StellarModel, n: usize, k: usize) -> Result<SpectrumSlice, SpectralError> {
    if k == 0 {
        return Err(SpectralError::Invalid("k must be at least 1".into()));
    }
    RadialOperator::eddington(model, n)?.spectrum(k)
}

/// Local and gravitational parts of `L_{μ,r}` and the basis masses `M_i`:
/// `L = local − gravity`.
pub fn radial_hessian_parts(model: &StellarModel, n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>), SpectralError> {
    check_resolution(n)?;
    let asm = assemble_lr(model, n)?;
    Ok((asm.local, asm.gravity, asm.mass))
}

/// Lowest Eddington eigenvalue on `n`, `2n`, `4n` elements.
pub fn eddington_richardson(model: &StellarModel, n: usize) -> Result<Richardson, SpectralError> {
    let ns = [n, 2 * n, 4 * n];
    let mut ev = [0.0; 3];
    for (k, &m) in ns.iter().enumerate() {
        ev[k] = RadialOperator::eddington(model, m)?.eigenvalue(0)?;
    }
    let ratio = (ev[0] - ev[1]) / (ev[1] - ev[2]);
    Ok(Richardson {
        n: ns,
        eigenvalues: ev,
        ratio,
        extrapolated: ev[2] + (ev[2] - ev[1]) / 3.0,
        error: (ev[2] - ev[1]).abs() / 3.0,
    })
}

/// `∫₀^∞ m(r)²/r² dr` with `m(r) = ∫₀^r σ dx`: the nonlocal gravitational
/// energy `(1/4π)∫|∇V_σ|²` of a radial density perturbation supported in
/// `[0, R]`. Integrals use `cells` Gauss cells with a tanh–sinh last cell.
pub fn gravity_energy(radius: f64, cells: usize, sigma: impl Fn(f64) -> f64) -> f64 {
    let h = radius / cells as f64;
    let dm = |r: f64| 4.0 * PI * r * r * sigma(r);
    let mut base = 0.0;
    let mut energy = 0.0;
    for c in 0..cells {
        let (r0, r1) = (c as f64 * h, (c + 1) as f64 * h);
        let inner = |r: f64| {
            if c + 1 < cells {
                gauss(gl20(), r0, r, dm)
            } else {
                tanh_sinh(r0, r, 5, dm)
            }
        };
        let outer = |r: f64| {
            let m = base + inner(r);
            m * m / (r * r)
        };
        energy += if c + 1 < cells { gauss(gl20(), r0, r1, outer) } else { tanh_sinh(r0, r1, 5, outer) };
        base += if c + 1 < cells { gauss(gl20(), r0, r1, dm) } else { tanh_sinh(r0, r1, 6, dm) };
    }
    energy + base * base / radius
}
