//! Separable linear Hamiltonian systems `∂ₜ(u, v) = JL(u, v)` with
//!
//! ```text
//! J = [[0, B], [−B', 0]],   L = diag(L, A),   JL = [[0, BA], [−B'L, 0]].
//! ```
//!
//! The toolkit computes the spectrum of `JL`, its exponential trichotomy
//! `E^u ⊕ E^c ⊕ E^s`, checks the unstable dimension against the negative
//! index of `L` on the range of `BA`, measures polynomial growth on the
//! center space and evolves the flow with the implicit midpoint rule.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::equilibrium::StellarModel;
use crate::linalg::{expm, gap_cut, norm2, null_basis, range_basis, singular_values};
use crate::spectral::{mu_direction_check, RadialOperator, SpectralError};

#[derive(Debug, thiserror::Error)]
pub enum HamiltonianError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("A is not positive semidefinite: eigenvalue {0}")]
    NotSemidefinite(f64),
    #[error("spectrum is not symmetric under negation and conjugation: defect {0:e}")]
    Symmetry(f64),
    #[error("index formula violated: {by_eigenvalues} unstable eigenvalues, n^-(L on range BA) = {by_inertia}")]
    IndexFormula { by_eigenvalues: usize, by_inertia: usize },
    #[error("trichotomy failed: {0}")]
    Trichotomy(String),
    #[error("exponential growth on the center space (log-log slope {0})")]
    ExponentialGrowth(f64),
    #[error("time step {dt} too large, need dt < {limit}")]
    TimeStep { dt: f64, limit: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// A triple `(L, A, B)` with the assembled generator `JL`.
#[derive(Clone, Debug)]
pub struct SeparableTriple {
    pub l: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub jl: DMatrix<f64>,
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

impl SeparableTriple {
    /// Symmetrizes `L` and `A`, checks `A ⪰ 0` to `1e-10‖A‖` and assembles `JL`.
    pub fn assemble(l: DMatrix<f64>, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, HamiltonianError> {
        let (nx, ny) = (l.nrows(), a.nrows());
        if l.ncols() != nx || a.ncols() != ny {
            return Err(HamiltonianError::Dimension("L and A must be square".into()));
        }
        if b.shape() != (nx, ny) {
            return Err(HamiltonianError::Dimension(format!("B is {:?}, expected ({nx}, {ny})", b.shape())));
        }
        if l.iter().chain(a.iter()).chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(HamiltonianError::Invalid("non-finite entry".into()));
        }
        let l = symmetrize(&l);
        let a = symmetrize(&a);
        if ny > 0 {
            let min = a.clone().symmetric_eigen().eigenvalues.min();
            if min < -1e-10 * norm2(&a) {
                return Err(HamiltonianError::NotSemidefinite(min));
            }
        }
        let n = nx + ny;
        let mut jl = DMatrix::zeros(n, n);
        jl.view_mut((0, nx), (nx, ny)).copy_from(&(&b * &a));
        jl.view_mut((nx, 0), (ny, nx)).copy_from(&(-(b.transpose() * &l)));
        Ok(Self { l, a, b, jl })
    }

    /// The 5×5 example with `(JL)⁴ = 0` and cubic growth.
    pub fn cubic_example() -> Self {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let l = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        Self::assemble(l, a, b).expect("the example triple is valid")
    }

    /// `L = A = B = I` on `ℝⁿ × ℝⁿ`.
    pub fn harmonic(n: usize) -> Self {
        let i = DMatrix::identity(n, n);
        Self::assemble(i.clone(), i.clone(), i).expect("identity triple is valid")
    }

    pub fn nx(&self) -> usize {
        self.l.nrows()
    }

    pub fn ny(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.nx() + self.ny()
    }

    /// Block-diagonal energy matrix `diag(L, A)`.
    pub fn energy_matrix(&self) -> DMatrix<f64> {
        let (nx, n) = (self.nx(), self.dim());
        let mut e = DMatrix::zeros(n, n);
        e.view_mut((0, 0), (nx, nx)).copy_from(&self.l);
        e.view_mut((nx, nx), (self.ny(), self.ny())).copy_from(&self.a);
        e
    }

    /// `⟨Lw, w⟩`.
    pub fn energy(&self, w: &DVector<f64>) -> f64 {
        let nx = self.nx();
        let u = w.rows(0, nx);
        let v = w.rows(nx, self.ny());
        (u.transpose() * &self.l * u)[0] + (v.transpose() * &self.a * v)[0]
    }

    /// `√⟨|L|w, w⟩` with `|L|` the matrix absolute value of `diag(L, A)`.
    pub fn abs_energy_norm(&self, w: &DVector<f64>) -> f64 {
        let eig = self.energy_matrix().symmetric_eigen();
        let c = eig.eigenvectors.transpose() * w;
        c.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| l.abs() * c * c).sum::<f64>().sqrt()
    }

    /// Integer powers of `JL`, starting from the first.
    pub fn jl_powers(&self, count: usize) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(count);
        for k in 0..count {
            let next = if k == 0 { self.jl.clone() } else { &out[k - 1] * &self.jl };
            out.push(next);
        }
        out
    }
}

/// Nested kernels `ker P ⊂ ker P² ⊂ …`, each taken as
/// `{x : Px ∈ previous}`. `cut` maps the singular values of each step to
/// the threshold at or below which they count as zero.
fn kernel_chain(p: &DMatrix<f64>, cut: impl Fn(&[f64]) -> f64, max_len: usize) -> (Vec<usize>, DMatrix<f64>) {
    let n = p.nrows();
    let mut z = DMatrix::<f64>::zeros(n, 0);
    let mut dims = vec![];
    for _ in 0..max_len {
        let proj = DMatrix::<f64>::identity(n, n) - &z * z.transpose();
        let step = proj * p;
        let values = singular_values(&step);
        let next = null_basis(&step, cut(&values));
        if next.ncols() <= z.ncols() {
            break;
        }
        dims.push(next.ncols());
        z = next;
        if z.ncols() == n {
            break;
        }
    }
    (dims, z)
}

/// Eigenvalues of `JL`: a zero block from the generalized kernel and the
/// eigenvalues of the induced map on the quotient.
#[derive(Clone, Debug, Serialize)]
pub struct Spectrum {
    /// `dim ker (JL)ᵏ` for `k = 1, 2, …` until it stabilizes.
    pub kernel_chain: Vec<usize>,
    /// Nonzero eigenvalues as `(re, im)`.
    #[serde(serialize_with = "serialize_complex")]
    pub nonzero: Vec<Complex<f64>>,
    /// Largest distance from `−λ` or `λ̄` to the nearest computed eigenvalue.
    pub symmetry_defect: f64,
    /// `‖JL‖₂`.
    pub scale: f64,
}

fn serialize_complex<S: serde::Serializer>(v: &[Complex<f64>], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for z in v {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

impl Spectrum {
    /// Algebraic multiplicity of zero.
    pub fn zero_multiplicity(&self) -> usize {
        self.kernel_chain.last().copied().unwrap_or(0)
    }

    /// All eigenvalues with zeros first.
    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        let mut v = vec![Complex::new(0.0, 0.0); self.zero_multiplicity()];
        v.extend(self.nonzero.iter().copied());
        v
    }

    /// Spectral radius.
    pub fn radius(&self) -> f64 {
        self.nonzero.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

const KERNEL_TOL: f64 = 1e-10;
// Singular values below `KERNEL_LO·‖JL‖` are zero, above `KERNEL_HI·‖JL‖` are not.
const KERNEL_LO: f64 = 1e-12;
const KERNEL_HI: f64 = 1e-6;
const SYMMETRY_TOL: f64 = 1e-6;

/// Full eigensolve of `JL` with the quadruple symmetry verified.
pub fn spectrum(triple: &SeparableTriple) -> Result<Spectrum, HamiltonianError> {
    let m = &triple.jl;
    let n = m.nrows();
    let scale = norm2(m);
    if scale == 0.0 {
        return Ok(Spectrum { kernel_chain: vec![n], nonzero: vec![], symmetry_defect: 0.0, scale });
    }
    let (chain, z) = kernel_chain(m, |v| gap_cut(v, scale, KERNEL_LO, KERNEL_HI), n);
    let mut nonzero = vec![];
    if z.ncols() < n {
        let q = null_basis(&z.transpose(), KERNEL_TOL);
        let q = if z.ncols() == 0 { DMatrix::identity(n, n) } else { q };
        let quotient = q.transpose() * m * &q;
        nonzero = quotient.complex_eigenvalues().iter().copied().collect();
    }
    nonzero.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let nearest = |t: Complex<f64>| nonzero.iter().map(|z| (z - t).norm()).fold(f64::INFINITY, f64::min);
    let symmetry_defect = nonzero.iter().map(|&z| nearest(-z).max(nearest(z.conj()))).fold(0.0, f64::max);
    if symmetry_defect > SYMMETRY_TOL * scale {
        return Err(HamiltonianError::Symmetry(symmetry_defect / scale));
    }
    Ok(Spectrum { kernel_chain: chain, nonzero, symmetry_defect, scale })
}

/// The invariant splitting of `JL`.
#[derive(Clone, Debug, Serialize)]
pub struct Trichotomy {
    pub d_u: usize,
    pub d_s: usize,
    pub d_c: usize,
    /// Eigenvalues with positive real part, as `(re, im)`.
    #[serde(serialize_with = "serialize_complex")]
    pub unstable: Vec<Complex<f64>>,
    /// Smallest real part on `E^u`, zero when `E^u` is trivial.
    pub lambda_u: f64,
    /// `n⁻(L)` on the range of `BA`.
    pub index_on_range: usize,
    /// `max |⟨Le_i, e_j⟩| / ‖L‖` over basis vectors of `E^u` and of `E^s`.
    pub form_on_unstable: f64,
    pub kernel_chain: Vec<usize>,
    #[serde(skip)]
    pub e_u: DMatrix<f64>,
    #[serde(skip)]
    pub e_s: DMatrix<f64>,
    #[serde(skip)]
    pub e_c: DMatrix<f64>,
}

/// `n⁻(L|_{range(BA)})` with the range cut at `1e-10‖BA‖`.
pub fn index_on_range(triple: &SeparableTriple, tol: f64) -> usize {
    let ba = &triple.b * &triple.a;
    let q = range_basis(&ba, 1e-10);
    if q.ncols() == 0 {
        return 0;
    }
    let s = symmetrize(&(q.transpose() * &triple.l * &q));
    let cut = tol * norm2(&triple.l);
    s.symmetric_eigen().eigenvalues.iter().filter(|&&e| e < -cut).count()
}

// Real invariant subspace for an eigenvalue cluster around `z`.
fn eigenspace(m: &DMatrix<f64>, z: Complex<f64>, scale: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    if z.im.abs() <= 1e-8 * scale {
        null_basis(&(m - &id * z.re), 1e-9 * scale)
    } else {
        let p = m * m - m * (2.0 * z.re) + &id * z.norm_sqr();
        null_basis(&p, 1e-9 * scale * scale)
    }
}

// Cluster representatives (upper half plane) of eigenvalues with real part of the given sign.
fn clusters(values: &[Complex<f64>], sign: f64, cut: f64, scale: f64) -> Vec<Complex<f64>> {
    let mut reps: Vec<Complex<f64>> = vec![];
    for &z in values {
        if sign * z.re <= cut || z.im < -1e-8 * scale {
            continue;
        }
        if !reps.iter().any(|r| (r - z).norm() <= 1e-6 * scale) {
            reps.push(z);
        }
    }
    reps
}

fn hstack(blocks: &[DMatrix<f64>], rows: usize) -> DMatrix<f64> {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Splits the state space into unstable, center and stable parts.
///
/// The unstable dimension is computed twice, from the eigenvalues with real
/// part above `tol‖JL‖` and from the inertia of `L` on the range of `BA`.
/// Disagreement is reported as an index-formula violation.
pub fn trichotomy(triple: &SeparableTriple, tol: f64) -> Result<Trichotomy, HamiltonianError> {
    let spec = spectrum(triple)?;
    let n = triple.dim();
    let m = &triple.jl;
    let scale = spec.scale;
    let cut = tol * scale;
    let d_u = spec.nonzero.iter().filter(|z| z.re > cut).count();
    let d_s = spec.nonzero.iter().filter(|z| z.re < -cut).count();
    let index = index_on_range(triple, tol);
    if d_u != index {
        return Err(HamiltonianError::IndexFormula { by_eigenvalues: d_u, by_inertia: index });
    }
    if d_u != d_s {
        return Err(HamiltonianError::Trichotomy(format!("{d_u} unstable but {d_s} stable eigenvalues")));
    }
    let mut unstable: Vec<Complex<f64>> = spec.nonzero.iter().copied().filter(|z| z.re > cut).collect();
    unstable.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    let lambda_u = unstable.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
    let lambda_u = if lambda_u.is_finite() { lambda_u } else { 0.0 };

    let build = |sign: f64| -> Result<DMatrix<f64>, HamiltonianError> {
        let blocks: Vec<DMatrix<f64>> =
            clusters(&spec.nonzero, sign, cut, scale).into_iter().map(|z| eigenspace(m, z, scale)).collect();
        let e = hstack(&blocks, n);
        let e = if e.ncols() > 0 { range_basis(&e, 1e-8) } else { e };
        if e.ncols() != d_u {
            return Err(HamiltonianError::Trichotomy(format!(
                "eigenvectors span {} dimensions, expected {d_u}",
                e.ncols()
            )));
        }
        Ok(e)
    };
    let e_u = build(1.0)?;
    let e_s = build(-1.0)?;

    let energy = triple.energy_matrix();
    let lnorm = norm2(&energy).max(f64::MIN_POSITIVE);
    let form = |e: &DMatrix<f64>| (e.transpose() * &energy * e).amax() / lnorm;
    let form_on_unstable = if d_u > 0 { form(&e_u).max(form(&e_s)) } else { 0.0 };

    let e_c = if d_u == 0 {
        DMatrix::identity(n, n)
    } else {
        let us = hstack(&[e_u.clone(), e_s.clone()], n);
        null_basis(&(us.transpose() * &energy), 1e-9 * lnorm)
    };
    if e_c.ncols() + 2 * d_u != n {
        return Err(HamiltonianError::Trichotomy(format!(
            "center space has dimension {}, expected {}",
            e_c.ncols(),
            n - 2 * d_u
        )));
    }
    Ok(Trichotomy {
        d_u,
        d_s,
        d_c: e_c.ncols(),
        unstable,
        lambda_u,
        index_on_range: index,
        form_on_unstable,
        kernel_chain: spec.kernel_chain,
        e_u,
        e_s,
        e_c,
    })
}

/// Polynomial growth of `exp(t JL)` on the center space.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthFit {
    /// Rounded log–log slope, at least zero.
    pub degree: u32,
    pub slope: f64,
    /// Root-mean-square residual of the log–log fit.
    pub residual: f64,
    /// Nilpotency index of `JL` on its generalized kernel, minus one.
    pub algebraic_degree: u32,
    pub times: Vec<f64>,
    /// `‖exp(t JL)|_{E^c}‖` at `times`.
    pub norms: Vec<f64>,
    /// Running maximum of the norm over `[0, t]`, the quantity fitted.
    pub envelope: Vec<f64>,
}

/// Points on `[0, T/10]` that seed the running maximum, so that a bounded
/// oscillating flow has reached its peak before the fit window opens.
const WARMUP_SAMPLES: usize = 400;

/// Fits the growth degree of `‖exp(t JL)|_{E^c}‖` over `t ∈ [T/10, T]`.
///
/// The fit is taken on the running maximum of the norm: raw samples of a
/// bounded quasi-periodic flow alias into spurious slopes over one decade.
pub fn growth_degree(
    triple: &SeparableTriple,
    tri: &Trichotomy,
    horizon: f64,
    samples: usize,
) -> Result<GrowthFit, HamiltonianError> {
    if !(horizon > 0.0 && horizon.is_finite()) || samples < 2 {
        return Err(HamiltonianError::Invalid("need a positive horizon and at least two samples".into()));
    }
    let algebraic_degree = tri.kernel_chain.len().saturating_sub(1) as u32;
    let q = &tri.e_c;
    if q.ncols() == 0 {
        return Ok(GrowthFit {
            degree: 0,
            slope: 0.0,
            residual: 0.0,
            algebraic_degree,
            times: vec![],
            norms: vec![],
            envelope: vec![],
        });
    }
    let mc = q.transpose() * &triple.jl * q;
    let flow = CenterFlow::new(&mc, norm2(&triple.jl))?;
    let mut peak = flow.uniform_norms(0.1 * horizon / WARMUP_SAMPLES as f64, WARMUP_SAMPLES).into_iter().fold(0.0, f64::max);
    let mut times = Vec::with_capacity(samples);
    let mut norms = Vec::with_capacity(samples);
    let mut envelope = Vec::with_capacity(samples);
    for k in 0..samples {
        let t = horizon * 10f64.powf(k as f64 / (samples - 1) as f64 - 1.0);
        let norm = norm2(&flow.at(t));
        peak = peak.max(norm);
        times.push(t);
        norms.push(norm);
        envelope.push(peak);
    }
    if norms.iter().any(|v| !v.is_finite()) {
        return Err(HamiltonianError::ExponentialGrowth(f64::INFINITY));
    }
    let xs: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = envelope.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let (slope, intercept) = linear_fit(&xs, &ys);
    let residual =
        (xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
    if slope > 4.5 {
        return Err(HamiltonianError::ExponentialGrowth(slope));
    }
    Ok(GrowthFit { degree: slope.round().max(0.0) as u32, slope, residual, algebraic_degree, times, norms, envelope })
}

/// `exp(tM)` through the splitting `ker M^m ⊕ range M^m`. On the
/// generalized kernel the exponential is a finite polynomial; on the
/// complement `M` is invertible and scaling and squaring is stable. Squaring
/// the whole matrix is not: rounding splits a Jordan block at zero into
/// eigenvalues of size `ε^{1/m}`, which grow visibly by `t ~ 10³`.
struct CenterFlow {
    basis: DMatrix<f64>,
    inverse: DMatrix<f64>,
    nilpotent: DMatrix<f64>,
    rest: DMatrix<f64>,
    order: usize,
}

impl CenterFlow {
    /// `scale` is `‖JL‖`; the compressed `m` may be pure rounding.
    fn new(m: &DMatrix<f64>, scale: f64) -> Result<Self, HamiltonianError> {
        let n = m.nrows();
        let (chain, z) = if scale == 0.0 {
            (vec![n], DMatrix::identity(n, n))
        } else {
            kernel_chain(m, |v| gap_cut(v, scale, KERNEL_LO, KERNEL_HI), n)
        };
        let order = chain.len();
        let k = z.ncols();
        let w = if k < n {
            let mut power = DMatrix::<f64>::identity(n, n);
            for _ in 0..order {
                power = &power * m;
            }
            range_basis(&power, 1e-8)
        } else {
            DMatrix::zeros(n, 0)
        };
        if k + w.ncols() != n {
            return Err(HamiltonianError::Trichotomy(format!(
                "generalized kernel ({k}) and its complement ({}) do not span the center space ({n})",
                w.ncols()
            )));
        }
        let basis = hstack(&[z, w], n);
        let inverse = basis
            .clone()
            .try_inverse()
            .ok_or_else(|| HamiltonianError::Trichotomy("degenerate center splitting".into()))?;
        let g = &inverse * m * &basis;
        Ok(Self {
            nilpotent: g.view((0, 0), (k, k)).into_owned(),
            rest: g.view((k, k), (n - k, n - k)).into_owned(),
            basis,
            inverse,
            order,
        })
    }

    fn polynomial(&self, t: f64) -> DMatrix<f64> {
        let k = self.nilpotent.nrows();
        let mut term = DMatrix::<f64>::identity(k, k);
        let mut poly = term.clone();
        for j in 1..self.order {
            term = &term * &self.nilpotent * (t / j as f64);
            poly += &term;
        }
        poly
    }

    fn assemble(&self, poly: &DMatrix<f64>, rest: &DMatrix<f64>) -> DMatrix<f64> {
        let (k, n) = (self.nilpotent.nrows(), self.basis.nrows());
        let mut e = DMatrix::zeros(n, n);
        e.view_mut((0, 0), (k, k)).copy_from(poly);
        e.view_mut((k, k), (n - k, n - k)).copy_from(rest);
        &self.basis * e * &self.inverse
    }

    fn at(&self, t: f64) -> DMatrix<f64> {
        self.assemble(&self.polynomial(t), &expm(&(&self.rest * t)))
    }

    /// `‖exp(t_j M)‖` at `t_j = j dt`, `j < count`, stepping the invertible
    /// block by one fixed propagator.
    fn uniform_norms(&self, dt: f64, count: usize) -> Vec<f64> {
        let step = expm(&(&self.rest * dt));
        let mut rest = DMatrix::<f64>::identity(step.nrows(), step.nrows());
        let mut out = Vec::with_capacity(count);
        for j in 0..count {
            out.push(norm2(&self.assemble(&self.polynomial(j as f64 * dt), &rest)));
            rest = &step * rest;
        }
        out
    }
}

fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Midpoint-rule trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub dt: f64,
    pub steps: usize,
    /// `‖w‖` after each step, starting with `w₀`.
    pub norms: Vec<f64>,
    /// `⟨Lw, w⟩` after each step, starting with `w₀`.
    pub energies: Vec<f64>,
    /// `max |⟨Lw,w⟩ − ⟨Lw₀,w₀⟩| / (‖L‖ max ‖w‖²)`.
    pub max_drift: f64,
    pub final_state: Vec<f64>,
}

impl Trajectory {
    /// Least-squares slope of `ln ‖w‖` against `t` over the last
    /// `fraction` of the steps.
    pub fn log_growth_rate(&self, fraction: f64) -> f64 {
        let n = self.norms.len();
        let start = ((1.0 - fraction.clamp(0.0, 1.0)) * (n - 1) as f64) as usize;
        let xs: Vec<f64> = (start..n).map(|k| k as f64 * self.dt).collect();
        let ys: Vec<f64> = self.norms[start..].iter().map(|v| v.ln()).collect();
        linear_fit(&xs, &ys).0
    }
}

/// Integrates `w' = JLw` with the implicit midpoint rule, which conserves
/// `⟨Lw, w⟩` exactly up to rounding.
///
/// Refuses steps with `dt ρ(JL) ≥ 1/2`.
pub fn evolve(triple: &SeparableTriple, w0: &[f64], t_end: f64, dt: f64) -> Result<Trajectory, HamiltonianError> {
    let n = triple.dim();
    if w0.len() != n {
        return Err(HamiltonianError::Dimension(format!("state has length {}, expected {n}", w0.len())));
    }
    if !(dt > 0.0 && t_end >= 0.0 && t_end.is_finite()) {
        return Err(HamiltonianError::Invalid(format!("dt = {dt}, t_end = {t_end}")));
    }
    let rho = spectrum(triple)?.radius();
    if dt * rho >= 0.5 {
        let limit = 0.5 / rho;
        log::warn!("time step {dt} does not resolve the fastest frequency {rho}");
        return Err(HamiltonianError::TimeStep { dt, limit });
    }
    let steps = (t_end / dt).round() as usize;
    let id = DMatrix::<f64>::identity(n, n);
    let half = &triple.jl * (0.5 * dt);
    let lhs = (&id - &half).lu();
    let cayley = lhs
        .solve(&(&id + &half))
        .ok_or_else(|| HamiltonianError::Invalid("singular midpoint matrix".into()))?;

    let mut w = DVector::from_column_slice(w0);
    let mut norms = Vec::with_capacity(steps + 1);
    let mut energies = Vec::with_capacity(steps + 1);
    norms.push(w.norm());
    energies.push(triple.energy(&w));
    for _ in 0..steps {
        w = &cayley * &w;
        norms.push(w.norm());
        energies.push(triple.energy(&w));
    }
    let lnorm = norm2(&triple.energy_matrix()).max(f64::MIN_POSITIVE);
    let wmax = norms.iter().cloned().fold(0.0, f64::max);
    let denom = lnorm * wmax * wmax;
    let e0 = energies[0];
    let max_drift =
        if denom > 0.0 { energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / denom } else { 0.0 };
    Ok(Trajectory { dt, steps, norms, energies, max_drift, final_state: w.iter().copied().collect() })
}

/// A discretized radial pulsation problem as a separable triple.
#[derive(Clone, Debug)]
pub struct RadialTriple {
    pub triple: SeparableTriple,
    /// `⟨L_{μ,r}∂_μρ, ∂_μρ⟩ / |∂_μρ|²` on the first `X` coordinate.
    pub l0: f64,
    /// Eddington eigenvalues `ω²`, ascending.
    pub omega2: Vec<f64>,
    /// Momentum rescaling `s` with `A = sI`.
    pub momentum_scale: f64,
}

/// Builds the radial triple on `n` elements.
///
/// `X = ℝ ⊕ ℝⁿ` holds the `∂_μρ` direction and mass-weighted displacements,
/// `Y = ℝⁿ` the momenta. With the Eddington pencil `(K, W)` and
/// `K̃ = W^{-1/2} K W^{-1/2}`:
///
/// ```text
/// L = diag(l0, K̃/s),   A = sI,   B = [0; I],
/// ```
///
/// so `(JL)²` restricted to the displacements is `−K̃` and `λ² = −ω²`.
/// The `∂_μρ` direction carries no mass flux and lies outside the range of
/// `B`. Choosing `s = √‖K̃‖` balances the two blocks of `JL`.
pub fn radial_triple(model: &StellarModel, n: usize) -> Result<RadialTriple, HamiltonianError> {
    let op = RadialOperator::eddington(model, n)?;
    let k = op.matrix(0.0);
    let dim = k.nrows();
    let inv_sqrt: Vec<f64> = op.weight.iter().map(|w| 1.0 / w.sqrt()).collect();
    let kt = DMatrix::from_fn(dim, dim, |i, j| k[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let kt = symmetrize(&kt);
    let mut omega2: Vec<f64> = kt.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    omega2.sort_by(f64::total_cmp);
    let s = omega2.iter().map(|v| v.abs()).fold(0.0, f64::max).sqrt().max(f64::MIN_POSITIVE);

    let check = mu_direction_check(model, n, 1e-4)?;
    let lr = RadialOperator::radial_hessian(model, n)?;
    let (lo, hi) = crate::spectral::neighbours(model, 1e-4)?;
    let dmu = 2e-4 * model.mu;
    let c2: f64 = lr.nodes.iter().map(|&r| ((hi.y_at(r) - lo.y_at(r)) / dmu).powi(2)).sum();
    let l0 = check.quadratic_form / c2;

    let mut l = DMatrix::zeros(dim + 1, dim + 1);
    l[(0, 0)] = l0;
    l.view_mut((1, 1), (dim, dim)).copy_from(&(kt / s));
    let a = DMatrix::identity(dim, dim) * s;
    let mut b = DMatrix::zeros(dim + 1, dim);
    b.view_mut((1, 0), (dim, dim)).fill_with_identity();
    Ok(RadialTriple { triple: SeparableTriple::assemble(l, a, b)?, l0, omega2, momentum_scale: s })
}

/// Which growth caps apply to a triple.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct GrowthConditions {
    /// `A` injective on the range of `B'LBA`: degree at most 2.
    pub a_injective: bool,
    /// `BA` onto `X`: degree at most 1.
    pub ba_onto: bool,
    /// `L` nondegenerate on the range of `B` and `A` on the range of `B'`:
    /// bounded.
    pub nondegenerate: bool,
}

impl GrowthConditions {
    pub fn of(triple: &SeparableTriple) -> Self {
        let tol = 1e-10;
        let (l, a, b) = (&triple.l, &triple.a, &triple.b);
        let ba = b * a;
        let r = range_basis(&(b.transpose() * l * &ba), tol);
        let a_injective = r.ncols() == 0 || min_singular(&(a * &r)) > tol * norm2(a).max(1.0);
        let ba_onto = range_basis(&ba, tol).ncols() == triple.nx();
        let restricted = |m: &DMatrix<f64>, q: DMatrix<f64>| -> bool {
            if q.ncols() == 0 {
                return true;
            }
            let s = symmetrize(&(q.transpose() * m * &q));
            s.symmetric_eigen().eigenvalues.iter().all(|e| e.abs() > tol * norm2(m).max(1.0))
        };
        let nondegenerate = restricted(l, range_basis(b, tol)) && restricted(a, range_basis(&b.transpose(), tol));
        Self { a_injective, ba_onto, nondegenerate }
    }

    /// The tightest degree bound implied by the conditions.
    pub fn cap(&self) -> u32 {
        if self.nondegenerate {
            0
        } else if self.ba_onto {
            1
        } else if self.a_injective {
            2
        } else {
            3
        }
    }
}

fn min_singular(m: &DMatrix<f64>) -> f64 {
    if m.ncols() > m.nrows() {
        return 0.0;
    }
    singular_values(m).into_iter().fold(f64::INFINITY, f64::min)
}

/// A random triple with small integer entries, so that rank deficiencies
/// and degenerate forms occur exactly. `L` has mixed signature, `A = GᵀG`
/// has random rank and `B` has random rank.
pub fn random_triple(rng: &mut ChaCha8Rng, max_dim: usize) -> SeparableTriple {
    let nx = rng.random_range(1..=max_dim);
    let ny = rng.random_range(1..=max_dim);
    let int = |r: usize, c: usize, rng: &mut ChaCha8Rng| DMatrix::from_fn(r, c, |_, _| rng.random_range(-2i32..=2) as f64);

    let p = int(nx, nx, rng);
    let d = DMatrix::from_diagonal(&DVector::from_fn(nx, |_, _| rng.random_range(-1i32..=2) as f64));
    let l = p.transpose() * d * &p;
    let rank_a = rng.random_range(0..=ny);
    let g = int(rank_a, ny, rng);
    let a = g.transpose() * g;
    let b = if rng.random_bool(0.5) {
        int(nx, ny, rng)
    } else {
        let k = rng.random_range(0..=nx.min(ny));
        int(nx, k, rng) * int(k, ny, rng)
    };
    SeparableTriple::assemble(l, a, b).expect("random triple is valid")
}

/// Checks on one random triple.
#[derive(Clone, Debug, Serialize)]
pub struct CorpusEntry {
    pub index: usize,
    pub nx: usize,
    pub ny: usize,
    pub d_u: usize,
    pub index_on_range: usize,
    pub semisimple: bool,
    pub growth_degree: u32,
    pub algebraic_degree: u32,
    pub conditions: GrowthConditions,
    pub form_on_unstable: f64,
    pub pass: bool,
    pub error: Option<String>,
}

/// Summary of the random-corpus suite.
#[derive(Clone, Debug, Serialize)]
pub struct CorpusReport {
    pub seed: u64,
    pub count: usize,
    pub index_violations: usize,
    pub semisimple_violations: usize,
    pub growth_violations: usize,
    pub failures: usize,
    pub pass: bool,
    pub entries: Vec<CorpusEntry>,
}

/// Whether every eigenvalue off zero has equal algebraic and geometric
/// multiplicity, tested by `dim ker P = dim ker P²` for `P = JL − λ`, with
/// `P` realified so that the rank decisions stay relative to `‖JL‖`.
pub fn semisimple_off_zero(triple: &SeparableTriple, spec: &Spectrum) -> bool {
    let m = &triple.jl;
    let n = m.nrows();
    let scale = spec.scale;
    let id = DMatrix::<f64>::identity(n, n);
    let reps = clusters(&spec.nonzero, 1.0, f64::NEG_INFINITY, scale);
    reps.into_iter().all(|z| {
        let shifted = m - &id * z.re;
        let mut p = DMatrix::zeros(2 * n, 2 * n);
        p.view_mut((0, 0), (n, n)).copy_from(&shifted);
        p.view_mut((n, n), (n, n)).copy_from(&shifted);
        p.view_mut((0, n), (n, n)).copy_from(&(&id * z.im));
        p.view_mut((n, 0), (n, n)).copy_from(&(&id * -z.im));
        let (dims, _) = kernel_chain(&p, |v| gap_cut(v, scale, KERNEL_LO, KERNEL_HI), 2);
        dims.len() <= 1
    })
}

/// Runs the index formula, semisimplicity and growth checks on `count`
/// random triples of dimension at most 12 + 12.
pub fn random_corpus(seed: u64, count: usize) -> CorpusReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(count);
    for index in 0..count {
        let t = random_triple(&mut rng, 12);
        entries.push(check_triple(index, &t));
    }
    let index_violations = entries.iter().filter(|e| e.d_u != e.index_on_range).count();
    let semisimple_violations = entries.iter().filter(|e| !e.semisimple).count();
    let growth_violations = entries.iter().filter(|e| e.growth_degree > e.conditions.cap()).count();
    let failures = entries.iter().filter(|e| !e.pass).count();
    CorpusReport {
        seed,
        count,
        index_violations,
        semisimple_violations,
        growth_violations,
        failures,
        pass: failures == 0,
        entries,
    }
}

fn check_triple(index: usize, t: &SeparableTriple) -> CorpusEntry {
    let conditions = GrowthConditions::of(t);
    let mut entry = CorpusEntry {
        index,
        nx: t.nx(),
        ny: t.ny(),
        d_u: 0,
        index_on_range: index_on_range(t, 1e-8),
        semisimple: false,
        growth_degree: 0,
        algebraic_degree: 0,
        conditions,
        form_on_unstable: 0.0,
        pass: false,
        error: None,
    };
    let run = |entry: &mut CorpusEntry| -> Result<(), HamiltonianError> {
        let spec = spectrum(t)?;
        entry.semisimple = semisimple_off_zero(t, &spec);
        entry.d_u = spec.nonzero.iter().filter(|z| z.re > 1e-8 * spec.scale).count();
        let tri = trichotomy(t, 1e-8)?;
        entry.form_on_unstable = tri.form_on_unstable;
        let fit = growth_degree(t, &tri, 1e4, 40)?;
        entry.growth_degree = fit.degree;
        entry.algebraic_degree = fit.algebraic_degree;
        Ok(())
    };
    match run(&mut entry) {
        Ok(()) => {
            entry.pass = entry.d_u == entry.index_on_range
                && entry.semisimple
                && entry.growth_degree <= conditions.cap()
                && entry.form_on_unstable <= 1e-6;
        }
        Err(e) => entry.error = Some(e.to_string()),
    }
    entry
}
