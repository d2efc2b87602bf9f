//! Mass–radius curves, the index `i_μ` and the turning-point walk.
//!
//! A curve samples `M(μ)` and `R(μ)` on a geometric grid of center
//! densities. Derivatives are taken in `ln μ` and converted back to `μ`.
//! Each derivative carries its own degeneracy threshold so that sign tests
//! ignore values that cannot be told apart from zero.

use serde::Serialize;

use crate::eos::EquationOfState;
use crate::equilibrium::{integrate_profile, EquilibriumError};
use crate::numerics::ls_slope;

#[derive(Debug, thiserror::Error)]
pub enum MrCurveError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error("only {kept} equilibria before loss of compact support at mu = {mu}")]
    TooShort { kept: usize, mu: f64 },
    #[error("mu = {0} is not a sample of the curve")]
    NotASample(f64),
    #[error("M' and (M/R)' both vanish at mu = {0}")]
    Degenerate(f64),
    #[error("unstable-mode count would become negative at mu = {0}")]
    TppViolation(f64),
    #[error("cross-check failed at mu = {mu}: turning-point count {tpp}, spectral count {formula}")]
    CrossCheck { mu: f64, tpp: usize, formula: i64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalKind {
    Max,
    Min,
    /// `M'` vanishes without changing sign.
    NonExtremal,
}

/// A zero of `M'` or `(M/R)'` located between samples `left` and `right`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub mu: f64,
    pub kind: CriticalKind,
    pub left: usize,
    pub right: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MassRadiusCurve {
    pub gamma0: f64,
    pub mus: Vec<f64>,
    pub masses: Vec<f64>,
    pub radii: Vec<f64>,
    /// `M'(μ)`.
    pub dm: Vec<f64>,
    /// `(M/R)'(μ)`.
    pub dmr: Vec<f64>,
    /// `R'(μ)`.
    pub dr: Vec<f64>,
    pub threshold_m: Vec<f64>,
    pub threshold_mr: Vec<f64>,
    pub mass_extrema: Vec<CriticalPoint>,
    pub mr_criticals: Vec<CriticalPoint>,
    /// First center density without a compactly supported equilibrium.
    pub truncated_at: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Stable,
    Unstable,
    Neutral,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub mu: f64,
    pub i_mu: u8,
    pub n_minus_d0: Option<usize>,
    pub n_u_tpp: usize,
    pub n_u_formula: Option<usize>,
    pub classification: Classification,
}

/// Result of [`tpp_walk`].
#[derive(Clone, Debug, Serialize)]
pub struct TppWalk {
    pub verdicts: Vec<StabilityVerdict>,
    /// Least-squares slope of `ln M` against `ln μ` over the first samples.
    pub small_mu_slope: f64,
    /// `(3γ₀ − 4)/2`.
    pub expected_slope: f64,
    /// Whether the fitted slope is within 10% of the expected one.
    pub asymptotic: bool,
    /// `γ₀ = 4/3`, where the small-`μ` count is not determined.
    pub critical_index: bool,
}

/// Derivatives at one center density, from a local stencil.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LocalDerivatives {
    pub mu: f64,
    pub mass: f64,
    pub radius: f64,
    pub dm: f64,
    pub dmr: f64,
    pub threshold_m: f64,
    pub threshold_mr: f64,
}

const MIN_SAMPLES: usize = 5;

/// Traces `N` equilibria with `μ` geometrically spaced on `[μ_lo, μ_hi]`.
///
/// Equilibria are solved in parallel. Loss of compact support ends the
/// curve at that density and is recorded in `truncated_at`.
pub fn trace_curve(
    eos: &EquationOfState,
    mu_lo: f64,
    mu_hi: f64,
    n: usize,
    tol: f64,
) -> Result<MassRadiusCurve, MrCurveError> {
    if !(mu_lo > 0.0 && mu_hi > mu_lo && mu_hi.is_finite()) {
        return Err(MrCurveError::Invalid(format!("need 0 < mu_lo < mu_hi, got [{mu_lo}, {mu_hi}]")));
    }
    if n < 8 {
        return Err(MrCurveError::Invalid(format!("need at least 8 samples, got {n}")));
    }
    if !(tol > 0.0 && tol < 1e-3) {
        return Err(MrCurveError::Invalid(format!("tolerance {tol} out of range")));
    }
    let step = (mu_hi / mu_lo).ln() / (n - 1) as f64;
    let mus: Vec<f64> = (0..n)
        .map(|i| if i == n - 1 { mu_hi } else { mu_lo * (step * i as f64).exp() })
        .collect();
    let solved = solve_all(eos, &mus, tol);

    let mut masses = Vec::with_capacity(n);
    let mut radii = Vec::with_capacity(n);
    let mut truncated_at = None;
    for (mu, res) in mus.iter().zip(solved) {
        match res {
            Ok((m, r)) => {
                masses.push(m);
                radii.push(r);
            }
            Err(EquilibriumError::NoCompactSupport { .. }) => {
                truncated_at = Some(*mu);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let kept = masses.len();
    if kept < MIN_SAMPLES {
        return Err(MrCurveError::TooShort { kept, mu: truncated_at.unwrap_or(mu_hi) });
    }
    let mus = mus[..kept].to_vec();
    let x: Vec<f64> = mus.iter().map(|m| m.ln()).collect();
    let ratio: Vec<f64> = masses.iter().zip(&radii).map(|(m, r)| m / r).collect();

    let (gm, em) = log_derivative(&masses, step, tol);
    let (gmr, emr) = log_derivative(&ratio, step, tol);
    let (gr, _) = log_derivative(&radii, step, tol);

    let mass_extrema = find_criticals(&x, &gm, &em)
        .into_iter()
        .map(|mut c| {
            c.mu = c.mu.exp();
            c
        })
        .collect();
    let mr_criticals = find_criticals(&x, &gmr, &emr)
        .into_iter()
        .map(|mut c| {
            c.mu = c.mu.exp();
            c
        })
        .collect();

    let per_mu = |v: &[f64]| v.iter().zip(&mus).map(|(d, m)| d / m).collect::<Vec<f64>>();
    Ok(MassRadiusCurve {
        gamma0: eos.gamma0(),
        dm: per_mu(&gm),
        dmr: per_mu(&gmr),
        dr: per_mu(&gr),
        threshold_m: per_mu(&em),
        threshold_mr: per_mu(&emr),
        mus,
        masses,
        radii,
        mass_extrema,
        mr_criticals,
        truncated_at,
    })
}

fn solve_all(eos: &EquationOfState, mus: &[f64], tol: f64) -> Vec<Result<(f64, f64), EquilibriumError>> {
    let solve = |mu: f64| integrate_profile(eos, mu, tol).map(|m| (m.mass, m.radius));
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(mus.len());
    if threads <= 1 {
        return mus.iter().map(|&mu| solve(mu)).collect();
    }
    let chunk = mus.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = mus
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|&mu| solve(mu)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("equilibrium worker panicked")).collect()
    })
}

// Second-order difference of f at i with stride s, centered where possible.
fn stencil(f: &[f64], i: usize, s: usize, h: f64) -> f64 {
    let n = f.len();
    let d = 2.0 * s as f64 * h;
    if i >= s && i + s < n {
        (f[i + s] - f[i - s]) / d
    } else if i + 2 * s < n {
        (-3.0 * f[i] + 4.0 * f[i + s] - f[i + 2 * s]) / d
    } else {
        (3.0 * f[i] - 4.0 * f[i - s] + f[i - 2 * s]) / d
    }
}

/// Derivative in `ln μ` and its degeneracy threshold.
///
/// The threshold is `10³` times the propagated integration error plus ten
/// times the Richardson estimate `|D_h − D_{2h}|/3` of the truncation error.
fn log_derivative(f: &[f64], h: f64, tol: f64) -> (Vec<f64>, Vec<f64>) {
    let n = f.len();
    let mut d = Vec::with_capacity(n);
    let mut thr = Vec::with_capacity(n);
    for i in 0..n {
        let d1 = stencil(f, i, 1, h);
        let fits = (i >= 2 && i + 2 < n) || i + 4 < n || i >= 4;
        let coarse = if fits { stencil(f, i, 2, h) } else { d1 };
        let truncation = (d1 - coarse).abs() / 3.0;
        let noise = 2.0 * tol * f[i].abs() / h;
        d.push(d1);
        thr.push(1e3 * noise + 10.0 * truncation);
    }
    (d, thr)
}

fn sign(v: f64, thr: f64) -> i8 {
    if v.abs() <= thr {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

// Zero of the parabola through three points, nearest to `guess` within [lo, hi].
fn quadratic_root(xs: [f64; 3], ys: [f64; 3], lo: f64, hi: f64, guess: f64) -> Option<f64> {
    let (x0, x1, x2) = (xs[0], xs[1], xs[2]);
    let d01 = (ys[1] - ys[0]) / (x1 - x0);
    let d12 = (ys[2] - ys[1]) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    // p(x) = y1 + b (x − x1) + a (x − x1)²
    let b = d01 + a * (x1 - x0);
    let roots: Vec<f64> = if a.abs() <= 1e-14 * b.abs() {
        if b == 0.0 {
            return None;
        }
        vec![x1 - ys[1] / b]
    } else {
        let disc = b * b - 4.0 * a * ys[1];
        if disc < 0.0 {
            return None;
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        let mut r = vec![];
        if q != 0.0 {
            r.push(x1 + ys[1] / q);
            r.push(x1 + q / a);
        } else {
            r.push(x1);
        }
        r
    };
    roots
        .into_iter()
        .filter(|r| *r >= lo && *r <= hi)
        .min_by(|p, q| (p - guess).abs().total_cmp(&(q - guess).abs()))
}

fn locate(x: &[f64], d: &[f64], lo: usize, hi: usize) -> f64 {
    let c = (lo..=hi).min_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs())).unwrap();
    let c = c.clamp(1, x.len() - 2);
    let linear = if hi > lo && d[hi] != d[lo] {
        x[lo] - d[lo] * (x[hi] - x[lo]) / (d[hi] - d[lo])
    } else {
        x[c]
    };
    let guess = linear.clamp(x[lo], x[hi]);
    quadratic_root([x[c - 1], x[c], x[c + 1]], [d[c - 1], d[c], d[c + 1]], x[lo], x[hi], guess).unwrap_or(guess)
}

/// Sign changes of `d` (extrema) and sign-preserving zero runs
/// (non-extremal critical points). `mu` of the result is in `ln μ`.
fn find_criticals(x: &[f64], d: &[f64], thr: &[f64]) -> Vec<CriticalPoint> {
    let mut out = vec![];
    let mut last: Option<(usize, i8)> = None;
    for i in 0..d.len() {
        let s = sign(d[i], thr[i]);
        if s == 0 {
            continue;
        }
        if let Some((p, sp)) = last {
            let kind = if sp != s {
                Some(if sp > 0 { CriticalKind::Max } else { CriticalKind::Min })
            } else if i > p + 1 {
                Some(CriticalKind::NonExtremal)
            } else {
                None
            };
            if let Some(kind) = kind {
                out.push(CriticalPoint { mu: locate(x, d, p, i), kind, left: p, right: i });
            }
        }
        last = Some((i, s));
    }
    out
}

impl MassRadiusCurve {
    pub fn len(&self) -> usize {
        self.mus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mus.is_empty()
    }

    /// Index of the sample equal to `mu` up to rounding.
    pub fn sample_index(&self, mu: f64) -> Result<usize, MrCurveError> {
        let i = self.nearest(mu);
        if (self.mus[i] - mu).abs() <= 1e-9 * mu.abs() {
            Ok(i)
        } else {
            Err(MrCurveError::NotASample(mu))
        }
    }

    /// Sample nearest to `mu` in `ln μ`.
    pub fn nearest(&self, mu: f64) -> usize {
        let l = mu.ln();
        (0..self.mus.len()).min_by(|&i, &j| (self.mus[i].ln() - l).abs().total_cmp(&(self.mus[j].ln() - l).abs())).unwrap()
    }

    /// `i_μ` at sample `i`.
    pub fn imu_at(&self, i: usize) -> Result<u8, MrCurveError> {
        imu_from_signs(self.mus[i], sign(self.dm[i], self.threshold_m[i]), sign(self.dmr[i], self.threshold_mr[i]))
    }

    /// Whether sample `i` lies inside a zero run of `M'`.
    fn at_extremum(&self, i: usize) -> bool {
        self.mass_extrema.iter().any(|c| c.kind != CriticalKind::NonExtremal && c.left < i && i < c.right)
    }
}

fn imu_from_signs(mu: f64, sm: i8, smr: i8) -> Result<u8, MrCurveError> {
    match (sm, smr) {
        (0, 0) => Err(MrCurveError::Degenerate(mu)),
        (0, _) => Ok(1),
        (_, 0) => Ok(0),
        _ => Ok(u8::from(sm == smr)),
    }
}

/// `i_μ ∈ {0, 1}` at a sampled center density.
pub fn index_imu(curve: &MassRadiusCurve, mu: f64) -> Result<u8, MrCurveError> {
    curve.imu_at(curve.sample_index(mu)?)
}

/// Walks the curve from small `μ`, counting unstable modes by the turning
/// point principle.
pub fn tpp_walk(curve: &MassRadiusCurve, gamma0: f64) -> Result<TppWalk, MrCurveError> {
    if !(gamma0 > 1.2 && gamma0 < 2.0) {
        return Err(MrCurveError::Invalid(format!("gamma0 = {gamma0} outside (6/5, 2)")));
    }
    let critical_index = (gamma0 - 4.0 / 3.0).abs() <= 1e-12;
    let start = usize::from(gamma0 < 4.0 / 3.0 && !critical_index);

    let k = curve.len().min(MIN_SAMPLES);
    let small_mu_slope = log_log_slope(&curve.mus[..k], &curve.masses[..k]);
    let expected_slope = (3.0 * gamma0 - 4.0) / 2.0;
    let asymptotic = if critical_index {
        small_mu_slope.abs() <= 0.01
    } else {
        (small_mu_slope - expected_slope).abs() <= 0.1 * expected_slope.abs()
    };
    if !asymptotic {
        log::warn!(
            "mass slope {small_mu_slope:.4} at mu = {:.3e} differs from the small-mu value {expected_slope:.4}",
            curve.mus[0]
        );
    }

    let turn = |c: &CriticalPoint| -> i64 {
        let before = (curve.dm[c.left] * curve.dr[c.left]).signum();
        let after = (curve.dm[c.right] * curve.dr[c.right]).signum();
        match (before < 0.0, after > 0.0, before > 0.0, after < 0.0) {
            (true, true, _, _) => 1,
            (_, _, true, true) => -1,
            _ => 0,
        }
    };

    let mut verdicts = Vec::with_capacity(curve.len());
    let mut n_u = start as i64;
    let mut extrema = curve.mass_extrema.iter().filter(|c| c.kind != CriticalKind::NonExtremal).peekable();
    for i in 0..curve.len() {
        let mut current = n_u;
        while let Some(c) = extrema.peek() {
            if c.right > i {
                if c.left < i {
                    current = n_u.min(n_u + turn(c));
                }
                break;
            }
            n_u += turn(c);
            if n_u < 0 {
                return Err(MrCurveError::TppViolation(c.mu));
            }
            current = n_u;
            extrema.next();
        }
        let neutral = critical_index || curve.at_extremum(i);
        let n = current.max(0) as usize;
        verdicts.push(StabilityVerdict {
            mu: curve.mus[i],
            i_mu: curve.imu_at(i)?,
            n_minus_d0: None,
            n_u_tpp: n,
            n_u_formula: None,
            classification: classify(n, neutral),
        });
    }
    Ok(TppWalk { verdicts, small_mu_slope, expected_slope, asymptotic, critical_index })
}

fn classify(n_u: usize, neutral: bool) -> Classification {
    if neutral {
        Classification::Neutral
    } else if n_u == 0 {
        Classification::Stable
    } else {
        Classification::Unstable
    }
}

fn log_log_slope(mus: &[f64], masses: &[f64]) -> f64 {
    let xs: Vec<f64> = mus.iter().map(|m| m.ln()).collect();
    let ys: Vec<f64> = masses.iter().map(|m| m.ln()).collect();
    ls_slope(&xs, &ys)
}

/// Combines the turning-point count at the sample nearest `mu` with the
/// spectral count `n⁻(D⁰) − i_μ`.
pub fn verdict(curve: &MassRadiusCurve, mu: f64, n_minus_d0: usize) -> Result<StabilityVerdict, MrCurveError> {
    let walk = tpp_walk(curve, curve.gamma0)?;
    let i = curve.nearest(mu);
    let mut v = walk.verdicts[i].clone();
    let formula = n_minus_d0 as i64 - i64::from(v.i_mu);
    if formula != v.n_u_tpp as i64 {
        return Err(MrCurveError::CrossCheck { mu: v.mu, tpp: v.n_u_tpp, formula });
    }
    v.n_minus_d0 = Some(n_minus_d0);
    v.n_u_formula = Some(formula as usize);
    Ok(v)
}

/// `M'`, `(M/R)'` and their thresholds at an arbitrary `μ`, from
/// equilibria at `μ e^{±h}` and `μ e^{±2h}` with `h = 0.01`.
pub fn local_derivatives(eos: &EquationOfState, mu: f64, tol: f64) -> Result<LocalDerivatives, MrCurveError> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(MrCurveError::Invalid(format!("center density {mu} must be positive")));
    }
    let h = 0.01;
    let mus: Vec<f64> = (-2..=2).map(|k| mu * (h * k as f64).exp()).collect();
    let mut masses = vec![];
    let mut radii = vec![];
    for res in solve_all(eos, &mus, tol) {
        let (m, r) = res?;
        masses.push(m);
        radii.push(r);
    }
    let ratio: Vec<f64> = masses.iter().zip(&radii).map(|(m, r)| m / r).collect();
    let (gm, em) = log_derivative(&masses, h, tol);
    let (gmr, emr) = log_derivative(&ratio, h, tol);
    Ok(LocalDerivatives {
        mu,
        mass: masses[2],
        radius: radii[2],
        dm: gm[2] / mu,
        dmr: gmr[2] / mu,
        threshold_m: em[2] / mu,
        threshold_mr: emr[2] / mu,
    })
}

impl LocalDerivatives {
    pub fn i_mu(&self) -> Result<u8, MrCurveError> {
        imu_from_signs(self.mu, sign(self.dm, self.threshold_m), sign(self.dmr, self.threshold_mr))
    }
}
