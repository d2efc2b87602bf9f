//! Small numerical kernels shared by the physics modules: Gauss–Legendre and
//! tanh–sinh quadrature, a bracketing root finder, and a Dormand–Prince 5(4)
//! integrator with dense output.

use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Cached 10-point rule.
pub fn gl10() -> &'static (Vec<f64>, Vec<f64>) {
    static R: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    R.get_or_init(|| gauss_legendre(10))
}

/// Cached 20-point rule.
pub fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static R: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    R.get_or_init(|| gauss_legendre(20))
}

/// Integrates `f` over `[a, b]` with a fixed Gauss rule.
pub fn gauss(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut s = 0.0;
    for (x, w) in rule.0.iter().zip(&rule.1) {
        s += w * f(c + h * x);
    }
    s * h
}

/// Points and weights of a tanh–sinh rule on `[a, b]`, clustered at both ends.
///
/// Nodes are placed by their distance to the nearer endpoint so that
/// integrands with algebraic endpoint singularities are never evaluated
/// on the endpoint itself.
pub fn tanh_sinh_rule(a: f64, b: f64, level: u32) -> Vec<(f64, f64)> {
    let h = 2f64.powi(-(level as i32));
    let half = 0.5 * (b - a);
    let mut out = Vec::new();
    let kmax = (4.0 / h) as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let s = std::f64::consts::FRAC_PI_2 * t.sinh();
        let ch = s.cosh();
        // distance from the nearer endpoint, relative to the half-width
        let d = 1.0 / (s.abs().exp() * ch);
        let w = std::f64::consts::FRAC_PI_2 * t.cosh() / (ch * ch);
        if d < 1e-300 || w < 1e-300 {
            continue;
        }
        let x = if s < 0.0 { a + half * d } else { b - half * d };
        if x == a || x == b {
            continue;
        }
        out.push((x, w * h * half));
    }
    out
}

/// Tanh–sinh quadrature of `f` on `[a, b]`.
pub fn tanh_sinh(a: f64, b: f64, level: u32, mut f: impl FnMut(f64) -> f64) -> f64 {
    tanh_sinh_rule(a, b, level).into_iter().map(|(x, w)| w * f(x)).sum()
}

/// Brent's method on a bracketing interval. `fa` and `fb` must differ in sign.
pub fn brent(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> f64 {
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    debug_assert!(fa * fb < 0.0, "brent: interval does not bracket a root");
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol * m.signum() };
        fb = f(b);
    }
    b
}

/// One accepted Dormand–Prince step with its dense-output coefficients.
#[derive(Clone, Debug)]
pub struct DenseStep<const N: usize> {
    pub x0: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    rcont: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn x1(&self) -> f64 {
        self.x0 + self.h
    }

    /// Continuous extension of order 4 inside the step.
    pub fn eval(&self, x: f64) -> [f64; N] {
        let th = (x - self.x0) / self.h;
        let th1 = 1.0 - th;
        let r = &self.rcont;
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub max_steps: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum OdeError {
    #[error("step size underflow at x = {0}")]
    StepUnderflow(f64),
    #[error("maximum number of steps exceeded at x = {0}")]
    TooManySteps(f64),
}

/// What the step observer wants after an accepted step.
pub enum Flow {
    Continue,
    Stop,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut s = 0.0;
        for (c, k) in terms {
            s += c * k[i];
        }
        out[i] += h * s;
    }
    out
}

/// Integrates `y' = f(x, y)` from `x0` to `x_end` (either direction).
///
/// Every accepted step is passed to `observe`, which may stop the
/// integration early. Returns the final abscissa and state.
pub fn dopri5<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> [f64; N],
    x0: f64,
    y0: [f64; N],
    x_end: f64,
    opts: &OdeOptions,
    mut observe: impl FnMut(&DenseStep<N>) -> Flow,
) -> Result<(f64, [f64; N]), OdeError> {
    let dir = (x_end - x0).signum();
    let mut x = x0;
    let mut y = y0;
    let mut h = opts.h_init.abs().min((x_end - x0).abs()) * dir;
    let mut k1 = f(x, &y);
    let mut steps = 0usize;
    let mut last_rejected = false;
    while (x_end - x) * dir > 0.0 {
        if steps >= opts.max_steps {
            return Err(OdeError::TooManySteps(x));
        }
        steps += 1;
        if (x + h - x_end) * dir > 0.0 {
            h = x_end - x;
        }
        if h.abs() <= 1e-15 * x.abs().max(1e-300) {
            return Err(OdeError::StepUnderflow(x));
        }
        let k2 = f(x + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = f(x + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(x + C4 * h, &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(
            x + C5 * h,
            &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            x + h,
            &axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        );
        let y1 = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(x + h, &y1);
        let mut err = 0.0;
        for i in 0..N {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y1[i].abs());
            err += (e / sc) * (e / sc);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() {
            h *= 0.2;
            last_rejected = true;
            continue;
        }
        let fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
        if err <= 1.0 {
            let mut rcont = [[0.0; N]; 5];
            for i in 0..N {
                let dy = y1[i] - y[i];
                let bspl = h * k1[i] - dy;
                rcont[0][i] = y[i];
                rcont[1][i] = dy;
                rcont[2][i] = bspl;
                rcont[3][i] = dy - h * k7[i] - bspl;
                rcont[4][i] = h
                    * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            }
            let step = DenseStep { x0: x, h, y0: y, y1, rcont };
            x += h;
            y = y1;
            k1 = k7;
            if let Flow::Stop = observe(&step) {
                return Ok((x, y));
            }
            h *= if last_rejected { fac.min(1.0) } else { fac };
            last_rejected = false;
        } else {
            h *= fac.min(1.0);
            last_rejected = true;
        }
    }
    Ok((x, y))
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials_exactly() {
        let v = gauss(gl10(), 0.0, 2.0, |x| x.powi(19));
        assert!((v - 2f64.powi(20) / 20.0).abs() < 1e-9 * v);
    }

    #[test]
    fn tanh_sinh_handles_endpoint_singularity() {
        let v = tanh_sinh(0.0, 1.0, 6, |x| 1.0 / x.sqrt());
        assert!((v - 2.0).abs() < 1e-12);
        let w = tanh_sinh(0.0, 1.0, 6, |x| (1.0 - x).powf(1.5) * x.ln());
        // ∫₀¹ (1−x)^{3/2} ln x dx = (2/5)(ψ(1) − ψ(7/2))
        let exact = 0.4 * (2.0 * 2f64.ln() - 2.0 - 2.0 / 3.0 - 2.0 / 5.0);
        assert!((w - exact).abs() < 1e-12, "{w} {exact}");
    }

    #[test]
    fn brent_finds_cosine_root() {
        let r = brent(f64::cos, 1.0, 2.0, 1e-15);
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn dopri5_harmonic_oscillator_and_dense_output() {
        let opts = OdeOptions { rtol: 1e-11, atol: 1e-13, h_init: 1e-3, max_steps: 100_000 };
        let mut worst: f64 = 0.0;
        let (x, y) = dopri5(
            |_, y: &[f64; 2]| [y[1], -y[0]],
            0.0,
            [0.0, 1.0],
            10.0,
            &opts,
            |s| {
                let xm = s.x0 + 0.37 * s.h;
                worst = worst.max((s.eval(xm)[0] - xm.sin()).abs());
                Flow::Continue
            },
        )
        .unwrap();
        assert_eq!(x, 10.0);
        assert!((y[0] - 10f64.sin()).abs() < 1e-9);
        assert!(worst < 1e-8);
    }

    #[test]
    fn dopri5_integrates_backwards() {
        let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, h_init: 0.1, max_steps: 10_000 };
        let (_, y) = dopri5(|_, y: &[f64; 1]| [y[0]], 1.0, [1.0], 0.0, &opts, |_| Flow::Continue).unwrap();
        assert!((y[0] - (-1f64).exp()).abs() < 1e-9);
    }
}
