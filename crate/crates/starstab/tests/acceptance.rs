//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{composite, cosine, lane_emden_rk4, model, polytrope, slope, white_dwarf, TOL};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starstab::eos::EquationOfState;
use starstab::equilibrium::{lane_emden, StellarModel};
use starstab::hamiltonian::{
    evolve, growth_degree, radial_triple, random_corpus, spectrum, trichotomy, GrowthConditions, SeparableTriple,
};
use starstab::mrcurve::{local_derivatives, tpp_walk, trace_curve, CriticalKind};
use starstab::spectral::{eddington_spectrum, Closure, RadialOperator, SpectralOptions};

/// Outcome of one criterion: pass flag and a one-line summary.
struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(checks: &[(bool, String)]) -> Self {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1.as_str()).collect();
        if failed.is_empty() {
            let all: Vec<&str> = checks.iter().map(|c| c.1.as_str()).collect();
            Self { pass: true, detail: all.join("; ") }
        } else {
            let passed = checks.len() - failed.len();
            Self { pass: false, detail: format!("{} ({passed} of {} checks passed)", failed.join("; "), checks.len()) }
        }
    }

    /// Like [`Outcome::new`], but reports `summary` instead of every check on success.
    fn summarized(checks: &[(bool, String)], summary: String) -> Self {
        let out = Self::new(checks);
        if out.pass {
            Self { pass: true, detail: summary }
        } else {
            out
        }
    }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed < limit, format!("runtime {:.2} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

fn d0(m: &StellarModel, l: u32) -> RadialOperator {
    RadialOperator::schrodinger(m, l, &SpectralOptions { n: 400, outer_factor: 3.0, closure: Closure::Exterior }).unwrap()
}

fn n_minus_d0(m: &StellarModel) -> usize {
    d0(m, 0).negative_index()
}

fn eddington_negatives(m: &StellarModel) -> usize {
    eddington_spectrum(m, 400, 3).unwrap().neg_count
}

fn lane_emden_fixtures() -> Outcome {
    let mut checks = vec![];
    let start = Instant::now();
    let le = lane_emden(1.0, 1e-12).unwrap();
    let err = (le.xi1 - PI).abs();
    checks.push((err <= 1e-10, format!("n = 1: |ξ₁ − π| = {err:.1e}")));
    checks.push(within(start.elapsed(), Duration::from_secs(1)));
    for n in [1.5, 3.0] {
        let (xi, w) = lane_emden_rk4(n, 2e-4);
        let start = Instant::now();
        let le = lane_emden(n, 1e-12).unwrap();
        let elapsed = start.elapsed();
        let (ex, ew) = ((le.xi1 - xi).abs() / xi, (le.minus_xi2_thetaprime - w).abs() / w);
        checks.push((ex <= 1e-6 && ew <= 1e-6, format!("n = {n}: ξ₁ rel {ex:.1e}, −ξ₁²θ' rel {ew:.1e}")));
        checks.push(within(elapsed, Duration::from_secs(1)));
    }
    Outcome::new(&checks)
}

fn polytropic_scaling() -> Outcome {
    let start = Instant::now();
    let mut checks = vec![];
    let mus: Vec<f64> = (0..9).map(|i| 0.1 * 10f64.powf(i as f64 / 4.0)).collect();
    let lnmu: Vec<f64> = mus.iter().map(|m| m.ln()).collect();
    for gamma in [1.25, 4.0 / 3.0 - 0.01, 4.0 / 3.0 + 0.01, 5.0 / 3.0, 1.9] {
        let eos = polytrope(gamma);
        let models: Vec<StellarModel> = mus.iter().map(|&mu| model(&eos, mu)).collect();
        let lnm: Vec<f64> = models.iter().map(|m| m.mass.ln()).collect();
        let lnr: Vec<f64> = models.iter().map(|m| m.radius.ln()).collect();
        let (sm, sr) = (slope(&lnmu, &lnm), slope(&lnmu, &lnr));
        let (em, er) = ((sm - (3.0 * gamma - 4.0) / 2.0).abs(), (sr - (gamma - 2.0) / 2.0).abs());
        checks.push((em <= 1e-3 && er <= 1e-3, format!("γ = {gamma:.4}: slope errors {em:.1e}, {er:.1e}")));
    }
    checks.push(within(start.elapsed(), Duration::from_secs(30)));
    Outcome::new(&checks)
}

fn morse_index() -> Outcome {
    let start = Instant::now();
    let mut checks = vec![];
    for gamma in [1.3, 1.5, 5.0 / 3.0] {
        let eos = polytrope(gamma);
        for mu in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let m = model(&eos, mu);
            let n_d0 = n_minus_d0(&m);
            let n_lr = RadialOperator::radial_hessian(&m, 200).unwrap().negative_index();
            checks.push((n_d0 == 1 && n_lr == n_d0, format!("γ = {gamma:.4}, μ = {mu}: n⁻(D⁰) = {n_d0}, n⁻(L_r) = {n_lr}")));
        }
    }
    let time = within(start.elapsed(), Duration::from_secs(60));
    let summary = format!("15 models with n⁻ = 1 from both operators; {}", time.1);
    checks.push(time);
    Outcome::summarized(&checks, summary)
}

fn fixture_models() -> Vec<StellarModel> {
    let mut out = vec![];
    for gamma in [1.3, 1.5, 5.0 / 3.0] {
        for mu in [0.1, 10.0] {
            out.push(model(&polytrope(gamma), mu));
        }
    }
    for mu in [3.0, 30.0, 1e4] {
        out.push(model(&composite(), mu));
    }
    out.push(model(&white_dwarf(), 10.0));
    out
}

fn nonradial_positivity() -> Outcome {
    let mut checks = vec![];
    let (mut worst_cos, mut worst_ratio, mut min_d2) = (1.0f64, 0.0f64, f64::INFINITY);
    for m in fixture_models() {
        let d1 = d0(&m, 1);
        let k = d1.kernel_test(None).unwrap();
        let lowest = d1.eigenvalue(0).unwrap();
        let profile: Vec<f64> = d1.nodes.iter().map(|&r| -r * m.yprime_at(r)).collect();
        let cos = k.vectors.first().map_or(0.0, |v| cosine(v, &profile).abs());
        let d2 = d0(&m, 2).eigenvalue(0).unwrap();
        let tag = format!("{} μ = {}", m.eos.family_name(), m.mu);
        checks.push((lowest.abs() <= k.tol && k.dim == 1, format!("{tag}: λ₀(D¹) = {lowest:.1e}, tol {:.1e}", k.tol)));
        checks.push((cos >= 0.99, format!("{tag}: cosine {cos:.6}")));
        checks.push((d2 > 0.0, format!("{tag}: λ₀(D²) = {d2:.3e}")));
        worst_cos = worst_cos.min(cos);
        worst_ratio = worst_ratio.max(lowest.abs() / k.tol);
        min_d2 = min_d2.min(d2);
    }
    let summary = format!("10 models; max |λ₀(D¹)|/tol {worst_ratio:.2}, min cosine {worst_cos:.6}, min λ₀(D²) {min_d2:.3e}");
    Outcome::summarized(&checks, summary)
}

fn unstable_mode_dichotomy() -> Outcome {
    let mut checks = vec![];
    for (gamma, expected) in [(1.3, 1), (5.0 / 3.0, 0)] {
        for mu in [0.1, 1.0, 10.0] {
            let n = eddington_negatives(&model(&polytrope(gamma), mu));
            checks.push((n == expected, format!("γ = {gamma:.4}, μ = {mu}: {n} negative ω²")));
        }
    }
    let m = model(&polytrope(4.0 / 3.0), 1.0);
    let smallest: Vec<f64> = [100, 200, 400]
        .iter()
        .map(|&n| eddington_spectrum(&m, n, 3).unwrap().eigenvalues.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min))
        .collect();
    let ratios = [smallest[0] / smallest[1], smallest[1] / smallest[2]];
    checks.push((
        ratios.iter().all(|&r| r >= 2.0),
        format!(
            "γ = 4/3: smallest |ω²| on 100/200/400 cells = {:.3e}, {:.3e}, {:.3e}, ratios {:.3}, {:.3} (equilibrium tol {TOL:.0e})",
            smallest[0], smallest[1], smallest[2], ratios[0], ratios[1]
        ),
    ));
    Outcome::new(&checks)
}

fn index_formula_matrix() -> Outcome {
    let cases: Vec<(&str, EquationOfState, f64)> = vec![
        ("polytrope 1.3", polytrope(1.3), 0.5),
        ("polytrope 1.3", polytrope(1.3), 5.0),
        ("polytrope 5/3", polytrope(5.0 / 3.0), 0.5),
        ("polytrope 5/3", polytrope(5.0 / 3.0), 5.0),
        ("white dwarf", white_dwarf(), 1.0),
        ("white dwarf", white_dwarf(), 100.0),
        ("composite", composite(), 1.0),
        ("composite", composite(), 3.0),
        ("composite", composite(), 10.0),
        ("composite", composite(), 30.0),
        ("composite", composite(), 1e3),
        ("composite", composite(), 1e4),
    ];
    let mut checks = vec![];
    let mut mismatches = 0;
    for (name, eos, mu) in &cases {
        let m = model(eos, *mu);
        let n_d0 = n_minus_d0(&m) as i64;
        let i_mu = i64::from(local_derivatives(eos, *mu, TOL).unwrap().i_mu().unwrap());
        let neg = eddington_negatives(&m) as i64;
        if neg != n_d0 - i_mu {
            mismatches += 1;
        }
        checks.push((neg == n_d0 - i_mu, format!("{name} μ = {mu}: {neg} vs {n_d0} − {i_mu}")));
    }
    Outcome::summarized(&checks, format!("{} points, {mismatches} mismatches", cases.len()))
}

fn white_dwarf_stability() -> Outcome {
    let eos = white_dwarf();
    let mut checks = vec![];
    let curve = trace_curve(&eos, 1.0, 1e4, 25, TOL).unwrap();
    let dm_ok = curve.dm.iter().all(|&d| d > 0.0);
    let dmr_ok = curve.dmr.iter().all(|&d| d > 0.0);
    checks.push((dm_ok && dmr_ok && curve.len() == 25, format!("M' > 0 and (M/R)' > 0 at all {} samples on [1, 1e4]", curve.len())));
    for mu in [1.0, 10.0, 100.0, 1e4] {
        let s = eddington_spectrum(&model(&eos, mu), 400, 4).unwrap();
        let min = s.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        checks.push((min > 0.0 && s.neg_count == 0, format!("μ = {mu}: min ω² = {min:.4e}")));
    }
    let (a, b) = (1.0f64, 1.0f64);
    let limit = model(&EquationOfState::polytrope(2.0 * a * b.powf(-4.0 / 3.0), 4.0 / 3.0).unwrap(), 1e4).mass;
    let top = *curve.masses.last().unwrap();
    let rel = (top - limit).abs() / limit;
    checks.push((rel <= 0.05, format!("M(1e4) = {top:.5} vs γ = 4/3 polytrope {limit:.5} (rel {rel:.3})")));
    Outcome::new(&checks)
}

fn turning_point_principle() -> Outcome {
    let start = Instant::now();
    let eos = composite();
    let mut checks = vec![];
    let curve = trace_curve(&eos, 1e-3, 1e5, 120, TOL).unwrap();
    let walk = tpp_walk(&curve, curve.gamma0).unwrap();
    let Some(first) = curve.mass_extrema.first().copied() else {
        return Outcome { pass: false, detail: "no mass extremum detected".into() };
    };
    checks.push((first.kind == CriticalKind::Max, format!("first mass extremum is a {:?} at μ = {:.4}", first.kind, first.mu)));
    let end = curve.mass_extrema.get(1).map_or(curve.len() - 1, |e| e.left);
    let before = walk.verdicts[..=first.left].iter().all(|v| v.n_u_tpp == 0);
    let after = walk.verdicts[first.right..=end].iter().all(|v| v.n_u_tpp == 1);
    checks.push((before && after, format!("n_u = 0 on {} samples before, 1 on {} after", first.left + 1, end + 1 - first.right)));
    for i in [first.left / 2, first.left, first.right, (first.right + end) / 2] {
        let mu = curve.mus[i];
        let n = eddington_negatives(&model(&eos, mu));
        checks.push((n == walk.verdicts[i].n_u_tpp, format!("μ = {mu:.4}: spectral {n}, TPP {}", walk.verdicts[i].n_u_tpp)));
    }
    checks.push((!curve.mr_criticals.is_empty(), format!("{} M/R critical points", curve.mr_criticals.len())));
    for k in &curve.mr_criticals {
        let (l, r) = (k.left, k.right);
        let dn = n_minus_d0(&model(&eos, curve.mus[r])) as i64 - n_minus_d0(&model(&eos, curve.mus[l])) as i64;
        let di = i64::from(curve.imu_at(r).unwrap()) - i64::from(curve.imu_at(l).unwrap());
        checks.push((dn == di && di != 0, format!("across μ = {:.4}: Δn⁻ = {dn}, Δi_μ = {di}", k.mu)));
    }
    checks.push(within(start.elapsed(), Duration::from_secs(300)));
    Outcome::new(&checks)
}

fn finite_dimensional_toolkit() -> Outcome {
    let start = Instant::now();
    let mut checks = vec![];
    let t = SeparableTriple::cubic_example();
    #[rustfmt::skip]
    let printed: [[f64; 25]; 3] = [
        [0.0, 0.0, 0.0, 1.0, 0.0,
         0.0, 0.0, 0.0, 1.0, 0.0,
         -2.0, 1.0, 0.0, 0.0, 0.0,
         -1.0, 1.0, 0.0, 0.0, 0.0,
         0.0, 0.0, 0.0, 0.0, 0.0],
        [-1.0, 1.0, 0.0, 0.0, 0.0,
         -1.0, 1.0, 0.0, 0.0, 0.0,
         0.0, 0.0, 0.0, -1.0, 0.0,
         0.0, 0.0, 0.0, 0.0, 0.0,
         0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0,
         0.0, 0.0, 0.0, 0.0, 0.0,
         1.0, -1.0, 0.0, 0.0, 0.0,
         0.0, 0.0, 0.0, 0.0, 0.0,
         0.0, 0.0, 0.0, 0.0, 0.0],
    ];
    let powers = t.jl_powers(4);
    for (k, p) in printed.iter().enumerate() {
        checks.push((powers[k] == DMatrix::from_row_slice(5, 5, p), format!("(JL)^{} entry-exact", k + 1)));
    }
    checks.push((powers[3] == DMatrix::zeros(5, 5), "(JL)^4 = 0".into()));
    let tri = trichotomy(&t, 1e-8).unwrap();
    let degree = growth_degree(&t, &tri, 1e4, 40).unwrap().degree;
    checks.push((degree == 3, format!("growth degree {degree}")));

    let rep = random_corpus(2024, 200);
    let capped = |f: fn(&GrowthConditions) -> bool, cap: u32| {
        rep.entries.iter().filter(|e| f(&e.conditions)).all(|e| e.growth_degree <= cap)
    };
    let caps = rep.entries.iter().all(|e| e.growth_degree <= 3)
        && capped(|c| c.a_injective, 2)
        && capped(|c| c.ba_onto, 1)
        && capped(|c| c.nondegenerate, 0);
    checks.push((rep.count == 200 && rep.index_violations == 0, format!("corpus of {}: {} index violations", rep.count, rep.index_violations)));
    checks.push((rep.semisimple_violations == 0, format!("{} semisimplicity violations", rep.semisimple_violations)));
    checks.push((caps && rep.failures == 0, format!("growth caps hold, {} failed entries", rep.failures)));
    checks.push(within(start.elapsed(), Duration::from_secs(120)));
    Outcome::new(&checks)
}

fn evolution() -> Outcome {
    let mut checks = vec![];
    let unstable = model(&polytrope(1.3), 1.0);
    let stable = model(&polytrope(5.0 / 3.0), 1.0);
    let fixtures = [
        ("cubic example", SeparableTriple::cubic_example()),
        ("harmonic", SeparableTriple::harmonic(3)),
        ("radial γ = 1.3", radial_triple(&unstable, 100).unwrap().triple),
        ("radial γ = 5/3", radial_triple(&stable, 100).unwrap().triple),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (name, t) in &fixtures {
        let w0: Vec<f64> = (0..t.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dt = 0.1 / spectrum(t).unwrap().radius().max(1.0);
        let traj = evolve(t, &w0, 1e5 * dt, dt).unwrap();
        checks.push((traj.steps == 100_000 && traj.max_drift <= 1e-10, format!("{name}: drift {:.1e}", traj.max_drift)));
    }

    // exponential rate from the unstable eigenvector plus noise
    let t = &fixtures[2].1;
    let omega2 = eddington_spectrum(&unstable, 100, 1).unwrap().eigenvalues[0];
    let lambda_u = (-omega2).sqrt();
    let tri = trichotomy(t, 1e-8).unwrap();
    let w0: Vec<f64> = tri.e_u.column(0).iter().map(|v| v + 1e-3 * rng.random_range(-1.0..1.0)).collect();
    let dt = 0.1 / spectrum(t).unwrap().radius();
    let traj = evolve(t, &w0, 40.0 / lambda_u, dt).unwrap();
    let rate = traj.log_growth_rate(0.5);
    let rel = (rate - lambda_u).abs() / lambda_u;
    checks.push((rel <= 0.01, format!("rate {rate:.6} vs λ_u {lambda_u:.6} (rel {rel:.1e})")));

    // bounded flow on the stable center space
    let t = &fixtures[3].1;
    let tri = trichotomy(t, 1e-8).unwrap();
    let coeffs = DVector::from_fn(tri.e_c.ncols(), |_, _| rng.random_range(-1.0..1.0));
    let mut w = &tri.e_c * coeffs;
    let initial = t.abs_energy_norm(&w);
    let dt = 0.1 / spectrum(t).unwrap().radius();
    let mut peak = 0.0f64;
    for _ in 0..10 {
        let traj = evolve(t, w.as_slice(), 1e4 * dt, dt).unwrap();
        w = DVector::from_vec(traj.final_state);
        peak = peak.max(t.abs_energy_norm(&w));
    }
    checks.push((tri.d_u == 0 && peak <= 3.0 * initial, format!("γ = 5/3 center space: max ‖w‖_|L| / ‖w₀‖_|L| = {:.4}", peak / initial)));
    Outcome::new(&checks)
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("Lane-Emden fixtures", lane_emden_fixtures),
        ("polytropic scaling laws", polytropic_scaling),
        ("Morse index", morse_index),
        ("nonradial positivity", nonradial_positivity),
        ("unstable-mode dichotomy", unstable_mode_dichotomy),
        ("index-formula cross-check", index_formula_matrix),
        ("white dwarf stability", white_dwarf_stability),
        ("turning point principle", turning_point_principle),
        ("finite-dimensional toolkit", finite_dimensional_toolkit),
        ("Hamiltonian evolution", evolution),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Outcome { pass: false, detail: format!("panicked: {}", msg.unwrap_or_default()) }
        });
        let tag = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name} ({:.1} s): {}", i + 1, start.elapsed().as_secs_f64(), outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
