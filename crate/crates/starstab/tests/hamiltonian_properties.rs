use nalgebra::{Complex, DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starstab::hamiltonian::{
    evolve, growth_degree, random_corpus, random_triple, semisimple_off_zero, spectrum, trichotomy, GrowthConditions,
    HamiltonianError, SeparableTriple,
};
use starstab::linalg::singular_values;

const TOL: f64 = 1e-8;

fn triple_from(seed: u64) -> SeparableTriple {
    random_triple(&mut ChaCha8Rng::seed_from_u64(seed), 12)
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    g.transpose() * g + DMatrix::identity(n, n) * 0.5
}

/// Eigenvalues of `JL` from nalgebra's Schur form, away from the zero cluster.
fn direct_nonzero(t: &SeparableTriple, scale: f64) -> Vec<Complex<f64>> {
    t.jl.clone().complex_eigenvalues().iter().copied().filter(|z| z.norm() > 1e-4 * scale).collect()
}

fn nearest(set: &[Complex<f64>], z: Complex<f64>) -> f64 {
    set.iter().map(|w| (w - z).norm()).fold(f64::INFINITY, f64::min)
}

/// Geometric multiplicity of `λ` from the eigenvalues of `PᴴP`, `P = JL − λ`
/// realified, which counts each complex null vector twice.
fn geometric_multiplicity(t: &SeparableTriple, lambda: Complex<f64>, scale: f64) -> usize {
    let n = t.dim();
    let id = DMatrix::<f64>::identity(n, n);
    let shifted = &t.jl - &id * lambda.re;
    let mut p = DMatrix::zeros(2 * n, 2 * n);
    p.view_mut((0, 0), (n, n)).copy_from(&shifted);
    p.view_mut((n, n), (n, n)).copy_from(&shifted);
    p.view_mut((0, n), (n, n)).copy_from(&(&id * lambda.im));
    p.view_mut((n, 0), (n, n)).copy_from(&(&id * -lambda.im));
    let gram = p.transpose() * &p;
    let zeros = gram.symmetric_eigen().eigenvalues.iter().filter(|&&e| e <= 1e-10 * scale * scale).count();
    zeros / 2
}

fn form(energy: &DMatrix<f64>, e: &DMatrix<f64>) -> f64 {
    if e.ncols() == 0 {
        0.0
    } else {
        (e.transpose() * energy * e).amax()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectrum_has_quadruple_symmetry(seed in any::<u64>()) {
        let t = triple_from(seed);
        let spec = spectrum(&t).unwrap();
        let scale = spec.scale.max(f64::MIN_POSITIVE);
        let direct = direct_nonzero(&t, scale);
        for &z in &direct {
            prop_assert!(nearest(&direct, -z) <= 1e-6 * scale, "−λ missing for {z}");
            prop_assert!(nearest(&direct, z.conj()) <= 1e-6 * scale, "λ̄ missing for {z}");
        }
        // the library's nonzero eigenvalues agree with the direct solve as multisets
        prop_assert_eq!(spec.nonzero.len(), direct.len());
        for &z in &spec.nonzero {
            prop_assert!(nearest(&direct, z) <= 1e-6 * scale);
        }
        prop_assert_eq!(spec.zero_multiplicity() + spec.nonzero.len(), t.dim());
    }

    #[test]
    fn trichotomy_dimensions_and_index_formula(seed in any::<u64>()) {
        let t = triple_from(seed);
        let tri = trichotomy(&t, TOL).unwrap();
        prop_assert_eq!(tri.d_u, tri.index_on_range);
        prop_assert_eq!(tri.d_u, tri.d_s);
        prop_assert_eq!(tri.d_u + tri.d_s + tri.d_c, t.dim());
        prop_assert_eq!(tri.e_u.ncols(), tri.d_u);
        prop_assert_eq!(tri.e_c.ncols(), tri.d_c);
    }

    #[test]
    fn energy_vanishes_on_the_unstable_and_stable_spaces(seed in any::<u64>()) {
        let t = triple_from(seed);
        let tri = trichotomy(&t, TOL).unwrap();
        let energy = t.energy_matrix();
        let lnorm = energy.clone().symmetric_eigen().eigenvalues.amax().max(f64::MIN_POSITIVE);
        prop_assert!(form(&energy, &tri.e_u) <= TOL * lnorm);
        prop_assert!(form(&energy, &tri.e_s) <= TOL * lnorm);
        if tri.d_u > 0 {
            let us = DMatrix::from_columns(&tri.e_u.column_iter().chain(tri.e_s.column_iter()).collect::<Vec<_>>());
            prop_assert!((tri.e_c.transpose() * &energy * us).amax() <= TOL * lnorm);
            // E^u is invariant: JL E^u stays in E^u
            let image = &t.jl * &tri.e_u;
            let leak = &image - &tri.e_u * (tri.e_u.transpose() * &image);
            prop_assert!(leak.amax() <= 1e-8 * spectrum(&t).unwrap().scale);
        }
    }

    #[test]
    fn nonzero_eigenvalues_are_semisimple(seed in any::<u64>()) {
        let t = triple_from(seed);
        let spec = spectrum(&t).unwrap();
        prop_assert!(semisimple_off_zero(&t, &spec));
        let scale = spec.scale;
        let direct = direct_nonzero(&t, scale);
        let mut seen: Vec<Complex<f64>> = vec![];
        for &z in &direct {
            if seen.iter().any(|w| (w - z).norm() <= 1e-6 * scale) {
                continue;
            }
            seen.push(z);
            let algebraic = direct.iter().filter(|w| (*w - z).norm() <= 1e-6 * scale).count();
            prop_assert_eq!(geometric_multiplicity(&t, z, scale), algebraic, "λ = {}", z);
        }
    }

    #[test]
    fn growth_respects_the_caps(seed in any::<u64>()) {
        let t = triple_from(seed);
        let tri = trichotomy(&t, TOL).unwrap();
        let fit = growth_degree(&t, &tri, 1e4, 40).unwrap();
        prop_assert!(fit.degree <= 3);
        prop_assert!(fit.degree <= GrowthConditions::of(&t).cap(), "degree {} with {:?}", fit.degree, GrowthConditions::of(&t));
        prop_assert!(fit.envelope.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn midpoint_rule_conserves_energy(seed in any::<u64>()) {
        let t = triple_from(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let w0: Vec<f64> = (0..t.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rho = spectrum(&t).unwrap().radius().max(1.0);
        let dt = 0.1 / rho;
        let traj = evolve(&t, &w0, 2000.0 * dt, dt).unwrap();
        prop_assert!(traj.max_drift <= 1e-10, "drift {:e}", traj.max_drift);
    }

    #[test]
    fn definite_energy_gives_an_oscillator(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (l, a, b) = (spd(&mut rng, n), spd(&mut rng, n), gaussian(&mut rng, n, n));
        prop_assume!(singular_values(&b).last().copied().unwrap_or(0.0) > 1e-3);
        let t = SeparableTriple::assemble(l, a, b).unwrap();
        let spec = spectrum(&t).unwrap();
        prop_assert_eq!(spec.zero_multiplicity(), 0);
        for z in &spec.nonzero {
            prop_assert!(z.re.abs() <= 1e-8 * spec.scale && z.im.abs() > 0.0);
        }
        let tri = trichotomy(&t, TOL).unwrap();
        prop_assert_eq!(tri.d_u, 0);
        prop_assert_eq!(GrowthConditions::of(&t).cap(), 0);
        prop_assert_eq!(growth_degree(&t, &tri, 1e4, 40).unwrap().degree, 0);
    }

    #[test]
    fn onto_generator_grows_at_most_linearly(seed in any::<u64>(), nx in 1usize..6, extra in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ny = nx + extra;
        let p = gaussian(&mut rng, nx, nx);
        let d = DMatrix::from_diagonal(&DVector::from_fn(nx, |_, _| rng.random_range(-1i32..=1) as f64));
        let l = p.transpose() * d * &p;
        let t = SeparableTriple::assemble(l, spd(&mut rng, ny), gaussian(&mut rng, nx, ny)).unwrap();
        prop_assume!(GrowthConditions::of(&t).ba_onto);
        let tri = trichotomy(&t, TOL).unwrap();
        prop_assert!(growth_degree(&t, &tri, 1e4, 40).unwrap().degree <= 1);
    }
}

#[test]
fn cubic_example_is_nilpotent_with_cubic_growth() {
    let t = SeparableTriple::cubic_example();
    let powers = t.jl_powers(4);
    assert!(powers[2].amax() > 0.0);
    assert_eq!(powers[3].amax(), 0.0);
    let tri = trichotomy(&t, TOL).unwrap();
    assert_eq!(tri.d_u, 0);
    assert_eq!(tri.kernel_chain, vec![2, 3, 4, 5]);
    let fit = growth_degree(&t, &tri, 1e4, 40).unwrap();
    assert_eq!(fit.degree, 3);
    assert_eq!(fit.algebraic_degree, 3);
}

#[test]
fn harmonic_block_has_unit_frequencies() {
    let t = SeparableTriple::harmonic(3);
    let spec = spectrum(&t).unwrap();
    assert_eq!(spec.nonzero.len(), 6);
    assert!(spec.nonzero.iter().all(|z| z.re.abs() < 1e-12 && (z.im.abs() - 1.0).abs() < 1e-12));
    let w0 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let traj = evolve(&t, &w0, 2.0 * std::f64::consts::PI, 1e-3).unwrap();
    assert!(traj.norms.iter().all(|n| (n - 1.0).abs() < 1e-12));
}

#[test]
fn zero_coupling_freezes_the_flow() {
    let t = SeparableTriple::assemble(DMatrix::identity(2, 2), DMatrix::identity(3, 3), DMatrix::zeros(2, 3)).unwrap();
    assert_eq!(t.jl, DMatrix::zeros(5, 5));
    assert_eq!(spectrum(&t).unwrap().kernel_chain, vec![5]);
}

#[test]
fn indefinite_a_and_bad_shapes_are_rejected() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let r = SeparableTriple::assemble(DMatrix::identity(2, 2), a, DMatrix::identity(2, 2));
    assert!(matches!(r, Err(HamiltonianError::NotSemidefinite(_))));
    let r = SeparableTriple::assemble(DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::identity(3, 2));
    assert!(matches!(r, Err(HamiltonianError::Dimension(_))));
}

#[test]
fn corpus_summary_counts_entries() {
    let rep = random_corpus(7, 25);
    assert_eq!(rep.entries.len(), 25);
    assert_eq!(rep.failures, rep.entries.iter().filter(|e| !e.pass).count());
    assert!(rep.pass);
    // same seed, same corpus
    let again = random_corpus(7, 25);
    assert!(rep.entries.iter().zip(&again.entries).all(|(a, b)| (a.nx, a.ny, a.d_u) == (b.nx, b.ny, b.d_u)));
}
