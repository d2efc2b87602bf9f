//! Inertia counting for symmetric matrices and a few dense helpers.
//!
//! By Sylvester's law of inertia the signs of the pivots of any symmetric
//! `LDLᵀ` factorization give the number of negative, zero and positive
//! eigenvalues. Tridiagonal matrices use the plain recurrence (a Sturm
//! count); dense matrices use Bunch–Kaufman diagonal pivoting.

use nalgebra::DMatrix;

/// Numbers of negative, zero and positive eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Inertia {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
}

/// Inertia of the symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `e`. Pivots with `|p| ≤ tiny` are reported as zero.
pub fn tridiagonal_inertia(d: &[f64], e: &[f64], tiny: f64) -> Inertia {
    let mut out = Inertia { negative: 0, zero: 0, positive: 0 };
    let mut p = 0.0;
    for i in 0..d.len() {
        p = if i == 0 {
            d[0]
        } else if p == 0.0 {
            // a zero pivot decouples the recurrence; perturb to continue
            d[i] - e[i - 1] * e[i - 1] / (f64::EPSILON * (e[i - 1].abs() + d[i].abs() + 1e-300))
        } else {
            d[i] - e[i - 1] * e[i - 1] / p
        };
        if p.abs() <= tiny {
            out.zero += 1;
        } else if p < 0.0 {
            out.negative += 1;
        } else {
            out.positive += 1;
        }
    }
    out
}

/// Inertia of a dense symmetric matrix by Bunch–Kaufman `LDLᵀ`.
///
/// Only the lower triangle is read. Pivots with magnitude `≤ tiny` are
/// counted as zero.
pub fn dense_inertia(m: &DMatrix<f64>, tiny: f64) -> Inertia {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut a = m.clone();
    for j in 0..n {
        for i in 0..j {
            a[(i, j)] = a[(j, i)];
        }
    }
    let alpha = (1.0 + 17f64.sqrt()) / 8.0;
    let mut out = Inertia { negative: 0, zero: 0, positive: 0 };
    let mut k = 0;
    let classify = |v: f64, out: &mut Inertia| {
        if v.abs() <= tiny {
            out.zero += 1;
        } else if v < 0.0 {
            out.negative += 1;
        } else {
            out.positive += 1;
        }
    };
    while k < n {
        let absakk = a[(k, k)].abs();
        let (mut imax, mut colmax) = (k, 0.0);
        for i in k + 1..n {
            if a[(i, k)].abs() > colmax {
                colmax = a[(i, k)].abs();
                imax = i;
            }
        }
        if absakk.max(colmax) <= tiny {
            out.zero += 1;
            k += 1;
            continue;
        }
        let (kp, size) = if absakk >= alpha * colmax {
            (k, 1)
        } else {
            let mut rowmax: f64 = 0.0;
            for j in k..n {
                if j != imax {
                    rowmax = rowmax.max(a[(imax, j)].abs());
                }
            }
            if absakk * rowmax >= alpha * colmax * colmax {
                (k, 1)
            } else if a[(imax, imax)].abs() >= alpha * rowmax {
                (imax, 1)
            } else {
                (imax, 2)
            }
        };
        let target = if size == 1 { k } else { k + 1 };
        if kp != target {
            a.swap_rows(kp, target);
            a.swap_columns(kp, target);
        }
        if size == 1 {
            let d = a[(k, k)];
            classify(d, &mut out);
            if d.abs() > tiny {
                for j in k + 1..n {
                    let f = a[(j, k)] / d;
                    for i in j..n {
                        a[(i, j)] -= f * a[(i, k)];
                        a[(j, i)] = a[(i, j)];
                    }
                }
            }
            k += 1;
        } else {
            let (d11, d21, d22) = (a[(k, k)], a[(k + 1, k)], a[(k + 1, k + 1)]);
            let det = d11 * d22 - d21 * d21;
            // a Bunch–Kaufman 2×2 pivot is always indefinite
            let tr = d11 + d22;
            if det < 0.0 {
                out.negative += 1;
                out.positive += 1;
            } else {
                classify(tr, &mut out);
                classify(tr, &mut out);
            }
            for j in k + 2..n {
                let (x1, x2) = (a[(j, k)], a[(j, k + 1)]);
                // w = D⁻¹ [x1, x2]
                let w1 = (d22 * x1 - d21 * x2) / det;
                let w2 = (d11 * x2 - d21 * x1) / det;
                for i in j..n {
                    a[(i, j)] -= a[(i, k)] * w1 + a[(i, k + 1)] * w2;
                    a[(j, i)] = a[(i, j)];
                }
            }
            k += 2;
        }
    }
    out
}

/// Solves a general tridiagonal system by Gaussian elimination with
/// partial pivoting. `sub`, `diag`, `sup` have lengths `n−1`, `n`, `n−1`.
pub fn tridiagonal_solve(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    if n == 1 {
        return vec![rhs[0] / diag[0]];
    }
    // row i of U holds d[i], u1[i], u2[i] at columns i, i+1, i+2
    let mut d = diag.to_vec();
    let mut u1 = sup.to_vec();
    u1.push(0.0);
    let mut u2 = vec![0.0; n];
    let mut b = rhs.to_vec();
    for i in 0..n - 1 {
        if sub[i].abs() > d[i].abs() {
            let (old_d, old_u1) = (d[i], u1[i]);
            d[i] = sub[i];
            u1[i] = d[i + 1];
            u2[i] = u1[i + 1];
            b.swap(i, i + 1);
            let f = old_d / d[i];
            d[i + 1] = old_u1 - f * u1[i];
            u1[i + 1] = -f * u2[i];
            b[i + 1] -= f * b[i];
        } else {
            if d[i] == 0.0 {
                d[i] = f64::EPSILON;
            }
            let f = sub[i] / d[i];
            d[i + 1] -= f * u1[i];
            b[i + 1] -= f * b[i];
        }
    }
    if d[n - 1] == 0.0 {
        d[n - 1] = f64::EPSILON;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = b[i];
        if i + 1 < n {
            s -= u1[i] * x[i + 1];
        }
        if i + 2 < n {
            s -= u2[i] * x[i + 2];
        }
        x[i] = s / d[i];
    }
    x
}

// Eigen-decomposition of the symmetric embedding `[[0, M], [M', 0]]`, whose
// eigenvalues are `±σᵢ` plus `|rows − cols|` zeros. nalgebra's bidiagonal SVD
// returns wrong factors for some exactly rank-deficient integer matrices, while
// its symmetric eigensolver is reliable and backward stable.
fn embedding_eigen(m: &DMatrix<f64>) -> nalgebra::SymmetricEigen<f64, nalgebra::Dyn> {
    let (r, c) = m.shape();
    let mut j = DMatrix::zeros(r + c, r + c);
    j.view_mut((0, r), (r, c)).copy_from(m);
    j.view_mut((r, 0), (c, r)).copy_from(&m.transpose());
    j.symmetric_eigen()
}

/// Singular values in decreasing order, `min(rows, cols)` of them.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return vec![];
    }
    let mut ev: Vec<f64> = embedding_eigen(m).eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.truncate(k);
    ev.into_iter().map(f64::abs).collect()
}

// Orthonormal basis for the dominant eigenspace (eigenvalues above 1/2) of
// the projector-like Gram matrix `g`.
fn projector_basis(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let e = g.clone().symmetric_eigen();
    let keep: Vec<usize> = (0..n).filter(|&i| e.eigenvalues[i] > 0.5).collect();
    DMatrix::from_fn(n, keep.len(), |i, j| e.eigenvectors[(i, keep[j])])
}

/// Orthonormal basis of the column space of `m` with singular values above
/// `rel_tol · σ_max`.
pub fn range_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(r, 0);
    }
    let e = embedding_eigen(m);
    let smax = e.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut g = DMatrix::zeros(r, r);
    for (k, &lambda) in e.eigenvalues.iter().enumerate() {
        if smax > 0.0 && lambda > rel_tol * smax {
            let u = e.eigenvectors.view((0, k), (r, 1));
            g += 2.0 * u * u.transpose();
        }
    }
    projector_basis(&g)
}

/// Orthonormal basis of the null space of `m` (singular values at or below
/// `abs_tol`).
pub fn null_basis(m: &DMatrix<f64>, abs_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if c == 0 {
        return DMatrix::zeros(0, 0);
    }
    if r == 0 {
        return DMatrix::identity(c, c);
    }
    let e = embedding_eigen(m);
    let mut g = DMatrix::zeros(c, c);
    for (k, &lambda) in e.eigenvalues.iter().enumerate() {
        if lambda.abs() <= abs_tol {
            let v = e.eigenvectors.view((r, k), (c, 1));
            g += v * v.transpose();
        }
    }
    projector_basis(&g)
}

/// Rank cut for singular values `values` of a matrix with norm `scale`.
///
/// Values below `lo · scale` are zero and values above `hi · scale` are not;
/// in between, the cut sits at the geometric middle of the widest ratio gap
/// of the sorted sequence.
/// A fixed threshold fails when a nearly singular factor smears exact zeros
/// of a product up to the size of genuine small singular values.
pub fn gap_cut(values: &[f64], scale: f64, lo: f64, hi: f64) -> f64 {
    let (lo, hi) = (lo * scale, hi * scale);
    let mut seq = vec![values.iter().cloned().filter(|&v| v <= lo).fold(lo, f64::max)];
    let mut middle: Vec<f64> = values.iter().cloned().filter(|&v| v > lo && v <= hi).collect();
    if middle.is_empty() {
        return lo;
    }
    middle.sort_by(f64::total_cmp);
    seq.extend(middle);
    seq.push(values.iter().cloned().filter(|&v| v > hi).fold(f64::INFINITY, f64::min).min(1e3 * hi));
    let i = (0..seq.len() - 1)
        .max_by(|&i, &j| (seq[i + 1] / seq[i]).total_cmp(&(seq[j + 1] / seq[j])))
        .unwrap_or(0);
    (seq[i] * seq[i + 1]).sqrt()
}

/// Matrix exponential by Taylor series on `m / 2^s` with `‖m / 2^s‖ ≤ 1/2`,
/// followed by `s` squarings. Stays accurate for large nilpotent and
/// oscillatory arguments, where Padé-based routines lose many digits.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let norm = m.norm();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let h = m / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..60 {
        term = &term * &h / k as f64;
        sum += &term;
        if term.norm() <= f64::EPSILON * 1e-3 * sum.norm() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Spectral norm.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    (m.transpose() * m).symmetric_eigen().eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_bases_of_a_rank_one_integer_matrix() {
        // nalgebra's bidiagonal SVD reconstructs this matrix with O(1) errors
        let col = [3.0, -2.0, 1.0, -6.0, 6.0, -1.0, -6.0, -1.0, -3.0, 4.0, -5.0, -5.0];
        let m = DMatrix::from_fn(12, 3, |i, j| col[i] * [1.0, -2.0, -2.0][j]);
        let sv = singular_values(&m);
        assert!((sv[0] - 3.0 * 199f64.sqrt()).abs() < 1e-12 * sv[0]);
        assert!(sv[1] < 1e-13 && sv[2] < 1e-13);
        let q = range_basis(&m, 1e-10);
        assert_eq!(q.ncols(), 1);
        assert!((&m - &q * (q.transpose() * &m)).amax() < 1e-12);
        let z = null_basis(&m, 1e-10);
        assert_eq!(z.ncols(), 2);
        assert!((&m * &z).amax() < 1e-12);
        assert!((z.transpose() * &z - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!((norm2(&m) - sv[0]).abs() < 1e-12 * sv[0]);
    }

    #[test]
    fn gap_cut_separates_smeared_zeros_from_small_values() {
        // smeared zero at 1e-10 next to a clear nonzero at 0.1
        let cut = gap_cut(&[1e-16, 3e-15, 1.4e-10, 0.12, 0.5], 1.0, 1e-12, 1e-6);
        assert!(cut > 1.4e-10 && cut < 1e-3);
        // a genuine small singular value far above the zeros
        let cut = gap_cut(&[1e-17, 5e-17, 1.4e-7, 7.7e-4, 0.3], 1.0, 1e-12, 1e-6);
        assert!(cut > 1e-12 && cut < 1.4e-7);
        assert_eq!(gap_cut(&[0.0, 0.2, 1.0], 2.0, 1e-12, 1e-6), 2e-12);
    }

    #[test]
    fn expm_is_exact_on_nilpotent_and_rotation_generators() {
        let n = DMatrix::from_row_slice(3, 3, &[0.0, 3.0, -1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        let t = 1e4;
        let exact = DMatrix::identity(3, 3) + &n * t + &n * &n * (t * t / 2.0);
        assert!((expm(&(&n * t)) - &exact).amax() <= 1e-12 * exact.amax());
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]) * 1e3;
        let e = expm(&r);
        let expect = DMatrix::from_row_slice(2, 2, &[1e3f64.cos(), -1e3f64.sin(), 1e3f64.sin(), 1e3f64.cos()]);
        assert!((e - expect).amax() <= 1e-10);
    }

    #[test]
    fn diagonal_inertia_counts_signs() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 2.0, -3.0]));
        assert_eq!(dense_inertia(&m, 0.0).negative, 2);
        assert_eq!(tridiagonal_inertia(&[-1.0, 2.0, -3.0], &[0.0, 0.0], 0.0).negative, 2);
        let i = DMatrix::<f64>::identity(4, 4);
        assert_eq!(dense_inertia(&i, 0.0).negative, 0);
    }

    #[test]
    fn two_by_two_pivot_on_zero_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let i = dense_inertia(&m, 0.0);
        assert_eq!((i.negative, i.positive), (1, 1));
    }

    #[test]
    fn tridiagonal_solve_matches_dense() {
        let sub = [1.0, -2.0, 0.5];
        let diag = [1e-12, 3.0, -1.0, 2.0];
        let sup = [4.0, 1.0, -1.5];
        let rhs = [1.0, 2.0, 3.0, 4.0];
        let x = tridiagonal_solve(&sub, &diag, &sup, &rhs);
        let mut m = DMatrix::zeros(4, 4);
        for i in 0..4 {
            m[(i, i)] = diag[i];
            if i < 3 {
                m[(i + 1, i)] = sub[i];
                m[(i, i + 1)] = sup[i];
            }
        }
        let r = &m * nalgebra::DVector::from_vec(x) - nalgebra::DVector::from_vec(rhs.to_vec());
        assert!(r.norm() < 1e-10);
    }
}
