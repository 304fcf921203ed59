//! Shared dense linear algebra helpers.
//!
//! Everything operates on `nalgebra` dynamic matrices in real double
//! precision; complex values appear only in evaluation results and
//! eigenvalues. Rank decisions go through singular values, never
//! determinant signs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Exact symmetrization `(M + M^T)/2`, killing roundoff skew.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Frobenius norm of the skew part, `||M - M^T||_F`.
pub fn skew_norm(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).norm()
}

/// Eigenvalues of a (symmetrized) real symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = symmetrize(m).symmetric_eigen().eigenvalues;
    let mut v: Vec<f64> = ev.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (i, x) in v.into_iter().enumerate() {
        ev[i] = x;
    }
    ev
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

/// `true` when the symmetric matrix has all eigenvalues strictly positive.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    sym_min_eig(m) > 0.0
}

/// Embeds a complex Hermitian matrix `X + iY` as the real symmetric
/// `[[X, -Y], [Y, X]]`, whose spectrum is that of the Hermitian matrix
/// with doubled multiplicities.
fn hermitian_embedding(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    let p = m.nrows();
    let mut e = DMatrix::<f64>::zeros(2 * p, 2 * p);
    for i in 0..p {
        for j in 0..p {
            let z = m[(i, j)];
            e[(i, j)] = z.re;
            e[(i + p, j + p)] = z.re;
            e[(i, j + p)] = -z.im;
            e[(i + p, j)] = z.im;
        }
    }
    e
}

/// Smallest eigenvalue of a complex Hermitian matrix.
pub fn hermitian_min_eig(m: &DMatrix<Complex64>) -> f64 {
    sym_min_eig(&hermitian_embedding(m))
}

/// Hermitian part `(M + M^H)/2` of a complex matrix.
pub fn hermitianize(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Frobenius norm of the anti-Hermitian part.
pub fn anti_hermitian_norm(m: &DMatrix<Complex64>) -> f64 {
    (m - m.adjoint()).norm() * 0.5
}

/// Lifts a real matrix into complex entries.
pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Solves the square real system `M X = RHS` by LU with partial pivoting.
pub fn solve_real(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().lu().solve(rhs)
}

/// Solves the square complex system `M X = RHS` by LU with partial pivoting.
pub fn solve_complex(
    m: &DMatrix<Complex64>,
    rhs: &DMatrix<Complex64>,
) -> Option<DMatrix<Complex64>> {
    m.clone().lu().solve(rhs)
}

/// Two-norm condition estimate of a complex matrix via its singular values.
pub fn condition_estimate(m: &DMatrix<Complex64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Numerical rank by singular-value thresholding with an explicit cutoff.
pub fn rank_with_threshold(m: &DMatrix<f64>, threshold: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().filter(|&&s| s > threshold).count()
}

/// Packs a symmetric `n x n` matrix into its `n(n+1)/2` upper-triangle
/// coordinates, with off-diagonal entries scaled by `sqrt(2)` so that the
/// Euclidean inner product of packed vectors equals the Frobenius inner
/// product of the matrices.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = DVector::zeros(n * (n + 1) / 2);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            v[k] = if i == j { m[(i, j)] } else { SQRT_2 * m[(i, j)] };
            k += 1;
        }
    }
    v
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[k];
            } else {
                let x = v[k] / SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    m
}

/// Dimension of the packed symmetric coordinate space.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Projects a symmetric matrix onto `{X = X^T : X >= floor * I}` by
/// clipping its eigenvalues.
pub fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let q = eig.eigenvectors;
    &q * DMatrix::from_diagonal(&clipped) * q.transpose()
}

/// Checks that every entry of a matrix is finite.
pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Row-major flattening of a real matrix.
pub fn vec_row_major(m: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = m.shape();
    DVector::from_fn(r * c, |k, _| m[(k / c, k % c)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_roundtrip_preserves_frobenius_inner_product() {
        let a = symmetrize(&DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 2.0, 3.0, 2.0, -1.0, 0.5, 3.0, 0.5, 4.0],
        ));
        let b = symmetrize(&DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, -2.0, 1.0, 5.0, 0.0, -2.0, 0.0, 1.5],
        ));
        let dot_mat = (a.transpose() * &b).trace();
        let dot_vec = svec(&a).dot(&svec(&b));
        assert!((dot_mat - dot_vec).abs() < 1e-12);
        assert!((smat(&svec(&a), 3) - &a).norm() < 1e-14);
    }

    #[test]
    fn hermitian_min_eig_matches_real_case() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let mc = to_complex(&m);
        assert!((hermitian_min_eig(&mc) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hermitian_min_eig_complex_offdiagonal() {
        // [[0, i], [-i, 0]] has eigenvalues +-1.
        let mut m = DMatrix::<Complex64>::zeros(2, 2);
        m[(0, 1)] = Complex64::new(0.0, 1.0);
        m[(1, 0)] = Complex64::new(0.0, -1.0);
        assert!((hermitian_min_eig(&m) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalue_clipping_projects_onto_psd_cone() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let p = clip_eigenvalues(&m, 0.0);
        assert!(sym_min_eig(&p) >= -1e-12);
        // already-PSD matrices are fixed points
        let q = clip_eigenvalues(&p, 0.0);
        assert!((&p - &q).norm() < 1e-10);
    }
}
