//! LMI-based certification of the NI, OSNI, SANI and SAOSNI properties,
//! plus a trajectory-level dissipation audit that is independent of the
//! LMI machinery.
//!
//! The central object is the symmetric dissipation matrix
//!
//! ```text
//! M(P) = [ P - A^T P A            (A^T - I) C^T - A^T P B ]
//!        [ C (A - I) - B^T P A    C B + B^T C^T - B^T P B ]
//! ```
//!
//! acting on the stacked state-input vector `[x; u]`: a strictly proper
//! system is NI with quadratic storage `V(x) = 1/2 x^T P x` iff `M(P)` is
//! positive semidefinite. When `I - A` is invertible this is equivalent
//! to the output constraint `C = B^T (I-A)^{-T} P` together with
//! `P - A^T P A >= 0`, and `M` factors as `G^T (P - A^T P A) G` with
//! `G = [-I, (I-A)^{-1} B]`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::ss::{DiscreteStateSpace, TOL_POLE};

/// Default PSD tolerance, relative to the norm of the matrix under test.
pub const TOL_PSD: f64 = 1e-9;

fn psd_scale(m: &DMatrix<f64>) -> f64 {
    m.norm().max(1.0)
}

/// Symmetric matrix acting on the stacked state-input vector `[x; u]`
/// whose positive semidefiniteness certifies the NI dissipation
/// inequality.
#[derive(Debug, Clone)]
pub struct DissipationMatrix {
    m: DMatrix<f64>,
}

impl DissipationMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn min_eig(&self) -> f64 {
        linalg::sym_min_eig(&self.m)
    }

    pub fn norm(&self) -> f64 {
        self.m.norm()
    }
}

/// Storage matrix `P` (with optional output strictness) witnessing a
/// dissipation property, plus the eigenvalues that were verified.
///
/// For OSNI certificates `min_eig_m` refers to the strictness-adjusted
/// matrix `M(P) - eps N^T N`.
#[derive(Debug, Clone)]
pub struct StorageCertificate {
    pub p: DMatrix<f64>,
    pub epsilon: Option<f64>,
    pub min_eig_p: f64,
    pub min_eig_m: f64,
    pub valid: bool,
}

/// Solution set `{P = P0 + sum t_i Z_i}` of the symmetric linear
/// constraint `P (I-A)^{-1} B = C^T`, with `P0` the least-norm particular
/// solution and `Z_i` a Frobenius-orthonormal basis of the homogeneous
/// solutions.
#[derive(Debug, Clone)]
pub struct AffineStorageSet {
    pub particular: DMatrix<f64>,
    pub basis: Vec<DMatrix<f64>>,
    /// Least-squares residual of the particular solution.
    pub residual: f64,
}

impl AffineStorageSet {
    /// The member at coordinates `t`.
    pub fn member(&self, t: &[f64]) -> DMatrix<f64> {
        assert_eq!(t.len(), self.basis.len(), "coordinate count");
        let mut p = self.particular.clone();
        for (ti, z) in t.iter().zip(self.basis.iter()) {
            p += z * *ti;
        }
        p
    }

    /// Frobenius distance from a symmetric matrix to the set.
    pub fn distance_to(&self, p: &DMatrix<f64>) -> f64 {
        let diff = linalg::symmetrize(p) - &self.particular;
        let mut proj = self.particular.clone();
        for z in &self.basis {
            let coeff = (z.transpose() * &diff).trace();
            proj += z * coeff;
        }
        (linalg::symmetrize(p) - proj).norm()
    }
}

/// Which search produced a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Derivative-free search over the storage equality solution set.
    EqualitySearch,
    /// Dykstra-style alternating projections between the affine graph
    /// of `P -> M(P)` and the semidefinite cone.
    AlternatingProjections,
}

impl Route {
    pub fn label(&self) -> &'static str {
        match self {
            Route::EqualitySearch => "A",
            Route::AlternatingProjections => "B",
        }
    }
}

/// Why certification did not produce a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertifyFailure {
    /// Under `det(I - A) != 0` the equality constraint pins down every
    /// admissible storage, and none is valid: the system is provably not
    /// NI with quadratic storage. No claim is made about non-quadratic
    /// storage functions.
    ProvedInfeasible,
    /// The searches are incomplete and ended empty-handed; the property
    /// status is unknown.
    SearchFailed,
    /// The inner system is NI but admits no positive output strictness.
    NoOutputStrictness,
}

impl CertifyFailure {
    pub fn label(&self) -> &'static str {
        match self {
            CertifyFailure::ProvedInfeasible => "proved_infeasible",
            CertifyFailure::SearchFailed => "search_failed",
            CertifyFailure::NoOutputStrictness => "no_output_strictness",
        }
    }
}

/// Result of a certification attempt. Every certificate returned here
/// has been re-verified by direct eigenvalue checks, so an incomplete
/// search can fail to certify but never produces a false certificate.
#[derive(Debug, Clone)]
pub enum CertifyOutcome {
    Certified {
        certificate: StorageCertificate,
        route: Route,
    },
    NotCertified {
        reason: CertifyFailure,
        best: Option<StorageCertificate>,
    },
}

impl CertifyOutcome {
    pub fn is_certified(&self) -> bool {
        matches!(self, CertifyOutcome::Certified { .. })
    }

    pub fn certificate(&self) -> Option<&StorageCertificate> {
        match self {
            CertifyOutcome::Certified { certificate, .. } => Some(certificate),
            CertifyOutcome::NotCertified { .. } => None,
        }
    }
}

fn build_m(sys: &DiscreteStateSpace, p: &DMatrix<f64>) -> DMatrix<f64> {
    let a = sys.a();
    let b = sys.b();
    let c = sys.c();
    let n = sys.order();
    let np = sys.ports();

    let atp = a.transpose() * p;
    let m11 = p - &atp * a;
    let m12 = (a.transpose() - DMatrix::<f64>::identity(n, n)) * c.transpose() - &atp * b;
    let m21 = c * (a - DMatrix::<f64>::identity(n, n)) - b.transpose() * p * a;
    let m22 = c * b + (c * b).transpose() - b.transpose() * p * b;

    let mut m = DMatrix::zeros(n + np, n + np);
    m.view_mut((0, 0), (n, n)).copy_from(&m11);
    m.view_mut((0, n), (n, np)).copy_from(&m12);
    m.view_mut((n, 0), (np, n)).copy_from(&m21);
    m.view_mut((n, n), (np, np)).copy_from(&m22);
    linalg::symmetrize(&m)
}

fn check_storage_dims(sys: &DiscreteStateSpace, p: &DMatrix<f64>) -> Result<()> {
    let n = sys.order();
    if p.nrows() != n || p.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "storage is {}x{}, state dimension {}",
            p.nrows(),
            p.ncols(),
            n
        )));
    }
    linalg::ensure_finite(p, "storage matrix")
}

/// Assembles the dissipation matrix `M(P)` for a strictly proper system.
pub fn dissipation_matrix(
    sys: &DiscreteStateSpace,
    p: &DMatrix<f64>,
) -> Result<DissipationMatrix> {
    sys.require_strictly_proper()?;
    check_storage_dims(sys, p)?;
    Ok(DissipationMatrix {
        m: build_m(sys, &linalg::symmetrize(p)),
    })
}

/// Checks NI with the given quadratic storage: valid iff
/// `lambda_min(P) > 0` and `lambda_min(M(P)) >= -tol_psd * max(1, ||M||)`.
pub fn check_ni_with_p(sys: &DiscreteStateSpace, p: &DMatrix<f64>) -> Result<StorageCertificate> {
    check_ni_with_p_tol(sys, p, TOL_PSD)
}

/// [`check_ni_with_p`] with an explicit PSD tolerance.
pub fn check_ni_with_p_tol(
    sys: &DiscreteStateSpace,
    p: &DMatrix<f64>,
    tol_psd: f64,
) -> Result<StorageCertificate> {
    let m = dissipation_matrix(sys, p)?;
    let p_sym = linalg::symmetrize(p);
    let min_eig_p = linalg::sym_min_eig(&p_sym);
    let min_eig_m = m.min_eig();
    let valid = min_eig_p > 0.0 && min_eig_m >= -tol_psd * psd_scale(m.matrix());
    Ok(StorageCertificate {
        p: p_sym,
        epsilon: None,
        min_eig_p,
        min_eig_m,
        valid,
    })
}

/// Output-strictness weighting matrix `N = [C(A - I), C B]`, so that
/// `y_{k+1} - y_k = N [x; u]` along trajectories.
pub fn strictness_matrix(sys: &DiscreteStateSpace) -> Result<DMatrix<f64>> {
    sys.require_strictly_proper()?;
    let n = sys.order();
    let p = sys.ports();
    let mut nm = DMatrix::zeros(p, n + p);
    nm.view_mut((0, 0), (p, n))
        .copy_from(&(sys.c() * (sys.a() - DMatrix::<f64>::identity(n, n))));
    nm.view_mut((0, n), (p, p)).copy_from(&(sys.c() * sys.b()));
    Ok(nm)
}

/// Checks OSNI with storage `P` and output strictness `eps`: valid iff
/// `lambda_min(P) > 0` and `M(P) - eps N^T N` is positive semidefinite
/// within tolerance. At `eps = 0` this coincides with [`check_ni_with_p`].
pub fn check_osni_with_p(
    sys: &DiscreteStateSpace,
    p: &DMatrix<f64>,
    eps: f64,
) -> Result<StorageCertificate> {
    check_osni_with_p_tol(sys, p, eps, TOL_PSD)
}

/// [`check_osni_with_p`] with an explicit PSD tolerance.
pub fn check_osni_with_p_tol(
    sys: &DiscreteStateSpace,
    p: &DMatrix<f64>,
    eps: f64,
    tol_psd: f64,
) -> Result<StorageCertificate> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::InvalidStorage(format!(
            "output strictness must be a finite nonnegative number, got {eps}"
        )));
    }
    let m = dissipation_matrix(sys, p)?;
    let nm = strictness_matrix(sys)?;
    let m_eps = linalg::symmetrize(&(m.matrix() - nm.transpose() * &nm * eps));
    let p_sym = linalg::symmetrize(p);
    let min_eig_p = linalg::sym_min_eig(&p_sym);
    let min_eig_m = linalg::sym_min_eig(&m_eps);
    let valid = min_eig_p > 0.0 && min_eig_m >= -tol_psd * psd_scale(&m_eps);
    Ok(StorageCertificate {
        p: p_sym,
        epsilon: Some(eps),
        min_eig_p,
        min_eig_m,
        valid,
    })
}

fn pole_at_one(sys: &DiscreteStateSpace) -> bool {
    sys.state_eigenvalues()
        .iter()
        .any(|l| (l - num_complex::Complex64::new(1.0, 0.0)).norm() < TOL_POLE)
}

fn i_minus_a_inv_b(sys: &DiscreteStateSpace) -> Result<DMatrix<f64>> {
    if pole_at_one(sys) {
        return Err(Error::PoleAtOne);
    }
    let n = sys.order();
    let i_a = DMatrix::<f64>::identity(n, n) - sys.a();
    linalg::solve_real(&i_a, sys.b()).ok_or(Error::PoleAtOne)
}

/// Frobenius residual of the output constraint `P (I-A)^{-1} B = C^T`.
pub fn output_constraint_residual(sys: &DiscreteStateSpace, p: &DMatrix<f64>) -> Result<f64> {
    check_storage_dims(sys, p)?;
    let q = i_minus_a_inv_b(sys)?;
    Ok((linalg::symmetrize(p) * q - sys.c().transpose()).norm())
}

/// Smallest eigenvalue of the state-decrease matrix `P - A^T P A`.
pub fn state_decrease_min_eig(sys: &DiscreteStateSpace, p: &DMatrix<f64>) -> f64 {
    let p = linalg::symmetrize(p);
    linalg::sym_min_eig(&(&p - sys.a().transpose() * &p * sys.a()))
}

/// Solves the linear constraint `P (I-A)^{-1} B = C^T` over symmetric
/// `P`, returning the least-norm particular solution and a
/// Frobenius-orthonormal basis of the homogeneous solution space.
///
/// An inconsistent constraint proves that the system admits no quadratic
/// NI storage (when `det(I - A) != 0`).
pub fn solve_storage_equality(sys: &DiscreteStateSpace) -> Result<AffineStorageSet> {
    let n = sys.order();
    let q = i_minus_a_inv_b(sys)?;
    let n1 = linalg::svec_len(n);
    let rows = n * sys.ports();

    let mut k = DMatrix::zeros(rows, n1);
    for idx in 0..n1 {
        let mut e = DVector::zeros(n1);
        e[idx] = 1.0;
        let basis_mat = linalg::smat(&e, n);
        k.set_column(idx, &linalg::vec_row_major(&(basis_mat * &q)));
    }
    let target = linalg::vec_row_major(&sys.c().transpose());

    let svd = k.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * (rows.max(n1) as f64) * 1e-12;
    let s0 = svd
        .solve(&target, cutoff)
        .map_err(|e| Error::NonFinite(e.to_string()))?;
    let s0 = DVector::from_column_slice(s0.as_slice());
    let residual = (&k * &s0 - &target).norm();
    if residual > 1e-8 * (1.0 + target.norm()) {
        return Err(Error::InconsistentConstraint { residual });
    }

    // Null space of K via the spectral decomposition of K^T K; the
    // eigenvectors are orthonormal in packed coordinates, hence the
    // matrices are Frobenius-orthonormal.
    let gram = k.transpose() * &k;
    let eig = linalg::symmetrize(&gram).symmetric_eigen();
    let mut basis = Vec::new();
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= cutoff * cutoff {
            let col = eig.eigenvectors.column(i).into_owned();
            basis.push(linalg::smat(&col, n));
        }
    }

    Ok(AffineStorageSet {
        particular: linalg::smat(&s0, n),
        basis,
        residual,
    })
}

/// Residual of the factorization `M(P) = G^T (P - A^T P A) G` with
/// `G = [-I, (I-A)^{-1} B]`; meaningful only when `P` satisfies the
/// output constraint.
pub fn factorization_residual(sys: &DiscreteStateSpace, p: &DMatrix<f64>) -> Result<f64> {
    let c_residual = output_constraint_residual(sys, p)?;
    if c_residual > 1e-8 * (1.0 + sys.c().norm()) {
        return Err(Error::ConstraintNotSatisfied {
            residual: c_residual,
        });
    }
    let m = dissipation_matrix(sys, p)?;
    let q = i_minus_a_inv_b(sys)?;
    let n = sys.order();
    let np = sys.ports();
    let p_sym = linalg::symmetrize(p);
    let pp = &p_sym - sys.a().transpose() * &p_sym * sys.a();

    let mut g = DMatrix::zeros(n, n + np);
    g.view_mut((0, 0), (n, n))
        .copy_from(&(-DMatrix::<f64>::identity(n, n)));
    g.view_mut((0, n), (n, np)).copy_from(&q);

    Ok((m.matrix() - g.transpose() * pp * g).norm())
}

fn golden_section_max(lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut lo = lo;
    let mut hi = hi;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

fn equality_set_search(sys: &DiscreteStateSpace, set: &AffineStorageSet) -> DMatrix<f64> {
    let dim = set.basis.len();
    if dim == 0 {
        return set.particular.clone();
    }
    let objective = |t: &[f64]| {
        let p = set.member(t);
        linalg::sym_min_eig(&p).min(state_decrease_min_eig(sys, &p))
    };
    let mut t = vec![0.0; dim];
    let base_radius = 4.0 * (1.0 + set.particular.norm());
    for sweep in 0..5 {
        let radius = base_radius / 4f64.powi(sweep);
        for i in 0..dim {
            let center = t[i];
            let best = golden_section_max(center - radius, center + radius, |x| {
                let mut tt = t.clone();
                tt[i] = x;
                objective(&tt)
            });
            t[i] = best;
        }
    }
    set.member(&t)
}

struct GraphProjection {
    /// Columns are `svec(M(E_k) - M(0))` over the packed storage basis.
    l: DMatrix<f64>,
    /// `svec(M(0))`.
    c: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl GraphProjection {
    fn new(sys: &DiscreteStateSpace) -> Option<Self> {
        let n = sys.order();
        let n1 = linalg::svec_len(n);
        let m0 = build_m(sys, &DMatrix::zeros(n, n));
        let c = linalg::svec(&m0);
        let n2 = c.len();
        let mut l = DMatrix::zeros(n2, n1);
        for kidx in 0..n1 {
            let mut e = DVector::zeros(n1);
            e[kidx] = 1.0;
            let mk = build_m(sys, &linalg::smat(&e, n)) - &m0;
            l.set_column(kidx, &linalg::svec(&mk));
        }
        let normal = DMatrix::<f64>::identity(n1, n1) + l.transpose() * &l;
        let chol = normal.cholesky()?;
        Some(Self { l, c, chol })
    }

    /// Projects a packed pair onto the graph `{(p, L p + c)}`.
    fn project(&self, p: &DVector<f64>, m: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let rhs = p + self.l.transpose() * (m - &self.c);
        let proj_p = self.chol.solve(&rhs);
        let proj_m = &self.l * &proj_p + &self.c;
        (proj_p, proj_m)
    }
}

const ROUTE_B_DELTA: f64 = 1e-8;
const ROUTE_B_MAX_ITERS: usize = 5000;

fn alternating_projection_search(sys: &DiscreteStateSpace) -> Option<StorageCertificate> {
    let n = sys.order();
    let np = n + sys.ports();
    let graph = GraphProjection::new(sys)?;

    let start = DMatrix::<f64>::identity(n, n);
    let mut x_p = linalg::svec(&start);
    let mut x_m = linalg::svec(&build_m(sys, &start));
    let mut inc_a_p = DVector::zeros(x_p.len());
    let mut inc_a_m = DVector::zeros(x_m.len());
    let mut inc_c_p = DVector::zeros(x_p.len());
    let mut inc_c_m = DVector::zeros(x_m.len());

    let mut best: Option<(f64, StorageCertificate)> = None;
    for _ in 0..ROUTE_B_MAX_ITERS {
        let (a_p, a_m) = graph.project(&(&x_p + &inc_a_p), &(&x_m + &inc_a_m));
        inc_a_p = &x_p + &inc_a_p - &a_p;
        inc_a_m = &x_m + &inc_a_m - &a_m;

        // The affine iterate carries a true pair (P, M(P)); test it.
        let p_cand = linalg::smat(&a_p, n);
        if let Ok(cert) = check_ni_with_p(sys, &p_cand) {
            let merit = cert.min_eig_p.min(cert.min_eig_m);
            if best.as_ref().map_or(true, |(m, _)| merit > *m) {
                best = Some((merit, cert.clone()));
            }
            if cert.valid {
                return Some(cert);
            }
        }

        let w_p = linalg::smat(&(&a_p + &inc_c_p), n);
        let w_m = linalg::smat(&(&a_m + &inc_c_m), np);
        let proj_p = linalg::clip_eigenvalues(&w_p, ROUTE_B_DELTA);
        let proj_m = linalg::clip_eigenvalues(&w_m, 0.0);
        let new_x_p = linalg::svec(&proj_p);
        let new_x_m = linalg::svec(&proj_m);
        inc_c_p = &a_p + &inc_c_p - &new_x_p;
        inc_c_m = &a_m + &inc_c_m - &new_x_m;
        x_p = new_x_p;
        x_m = new_x_m;
    }
    best.map(|(_, cert)| cert)
}

/// Searches for a quadratic NI storage.
///
/// Route A (whenever `det(I - A) != 0`): derivative-free golden-section
/// sweeps over the storage equality solution set, maximizing
/// `min(lambda_min(P), lambda_min(P - A^T P A))`. Route B (fallback):
/// Dykstra alternating projections between the affine graph of
/// `P -> M(P)` and the cone `{P >= delta I, M >= 0}`. Returned
/// certificates are always re-verified by direct eigenvalue checks.
pub fn certify_ni(sys: &DiscreteStateSpace) -> Result<CertifyOutcome> {
    sys.require_strictly_proper()?;

    let mut best_a: Option<StorageCertificate> = None;
    match solve_storage_equality(sys) {
        Ok(set) => {
            let cand = equality_set_search(sys, &set);
            let cert = check_ni_with_p(sys, &cand)?;
            if cert.valid {
                return Ok(CertifyOutcome::Certified {
                    certificate: cert,
                    route: Route::EqualitySearch,
                });
            }
            if set.basis.is_empty() {
                // The constraint has a unique solution and it fails: no
                // quadratic storage exists.
                return Ok(CertifyOutcome::NotCertified {
                    reason: CertifyFailure::ProvedInfeasible,
                    best: Some(cert),
                });
            }
            best_a = Some(cert);
        }
        Err(Error::InconsistentConstraint { .. }) => {
            return Ok(CertifyOutcome::NotCertified {
                reason: CertifyFailure::ProvedInfeasible,
                best: None,
            });
        }
        Err(Error::PoleAtOne) => {}
        Err(e) => return Err(e),
    }

    match alternating_projection_search(sys) {
        Some(cert) if cert.valid => Ok(CertifyOutcome::Certified {
            certificate: cert,
            route: Route::AlternatingProjections,
        }),
        best_b => {
            let best = match (best_a, best_b) {
                (Some(a), Some(b)) => Some(if a.min_eig_m >= b.min_eig_m { a } else { b }),
                (a, b) => a.or(b),
            };
            Ok(CertifyOutcome::NotCertified {
                reason: CertifyFailure::SearchFailed,
                best,
            })
        }
    }
}

/// Supremum of admissible output strictness for a certified storage,
/// located by doubling and bisection to 1e-6 absolute; the returned
/// value itself was verified feasible.
pub fn max_output_strictness(sys: &DiscreteStateSpace, p: &DMatrix<f64>) -> Result<f64> {
    let base = check_ni_with_p(sys, p)?;
    if !base.valid {
        return Err(Error::InvalidStorage(
            "storage does not certify the NI property".into(),
        ));
    }
    let valid_at = |eps: f64| -> Result<bool> { Ok(check_osni_with_p(sys, p, eps)?.valid) };

    let mut lo = 0.0;
    let mut hi = 1.0;
    while valid_at(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return Ok(f64::INFINITY);
        }
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if valid_at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Inner realization recovered from a step-advanced system.
#[derive(Debug, Clone)]
pub struct StepAdvanceRecovery {
    /// Strictly proper system whose output lags the wrapped one by a step.
    pub inner: DiscreteStateSpace,
    /// `||D - C A^{-1} B||`, the feedthrough consistency residual.
    pub residual: f64,
}

/// Recovers the inner realization `(A, B, C A^{-1})` of a step-advanced
/// system; accepts iff the feedthrough satisfies `D = (C A^{-1}) B`.
/// A numerically singular `A` is reported, not guessed around.
pub fn recover_step_advance(sys: &DiscreteStateSpace) -> Result<StepAdvanceRecovery> {
    let sv = sys.a().clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if smax <= 0.0 || smin <= 1e-9 * smax {
        return Err(Error::SingularA {
            ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }
    let xt = linalg::solve_real(&sys.a().transpose(), &sys.c().transpose()).ok_or(
        Error::SingularA {
            ratio: smin / smax,
        },
    )?;
    let c_hat = xt.transpose();
    let residual = (sys.d() - &c_hat * sys.b()).norm();
    if residual > 1e-8 * (1.0 + sys.d().norm()) {
        return Err(Error::NotStepAdvance { residual });
    }
    let inner = DiscreteStateSpace::strictly_proper(sys.a().clone(), sys.b().clone(), c_hat)?;
    Ok(StepAdvanceRecovery { inner, residual })
}

/// Certification result for a step-advanced system.
#[derive(Debug, Clone)]
pub struct StepAdvanceCertification {
    pub inner: DiscreteStateSpace,
    pub consistency_residual: f64,
    pub outcome: CertifyOutcome,
    /// Verified output strictness of the inner system (SAOSNI only).
    pub strictness: Option<f64>,
}

/// SANI: recovers the inner system and certifies it NI.
pub fn certify_sani(sys: &DiscreteStateSpace) -> Result<StepAdvanceCertification> {
    let rec = recover_step_advance(sys)?;
    let outcome = certify_ni(&rec.inner)?;
    Ok(StepAdvanceCertification {
        inner: rec.inner,
        consistency_residual: rec.residual,
        outcome,
        strictness: None,
    })
}

/// SAOSNI: recovers the inner system, certifies it NI and requires a
/// positive verified output strictness.
pub fn certify_saosni(sys: &DiscreteStateSpace) -> Result<StepAdvanceCertification> {
    let rec = recover_step_advance(sys)?;
    let outcome = certify_ni(&rec.inner)?;
    let (outcome, strictness) = match outcome {
        CertifyOutcome::Certified { certificate, route } => {
            let eps = max_output_strictness(&rec.inner, &certificate.p)?;
            if eps > 0.0 {
                let mut certificate = certificate;
                certificate.epsilon = Some(eps);
                (CertifyOutcome::Certified { certificate, route }, Some(eps))
            } else {
                (
                    CertifyOutcome::NotCertified {
                        reason: CertifyFailure::NoOutputStrictness,
                        best: Some(certificate),
                    },
                    None,
                )
            }
        }
        other => (other, None),
    };
    Ok(StepAdvanceCertification {
        inner: rec.inner,
        consistency_residual: rec.residual,
        outcome,
        strictness,
    })
}

/// A sampled violation of the dissipation inequality.
#[derive(Debug, Clone)]
pub struct AuditViolation {
    pub index: u64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// `2 (dV - u^T dy) + eps ||dy||^2`; positive means the inequality
    /// failed at this sample.
    pub defect: f64,
}

/// Trajectory-level dissipation audit over `count` sampled state-input
/// pairs.
///
/// Evaluates the one-step defect
/// `2 (V(f(x,u)) - V(x)) - 2 u^T (h(f(x,u)) - h(x)) + eps ||dy||^2`
/// and records samples where it exceeds `1e-9 * scale`. The strictness
/// `eps` uses the same convention as the OSNI matrix test, so a
/// certificate with strictness `eps` must audit clean at that `eps`.
/// Samples are independent; with `parallel` the loop fans out while the
/// index-keyed sampler keeps results deterministic.
pub fn audit_dissipation<F, H, V, S>(
    f: F,
    h: H,
    v: V,
    eps: f64,
    sampler: S,
    count: u64,
    parallel: bool,
) -> Result<Vec<AuditViolation>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Sync,
    H: Fn(&DVector<f64>) -> DVector<f64> + Sync,
    V: Fn(&DVector<f64>) -> f64 + Sync,
    S: Fn(u64) -> (DVector<f64>, DVector<f64>) + Sync,
{
    let eval_one = |i: u64| -> Result<Option<AuditViolation>> {
        let (x, u) = sampler(i);
        let x_next = f(&x, &u);
        let y0 = h(&x);
        let y1 = h(&x_next);
        let dv = v(&x_next) - v(&x);
        let dy = &y1 - &y0;
        let work = u.dot(&dy);
        let strict = eps * dy.norm_squared();
        let defect = 2.0 * (dv - work) + strict;
        if !defect.is_finite() {
            return Err(Error::NonFiniteEvaluation { index: i });
        }
        let scale = 1.0 + 2.0 * dv.abs() + 2.0 * work.abs() + strict;
        Ok((defect > 1e-9 * scale).then_some(AuditViolation {
            index: i,
            x,
            u,
            defect,
        }))
    };

    let collected: Result<Vec<Option<AuditViolation>>> = if parallel {
        (0..count).into_par_iter().map(eval_one).collect()
    } else {
        (0..count).map(eval_one).collect()
    };
    Ok(collected?.into_iter().flatten().collect())
}

/// Deterministic uniform sampler on `[-range, range]` pairs, keyed by
/// sample index so results do not depend on evaluation order.
pub fn uniform_pair_sampler(
    n: usize,
    p: usize,
    range: f64,
    seed: u64,
) -> impl Fn(u64) -> (DVector<f64>, DVector<f64>) + Sync {
    move |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i.wrapping_add(1));
        let x = DVector::from_fn(n, |_, _| rng.random_range(-range..=range));
        let u = DVector::from_fn(p, |_, _| rng.random_range(-range..=range));
        (x, u)
    }
}

/// Dissipation audit of a strictly proper linear system with quadratic
/// storage `1/2 x^T P x`, sampling uniformly from `[-range, range]`.
pub fn audit_linear(
    sys: &DiscreteStateSpace,
    p: &DMatrix<f64>,
    eps: f64,
    count: u64,
    range: f64,
    seed: u64,
    parallel: bool,
) -> Result<Vec<AuditViolation>> {
    sys.require_strictly_proper()?;
    check_storage_dims(sys, p)?;
    let a = sys.a().clone();
    let b = sys.b().clone();
    let c = sys.c().clone();
    let pm = linalg::symmetrize(p);
    let sampler = uniform_pair_sampler(sys.order(), sys.ports(), range, seed);
    audit_dissipation(
        move |x, u| &a * x + &b * u,
        move |x| &c * x,
        move |x| 0.5 * (x.transpose() * &pm * x)[(0, 0)],
        eps,
        sampler,
        count,
        parallel,
    )
}
