//! Zero-order-hold discretization of continuous plants, plus the
//! algebraic continuous-time NI audit.
//!
//! ZOH is realized through a single primitive, the matrix exponential of
//! the augmented matrix `[[A, B], [0, 0]] * T`: holding the input
//! constant over each period makes this exact for linear dynamics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::ss::{ContinuousStateSpace, DiscreteStateSpace};

/// Sampling period in seconds; strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePeriod(f64);

impl SamplePeriod {
    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 {
            Ok(Self(t))
        } else {
            Err(Error::NonFinite(format!("sample period must be > 0, got {t}")))
        }
    }

    pub fn seconds(&self) -> f64 {
        self.0
    }
}

/// Quadratic storage `V(x) = 1/2 x^T P x` for a continuous plant;
/// `P` is symmetrized on construction and must be positive definite.
#[derive(Debug, Clone)]
pub struct ContinuousQuadraticStorage {
    p: DMatrix<f64>,
}

impl ContinuousQuadraticStorage {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::DimensionMismatch("storage matrix must be square".into()));
        }
        linalg::ensure_finite(&p, "P")?;
        let p = linalg::symmetrize(&p);
        if !linalg::is_positive_definite(&p) {
            return Err(Error::NotPositiveDefinite(
                "continuous storage matrix".into(),
            ));
        }
        Ok(Self { p })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }
}

// Pade-13 coefficients from Higham's scaling-and-squaring method.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with the order-13 diagonal
/// Pade approximant.
pub fn matrix_exponential(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if mat.nrows() != mat.ncols() {
        return Err(Error::DimensionMismatch("exp needs a square matrix".into()));
    }
    linalg::ensure_finite(mat, "matrix exponential argument")?;
    let n = mat.nrows();
    let norm = one_norm(mat);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    if squarings > 1020 {
        return Err(Error::Overflow);
    }
    let a = mat / 2f64.powi(squarings);

    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;
    let u = &a
        * (&a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
            + &a6 * b[7]
            + &a4 * b[5]
            + &a2 * b[3]
            + &ident * b[1]);
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or(Error::Overflow)?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().all(|x| x.is_finite()) {
        Ok(r)
    } else {
        Err(Error::Overflow)
    }
}

/// ZOH discretization: `A_d, B_d` are the top blocks of
/// `exp([[A, B], [0, 0]] T)`; the output map carries over and `D = 0`.
pub fn discretize_zoh(
    csys: &ContinuousStateSpace,
    period: SamplePeriod,
) -> Result<DiscreteStateSpace> {
    let n = csys.order();
    let p = csys.ports();
    let t = period.seconds();

    let mut aug = DMatrix::zeros(n + p, n + p);
    aug.view_mut((0, 0), (n, n)).copy_from(csys.a());
    aug.view_mut((0, n), (n, p)).copy_from(csys.b());
    let e = matrix_exponential(&(aug * t))?;

    let a_d = e.view((0, 0), (n, n)).into_owned();
    let b_d = e.view((0, n), (n, p)).into_owned();
    DiscreteStateSpace::strictly_proper(a_d, b_d, csys.c().clone())
}

/// Verdict of the algebraic continuous-time NI audit.
#[derive(Debug, Clone)]
pub struct ContinuousAuditVerdict {
    pub pass: bool,
    pub min_eig: f64,
    pub tol: f64,
}

/// Checks `d/dt(1/2 x^T P x) <= u^T ydot` for all `(x, u)`.
///
/// For linear dynamics with quadratic storage this reduces to positive
/// semidefiniteness of the quadratic form
/// `[[-(A^T P + P A)/2, (A^T C^T - P B)/2], [., (C B + B^T C^T)/2]]`
/// on the stacked `(x, u)` vector.
pub fn audit_continuous_ni(
    csys: &ContinuousStateSpace,
    storage: &ContinuousQuadraticStorage,
) -> Result<ContinuousAuditVerdict> {
    let n = csys.order();
    let p = csys.ports();
    let pm = storage.matrix();
    if pm.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "storage is {}x{}, state dimension {}",
            pm.nrows(),
            pm.ncols(),
            n
        )));
    }
    let a = csys.a();
    let b = csys.b();
    let c = csys.c();

    let top_left = -(a.transpose() * pm + pm * a) * 0.5;
    let top_right = (a.transpose() * c.transpose() - pm * b) * 0.5;
    let bottom_right = (c * b + (c * b).transpose()) * 0.5;

    let mut q = DMatrix::zeros(n + p, n + p);
    q.view_mut((0, 0), (n, n)).copy_from(&top_left);
    q.view_mut((0, n), (n, p)).copy_from(&top_right);
    q.view_mut((n, 0), (p, n)).copy_from(&top_right.transpose());
    q.view_mut((n, n), (p, p)).copy_from(&bottom_right);

    let min_eig = linalg::sym_min_eig(&q);
    let tol = 1e-9 * q.norm().max(1.0);
    Ok(ContinuousAuditVerdict {
        pass: min_eig >= -tol,
        min_eig,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar_cont(a: f64, b: f64, c: f64) -> ContinuousStateSpace {
        ContinuousStateSpace::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
        )
        .unwrap()
    }

    fn undamped_spring() -> ContinuousStateSpace {
        ContinuousStateSpace::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = matrix_exponential(&DMatrix::zeros(3, 3)).unwrap();
        assert!((e - DMatrix::<f64>::identity(3, 3)).norm() < 1e-15);
    }

    #[test]
    fn exp_of_nilpotent_terminates() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.7, 0.0, 0.0]);
        let e = matrix_exponential(&m).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.7, 0.0, 1.0]);
        assert!((e - expected).norm() < 1e-14);
    }

    #[test]
    fn exp_scalar_log_two() {
        let m = DMatrix::from_element(1, 1, -(2f64.ln()));
        let e = matrix_exponential(&m).unwrap();
        assert_abs_diff_eq!(e[(0, 0)], 0.5, epsilon = 1e-11 * 0.5);
    }

    #[test]
    fn exp_large_norm_uses_squaring() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 20.0, -20.0, 0.0]);
        let e = matrix_exponential(&m).unwrap();
        // rotation by 20 rad
        assert_abs_diff_eq!(e[(0, 0)], 20f64.cos(), epsilon = 1e-11);
        assert_abs_diff_eq!(e[(0, 1)], 20f64.sin(), epsilon = 1e-11);
    }

    #[test]
    fn exp_overflow_is_reported() {
        let m = DMatrix::from_element(1, 1, 1e10);
        assert!(matches!(matrix_exponential(&m), Err(Error::Overflow)));
    }

    #[test]
    fn zoh_scalar_lag() {
        let d = discretize_zoh(&scalar_cont(-1.0, 1.0, 1.0), SamplePeriod::new(2f64.ln()).unwrap())
            .unwrap();
        assert_abs_diff_eq!(d.a()[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.b()[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.c()[(0, 0)], 1.0);
    }

    #[test]
    fn zoh_integrator() {
        let d = discretize_zoh(&scalar_cont(0.0, 1.0, 1.0), SamplePeriod::new(0.25).unwrap())
            .unwrap();
        assert_abs_diff_eq!(d.a()[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d.b()[(0, 0)], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn zoh_undamped_spring_quarter_period() {
        let d = discretize_zoh(
            &undamped_spring(),
            SamplePeriod::new(std::f64::consts::FRAC_PI_2).unwrap(),
        )
        .unwrap();
        let a_expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let b_expected = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!((d.a() - a_expected).norm() < 1e-12);
        assert!((d.b() - b_expected).norm() < 1e-12);
    }

    #[test]
    fn continuous_audit_fixtures() {
        let p1 = ContinuousQuadraticStorage::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let v = audit_continuous_ni(&scalar_cont(-1.0, 1.0, 1.0), &p1).unwrap();
        assert!(v.pass);

        let p_eye = ContinuousQuadraticStorage::new(DMatrix::identity(2, 2)).unwrap();
        let v = audit_continuous_ni(&undamped_spring(), &p_eye).unwrap();
        assert!(v.pass);
        assert_abs_diff_eq!(v.min_eig, 0.0, epsilon = 1e-12);

        let v = audit_continuous_ni(&scalar_cont(1.0, 1.0, -1.0), &p1).unwrap();
        assert!(!v.pass);
    }

    #[test]
    fn invalid_period_rejected() {
        assert!(SamplePeriod::new(0.0).is_err());
        assert!(SamplePeriod::new(-1.0).is_err());
        assert!(SamplePeriod::new(f64::NAN).is_err());
    }

    #[test]
    fn storage_must_be_positive_definite() {
        assert!(ContinuousQuadraticStorage::new(DMatrix::from_element(1, 1, -1.0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Semigroup: A_d(2T) = A_d(T)^2.
        #[test]
        fn zoh_semigroup(
            av in proptest::collection::vec(-1.0..1.0f64, 4),
            t in 0.05..1.5f64,
        ) {
            let a = DMatrix::from_row_slice(2, 2, &av);
            let csys = ContinuousStateSpace::new(
                a,
                DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            ).unwrap();
            let d1 = discretize_zoh(&csys, SamplePeriod::new(t).unwrap()).unwrap();
            let d2 = discretize_zoh(&csys, SamplePeriod::new(2.0 * t).unwrap()).unwrap();
            let sq = d1.a() * d1.a();
            prop_assert!((d2.a() - &sq).norm() < 1e-10 * (1.0 + sq.norm()));
        }

        /// T -> 0 continuity: A_d -> I and B_d -> 0 linearly in T.
        #[test]
        fn zoh_small_period_limit(
            av in proptest::collection::vec(-1.0..1.0f64, 4),
            bv in proptest::collection::vec(-1.0..1.0f64, 2),
        ) {
            let a = DMatrix::from_row_slice(2, 2, &av);
            let b = DMatrix::from_row_slice(2, 1, &bv);
            let csys = ContinuousStateSpace::new(
                a.clone(), b.clone(),
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            ).unwrap();
            for &t in &[1e-3, 1e-4, 1e-5] {
                let d = discretize_zoh(&csys, SamplePeriod::new(t).unwrap()).unwrap();
                prop_assert!((d.a() - DMatrix::<f64>::identity(2, 2)).norm() <= 2.0 * t * a.norm().max(1.0));
                prop_assert!(d.b().norm() <= 2.0 * t * b.norm().max(1.0));
            }
        }
    }
}
