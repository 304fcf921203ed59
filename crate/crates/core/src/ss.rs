//! State-space model types, transfer-function evaluation and structural
//! checks (minimality, poles).
//!
//! All types are immutable values after construction; operations may run
//! concurrently on shared inputs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;

/// Default eigenvalue-distance tolerance below which an evaluation point
/// counts as a pole.
pub const TOL_POLE: f64 = 1e-9;

/// Condition-estimate cap beyond which `zI - A` counts as numerically
/// singular.
pub const COND_SINGULAR: f64 = 1e12;

/// Discrete-time linear system `x_{k+1} = A x_k + B u_k`,
/// `y_k = C x_k + D u_k` with a square `p x p` port.
///
/// `D` is zero for plain NI plants; step-advanced (SANI/SAOSNI)
/// realizations carry `D = C_inner * B`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

/// Continuous-time strictly proper plant `xdot = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousStateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

fn check_dims(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<(usize, usize)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::DimensionMismatch("state dimension must be >= 1".into()));
    }
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "B has {} rows, expected {}",
            b.nrows(),
            n
        )));
    }
    let p = b.ncols();
    if p == 0 {
        return Err(Error::DimensionMismatch("port dimension must be >= 1".into()));
    }
    if c.nrows() != p || c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "C is {}x{}, expected {}x{}",
            c.nrows(),
            c.ncols(),
            p,
            n
        )));
    }
    Ok((n, p))
}

impl DiscreteStateSpace {
    /// Builds a system, validating dimensions and finiteness.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let (_, p) = check_dims(&a, &b, &c)?;
        if d.nrows() != p || d.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                p,
                p
            )));
        }
        for (m, name) in [(&a, "A"), (&b, "B"), (&c, "C"), (&d, "D")] {
            linalg::ensure_finite(m, name)?;
        }
        Ok(Self { a, b, c, d })
    }

    /// Builds a strictly proper system (`D = 0`).
    pub fn strictly_proper(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let p = b.ncols();
        let d = DMatrix::zeros(p, p);
        Self::new(a, b, c, d)
    }

    /// Scalar shorthand used throughout the tests: `(a, b, c, d)` in R^1.
    pub fn scalar(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, d),
        )
        .expect("scalar system")
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// State dimension `n`.
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// Port dimension `p` (inputs = outputs).
    pub fn ports(&self) -> usize {
        self.b.ncols()
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.d.iter().all(|&x| x == 0.0)
    }

    /// Errors unless `D = 0`.
    pub fn require_strictly_proper(&self) -> Result<()> {
        if self.is_strictly_proper() {
            Ok(())
        } else {
            Err(Error::NotStrictlyProper)
        }
    }

    /// Eigenvalues of `A`.
    pub fn state_eigenvalues(&self) -> DVector<Complex64> {
        self.a.complex_eigenvalues()
    }
}

impl ContinuousStateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        check_dims(&a, &b, &c)?;
        for (m, name) in [(&a, "A"), (&b, "B"), (&c, "C")] {
            linalg::ensure_finite(m, name)?;
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn ports(&self) -> usize {
        self.b.ncols()
    }
}

/// A transfer-matrix sample: the point `z` and `G(z) = C (zI-A)^{-1} B + D`.
#[derive(Debug, Clone)]
pub struct TransferEval {
    pub z: Complex64,
    pub value: DMatrix<Complex64>,
}

/// Evaluates `G(z) = C (zI - A)^{-1} B + D` by a linear solve.
///
/// The caller must keep `z` at least `TOL_POLE` away (in eigenvalue
/// distance) from the spectrum of `A`; a numerically singular `zI - A`
/// (condition estimate above `COND_SINGULAR`) is reported as
/// `SingularEvaluation`.
pub fn eval_transfer(sys: &DiscreteStateSpace, z: Complex64) -> Result<TransferEval> {
    let min_dist = sys
        .state_eigenvalues()
        .iter()
        .map(|l| (l - z).norm())
        .fold(f64::INFINITY, f64::min);
    if min_dist < TOL_POLE {
        let cond = if min_dist > 0.0 { 1.0 / min_dist } else { f64::INFINITY };
        return Err(Error::SingularEvaluation { cond });
    }
    let n = sys.order();
    let zi_a = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        let diag = if i == j { z } else { Complex64::new(0.0, 0.0) };
        diag - Complex64::new(sys.a[(i, j)], 0.0)
    });
    let cond = linalg::condition_estimate(&zi_a);
    if !cond.is_finite() || cond > COND_SINGULAR {
        return Err(Error::SingularEvaluation { cond });
    }
    let bc = linalg::to_complex(&sys.b);
    let x = linalg::solve_complex(&zi_a, &bc).ok_or(Error::SingularEvaluation { cond })?;
    let value = linalg::to_complex(&sys.c) * x + linalg::to_complex(&sys.d);
    Ok(TransferEval { z, value })
}

/// Fast-path evaluation without the condition estimate; used by grid
/// sweeps that have already excluded pole neighbourhoods.
pub(crate) fn eval_transfer_unchecked(
    sys: &DiscreteStateSpace,
    z: Complex64,
) -> Result<DMatrix<Complex64>> {
    let n = sys.order();
    let zi_a = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        let diag = if i == j { z } else { Complex64::new(0.0, 0.0) };
        diag - Complex64::new(sys.a[(i, j)], 0.0)
    });
    let bc = linalg::to_complex(&sys.b);
    let x = linalg::solve_complex(&zi_a, &bc)
        .ok_or(Error::SingularEvaluation { cond: f64::INFINITY })?;
    Ok(linalg::to_complex(&sys.c) * x + linalg::to_complex(&sys.d))
}

/// DC gain `G(1)`, verified real (imaginary parts below 1e-12) and
/// returned as a real matrix.
pub fn dc_gain(sys: &DiscreteStateSpace) -> Result<DMatrix<f64>> {
    let one = Complex64::new(1.0, 0.0);
    let min_dist = sys
        .state_eigenvalues()
        .iter()
        .map(|l| (l - one).norm())
        .fold(f64::INFINITY, f64::min);
    if min_dist < TOL_POLE {
        return Err(Error::PoleAtOne);
    }
    let eval = eval_transfer(sys, one)?;
    let max_imag = eval.value.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if max_imag >= 1e-12 {
        return Err(Error::ComplexSpectrum(max_imag));
    }
    Ok(eval.value.map(|v| v.re))
}

/// Feedthrough limit `L = lim_{z->inf} z G(z) = C B` for strictly proper
/// systems.
pub fn feedthrough_limit(sys: &DiscreteStateSpace) -> Result<DMatrix<f64>> {
    sys.require_strictly_proper()?;
    Ok(&sys.c * &sys.b)
}

/// Controllability/observability report with singular-value ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalityReport {
    pub controllable: bool,
    pub observable: bool,
    pub ctrb_rank: usize,
    pub obsv_rank: usize,
    pub order: usize,
}

impl MinimalityReport {
    pub fn minimal(&self) -> bool {
        self.controllable && self.observable
    }
}

/// Ranks of the controllability and observability block matrices via
/// singular values; rank threshold `n * sigma_max * 1e-10`.
pub fn minimality(sys: &DiscreteStateSpace) -> MinimalityReport {
    let n = sys.order();
    let p = sys.ports();

    let mut ctrb = DMatrix::zeros(n, n * p);
    let mut block = sys.b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * p), (n, p)).copy_from(&block);
        block = &sys.a * block;
    }

    let mut obsv = DMatrix::zeros(n * p, n);
    let mut row = sys.c.clone();
    for k in 0..n {
        obsv.view_mut((k * p, 0), (p, n)).copy_from(&row);
        row = row * &sys.a;
    }

    let rank_of = |m: &DMatrix<f64>| {
        let smax = m.clone().svd(false, false).singular_values.max();
        linalg::rank_with_threshold(m, n as f64 * smax * 1e-10)
    };
    let ctrb_rank = rank_of(&ctrb);
    let obsv_rank = rank_of(&obsv);
    MinimalityReport {
        controllable: ctrb_rank == n,
        observable: obsv_rank == n,
        ctrb_rank,
        obsv_rank,
        order: n,
    }
}

/// A pole of the transfer matrix (eigenvalue of `A`) with its clustered
/// multiplicity.
#[derive(Debug, Clone)]
pub struct Pole {
    pub value: Complex64,
    pub multiplicity: usize,
    pub on_unit_circle: bool,
}

/// Pole listing sorted by modulus descending.
#[derive(Debug, Clone)]
pub struct PoleReport {
    pub poles: Vec<Pole>,
    pub all_inside_or_on_unit_circle: bool,
    pub max_modulus: f64,
}

/// Eigenvalues of `A` with multiplicities (clustered at relative
/// distance 1e-7), sorted by modulus descending; the stability flag is
/// true iff the maximum modulus is at most `1 + 1e-9`.
pub fn poles(sys: &DiscreteStateSpace) -> PoleReport {
    let eigs = sys.state_eigenvalues();
    let max_modulus = eigs.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let cluster_tol = 1e-7 * max_modulus.max(1.0);

    let mut remaining: Vec<Complex64> = eigs.iter().copied().collect();
    remaining.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap()
            .then(a.re.partial_cmp(&b.re).unwrap())
            .then(a.im.partial_cmp(&b.im).unwrap())
    });

    let mut poles_out: Vec<Pole> = Vec::new();
    for l in remaining {
        match poles_out
            .iter_mut()
            .find(|p| (p.value - l).norm() <= cluster_tol)
        {
            Some(p) => p.multiplicity += 1,
            None => poles_out.push(Pole {
                value: l,
                multiplicity: 1,
                on_unit_circle: (l.norm() - 1.0).abs() <= 1e-9,
            }),
        }
    }

    PoleReport {
        poles: poles_out,
        all_inside_or_on_unit_circle: max_modulus <= 1.0 + 1e-9,
        max_modulus,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    pub(crate) fn s1() -> DiscreteStateSpace {
        DiscreteStateSpace::scalar(0.5, 0.5, 1.0, 0.0)
    }

    fn s2() -> DiscreteStateSpace {
        DiscreteStateSpace::scalar(0.5, 1.0, 2.0, 0.0)
    }

    fn oscillator() -> DiscreteStateSpace {
        DiscreteStateSpace::strictly_proper(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn dimension_validation() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(2, 1);
        let c_bad = DMatrix::zeros(1, 3);
        assert!(matches!(
            DiscreteStateSpace::strictly_proper(a, b, c_bad),
            Err(Error::DimensionMismatch(_))
        ));
        let nonfinite = DMatrix::from_element(1, 1, f64::NAN);
        assert!(matches!(
            DiscreteStateSpace::strictly_proper(
                nonfinite,
                DMatrix::from_element(1, 1, 1.0),
                DMatrix::from_element(1, 1, 1.0)
            ),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn eval_transfer_scalar_closed_form() {
        // G(z) = CB/(z - A) = 0.5/(z - 0.5)
        let g1 = eval_transfer(&s1(), Complex64::new(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(g1.value[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g1.value[(0, 0)].im, 0.0, epsilon = 1e-12);

        let g2 = eval_transfer(&s1(), Complex64::new(2.0, 0.0)).unwrap();
        assert_abs_diff_eq!(g2.value[(0, 0)].re, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn eval_transfer_zero_output_map() {
        let sys = DiscreteStateSpace::strictly_proper(
            DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.0, 0.2]),
            DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            DMatrix::zeros(1, 2),
        )
        .unwrap();
        let g = eval_transfer(&sys, Complex64::new(0.9, 1.3)).unwrap();
        assert!(g.value.norm() == 0.0);
    }

    #[test]
    fn eval_transfer_rejects_near_pole() {
        let err = eval_transfer(&s1(), Complex64::new(0.5 + 1e-15, 0.0));
        assert!(matches!(err, Err(Error::SingularEvaluation { .. })));
    }

    #[test]
    fn dc_gain_fixtures() {
        assert_abs_diff_eq!(dc_gain(&s1()).unwrap()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dc_gain(&s2()).unwrap()[(0, 0)], 4.0, epsilon = 1e-12);
        let no_input = DiscreteStateSpace::scalar(0.5, 0.0, 1.0, 0.0);
        assert_eq!(dc_gain(&no_input).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn dc_gain_pole_at_one() {
        let integrator = DiscreteStateSpace::scalar(1.0, 1.0, 1.0, 0.0);
        assert!(matches!(dc_gain(&integrator), Err(Error::PoleAtOne)));
    }

    #[test]
    fn feedthrough_limit_fixtures() {
        assert_abs_diff_eq!(feedthrough_limit(&s1()).unwrap()[(0, 0)], 0.5);
        assert_abs_diff_eq!(feedthrough_limit(&oscillator()).unwrap()[(0, 0)], 1.0);
        let no_input = DiscreteStateSpace::scalar(0.5, 0.0, 1.0, 0.0);
        assert_eq!(feedthrough_limit(&no_input).unwrap()[(0, 0)], 0.0);
        let with_d = DiscreteStateSpace::scalar(0.5, 0.5, 0.25, 0.25);
        assert!(matches!(
            feedthrough_limit(&with_d),
            Err(Error::NotStrictlyProper)
        ));
    }

    #[test]
    fn minimality_fixtures() {
        let r = minimality(&s1());
        assert!(r.minimal());
        assert_eq!((r.ctrb_rank, r.obsv_rank), (1, 1));

        let uncontrollable = DiscreteStateSpace::scalar(0.5, 0.0, 1.0, 0.0);
        let r = minimality(&uncontrollable);
        assert!(!r.controllable);
        assert!(r.observable);

        let r = minimality(&oscillator());
        assert!(r.minimal());
        assert_eq!((r.ctrb_rank, r.obsv_rank), (2, 2));
    }

    #[test]
    fn pole_report_fixtures() {
        let r = poles(&s1());
        assert_eq!(r.poles.len(), 1);
        assert_abs_diff_eq!(r.poles[0].value.re, 0.5, epsilon = 1e-12);
        assert!(r.all_inside_or_on_unit_circle);

        let r = poles(&oscillator());
        assert_eq!(r.poles.len(), 2);
        assert!(r.poles.iter().all(|p| p.on_unit_circle));
        assert!(r.all_inside_or_on_unit_circle);
        let im: Vec<f64> = r.poles.iter().map(|p| p.value.im).collect();
        assert!(im.contains(&1.0) || im.iter().any(|x| (x - 1.0).abs() < 1e-9));
        assert!(im.iter().any(|x| (x + 1.0).abs() < 1e-9));

        let unstable = DiscreteStateSpace::scalar(2.0, 1.0, 1.0, 0.0);
        let r = poles(&unstable);
        assert!(!r.all_inside_or_on_unit_circle);
        assert_abs_diff_eq!(r.max_modulus, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn repeated_eigenvalues_cluster() {
        // Jordan-free double eigenvalue at 0.5.
        let sys = DiscreteStateSpace::strictly_proper(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let r = poles(&sys);
        assert_eq!(r.poles.len(), 1);
        assert_eq!(r.poles[0].multiplicity, 2);
    }

    fn small_matrix(n: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.0..1.0f64, n * n)
            .prop_map(move |v| DMatrix::from_row_slice(n, n, &v) * scale)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// (zI - A) X = B and value = C X + D must hold to 1e-10 * ||B||.
        #[test]
        fn eval_transfer_satisfies_defining_system(
            a in small_matrix(3, 0.3),
            bv in proptest::collection::vec(-1.0..1.0f64, 3),
            cv in proptest::collection::vec(-1.0..1.0f64, 3),
            theta in 0.1..3.0f64,
        ) {
            let b = DMatrix::from_row_slice(3, 1, &bv);
            let c = DMatrix::from_row_slice(1, 3, &cv);
            let sys = DiscreteStateSpace::strictly_proper(a, b.clone(), c.clone()).unwrap();
            let z = Complex64::new(2.0 * theta.cos(), 2.0 * theta.sin());
            let eval = eval_transfer(&sys, z).unwrap();
            let n = sys.order();
            let zi_a = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
                let diag = if i == j { z } else { Complex64::new(0.0, 0.0) };
                diag - Complex64::new(sys.a()[(i, j)], 0.0)
            });
            let x = linalg::solve_complex(&zi_a, &linalg::to_complex(&b)).unwrap();
            let resid = (&zi_a * &x - linalg::to_complex(&b)).norm();
            prop_assert!(resid <= 1e-10 * b.norm().max(1e-30));
            let value = linalg::to_complex(&c) * &x;
            prop_assert!((&eval.value - &value).norm() <= 1e-12 * (1.0 + value.norm()));
        }

        /// dc_gain must agree with eval_transfer at z = 1 (same code path).
        #[test]
        fn dc_gain_equals_eval_at_one(
            a in small_matrix(3, 0.3),
            bv in proptest::collection::vec(-1.0..1.0f64, 3),
            cv in proptest::collection::vec(-1.0..1.0f64, 3),
        ) {
            let b = DMatrix::from_row_slice(3, 1, &bv);
            let c = DMatrix::from_row_slice(1, 3, &cv);
            let sys = DiscreteStateSpace::strictly_proper(a, b, c).unwrap();
            let dc = dc_gain(&sys).unwrap();
            let ev = eval_transfer(&sys, Complex64::new(1.0, 0.0)).unwrap();
            prop_assert!((dc[(0, 0)] - ev.value[(0, 0)].re).abs() == 0.0);
        }

        /// Poles are invariant under well-conditioned state similarity.
        #[test]
        fn poles_similarity_invariant(
            a in small_matrix(3, 0.4),
            tv in proptest::collection::vec(0.5..1.5f64, 3),
            skew in -0.3..0.3f64,
        ) {
            let mut t = DMatrix::from_diagonal(&DVector::from_vec(tv));
            t[(0, 1)] = skew;
            t[(2, 0)] = -skew;
            let t_inv = t.clone().try_inverse().unwrap();
            let b = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
            let c = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
            let sys = DiscreteStateSpace::strictly_proper(a.clone(), b.clone(), c.clone()).unwrap();
            let sim = DiscreteStateSpace::strictly_proper(
                &t * &a * &t_inv,
                &t * &b,
                &c * &t_inv,
            )
            .unwrap();
            let mut p1: Vec<Complex64> = poles(&sys).poles.iter()
                .flat_map(|p| std::iter::repeat(p.value).take(p.multiplicity)).collect();
            let mut p2: Vec<Complex64> = poles(&sim).poles.iter()
                .flat_map(|p| std::iter::repeat(p.value).take(p.multiplicity)).collect();
            let key = |z: &Complex64| (z.re, z.im);
            p1.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            p2.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            prop_assert_eq!(p1.len(), p2.len());
            for (x, y) in p1.iter().zip(p2.iter()) {
                prop_assert!((x - y).norm() < 1e-8);
            }
        }
    }
}
