//! Frequency-domain NI verification on the unit circle: the Hermitian
//! condition matrix, grid sweeps, unit-circle pole and residue analysis,
//! and the transformed-transfer consistency identity.
//!
//! The condition matrix at angle `theta` is
//! `i [ (w+1) G(w) - (conj(w)+1) G(w)^* - L + L^T ]` with `w = e^{i
//! theta}` and `L = C B` the feedthrough limit of `z G(z)`; an NI system
//! keeps it positive semidefinite on `(0, pi)` away from poles, and any
//! unit-circle pole must be simple with a Hermitian PSD normalized
//! residue.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::ss::{self, DiscreteStateSpace, TOL_POLE};

/// Options for the grid sweep.
#[derive(Debug, Clone)]
pub struct FreqOptions {
    /// Number of uniform grid points on the open interval `(0, pi)`.
    pub grid_size: usize,
    /// Half-width (radians) of the exclusion window around each
    /// unit-circle pole angle.
    pub exclusion_half_width: f64,
    /// PSD tolerance, relative to the per-point matrix norm.
    pub tol_psd: f64,
    /// Evaluate grid points in parallel.
    pub parallel: bool,
}

impl Default for FreqOptions {
    fn default() -> Self {
        Self {
            grid_size: 512,
            exclusion_half_width: 1e-3,
            tol_psd: crate::cert::TOL_PSD,
            parallel: true,
        }
    }
}

/// Normalized residue at a simple unit-circle pole,
/// `K0 = (1 + 1/z0) lim_{z->z0} (z - z0) i G(z)`, computed algebraically
/// from the eigen-decomposition of `A`.
#[derive(Debug, Clone)]
pub struct NormalizedResidue {
    /// The raw (possibly non-Hermitian) normalized residue.
    pub k0: DMatrix<Complex64>,
    /// Norm of the anti-Hermitian part.
    pub hermitian_defect: f64,
    /// Whether the defect is within `1e-9 * (1 + ||K0||)`.
    pub hermitian: bool,
    /// Smallest eigenvalue of the Hermitian part.
    pub min_eig: f64,
    /// Hermitian and positive semidefinite within tolerance.
    pub psd: bool,
}

/// Analysis of one unit-circle pole with angle in `(0, pi)`.
#[derive(Debug, Clone)]
pub struct CirclePole {
    pub theta0: f64,
    pub pole: Complex64,
    pub simple: bool,
    pub residue: Option<NormalizedResidue>,
    /// Simple with Hermitian PSD normalized residue.
    pub pass: bool,
}

/// Grid sweep report.
#[derive(Debug, Clone)]
pub struct FreqReport {
    /// Evaluated grid angles.
    pub grid: Vec<f64>,
    /// Smallest eigenvalue of the condition matrix per evaluated angle.
    pub min_eigs: Vec<f64>,
    /// Angles skipped inside pole exclusion windows.
    pub excluded: Vec<f64>,
    pub circle_poles: Vec<CirclePole>,
    pub max_pole_modulus: f64,
    /// No poles outside the closed unit disc (within 1e-9).
    pub poles_ok: bool,
    /// All evaluated grid points PSD within tolerance.
    pub grid_ok: bool,
    /// All unit-circle poles simple with Hermitian PSD residues.
    pub residues_ok: bool,
    /// Minimality check failed (the sweep still runs; the equivalence
    /// with the dissipation property is only stated for minimal
    /// realizations).
    pub minimality_warning: bool,
    pub verdict: bool,
}

impl FreqReport {
    /// Smallest condition-matrix eigenvalue seen over the grid.
    pub fn worst_min_eig(&self) -> f64 {
        self.min_eigs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn condition_matrix_at(
    sys: &DiscreteStateSpace,
    l: &DMatrix<f64>,
    theta: f64,
) -> Result<DMatrix<Complex64>> {
    let w = Complex64::new(theta.cos(), theta.sin());
    let g = ss::eval_transfer_unchecked(sys, w)?;
    let i_unit = Complex64::new(0.0, 1.0);
    let skew_l = linalg::to_complex(&(l.transpose() - l));
    let pre = (&g * (w + 1.0) - g.adjoint() * (w.conj() + 1.0) + skew_l) * i_unit;
    let defect = linalg::anti_hermitian_norm(&pre);
    debug_assert!(defect <= 1e-12 * (1.0 + pre.norm()));
    Ok(linalg::hermitianize(&pre))
}

/// Hermitian condition matrix at angle `theta`; errors with
/// `PoleProximity` when `e^{i theta}` is within `TOL_POLE` of a pole.
pub fn ni_condition_matrix(sys: &DiscreteStateSpace, theta: f64) -> Result<DMatrix<Complex64>> {
    sys.require_strictly_proper()?;
    let w = Complex64::new(theta.cos(), theta.sin());
    let min_dist = sys
        .state_eigenvalues()
        .iter()
        .map(|lam| (lam - w).norm())
        .fold(f64::INFINITY, f64::min);
    if min_dist < TOL_POLE {
        return Err(Error::PoleProximity {
            theta,
            tol: TOL_POLE,
        });
    }
    let l = ss::feedthrough_limit(sys)?;
    condition_matrix_at(sys, &l, theta)
}

fn eig_multiplicity(eigs: &[Complex64], at: Complex64, tol: f64) -> usize {
    eigs.iter().filter(|l| (*l - at).norm() <= tol).count()
}

/// Normalized residue `K0` at the unit-circle pole with angle `theta0`
/// in `(0, pi)`.
///
/// The residue of `G` at a simple pole `lambda` is computed from the
/// null vectors of `A - lambda I`: with right/left null vectors `v`, `u`
/// the residue is `C v u^H B / (u^H v)`; no numeric limiting is
/// involved.
pub fn normalized_residue(sys: &DiscreteStateSpace, theta0: f64) -> Result<NormalizedResidue> {
    sys.require_strictly_proper()?;
    if !(0.0..std::f64::consts::PI).contains(&theta0) || theta0 == 0.0 {
        return Err(Error::NotOnUpperSemicircle(theta0));
    }
    let z0 = Complex64::new(theta0.cos(), theta0.sin());
    let eigs: Vec<Complex64> = sys.state_eigenvalues().iter().copied().collect();
    let match_tol = 1e-7;
    let mult = eig_multiplicity(&eigs, z0, match_tol);
    if mult == 0 {
        return Err(Error::NotSimplePole(format!(
            "no pole within {match_tol:.1e} of e^(i {theta0})"
        )));
    }
    if mult > 1 {
        return Err(Error::NotSimplePole(format!(
            "pole at angle {theta0} has multiplicity {mult}"
        )));
    }
    let lambda = *eigs
        .iter()
        .min_by(|a, b| {
            (*a - z0)
                .norm()
                .partial_cmp(&(*b - z0).norm())
                .unwrap()
        })
        .unwrap();

    let n = sys.order();
    let shifted = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
        let diag = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
        Complex64::new(sys.a()[(i, j)], 0.0) - diag
    });
    let svd = shifted.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    // simple pole: exactly one vanishing singular value
    if n >= 2 && sv[n - 2] <= 1e-7 * smax.max(1.0) {
        return Err(Error::NotSimplePole(format!(
            "geometric multiplicity exceeds one at angle {theta0}"
        )));
    }
    let u_mat = svd.u.expect("svd with u");
    let v_mat = svd.v_t.expect("svd with v_t").adjoint();
    let v = v_mat.column(n - 1).into_owned();
    let u = u_mat.column(n - 1).into_owned();
    let denom = u.adjoint() * &v;
    let denom = denom[(0, 0)];
    if denom.norm() < 1e-12 {
        return Err(Error::NotSimplePole(format!(
            "defective pole at angle {theta0} (left/right null vectors orthogonal)"
        )));
    }

    let cb = linalg::to_complex(sys.c()) * &v;
    let ub = u.adjoint() * linalg::to_complex(sys.b());
    let residue = cb * ub / denom;
    let prefactor = (Complex64::new(1.0, 0.0) + 1.0 / z0) * Complex64::new(0.0, 1.0);
    let k0 = residue * prefactor;

    let hermitian_defect = (&k0 - k0.adjoint()).norm();
    let hermitian = hermitian_defect <= 1e-9 * (1.0 + k0.norm());
    let herm_part = linalg::hermitianize(&k0);
    let min_eig = linalg::hermitian_min_eig(&herm_part);
    let psd = hermitian && min_eig >= -crate::cert::TOL_PSD * herm_part.norm().max(1.0);
    Ok(NormalizedResidue {
        k0,
        hermitian_defect,
        hermitian,
        min_eig,
        psd,
    })
}

fn hypothesis_check(sys: &DiscreteStateSpace) -> Result<Vec<Complex64>> {
    let eigs: Vec<Complex64> = sys.state_eigenvalues().iter().copied().collect();
    for lam in &eigs {
        if (lam - Complex64::new(1.0, 0.0)).norm() < TOL_POLE {
            return Err(Error::HypothesisViolated(
                "det(I - A) = 0: pole at z = 1".into(),
            ));
        }
        if (lam + Complex64::new(1.0, 0.0)).norm() < TOL_POLE {
            return Err(Error::HypothesisViolated(
                "det(I + A) = 0: pole at z = -1".into(),
            ));
        }
    }
    Ok(eigs)
}

/// Grid sweep with default options (512 points).
pub fn freq_check(sys: &DiscreteStateSpace, grid_size: usize) -> Result<FreqReport> {
    freq_check_with(
        sys,
        &FreqOptions {
            grid_size,
            ..FreqOptions::default()
        },
    )
}

/// Frequency-domain NI verification: grid sweep of the condition matrix
/// on `(0, pi)` minus pole-exclusion windows, plus unit-circle pole and
/// residue analysis.
///
/// Poles at `z = 1` or `z = -1` are hard errors (`HypothesisViolated`);
/// a failed minimality check only sets a warning flag.
pub fn freq_check_with(sys: &DiscreteStateSpace, opts: &FreqOptions) -> Result<FreqReport> {
    sys.require_strictly_proper()?;
    let eigs = hypothesis_check(sys)?;

    let max_pole_modulus = eigs.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let poles_ok = max_pole_modulus <= 1.0 + 1e-9;
    let minimality_warning = !ss::minimality(sys).minimal();

    // unit-circle poles with angle in (0, pi)
    let mut circle_poles = Vec::new();
    let mut seen: Vec<Complex64> = Vec::new();
    for lam in &eigs {
        if (lam.norm() - 1.0).abs() > 1e-9 || lam.im <= 0.0 {
            continue;
        }
        if seen.iter().any(|s| (s - lam).norm() <= 1e-7) {
            continue;
        }
        seen.push(*lam);
        let theta0 = lam.arg();
        let simple = eig_multiplicity(&eigs, *lam, 1e-7) == 1;
        let residue = if simple {
            normalized_residue(sys, theta0).ok()
        } else {
            None
        };
        let pass = simple && residue.as_ref().map_or(false, |r| r.psd);
        circle_poles.push(CirclePole {
            theta0,
            pole: *lam,
            simple,
            residue,
            pass,
        });
    }
    let residues_ok = circle_poles.iter().all(|cp| cp.pass);

    let l = ss::feedthrough_limit(sys)?;
    let step = std::f64::consts::PI / (opts.grid_size as f64 + 1.0);
    let mut grid = Vec::with_capacity(opts.grid_size);
    let mut excluded = Vec::new();
    'points: for j in 1..=opts.grid_size {
        let theta = step * j as f64;
        for cp in &circle_poles {
            if (theta - cp.theta0).abs() < opts.exclusion_half_width {
                excluded.push(theta);
                continue 'points;
            }
        }
        grid.push(theta);
    }

    // record raw min eigenvalues; the PSD verdict is scale-aware per point
    let eval_verdict = |theta: &f64| -> Result<(f64, bool)> {
        let h = condition_matrix_at(sys, &l, *theta)?;
        let me = linalg::hermitian_min_eig(&h);
        Ok((me, me >= -opts.tol_psd * h.norm().max(1.0)))
    };

    let evaluated: Result<Vec<(f64, bool)>> = if opts.parallel {
        grid.par_iter().map(eval_verdict).collect()
    } else {
        grid.iter().map(eval_verdict).collect()
    };
    let evaluated = evaluated?;
    let min_eigs: Vec<f64> = evaluated.iter().map(|(m, _)| *m).collect();
    let grid_ok = evaluated.iter().all(|(_, ok)| *ok);

    Ok(FreqReport {
        grid,
        min_eigs,
        excluded,
        circle_poles,
        max_pole_modulus,
        poles_ok,
        grid_ok,
        residues_ok,
        minimality_warning,
        verdict: poles_ok && grid_ok && residues_ok,
    })
}

/// Result of cross-checking `(z+1) G(z) - C B` against the realization
/// `(A, B, C(A+I))` at the given sample points.
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub max_residual: f64,
    /// Points skipped because `zI - A` was numerically singular.
    pub skipped: Vec<Complex64>,
}

/// Evaluates both routes to the transformed transfer matrix and returns
/// the largest elementwise discrepancy.
pub fn transformed_transfer_consistency(
    sys: &DiscreteStateSpace,
    sample_points: &[Complex64],
) -> Result<ConsistencyReport> {
    sys.require_strictly_proper()?;
    let n = sys.order();
    let shifted = DiscreteStateSpace::strictly_proper(
        sys.a().clone(),
        sys.b().clone(),
        sys.c() * (sys.a() + DMatrix::<f64>::identity(n, n)),
    )?;
    let cb = linalg::to_complex(&(sys.c() * sys.b()));

    let mut max_residual: f64 = 0.0;
    let mut skipped = Vec::new();
    for &z in sample_points {
        let direct = match ss::eval_transfer(&shifted, z) {
            Ok(e) => e.value,
            Err(Error::SingularEvaluation { .. }) => {
                skipped.push(z);
                continue;
            }
            Err(e) => return Err(e),
        };
        let via_g = match ss::eval_transfer(sys, z) {
            Ok(e) => e.value * (z + 1.0) - &cb,
            Err(Error::SingularEvaluation { .. }) => {
                skipped.push(z);
                continue;
            }
            Err(e) => return Err(e),
        };
        let point_max = (&direct - &via_g)
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        max_residual = max_residual.max(point_max);
    }
    Ok(ConsistencyReport {
        max_residual,
        skipped,
    })
}
