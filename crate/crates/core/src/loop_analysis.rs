//! Positive feedback interconnection of an NI plant with a step-advanced
//! controller (or of a step-advanced plant with an OSNI controller),
//! the DC-gain stability test, the block Lyapunov matrix and trajectory
//! simulation.
//!
//! The loop wiring is `u_hat = y`, `u = y_tilde` with no sign inversion.
//! The closed-loop state matrix with the advance on the controller side
//! is
//!
//! ```text
//! A_cl = [ A1 + B1 D2 C1   B1 C2 ]
//!        [ B2 C1           A2    ]
//! ```
//!
//! which is well posed because the plant has no feedthrough; the roles
//! swap when the plant carries the advance.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::cert::recover_step_advance;
use crate::error::{Error, Result};
use crate::linalg;
use crate::ss::{dc_gain, DiscreteStateSpace};

/// Which side of the loop carries the one-step output advance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvanceSide {
    Plant,
    Controller,
}

/// Divergence threshold on the stacked state norm.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Block Lyapunov matrix `W = [[P, -O1^T O2], [-O2^T O1, P_tilde]]` with
/// its definiteness verdict and the equivalent Schur-complement check.
#[derive(Debug, Clone)]
pub struct LyapunovBlock {
    pub w: DMatrix<f64>,
    pub min_eig: f64,
    pub positive_definite: bool,
    pub schur_min_eig: f64,
}

/// Assembles the block Lyapunov matrix from the two storages and the
/// inner output maps, and verifies positive definiteness twice: by
/// eigenvalues of the block matrix and by the Schur complement
/// `P - O1^T O2 Ptilde^{-1} O2^T O1`; the verdicts must agree.
pub fn lyapunov_w(
    p: &DMatrix<f64>,
    p_tilde: &DMatrix<f64>,
    out1: &DMatrix<f64>,
    out2: &DMatrix<f64>,
) -> Result<LyapunovBlock> {
    let n = p.nrows();
    let m = p_tilde.nrows();
    if p.ncols() != n || p_tilde.ncols() != m {
        return Err(Error::DimensionMismatch("storages must be square".into()));
    }
    if out1.ncols() != n || out2.ncols() != m || out1.nrows() != out2.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "output maps {}x{} and {}x{} do not fit storages of sizes {} and {}",
            out1.nrows(),
            out1.ncols(),
            out2.nrows(),
            out2.ncols(),
            n,
            m
        )));
    }
    let p = linalg::symmetrize(p);
    let p_tilde = linalg::symmetrize(p_tilde);
    if !linalg::is_positive_definite(&p) {
        return Err(Error::NotPositiveDefinite("plant storage".into()));
    }
    if !linalg::is_positive_definite(&p_tilde) {
        return Err(Error::NotPositiveDefinite("controller storage".into()));
    }

    let cross = out1.transpose() * out2;
    let mut w = DMatrix::zeros(n + m, n + m);
    w.view_mut((0, 0), (n, n)).copy_from(&p);
    w.view_mut((0, n), (n, m)).copy_from(&(-&cross));
    w.view_mut((n, 0), (m, n)).copy_from(&(-cross.transpose()));
    w.view_mut((n, n), (m, m)).copy_from(&p_tilde);

    let min_eig = linalg::sym_min_eig(&w);
    let positive_definite = min_eig > 0.0;

    let pt_inv_cross = linalg::solve_real(&p_tilde, &cross.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("controller storage".into()))?;
    let schur = &p - &cross * pt_inv_cross;
    let schur_min_eig = linalg::sym_min_eig(&schur);
    assert_eq!(
        positive_definite,
        schur_min_eig > 0.0,
        "block-eigenvalue and Schur-complement verdicts disagree"
    );

    Ok(LyapunovBlock {
        w,
        min_eig,
        positive_definite,
        schur_min_eig,
    })
}

/// Closed positive-feedback loop.
#[derive(Debug, Clone)]
pub struct LoopModel {
    pub plant: DiscreteStateSpace,
    pub controller: DiscreteStateSpace,
    pub advance_side: AdvanceSide,
    pub a_cl: DMatrix<f64>,
    /// Eigenvalues of `G(1) H(1)`; `None` when either transfer has a
    /// pole at `z = 1`.
    pub dc_product_eigs: Option<Vec<Complex64>>,
    /// Plant port output `y` as a map on the stacked state.
    pub plant_output_map: DMatrix<f64>,
    /// Controller port output `y_tilde` as a map on the stacked state.
    pub controller_output_map: DMatrix<f64>,
    /// Output of the strict (OSNI) side as a map on the stacked state.
    pub strict_output_map: DMatrix<f64>,
    /// Plant-side output map entering the Lyapunov cross block.
    pub inner_out1: DMatrix<f64>,
    /// Controller-side output map entering the Lyapunov cross block.
    pub inner_out2: DMatrix<f64>,
    pub w: Option<LyapunovBlock>,
}

impl LoopModel {
    /// Spectral radius of the closed-loop state matrix.
    pub fn spectral_radius(&self) -> f64 {
        self.a_cl
            .complex_eigenvalues()
            .iter()
            .map(|l| l.norm())
            .fold(0.0, f64::max)
    }

    /// Attaches storage certificates, building the block Lyapunov matrix
    /// from the inner output maps.
    pub fn with_certificates(mut self, p: &DMatrix<f64>, p_tilde: &DMatrix<f64>) -> Result<Self> {
        let block = lyapunov_w(p, p_tilde, &self.inner_out1, &self.inner_out2)?;
        self.w = Some(block);
        Ok(self)
    }
}

/// Closes the positive feedback loop `u_hat = y`, `u = y_tilde`.
///
/// The advanced side must pass step-advance recovery (its feedthrough
/// must equal `C A^{-1} B`); the other side must be strictly proper.
pub fn close_loop(
    plant: &DiscreteStateSpace,
    controller: &DiscreteStateSpace,
    advance_side: AdvanceSide,
) -> Result<LoopModel> {
    if plant.ports() != controller.ports() {
        return Err(Error::DimensionMismatch(format!(
            "plant has {} ports, controller {}",
            plant.ports(),
            controller.ports()
        )));
    }
    if !plant.is_strictly_proper() && !controller.is_strictly_proper() {
        return Err(Error::AlgebraicLoop);
    }
    let n = plant.order();
    let m = controller.order();
    let p = plant.ports();

    let (a_cl, plant_output_map, controller_output_map, strict_output_map, inner_out1, inner_out2) =
        match advance_side {
            AdvanceSide::Controller => {
                plant.require_strictly_proper()?;
                let rec = recover_step_advance(controller)?;
                let c_hat2 = rec.inner.c().clone();

                let mut a_cl = DMatrix::zeros(n + m, n + m);
                a_cl.view_mut((0, 0), (n, n))
                    .copy_from(&(plant.a() + plant.b() * controller.d() * plant.c()));
                a_cl.view_mut((0, n), (n, m))
                    .copy_from(&(plant.b() * controller.c()));
                a_cl.view_mut((n, 0), (m, n))
                    .copy_from(&(controller.b() * plant.c()));
                a_cl.view_mut((n, n), (m, m)).copy_from(controller.a());

                let mut y_map = DMatrix::zeros(p, n + m);
                y_map.view_mut((0, 0), (p, n)).copy_from(plant.c());

                let mut yt_map = DMatrix::zeros(p, n + m);
                yt_map
                    .view_mut((0, 0), (p, n))
                    .copy_from(&(controller.d() * plant.c()));
                yt_map.view_mut((0, n), (p, m)).copy_from(controller.c());

                let mut strict = DMatrix::zeros(p, n + m);
                strict.view_mut((0, n), (p, m)).copy_from(&c_hat2);

                (a_cl, y_map, yt_map, strict, plant.c().clone(), c_hat2)
            }
            AdvanceSide::Plant => {
                controller.require_strictly_proper()?;
                let rec = recover_step_advance(plant)?;
                let c_hat1 = rec.inner.c().clone();

                let mut a_cl = DMatrix::zeros(n + m, n + m);
                a_cl.view_mut((0, 0), (n, n)).copy_from(plant.a());
                a_cl.view_mut((0, n), (n, m))
                    .copy_from(&(plant.b() * controller.c()));
                a_cl.view_mut((n, 0), (m, n))
                    .copy_from(&(controller.b() * plant.c()));
                a_cl.view_mut((n, n), (m, m))
                    .copy_from(&(controller.a() + controller.b() * plant.d() * controller.c()));

                let mut y_map = DMatrix::zeros(p, n + m);
                y_map.view_mut((0, 0), (p, n)).copy_from(plant.c());
                y_map
                    .view_mut((0, n), (p, m))
                    .copy_from(&(plant.d() * controller.c()));

                let mut yt_map = DMatrix::zeros(p, n + m);
                yt_map.view_mut((0, n), (p, m)).copy_from(controller.c());

                // the OSNI side is the (strictly proper) controller
                let strict = yt_map.clone();

                (a_cl, y_map, yt_map, strict, c_hat1, controller.c().clone())
            }
        };

    let dc_product_eigs = match (dc_gain(plant), dc_gain(controller)) {
        (Ok(g1), Ok(h1)) => {
            let product = g1 * h1;
            Some(product.complex_eigenvalues().iter().copied().collect())
        }
        _ => None,
    };

    Ok(LoopModel {
        plant: plant.clone(),
        controller: controller.clone(),
        advance_side,
        a_cl,
        dc_product_eigs,
        plant_output_map,
        controller_output_map,
        strict_output_map,
        inner_out1,
        inner_out2,
        w: None,
    })
}

/// DC-gain loop test result.
#[derive(Debug, Clone)]
pub struct DcGainReport {
    pub lambda_max: f64,
    pub satisfied: bool,
    /// `|H_inner(1) - H(1)|` for any step-advanced side whose inner
    /// realization was recoverable; the two must agree.
    pub inner_consistency: Option<f64>,
}

/// Checks `lambda_max(G(1) H(1)) < 1`, the loop-gain-at-unity test.
///
/// The spectrum of the product must be real within 1e-9 (it is for NI
/// pairs); when a side carries a step advance its inner DC gain is
/// verified to match, since advancing the output does not move the DC
/// gain.
pub fn dc_gain_condition(
    plant: &DiscreteStateSpace,
    controller: &DiscreteStateSpace,
) -> Result<DcGainReport> {
    let g1 = dc_gain(plant)?;
    let h1 = dc_gain(controller)?;

    let mut inner_consistency = None;
    for sys in [plant, controller] {
        if sys.is_strictly_proper() {
            continue;
        }
        if let Ok(rec) = recover_step_advance(sys) {
            let inner_dc = dc_gain(&rec.inner)?;
            let outer_dc = dc_gain(sys)?;
            let dev = (inner_dc - outer_dc).norm();
            inner_consistency = Some(inner_consistency.map_or(dev, |d: f64| dev.max(d)));
        }
    }

    let product = &g1 * &h1;
    let eigs = product.complex_eigenvalues();
    let scale = 1.0 + product.norm();
    let max_imag = eigs.iter().map(|l| l.im.abs()).fold(0.0, f64::max);
    if max_imag > 1e-9 * scale {
        return Err(Error::ComplexSpectrum(max_imag));
    }
    let lambda_max = eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(DcGainReport {
        lambda_max,
        satisfied: lambda_max < 1.0 - 1e-9,
        inner_consistency,
    })
}

/// A simulated closed-loop trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Stacked states, `steps + 1` entries unless truncated.
    pub states: Vec<DVector<f64>>,
    /// Plant port outputs `y_k`.
    pub outputs_plant: Vec<DVector<f64>>,
    /// Controller port outputs `y_tilde_k`.
    pub outputs_controller: Vec<DVector<f64>>,
    /// Strict-side (OSNI) outputs `y_hat_k`.
    pub strict_outputs: Vec<DVector<f64>>,
    /// `x^T W x` along the trajectory when certificates are attached.
    pub w_values: Option<Vec<f64>>,
    pub diverged: bool,
    pub truncated: bool,
}

impl Trajectory {
    pub fn final_state_norm(&self) -> f64 {
        self.states.last().map_or(0.0, |x| x.norm())
    }
}

/// Iterates the closed loop from `x0`, recording outputs and (when
/// certificates are attached) Lyapunov values. Divergence
/// (`||x|| > 1e12`) is a flagged outcome, not an error; the trajectory
/// is truncated at the crossing.
pub fn simulate(model: &LoopModel, x0: &DVector<f64>, steps: usize) -> Result<Trajectory> {
    let dim = model.a_cl.nrows();
    if x0.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "x0 has length {}, closed loop has {} states",
            x0.len(),
            dim
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    if steps == 0 {
        return Err(Error::DimensionMismatch("steps must be >= 1".into()));
    }

    let mut states = Vec::with_capacity(steps + 1);
    let mut outputs_plant = Vec::with_capacity(steps + 1);
    let mut outputs_controller = Vec::with_capacity(steps + 1);
    let mut strict_outputs = Vec::with_capacity(steps + 1);
    let mut w_values = model.w.as_ref().map(|_| Vec::with_capacity(steps + 1));

    let mut x = x0.clone();
    let mut diverged = false;
    let mut truncated = false;
    for k in 0..=steps {
        outputs_plant.push(&model.plant_output_map * &x);
        outputs_controller.push(&model.controller_output_map * &x);
        strict_outputs.push(&model.strict_output_map * &x);
        if let (Some(values), Some(block)) = (w_values.as_mut(), model.w.as_ref()) {
            values.push((x.transpose() * &block.w * &x)[(0, 0)]);
        }
        states.push(x.clone());

        if x.norm() > DIVERGENCE_THRESHOLD {
            diverged = true;
            truncated = k < steps;
            break;
        }
        if k < steps {
            x = &model.a_cl * &x;
        }
    }

    Ok(Trajectory {
        states,
        outputs_plant,
        outputs_controller,
        strict_outputs,
        w_values,
        diverged,
        truncated,
    })
}

/// Verdict of the Lyapunov decrease check along a trajectory.
#[derive(Debug, Clone)]
pub struct DecreaseVerdict {
    pub pass: bool,
    /// Largest relative violation of
    /// `W_{k+1} - W_k <= -eps ||yhat_{k+1} - yhat_k||^2`.
    pub max_relative_violation: f64,
    pub worst_step: Option<usize>,
}

/// Asserts `W_{k+1} - W_k <= -eps ||yhat_{k+1} - yhat_k||^2` (within
/// `1e-9 * scale`) at every step of a trajectory that carries Lyapunov
/// values.
pub fn verify_lyapunov_decrease(traj: &Trajectory, eps: f64) -> Result<DecreaseVerdict> {
    let w = traj.w_values.as_ref().ok_or(Error::MissingCertificates)?;
    let mut max_relative_violation = f64::NEG_INFINITY;
    let mut worst_step = None;
    let mut pass = true;
    for k in 0..w.len().saturating_sub(1) {
        let dy = &traj.strict_outputs[k + 1] - &traj.strict_outputs[k];
        let strict = eps * dy.norm_squared();
        let violation = (w[k + 1] - w[k]) + strict;
        let scale = 1.0 + w[k].abs() + w[k + 1].abs() + strict;
        let relative = violation / scale;
        if relative > max_relative_violation {
            max_relative_violation = relative;
            worst_step = Some(k);
        }
        if violation > 1e-9 * scale {
            pass = false;
        }
    }
    if !max_relative_violation.is_finite() {
        max_relative_violation = 0.0;
    }
    Ok(DecreaseVerdict {
        pass,
        max_relative_violation,
        worst_step,
    })
}
