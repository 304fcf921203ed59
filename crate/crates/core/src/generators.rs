//! Random system generators for tests and exercises.
//!
//! The mass-spring-damper chains are a classical NI family: with
//! symmetric positive definite mass and stiffness and positive
//! semidefinite damping, `M qddot + D qdot + K q = u`, `y = q` is NI in
//! continuous time with the energy storage
//! `V = 1/2 (qdot^T M qdot + q^T K q)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ss::{ContinuousStateSpace, DiscreteStateSpace};

/// A continuous NI plant with a known quadratic storage matrix.
#[derive(Debug, Clone)]
pub struct MsdPlant {
    pub csys: ContinuousStateSpace,
    /// Storage in the stacked `[q; qdot]` coordinates:
    /// `blockdiag(K, M)`.
    pub storage: DMatrix<f64>,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let r = random_matrix(rng, n, n);
    r.transpose() * r + DMatrix::<f64>::identity(n, n) * floor
}

/// Random mass-spring-damper chain with `dof` degrees of freedom
/// (2*dof states, dof ports): SPD mass and stiffness, PD damping.
pub fn msd_chain(rng: &mut ChaCha8Rng, dof: usize) -> MsdPlant {
    assert!(dof >= 1);
    let mass = random_spd(rng, dof, 0.5);
    let stiffness = random_spd(rng, dof, 0.5);
    let damping = random_spd(rng, dof, 0.05);

    let mass_inv = mass
        .clone()
        .try_inverse()
        .expect("SPD mass matrix is invertible");

    let n = 2 * dof;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, dof), (dof, dof))
        .copy_from(&DMatrix::<f64>::identity(dof, dof));
    a.view_mut((dof, 0), (dof, dof))
        .copy_from(&(-&mass_inv * &stiffness));
    a.view_mut((dof, dof), (dof, dof))
        .copy_from(&(-&mass_inv * &damping));

    let mut b = DMatrix::zeros(n, dof);
    b.view_mut((dof, 0), (dof, dof)).copy_from(&mass_inv);

    let mut c = DMatrix::zeros(dof, n);
    c.view_mut((0, 0), (dof, dof))
        .copy_from(&DMatrix::<f64>::identity(dof, dof));

    let mut storage = DMatrix::zeros(n, n);
    storage.view_mut((0, 0), (dof, dof)).copy_from(&stiffness);
    storage.view_mut((dof, dof), (dof, dof)).copy_from(&mass);

    MsdPlant {
        csys: ContinuousStateSpace::new(a, b, c).expect("msd dimensions"),
        storage,
    }
}

/// Random discrete system with symmetric state matrix and `C = B^T`,
/// so the transfer matrix is symmetric; these systems always satisfy
/// the storage equality with `P = I - A` and are NI.
pub fn symmetric_ni_discrete(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DiscreteStateSpace {
    let raw = random_matrix(rng, n, n);
    let sym = (&raw + raw.transpose()) * 0.5;
    let radius = sym
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max)
        .max(1e-6);
    let target = rng.random_range(0.3..0.9);
    let a = sym * (target / radius);
    let b = random_matrix(rng, n, p);
    let c = b.transpose();
    DiscreteStateSpace::strictly_proper(a, b, c).expect("symmetric family dimensions")
}

/// Fully random strictly proper discrete system with spectral radius
/// scaled below one and `det(I - A)` bounded away from zero.
pub fn random_discrete(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DiscreteStateSpace {
    loop {
        let raw = random_matrix(rng, n, n);
        let radius = raw
            .complex_eigenvalues()
            .iter()
            .map(|l| l.norm())
            .fold(0.0, f64::max)
            .max(1e-6);
        let target = rng.random_range(0.3..0.95);
        let a = raw * (target / radius);
        let dist_from_one = a
            .complex_eigenvalues()
            .iter()
            .map(|l| (l - num_complex::Complex64::new(1.0, 0.0)).norm())
            .fold(f64::INFINITY, f64::min);
        if dist_from_one < 1e-3 {
            continue;
        }
        let b = random_matrix(rng, n, p);
        let c = random_matrix(rng, p, n);
        return DiscreteStateSpace::strictly_proper(a, b, c).expect("random dimensions");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cert;
    use crate::zoh;
    use rand::SeedableRng;

    #[test]
    fn msd_chain_is_continuous_ni() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dof in 1..=4 {
            let plant = msd_chain(&mut rng, dof);
            let storage = zoh::ContinuousQuadraticStorage::new(plant.storage.clone()).unwrap();
            let verdict = zoh::audit_continuous_ni(&plant.csys, &storage).unwrap();
            assert!(verdict.pass, "dof {dof}: min eig {}", verdict.min_eig);
        }
    }

    #[test]
    fn symmetric_family_satisfies_equality_with_shifted_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let sys = symmetric_ni_discrete(&mut rng, 4, 2);
            let p = DMatrix::<f64>::identity(4, 4) - sys.a();
            assert!(cert::output_constraint_residual(&sys, &p).unwrap() < 1e-10);
            assert!(cert::check_ni_with_p(&sys, &p).unwrap().valid);
        }
    }

    #[test]
    fn random_discrete_avoids_pole_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let sys = random_discrete(&mut rng, 3, 1);
            assert!(cert::solve_storage_equality(&sys).is_ok());
        }
    }
}
