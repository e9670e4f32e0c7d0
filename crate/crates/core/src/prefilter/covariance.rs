//! Propagation of the GNSS and accelerometer errors to the pseudo-measurement covariance.

use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3};

use crate::attitude::{
    aero_from_velocity_jacobian, f_theta_jacobian, quat_rate_matrix, InertialVelocityExtended,
    KinematicStateExtended, Quat4,
};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

/// `R_ξe = J_ξe R_v J_ξeᵀ`.
pub fn covariance_rxi<T: Real>(
    r_v: &SMatrix<T, 6, 6>,
    v_e: &InertialVelocityExtended<T>,
    v_floor: T,
) -> Result<SMatrix<T, 6, 6>> {
    let j = aero_from_velocity_jacobian(v_e, v_floor)?;
    Ok(j * r_v * j.transpose())
}

/// `R_Θ = J_Θ blkdiag(R_νa, R_ξe, 0) J_Θᵀ`; `ĝ` is treated as exact.
pub fn covariance_rtheta<T: Real>(
    r_v: &SMatrix<T, 6, 6>,
    v_e: &InertialVelocityExtended<T>,
    y_a: &Vector3<T>,
    xi_e_hat: &KinematicStateExtended<T>,
    r_nu_a: &Matrix3<T>,
    g_hat: T,
    v_floor: T,
) -> Result<Matrix3<T>> {
    let r_xi = covariance_rxi(r_v, v_e, v_floor)?;
    let mut sigma = SMatrix::<T, 10, 10>::zeros();
    sigma.fixed_view_mut::<3, 3>(0, 0).copy_from(r_nu_a);
    sigma.fixed_view_mut::<6, 6>(3, 3).copy_from(&r_xi);
    let j = f_theta_jacobian(y_a, xi_e_hat, g_hat);
    let r = j * sigma * j.transpose();
    Ok((r + r.transpose()) * lit::<T>(0.5))
}

/// `β_R`: mean of the extreme singular values of `R_Θ`.
pub fn beta_r<T: Real>(r_theta: &Matrix3<T>) -> T {
    let sv = r_theta.singular_values();
    (sv.max() + sv.min()) * lit::<T>(0.5)
}

/// `R(t) = β_R² q₁q₁ᵀ + M(q₁) R̄_Θ Mᵀ(q₁)`.
pub fn covariance_r<T: Real>(q1: &Quat4<T>, r_theta_bar: &Matrix3<T>, beta_r: T) -> Matrix4<T> {
    let m = quat_rate_matrix(q1);
    let r = q1 * q1.transpose() * (beta_r * beta_r) + m * r_theta_bar * m.transpose();
    (r + r.transpose()) * lit::<T>(0.5)
}

/// Fails unless `r` is symmetric positive definite.
pub fn check_spd<T: Real>(r: &Matrix4<T>, what: &'static str) -> Result<()> {
    let asym = (r - r.transpose()).norm();
    if !(asym <= T::default_epsilon() * lit(1e3) * r.norm()) || r.cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(what));
    }
    Ok(())
}
