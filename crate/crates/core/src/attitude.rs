//! Frames, Euler/quaternion algebra and the coordinated-manoeuvre roll maps.
//!
//! Conventions used throughout the crate:
//!
//! * Inertial axes are north-east-down; the velocity of a vehicle with speed
//!   `v`, grade `gamma` and course `chi` is `v (cos chi cos gamma, sin chi cos gamma, -sin gamma)`.
//! * `T(Θ) = R1(phi) R2(theta) R3(psi)` maps inertial coordinates into body
//!   coordinates (3-2-1 sequence).
//! * Quaternions are scalar first, `(q0, qx, qy, qz)`, and propagate as
//!   `q' = M(q) omega` with `omega` the body rate.
//! * The accelerometer model is `a = T(Θ)(v' - g)` with the gravity vector
//!   `g = (0, 0, -g_mag)`, which makes the roll formulas below exact on
//!   coordinated manoeuvres (a level, static sensor reads `a_z = +g_mag`).

use nalgebra::{Matrix3, Matrix4, Matrix4x3, SMatrix, Vector3, Vector4, Vector6};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;
/// Default floor on the non-ballistic manoeuvre denominator, m²/s⁴.
pub const DEFAULT_A_FLOOR: f64 = 0.5;
/// Default floor on the horizontal speed below which the course is undefined, m/s.
pub const DEFAULT_V_FLOOR: f64 = 1.0;

/// Four-vector with no norm constraint (the EKF quaternion state).
pub type Quat4<T> = Vector4<T>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles<T> {
    /// Roll, rad.
    pub phi: T,
    /// Pitch, rad.
    pub theta: T,
    /// Yaw, rad.
    pub psi: T,
}

impl<T: Real> EulerAngles<T> {
    pub fn new(phi: T, theta: T, psi: T) -> Self {
        Self { phi, theta, psi }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }
}

/// Unit-norm attitude quaternion, scalar first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat<T: Real>(Vector4<T>);

impl<T: Real> UnitQuat<T> {
    /// Normalizes `q`; fails on the zero vector.
    pub fn new_normalize(q: Quat4<T>) -> Result<Self> {
        let n = q.norm();
        if n <= T::zero() || !n.is_finite() {
            return Err(Error::ZeroQuaternion);
        }
        Ok(Self(q / n))
    }

    pub fn identity() -> Self {
        Self(Vector4::new(T::one(), T::zero(), T::zero(), T::zero()))
    }

    pub fn as_vector(&self) -> &Quat4<T> {
        &self.0
    }

    pub fn into_vector(self) -> Quat4<T> {
        self.0
    }
}

/// Speed magnitude, grade and course with their time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicStateExtended<T> {
    pub v_mag: T,
    pub gamma: T,
    pub chi: T,
    pub v_mag_dot: T,
    pub gamma_dot: T,
    pub chi_dot: T,
}

impl<T: Real> KinematicStateExtended<T> {
    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(
            self.v_mag,
            self.gamma,
            self.chi,
            self.v_mag_dot,
            self.gamma_dot,
            self.chi_dot,
        )
    }

    pub fn from_vector(x: &Vector6<T>) -> Self {
        Self {
            v_mag: x[0],
            gamma: x[1],
            chi: x[2],
            v_mag_dot: x[3],
            gamma_dot: x[4],
            chi_dot: x[5],
        }
    }

    /// Level straight-line motion at constant speed along course `chi`.
    pub fn cruise(v_mag: T, chi: T) -> Self {
        Self {
            v_mag,
            gamma: T::zero(),
            chi,
            v_mag_dot: T::zero(),
            gamma_dot: T::zero(),
            chi_dot: T::zero(),
        }
    }
}

/// Inertial velocity and acceleration, NED axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertialVelocityExtended<T: Real> {
    pub v: Vector3<T>,
    pub v_dot: Vector3<T>,
}

impl<T: Real> InertialVelocityExtended<T> {
    pub fn new(v: Vector3<T>, v_dot: Vector3<T>) -> Self {
        Self { v, v_dot }
    }

    pub fn to_vector(&self) -> Vector6<T> {
        Vector6::new(
            self.v[0],
            self.v[1],
            self.v[2],
            self.v_dot[0],
            self.v_dot[1],
            self.v_dot[2],
        )
    }

    pub fn from_vector(x: &Vector6<T>) -> Self {
        Self {
            v: Vector3::new(x[0], x[1], x[2]),
            v_dot: Vector3::new(x[3], x[4], x[5]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityModel<T: Real> {
    pub g_mag: T,
    pub g_vec: Vector3<T>,
}

impl<T: Real> GravityModel<T> {
    pub fn new(g_mag: T) -> Self {
        Self {
            g_mag,
            g_vec: Vector3::new(T::zero(), T::zero(), -g_mag),
        }
    }
}

impl<T: Real> Default for GravityModel<T> {
    fn default() -> Self {
        Self::new(lit(STANDARD_GRAVITY))
    }
}

/// Counts of seam crossings of the course angle in each direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LapCounters {
    pub n_plus: u32,
    pub n_minus: u32,
}

impl LapCounters {
    /// Net number of turns, `N+ - N-`.
    pub fn net(&self) -> i64 {
        i64::from(self.n_plus) - i64::from(self.n_minus)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_pi<T: Real>(a: T) -> T {
    let two_pi = T::two_pi();
    let mut w = a - two_pi * ((a + T::pi()) / two_pi).floor();
    if w <= -T::pi() {
        w += two_pi;
    }
    w
}

fn rot1<T: Real>(s: T) -> Matrix3<T> {
    let (sn, c) = s.sin_cos();
    let (o, z) = (T::one(), T::zero());
    Matrix3::new(o, z, z, z, c, sn, z, -sn, c)
}

fn rot2<T: Real>(s: T) -> Matrix3<T> {
    let (sn, c) = s.sin_cos();
    let (o, z) = (T::one(), T::zero());
    Matrix3::new(c, z, -sn, z, o, z, sn, z, c)
}

fn rot3<T: Real>(s: T) -> Matrix3<T> {
    let (sn, c) = s.sin_cos();
    let (o, z) = (T::one(), T::zero());
    Matrix3::new(c, sn, z, -sn, c, z, z, z, o)
}

/// Elementary frame rotation about axis `axis` (1, 2 or 3).
pub fn elementary_rotation<T: Real>(axis: u8, angle: T) -> Matrix3<T> {
    match axis {
        1 => rot1(angle),
        2 => rot2(angle),
        3 => rot3(angle),
        _ => panic!("rotation axis must be 1, 2 or 3"),
    }
}

/// `T(Θ)`: inertial-to-body rotation matrix.
pub fn rotation_from_euler<T: Real>(theta: &EulerAngles<T>) -> Matrix3<T> {
    rot1(theta.phi) * rot2(theta.theta) * rot3(theta.psi)
}

/// Inertial-to-body rotation matrix induced by a (normalized internally) quaternion.
pub fn rotation_from_quat<T: Real>(q: &Quat4<T>) -> Matrix3<T> {
    let q = q / q.norm();
    let (q0, qx, qy, qz) = (q[0], q[1], q[2], q[3]);
    let two = lit::<T>(2.0);
    // Body-to-inertial DCM, transposed on return.
    let c = Matrix3::new(
        q0 * q0 + qx * qx - qy * qy - qz * qz,
        two * (qx * qy - q0 * qz),
        two * (qx * qz + q0 * qy),
        two * (qx * qy + q0 * qz),
        q0 * q0 - qx * qx + qy * qy - qz * qz,
        two * (qy * qz - q0 * qx),
        two * (qx * qz - q0 * qy),
        two * (qy * qz + q0 * qx),
        q0 * q0 - qx * qx - qy * qy + qz * qz,
    );
    c.transpose()
}

/// `h̄(Θ)`: unit quaternion of a 3-2-1 Euler triple.
pub fn quat_from_euler<T: Real>(theta: &EulerAngles<T>) -> UnitQuat<T> {
    let half = lit::<T>(0.5);
    let (sp, cp) = (theta.phi * half).sin_cos();
    let (st, ct) = (theta.theta * half).sin_cos();
    let (ss, cs) = (theta.psi * half).sin_cos();
    UnitQuat(Vector4::new(
        cp * ct * cs + sp * st * ss,
        sp * ct * cs - cp * st * ss,
        cp * st * cs + sp * ct * ss,
        cp * ct * ss - sp * st * cs,
    ))
}

/// Result of the inverse Euler map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerSolution<T> {
    pub angles: EulerAngles<T>,
    /// Set when `|theta|` is at (numerically) `pi/2` and roll/yaw are not separable.
    pub gimbal_degenerate: bool,
}

/// `h̄⁻¹(q/‖q‖)`: Euler angles of an arbitrary non-zero quaternion.
pub fn euler_from_quat<T: Real>(q: &Quat4<T>) -> Result<EulerSolution<T>> {
    let n = q.norm();
    if n <= T::zero() || !n.is_finite() {
        return Err(Error::ZeroQuaternion);
    }
    let q = q / n;
    let (q0, qx, qy, qz) = (q[0], q[1], q[2], q[3]);
    let two = lit::<T>(2.0);
    let c32 = two * (qy * qz + q0 * qx);
    let c33 = q0 * q0 - qx * qx - qy * qy + qz * qz;
    let c31 = two * (qx * qz - q0 * qy);
    let c21 = two * (qx * qy + q0 * qz);
    let c11 = q0 * q0 + qx * qx - qy * qy - qz * qz;

    let limit = T::one() - lit(1e-12);
    let gimbal_degenerate = c31.abs() >= limit;
    let sin_theta = (-c31).max(-T::one()).min(T::one());
    let theta = sin_theta.asin();
    let angles = if gimbal_degenerate {
        // Only phi - psi (or phi + psi) is defined; attribute it to yaw.
        let c12 = two * (qx * qy - q0 * qz);
        let c22 = q0 * q0 - qx * qx + qy * qy - qz * qz;
        EulerAngles::new(T::zero(), theta, (-c12).atan2(c22))
    } else {
        EulerAngles::new(c32.atan2(c33), theta, c21.atan2(c11))
    };
    Ok(EulerSolution {
        angles,
        gimbal_degenerate,
    })
}

/// `M(q)`, the 4×3 matrix of `q' = M(q) omega`.
pub fn quat_rate_matrix<T: Real>(q: &Quat4<T>) -> Matrix4x3<T> {
    let h = lit::<T>(0.5);
    let (q0, qx, qy, qz) = (q[0] * h, q[1] * h, q[2] * h, q[3] * h);
    Matrix4x3::new(-qx, -qy, -qz, q0, -qz, qy, qz, q0, -qx, -qy, qx, q0)
}

/// `∂(M(q) omega)/∂q`, constant in `q` because the map is bilinear.
pub fn quat_rate_jacobian<T: Real>(omega: &Vector3<T>) -> Matrix4<T> {
    let h = lit::<T>(0.5);
    let (wx, wy, wz) = (omega[0] * h, omega[1] * h, omega[2] * h);
    let z = T::zero();
    Matrix4::new(z, -wx, -wy, -wz, wx, z, wz, -wy, wy, -wz, z, wx, wz, wy, -wx, z)
}

/// Body rates from Euler angles and their time derivatives (3-2-1 sequence).
pub fn body_rates_from_euler_rates<T: Real>(
    theta: &EulerAngles<T>,
    rates: &EulerAngles<T>,
) -> Vector3<T> {
    let (sp, cp) = theta.phi.sin_cos();
    let (st, ct) = theta.theta.sin_cos();
    Vector3::new(
        rates.phi - rates.psi * st,
        rates.theta * cp + rates.psi * ct * sp,
        -rates.theta * sp + rates.psi * ct * cp,
    )
}

/// `h_v(ξ)`: inertial velocity from speed, grade and course.
pub fn velocity_from_aero<T: Real>(xi: &KinematicStateExtended<T>) -> Vector3<T> {
    let (sg, cg) = xi.gamma.sin_cos();
    let (sc, cc) = xi.chi.sin_cos();
    Vector3::new(cc * cg, sc * cg, -sg) * xi.v_mag
}

/// `∂h_v/∂(v_mag, gamma, chi)`.
pub fn aero_jacobian<T: Real>(xi: &KinematicStateExtended<T>) -> Matrix3<T> {
    let (sg, cg) = xi.gamma.sin_cos();
    let (sc, cc) = xi.chi.sin_cos();
    let v = xi.v_mag;
    Matrix3::new(
        cc * cg,
        -v * cc * sg,
        -v * sc * cg,
        sc * cg,
        -v * sc * sg,
        v * cc * cg,
        -sg,
        -v * cg,
        T::zero(),
    )
}

/// Inertial acceleration `d/dt h_v(ξ)` implied by a full kinematic state.
pub fn acceleration_from_aero<T: Real>(xi: &KinematicStateExtended<T>) -> Vector3<T> {
    aero_jacobian(xi) * Vector3::new(xi.v_mag_dot, xi.gamma_dot, xi.chi_dot)
}

/// `f_χ(v, N+, N-)`: course angle made continuous by the lap counters.
pub fn course_continuous<T: Real>(v: &Vector3<T>, laps: &LapCounters) -> Result<T> {
    let horizontal = v[0].hypot(v[1]);
    if horizontal <= T::zero() {
        return Err(Error::DegenerateCourse {
            horizontal_speed: to_f64(horizontal),
        });
    }
    let turns: T = lit(laps.net() as f64);
    Ok(v[1].atan2(v[0]) + T::two_pi() * turns)
}

/// `f_ξe(v_e)`: speed, grade, course and their rates from inertial velocity and acceleration.
pub fn aero_from_velocity<T: Real>(
    ve: &InertialVelocityExtended<T>,
    laps: &LapCounters,
    v_floor: T,
) -> Result<KinematicStateExtended<T>> {
    let v = &ve.v;
    let a = &ve.v_dot;
    let hz2 = v[0] * v[0] + v[1] * v[1];
    let hz = hz2.sqrt();
    if hz <= v_floor {
        return Err(Error::DegenerateCourse {
            horizontal_speed: to_f64(hz),
        });
    }
    let v_mag = v.norm();
    let v2 = v_mag * v_mag;
    let gamma = (-v[2]).atan2(hz);
    let chi = course_continuous(v, laps)?;
    let horiz_dot = v[0] * a[0] + v[1] * a[1];
    Ok(KinematicStateExtended {
        v_mag,
        gamma,
        chi,
        v_mag_dot: v.dot(a) / v_mag,
        gamma_dot: (v[2] * horiz_dot - hz2 * a[2]) / (hz * v2),
        chi_dot: (v[0] * a[1] - v[1] * a[0]) / hz2,
    })
}

/// `J_ξe = ∂f_ξe/∂v_e`, 6×6, rows ordered as [`KinematicStateExtended::to_vector`].
pub fn aero_from_velocity_jacobian<T: Real>(
    ve: &InertialVelocityExtended<T>,
    v_floor: T,
) -> Result<SMatrix<T, 6, 6>> {
    let (vx, vy, vz) = (ve.v[0], ve.v[1], ve.v[2]);
    let (ax, ay, az) = (ve.v_dot[0], ve.v_dot[1], ve.v_dot[2]);
    let hz2 = vx * vx + vy * vy;
    let hz = hz2.sqrt();
    if hz <= v_floor {
        return Err(Error::DegenerateCourse {
            horizontal_speed: to_f64(hz),
        });
    }
    let v2 = hz2 + vz * vz;
    let vm = v2.sqrt();
    let two = lit::<T>(2.0);
    let mut j = SMatrix::<T, 6, 6>::zeros();

    // speed
    j[(0, 0)] = vx / vm;
    j[(0, 1)] = vy / vm;
    j[(0, 2)] = vz / vm;
    // grade = atan2(-vz, hz)
    j[(1, 0)] = vz * vx / (hz * v2);
    j[(1, 1)] = vz * vy / (hz * v2);
    j[(1, 2)] = -hz / v2;
    // course
    j[(2, 0)] = -vy / hz2;
    j[(2, 1)] = vx / hz2;

    // speed rate = v.a / |v|
    let va = vx * ax + vy * ay + vz * az;
    let v3 = v2 * vm;
    j[(3, 0)] = ax / vm - va * vx / v3;
    j[(3, 1)] = ay / vm - va * vy / v3;
    j[(3, 2)] = az / vm - va * vz / v3;
    j[(3, 3)] = vx / vm;
    j[(3, 4)] = vy / vm;
    j[(3, 5)] = vz / vm;

    // grade rate = (vz (vx ax + vy ay) - hz² az) / (hz v²)
    let p = vx * ax + vy * ay;
    let num = vz * p - hz2 * az;
    let den = hz * v2;
    let den2 = den * den;
    let dnum = [vz * ax - two * vx * az, vz * ay - two * vy * az, p];
    let dden = [
        vx * (v2 / hz + two * hz),
        vy * (v2 / hz + two * hz),
        two * hz * vz,
    ];
    for k in 0..3 {
        j[(4, k)] = (dnum[k] * den - num * dden[k]) / den2;
    }
    j[(4, 3)] = vz * vx / den;
    j[(4, 4)] = vz * vy / den;
    j[(4, 5)] = -hz2 / den;

    // course rate = (vx ay - vy ax) / hz²
    let x = (vx * ay - vy * ax) / hz2;
    j[(5, 0)] = ay / hz2 - two * vx * x / hz2;
    j[(5, 1)] = -ax / hz2 - two * vy * x / hz2;
    j[(5, 3)] = -vy / hz2;
    j[(5, 4)] = vx / hz2;
    Ok(j)
}

/// Numerator and denominator of the coordinated-manoeuvre roll ratio.
fn phi_av_terms<T: Real>(a: &Vector3<T>, xi: &KinematicStateExtended<T>, g_mag: T) -> (T, T) {
    let cg = xi.gamma.cos();
    let w = g_mag * cg - xi.v_mag * xi.gamma_dot;
    let y = xi.v_mag * xi.chi_dot * cg;
    (w * a[1] - y * a[2], w * a[2] + y * a[1])
}

/// The non-ballistic denominator, required to exceed the floor `a_floor`.
pub fn manoeuvre_denominator<T: Real>(
    a: &Vector3<T>,
    xi: &KinematicStateExtended<T>,
    g_mag: T,
) -> T {
    phi_av_terms(a, xi, g_mag).1
}

/// `φ_av(a, ξ_e, g)`: roll angle of a coordinated manoeuvre.
pub fn phi_av<T: Real>(
    a: &Vector3<T>,
    xi: &KinematicStateExtended<T>,
    g_mag: T,
    a_floor: T,
) -> Result<T> {
    let (num, den) = phi_av_terms(a, xi, g_mag);
    if !(den > a_floor) {
        return Err(Error::ManoeuvreDegenerate {
            denominator: to_f64(den),
        });
    }
    Ok((num / den).atan())
}

/// `φ_v`: equilibrium roll of a flat coordinated turn.
pub fn phi_v<T: Real>(xi: &KinematicStateExtended<T>, g_mag: T) -> T {
    let horizontal = xi.v_mag * xi.gamma.cos();
    -(horizontal * xi.chi_dot / g_mag).atan()
}

/// `φ_a`: roll implied by the body acceleration alone.
pub fn phi_a<T: Real>(a: &Vector3<T>) -> Result<T> {
    if a[2] == T::zero() {
        return Err(Error::DegenerateAcceleration);
    }
    Ok((a[1] / a[2]).atan())
}

/// `f_Θ(a, ξ_e, g) = (φ_av, gamma, chi)`.
pub fn f_theta<T: Real>(
    a: &Vector3<T>,
    xi: &KinematicStateExtended<T>,
    g_mag: T,
    a_floor: T,
) -> Result<EulerAngles<T>> {
    Ok(EulerAngles::new(
        phi_av(a, xi, g_mag, a_floor)?,
        xi.gamma,
        xi.chi,
    ))
}

/// `J_Θ = ∂f_Θ/∂(a, ξ_e, g)`, 3×10 with columns `a (3) | ξ_e (6) | g`.
pub fn f_theta_jacobian<T: Real>(
    a: &Vector3<T>,
    xi: &KinematicStateExtended<T>,
    g_mag: T,
) -> SMatrix<T, 3, 10> {
    let (sg, cg) = xi.gamma.sin_cos();
    let w = g_mag * cg - xi.v_mag * xi.gamma_dot;
    let y = xi.v_mag * xi.chi_dot * cg;
    let (num, den) = phi_av_terms(a, xi, g_mag);
    let norm = num * num + den * den;
    // dφ = (den dnum - num dden) / (num² + den²)
    let c_w = (den * a[1] - num * a[2]) / norm;
    let c_y = (-den * a[2] - num * a[1]) / norm;

    let mut j = SMatrix::<T, 3, 10>::zeros();
    j[(0, 1)] = (den * w - num * y) / norm;
    j[(0, 2)] = (-den * y - num * w) / norm;
    // ξ_e = (v, gamma, chi, v', gamma', chi') at columns 3..9
    j[(0, 3)] = c_w * (-xi.gamma_dot) + c_y * (xi.chi_dot * cg);
    j[(0, 4)] = c_w * (-g_mag * sg) + c_y * (-xi.v_mag * xi.chi_dot * sg);
    j[(0, 7)] = c_w * (-xi.v_mag);
    j[(0, 8)] = c_y * (xi.v_mag * cg);
    j[(0, 9)] = c_w * cg;
    j[(1, 4)] = T::one();
    j[(2, 5)] = T::one();
    j
}
