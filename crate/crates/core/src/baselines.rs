//! Gyro-based reference roll estimators from the motorcycle literature.
//!
//! All five assume a flat coordinated turn and use the body-x speed and the
//! gyroscope reading only.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineInput<T: Real> {
    /// Speed along the body x-axis (m/s).
    pub v_x_body: T,
    pub y_g: Vector3<T>,
    pub g_mag: T,
}

const PHI4_TOL: f64 = 1e-10;

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `φ₁ = -atan(v y_gz / g)`.
pub fn phi_1<T: Real>(input: &BaselineInput<T>) -> T {
    -(input.v_x_body * input.y_g[2] / input.g_mag).atan()
}

/// `φ₂ = -sign(y_gz) acos(√(1+Φ²) - Φ)`, `Φ = v |y_gy| / 2g`.
pub fn phi_2<T: Real>(input: &BaselineInput<T>) -> T {
    let big_phi = input.v_x_body * input.y_g[1].abs() / (lit::<T>(2.0) * input.g_mag);
    let arg = (T::one() + big_phi * big_phi).sqrt() - big_phi;
    debug_assert!(!(big_phi >= T::zero()) || (arg > T::zero() && arg <= T::one()));
    -sign(input.y_g[2]) * arg.min(T::one()).max(-T::one()).acos()
}

/// `φ₃ = -atan(v sign(y_gz) √(y_gy² + y_gz²) / g)`.
pub fn phi_3<T: Real>(input: &BaselineInput<T>) -> T {
    let yg = &input.y_g;
    let rate = (yg[1] * yg[1] + yg[2] * yg[2]).sqrt();
    -(input.v_x_body * sign(yg[2]) * rate / input.g_mag).atan()
}

fn phi4_lhs<T: Real>(phi: T) -> T {
    (lit::<T>(0.9) * phi).tan() * phi.cos()
}

fn phi4_dlhs<T: Real>(phi: T) -> T {
    let a = lit::<T>(0.9) * phi;
    let c = a.cos();
    lit::<T>(0.9) * phi.cos() / (c * c) - a.tan() * phi.sin()
}

/// End of the monotone branch of `tan(0.9φ) cos φ`, where its slope vanishes.
pub fn phi_4_branch_limit<T: Real>() -> T {
    let (mut lo, mut hi) = (T::zero(), T::frac_pi_2());
    for _ in 0..200 {
        let mid = (lo + hi) * lit::<T>(0.5);
        if phi4_dlhs(mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::default_epsilon() {
            break;
        }
    }
    lo
}

/// `φ₄` solving `tan(0.9 φ₄) cos φ₄ = -v y_gz / g` on the monotone branch.
///
/// Right-hand sides beyond the branch maximum have no root there and give
/// [`Error::OutOfRange`].
pub fn phi_4<T: Real>(input: &BaselineInput<T>) -> Result<T> {
    let rhs = -input.v_x_body * input.y_g[2] / input.g_mag;
    let limit = phi_4_branch_limit::<T>();
    let peak = phi4_lhs(limit);
    if !(rhs.abs() <= peak) {
        return Err(Error::OutOfRange {
            value: to_f64(rhs),
            range: "monotone branch of tan(0.9φ)cos φ",
        });
    }
    let tol: T = lit(PHI4_TOL);
    let (mut lo, mut hi) = (-limit, limit);
    for _ in 0..60 {
        let mid = (lo + hi) * lit::<T>(0.5);
        if phi4_lhs(mid) < rhs {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < tol {
            break;
        }
    }
    let mut phi = (lo + hi) * lit::<T>(0.5);
    for _ in 0..3 {
        let d = phi4_dlhs(phi);
        if d <= T::zero() {
            break;
        }
        let next = phi - (phi4_lhs(phi) - rhs) / d;
        if next < -limit || next > limit {
            break;
        }
        phi = next;
    }
    Ok(phi)
}

/// `φ₅ = W φ₁ + (1 - W) sign(y_gz) asin(y_gy / √(y_gy² + y_gz²))`, `W = exp(-25 φ₁²)`.
pub fn phi_5<T: Real>(input: &BaselineInput<T>) -> T {
    let p1 = phi_1(input);
    let w = (-lit::<T>(25.0) * p1 * p1).exp();
    let yg = &input.y_g;
    let rate = (yg[1] * yg[1] + yg[2] * yg[2]).sqrt();
    let proxy = if rate > T::zero() {
        sign(yg[2]) * (yg[1] / rate).min(T::one()).max(-T::one()).asin()
    } else {
        T::zero()
    };
    w * p1 + (T::one() - w) * proxy
}

/// `φ₄` clamped to the branch end when the equation has no root on it.
pub fn phi_4_saturated<T: Real>(input: &BaselineInput<T>) -> T {
    phi_4(input).unwrap_or_else(|_| {
        let rhs = -input.v_x_body * input.y_g[2];
        phi_4_branch_limit::<T>() * sign(rhs)
    })
}

/// The five estimates in order; `φ₄` is `None` when it has no root.
pub fn all_baselines<T: Real>(input: &BaselineInput<T>) -> [Option<T>; 5] {
    [
        Some(phi_1(input)),
        Some(phi_2(input)),
        Some(phi_3(input)),
        phi_4(input).ok(),
        Some(phi_5(input)),
    ]
}
