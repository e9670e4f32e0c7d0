//! Invariant suite run by `leanobs validate`.

use nalgebra::{DMatrix, DVector, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{mc_covariance, nu_m_series};
use crate::attitude::{
    aero_from_velocity, aero_from_velocity_jacobian, euler_from_quat, f_theta, f_theta_jacobian, quat_from_euler,
    quat_rate_jacobian, quat_rate_matrix, rotation_from_euler, rotation_from_quat, EulerAngles,
    InertialVelocityExtended, KinematicStateExtended, LapCounters,
};
use crate::config::RunConfig;
use crate::ekf::{build_q, drift, jacobian_a, Vector7};
use crate::error::Result;
use crate::pipeline::{estimate, simulate};
use crate::trajectory::{build_track, simulate_truth, TruthOptions};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }
}

/// Central-difference Jacobian of `f` at `x`.
pub fn numeric_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        j.set_column(k, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

/// Largest entry-wise deviation scaled by `max(1, |J|∞)`.
fn fd_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    let scale = analytic.amax().max(1.0);
    (analytic - numeric).amax() / scale
}

const FD_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-6;

fn jacobian_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut worst = [0.0f64; 4];
    for _ in 0..50 {
        // A
        let x = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
        let yg = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let f = |x: &DVector<f64>| {
            let v = Vector7::from_column_slice(x.as_slice());
            DVector::from_column_slice(drift(&v, &yg).as_slice())
        };
        let a = jacobian_a(&Vector7::from_column_slice(x.as_slice()), &yg);
        worst[0] = worst[0].max(fd_error(
            &DMatrix::from_column_slice(7, 7, a.as_slice()),
            &numeric_jacobian(f, &x, FD_STEP),
        ));

        // J_ξe
        let ve = DVector::from_vec(vec![
            rng.random_range(5.0..40.0),
            rng.random_range(-40.0..40.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-8.0..8.0),
            rng.random_range(-8.0..8.0),
            rng.random_range(-1.0..1.0),
        ]);
        let to_ve = |x: &DVector<f64>| {
            InertialVelocityExtended::new(Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]))
        };
        let laps = LapCounters::default();
        let g = |x: &DVector<f64>| {
            let xi = aero_from_velocity(&to_ve(x), &laps, 1.0).expect("away from the floor");
            DVector::from_column_slice(xi.to_vector().as_slice())
        };
        if let Ok(j) = aero_from_velocity_jacobian(&to_ve(&ve), 1.0) {
            worst[1] = worst[1].max(fd_error(
                &DMatrix::from_column_slice(6, 6, j.as_slice()),
                &numeric_jacobian(g, &ve, FD_STEP),
            ));
        }

        // J_Θ
        let z = DVector::from_vec(vec![
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(8.0..14.0),
            rng.random_range(5.0..40.0),
            rng.random_range(-0.1..0.1),
            rng.random_range(-3.0..3.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.8..0.8),
            9.80665,
        ]);
        let split = |z: &DVector<f64>| {
            (
                Vector3::new(z[0], z[1], z[2]),
                KinematicStateExtended::from_vector(&z.fixed_rows::<6>(3).into_owned()),
                z[9],
            )
        };
        let h = |z: &DVector<f64>| {
            let (a, xi, g) = split(z);
            let th = f_theta(&a, &xi, g, 0.0).expect("non-degenerate");
            DVector::from_vec(vec![th.phi, th.theta, th.psi])
        };
        let (a, xi, gm) = split(&z);
        let j = f_theta_jacobian(&a, &xi, gm);
        worst[2] = worst[2].max(fd_error(
            &DMatrix::from_column_slice(3, 10, j.as_slice()),
            &numeric_jacobian(h, &z, FD_STEP),
        ));

        // ∂(M(q)ω)/∂q
        let q = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let w = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let m = |q: &DVector<f64>| {
            let qv = Vector4::new(q[0], q[1], q[2], q[3]);
            DVector::from_column_slice((quat_rate_matrix(&qv) * w).as_slice())
        };
        let jq = quat_rate_jacobian(&w);
        worst[3] = worst[3].max(fd_error(
            &DMatrix::from_column_slice(4, 4, jq.as_slice()),
            &numeric_jacobian(m, &q, FD_STEP),
        ));
    }
    ["jacobian A", "jacobian J_xi", "jacobian J_theta", "jacobian dMw/dq"]
        .into_iter()
        .zip(worst)
        .map(|(name, e)| Check::new(name, e < FD_TOL, format!("max scaled deviation {e:e}")))
        .collect()
}

fn round_trip_checks(rng: &mut ChaCha8Rng) -> Vec<Check> {
    let mut angle_err = 0.0f64;
    let mut ortho_err = 0.0f64;
    let mut dcm_err = 0.0f64;
    for _ in 0..1000 {
        let th = EulerAngles::<f64>::new(
            rng.random_range(-3.1..3.1),
            rng.random_range(-1.5..1.5),
            rng.random_range(-3.1..3.1),
        );
        let q = quat_from_euler(&th).into_vector();
        let scale = rng.random_range(0.1..10.0);
        let back = euler_from_quat(&(q * scale)).map(|s| s.angles);
        if let Ok(b) = back {
            angle_err = angle_err
                .max((b.phi - th.phi).abs())
                .max((b.theta - th.theta).abs())
                .max((b.psi - th.psi).abs());
        } else {
            angle_err = f64::INFINITY;
        }
        let r = rotation_from_euler(&th);
        ortho_err = ortho_err.max((r * r.transpose() - nalgebra::Matrix3::identity()).amax());
        dcm_err = dcm_err.max((rotation_from_quat(&q) - r).amax());
    }
    vec![
        Check::new("euler/quaternion round trip", angle_err < 1e-9, format!("max angle error {angle_err:e} rad")),
        Check::new("rotation orthogonality", ortho_err < 1e-12, format!("max |TTᵀ - I| {ortho_err:e}")),
        Check::new("quaternion and Euler rotations agree", dcm_err < 1e-12, format!("max deviation {dcm_err:e}")),
    ]
}

/// Runs the invariant suite for a configuration.
pub fn run_invariant_suite(cfg: &RunConfig) -> Result<Vec<Check>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = jacobian_checks(&mut rng);
    checks.extend(round_trip_checks(&mut rng));

    let track = build_track(&cfg.track)?;
    let tol = 1e-9_f64.max(1e-12 * track.length());
    checks.push(Check::new(
        "track closure",
        track.closure_residual() < tol,
        format!("residual {:e} m over {} m", track.closure_residual(), track.length()),
    ));

    let (q_mat, _, _) = build_q::<f64>(&cfg.sensors.gyro, cfg.ekf.eps_factor);
    checks.push(Check::new(
        "process noise weight is SPD",
        q_mat.cholesky().is_some(),
        format!("min diagonal {:e}", q_mat.diagonal().min()),
    ));

    let clean = TruthOptions {
        side_slip_max: 0.0,
        duration: cfg.truth.duration.min(60.0),
        ..cfg.truth
    };
    let (_, _, truth) = simulate_truth(&cfg.track, &cfg.limits, &clean)?;
    let nu = nu_m_series(&truth, 0.0)?;
    let nu_max = nu.err.iter().fold(0.0f64, |a, b| a.max(*b));
    checks.push(Check::new(
        "coordinated truth has no model mismatch",
        nu_max < 1e-9,
        format!("max |nu_m| {nu_max:e}"),
    ));

    let (rv, rth) = mc_covariance(&cfg.prefilter(), 4000, cfg.seed)?;
    checks.push(Check::new(
        "reconstructed velocity covariance",
        rv.rel_frobenius < 0.1,
        format!("relative Frobenius error {:.4}", rv.rel_frobenius),
    ));
    checks.push(Check::new(
        "pseudo-attitude covariance",
        rth.rel_frobenius < 0.1,
        format!("relative Frobenius error {:.4}", rth.rel_frobenius),
    ));

    let short = RunConfig {
        truth: TruthOptions {
            duration: cfg.truth.duration.min(30.0),
            ..cfg.truth
        },
        ..cfg.clone()
    };
    let (_, frames) = simulate(&short)?;
    let check = match estimate(&short, &frames) {
        Ok(recs) => {
            let lo = recs
                .iter()
                .filter_map(|r| r.ekf.map(|e| e.s_eigen_range.0))
                .fold(f64::INFINITY, f64::min);
            Check::new("information matrix stays SPD", lo > 0.0, format!("min eigenvalue {lo:e}"))
        }
        Err(e) => Check::new("information matrix stays SPD", false, e.to_string()),
    };
    checks.push(check);
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobians_and_round_trips_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in jacobian_checks(&mut rng).into_iter().chain(round_trip_checks(&mut rng)) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn numeric_jacobian_of_linear_map_is_exact() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let j = numeric_jacobian(|x| &a * x, &x, 1e-3);
        assert!((j - a).amax() < 1e-10);
    }
}
