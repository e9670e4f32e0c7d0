//! Stochastic sensor error synthesis.
//!
//! Each axis carries a random-walk bias `b̄` and a first-order Gauss-Markov
//! state `z`; the emitted error is `b̄ + z + white`. The linear blocks are
//! discretized exactly (zero-order hold, Van Loan), so streams do not depend
//! on the step size beyond sampling.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attitude::{rotation_from_euler, GravityModel};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trajectory::TrajectoryTruth;

/// Scale between the bias-instability level and the Gauss-Markov driving noise.
const BIAS_INSTABILITY_SCALE: f64 = 0.4365;

/// How the white-noise level `n` is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WhiteNoiseKind {
    /// Spectral density (units·√s); the per-sample std is `n / √Ts`.
    #[default]
    Density,
    /// Per-sample standard deviation.
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    /// Bias-instability level `B`.
    pub bias_instability: f64,
    /// Correlation time of the coloured state, s. Zero disables it.
    pub tau_c: f64,
    /// White-noise level `N`, per axis.
    pub white: [f64; 3],
    #[serde(default)]
    pub white_kind: WhiteNoiseKind,
    /// Rate random-walk level `K`.
    pub random_walk: f64,
    /// Std of the initial coloured state.
    pub sigma0: f64,
    /// Sample period, s.
    pub ts: f64,
    /// Constant bias added on top of the stochastic error.
    #[serde(default)]
    pub injected_bias: [f64; 3],
}

impl NoiseParams {
    /// Error-free sensor sampled at `ts`.
    pub fn ideal(ts: f64) -> Self {
        Self {
            bias_instability: 0.0,
            tau_c: 0.0,
            white: [0.0; 3],
            white_kind: WhiteNoiseKind::Density,
            random_walk: 0.0,
            sigma0: 0.0,
            ts,
            injected_bias: [0.0; 3],
        }
    }

    pub fn gyro_default() -> Self {
        Self {
            bias_instability: 3.3e-3,
            tau_c: 20.0,
            white: [8.5e-3; 3],
            white_kind: WhiteNoiseKind::Density,
            random_walk: 0.0,
            sigma0: 5.0e-2,
            ts: 0.01,
            injected_bias: [0.0; 3],
        }
    }

    pub fn accel_default() -> Self {
        Self {
            bias_instability: 2.0e-4,
            tau_c: 30.0,
            white: [3.3e-3; 3],
            white_kind: WhiteNoiseKind::Density,
            random_walk: 3.3e-3,
            sigma0: 0.1,
            ts: 0.01,
            injected_bias: [0.0; 3],
        }
    }

    pub fn gnss_default() -> Self {
        Self {
            bias_instability: 0.0,
            tau_c: 0.0,
            white: [1.1e-2, 1.1e-2, 1.0e-1],
            white_kind: WhiteNoiseKind::PerSample,
            random_walk: 0.0,
            sigma0: 0.0,
            ts: 0.1,
            injected_bias: [0.0; 3],
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let vals = [
            self.bias_instability,
            self.tau_c,
            self.white[0],
            self.white[1],
            self.white[2],
            self.random_walk,
            self.sigma0,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("{name}: noise levels must be finite and >= 0")));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::Config(format!("{name}: sample period must be > 0")));
        }
        if self.injected_bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config(format!("{name}: injected bias must be finite")));
        }
        Ok(())
    }

    /// Per-sample standard deviation of the white component, per axis.
    pub fn white_std(&self) -> Vector3<f64> {
        let s = match self.white_kind {
            WhiteNoiseKind::Density => 1.0 / self.ts.sqrt(),
            WhiteNoiseKind::PerSample => 1.0,
        };
        Vector3::from(self.white) * s
    }

    /// Power spectral density of the noise driving the coloured state.
    pub fn coloured_psd(&self) -> f64 {
        if self.tau_c <= 0.0 {
            return 0.0;
        }
        let c = 2.0 * std::f64::consts::LN_2 / (std::f64::consts::PI * BIAS_INSTABILITY_SCALE.powi(2));
        c * self.bias_instability.powi(2) / self.tau_c.powi(2)
    }

    /// Stationary variance of the coloured state.
    pub fn coloured_steady_variance(&self) -> f64 {
        0.5 * self.coloured_psd() * self.tau_c
    }
}

/// Per-axis error state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorErrorState {
    pub b_bar: Vector3<f64>,
    pub z: Vector3<f64>,
}

impl SensorErrorState {
    pub fn zero() -> Self {
        Self {
            b_bar: Vector3::zeros(),
            z: Vector3::zeros(),
        }
    }

    /// Draws the initial state: zero random walk, coloured state `N(0, σ0²)`.
    pub fn initial(params: &NoiseParams, rng: &mut ChaCha8Rng) -> Self {
        let mut s = Self::zero();
        if params.tau_c > 0.0 {
            for k in 0..3 {
                s.z[k] = params.sigma0 * normal(rng);
            }
        }
        s
    }
}

/// Exact discretization of the per-axis linear error model.
#[derive(Debug, Clone, Copy)]
pub struct Discretization {
    /// State transition of `(b̄, z)`.
    pub phi: Matrix2<f64>,
    /// Discrete process-noise covariance.
    pub qd: Matrix2<f64>,
}

/// Van Loan discretization of `d/dt (b̄, z) = diag(0, -1/τ) (b̄, z) + w`, `E[w wᵀ] = diag(K², q)`.
pub fn discretize(params: &NoiseParams, dt: f64) -> Discretization {
    let f22 = if params.tau_c > 0.0 { -1.0 / params.tau_c } else { 0.0 };
    let f = Matrix2::new(0.0, 0.0, 0.0, f22);
    let q = Matrix2::new(params.random_walk.powi(2), 0.0, 0.0, params.coloured_psd());
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-f * dt));
    m.fixed_view_mut::<2, 2>(0, 2).copy_from(&(q * dt));
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(&(f.transpose() * dt));
    let e = m.exp();
    let phi = e.fixed_view::<2, 2>(2, 2).transpose();
    let qd = phi * e.fixed_view::<2, 2>(0, 2);
    let mut phi = phi;
    if params.tau_c <= 0.0 {
        // The coloured state is absent, not a pure integrator.
        phi[(1, 1)] = 0.0;
    }
    Discretization {
        phi,
        qd: 0.5 * (qd + qd.transpose()),
    }
}

/// Error generator for one three-axis sensor.
#[derive(Debug, Clone)]
pub struct ErrorModel {
    params: NoiseParams,
    disc: Discretization,
    noise_std: Vector2<f64>,
    white_std: Vector3<f64>,
}

impl ErrorModel {
    pub fn new(params: NoiseParams) -> Result<Self> {
        params.validate("sensor")?;
        let disc = discretize(&params, params.ts);
        // Qd is diagonal because the two blocks are decoupled.
        let noise_std = Vector2::new(disc.qd[(0, 0)].max(0.0).sqrt(), disc.qd[(1, 1)].max(0.0).sqrt());
        Ok(Self {
            white_std: params.white_std(),
            params,
            disc,
            noise_std,
        })
    }

    pub fn params(&self) -> &NoiseParams {
        &self.params
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    /// Emits the error at the current sample and advances the state by one period.
    pub fn step(&self, state: &mut SensorErrorState, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        let mut nu = Vector3::zeros();
        for k in 0..3 {
            let white = self.white_std[k] * normal(rng);
            nu[k] = state.b_bar[k] + state.z[k] + white + self.params.injected_bias[k];
            let x = self.disc.phi * Vector2::new(state.b_bar[k], state.z[k]);
            state.b_bar[k] = x[0] + self.noise_std[0] * normal(rng);
            state.z[k] = x[1] + self.noise_std[1] * normal(rng);
        }
        nu
    }
}

/// One-shot error step: returns the advanced state and the emitted error.
pub fn step_error(
    state: SensorErrorState,
    params: &NoiseParams,
    dt: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(SensorErrorState, Vector3<f64>)> {
    let model = ErrorModel::new(NoiseParams { ts: dt, ..*params })?;
    let mut s = state;
    let nu = model.step(&mut s, rng);
    Ok((s, nu))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// One synchronized sample of accelerometer, gyroscope and (when due) GNSS velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementFrame<T: Real> {
    pub t: T,
    pub y_a: Vector3<T>,
    pub y_g: Vector3<T>,
    pub y_s: Option<Vector3<T>>,
}

impl MeasurementFrame<f64> {
    /// Converts to another scalar type.
    pub fn cast<T: Real>(&self) -> MeasurementFrame<T> {
        MeasurementFrame {
            t: nalgebra::convert(self.t),
            y_a: self.y_a.map(nalgebra::convert),
            y_g: self.y_g.map(nalgebra::convert),
            y_s: self.y_s.map(|v| v.map(nalgebra::convert)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSuite {
    pub accel: NoiseParams,
    pub gyro: NoiseParams,
    pub gnss: NoiseParams,
}

impl Default for SensorSuite {
    fn default() -> Self {
        Self {
            accel: NoiseParams::accel_default(),
            gyro: NoiseParams::gyro_default(),
            gnss: NoiseParams::gnss_default(),
        }
    }
}

impl SensorSuite {
    pub fn ideal(imu_ts: f64, gnss_ts: f64) -> Self {
        Self {
            accel: NoiseParams::ideal(imu_ts),
            gyro: NoiseParams::ideal(imu_ts),
            gnss: NoiseParams::ideal(gnss_ts),
        }
    }

    /// Number of IMU samples per GNSS sample.
    pub fn gnss_decimation(&self) -> Result<usize> {
        if (self.accel.ts - self.gyro.ts).abs() > 1e-12 * self.gyro.ts {
            return Err(Error::Config("accelerometer and gyroscope must share a sample period".into()));
        }
        let r = self.gnss.ts / self.gyro.ts;
        let n = r.round();
        if n < 1.0 || (r - n).abs() > 1e-9 * r {
            return Err(Error::Config(format!(
                "GNSS period {} s is not an integer multiple of the IMU period {} s",
                self.gnss.ts, self.gyro.ts
            )));
        }
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.accel.validate("accel")?;
        self.gyro.validate("gyro")?;
        self.gnss.validate("gnss")?;
        self.gnss_decimation().map(|_| ())
    }
}

/// Corrupts a truth stream into measurement frames. Deterministic given `seed`.
pub fn corrupt(truth: &TrajectoryTruth, suite: &SensorSuite, seed: u64) -> Result<Vec<MeasurementFrame<f64>>> {
    corrupt_with_bias(truth, suite, seed).map(|(frames, _)| frames)
}

/// As [`corrupt`], also returning the gyro bias (everything but the white noise) of each frame.
pub fn corrupt_with_bias(
    truth: &TrajectoryTruth,
    suite: &SensorSuite,
    seed: u64,
) -> Result<(Vec<MeasurementFrame<f64>>, Vec<Vector3<f64>>)> {
    suite.validate()?;
    let decim = suite.gnss_decimation()?;
    if (truth.dt - suite.gyro.ts).abs() > 1e-9 * suite.gyro.ts {
        return Err(Error::Config(format!(
            "truth step {} s differs from the IMU period {} s",
            truth.dt, suite.gyro.ts
        )));
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..3)
        .map(|k| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        })
        .collect();
    let (acc_m, gyr_m, gnss_m) = (
        ErrorModel::new(suite.accel)?,
        ErrorModel::new(suite.gyro)?,
        ErrorModel::new(suite.gnss)?,
    );
    let mut acc_s = SensorErrorState::initial(&suite.accel, &mut rngs[0]);
    let mut gyr_s = SensorErrorState::initial(&suite.gyro, &mut rngs[1]);
    let mut gnss_s = SensorErrorState::zero();
    let gravity = GravityModel::new(truth.g_mag);

    let mut out = Vec::with_capacity(truth.samples.len());
    let mut bias = Vec::with_capacity(truth.samples.len());
    for (i, s) in truth.samples.iter().enumerate() {
        bias.push(gyr_s.b_bar + gyr_s.z + Vector3::from(suite.gyro.injected_bias));
        let f = rotation_from_euler(&s.theta) * (s.v_dot - gravity.g_vec);
        let y_a = f + acc_m.step(&mut acc_s, &mut rngs[0]);
        let y_g = s.omega + gyr_m.step(&mut gyr_s, &mut rngs[1]);
        let y_s = (i % decim == 0).then(|| s.v + gnss_m.step(&mut gnss_s, &mut rngs[2]));
        out.push(MeasurementFrame { t: s.t, y_a, y_g, y_s });
    }
    Ok((out, bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_params_give_zero_error() {
        let model = ErrorModel::new(NoiseParams::ideal(0.01)).unwrap();
        let mut s = SensorErrorState::zero();
        let mut r = rng(1);
        for _ in 0..100 {
            assert_eq!(model.step(&mut s, &mut r), Vector3::zeros());
        }
    }

    #[test]
    fn van_loan_matches_closed_form() {
        for p in [NoiseParams::gyro_default(), NoiseParams::accel_default()] {
            for dt in [0.01, 0.5, 7.0] {
                let d = discretize(&p, dt);
                let a = (-dt / p.tau_c).exp();
                assert_relative_eq!(d.phi, Matrix2::new(1.0, 0.0, 0.0, a), epsilon = 1e-13);
                let q = p.coloured_psd();
                let expected = Matrix2::new(
                    p.random_walk.powi(2) * dt,
                    0.0,
                    0.0,
                    q * p.tau_c / 2.0 * (1.0 - a * a),
                );
                assert_relative_eq!(d.qd, expected, epsilon = 1e-15, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn exact_discretization_approaches_euler_as_dt_shrinks() {
        let p = NoiseParams::accel_default();
        for dt in [1e-3, 1e-4] {
            let d = discretize(&p, dt);
            let euler_phi = Matrix2::new(1.0, 0.0, 0.0, 1.0 - dt / p.tau_c);
            let euler_q = Matrix2::new(p.random_walk.powi(2), 0.0, 0.0, p.coloured_psd()) * dt;
            assert!((d.phi - euler_phi).norm() < 2.0 * (dt / p.tau_c).powi(2));
            assert!((d.qd - euler_q).norm() / euler_q.norm() < 2.0 * dt / p.tau_c);
        }
    }

    #[test]
    fn gnss_is_pure_white_noise_with_per_sample_std() {
        let p = NoiseParams::gnss_default();
        let model = ErrorModel::new(p).unwrap();
        let mut s = SensorErrorState::zero();
        let mut r = rng(7);
        let n = 100_000;
        let mut sum = Vector3::zeros();
        let mut sq = Vector3::zeros();
        for _ in 0..n {
            let e = model.step(&mut s, &mut r);
            sum += e;
            sq += e.component_mul(&e);
        }
        assert_eq!(s, SensorErrorState::zero());
        for k in 0..3 {
            let mean = sum[k] / n as f64;
            let var = sq[k] / n as f64 - mean * mean;
            // 4-sigma band of the sample variance
            let tol = 4.0 * (2.0 / n as f64).sqrt();
            assert!((var / p.white[k].powi(2) - 1.0).abs() < tol, "axis {k}: {var}");
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let model = ErrorModel::new(NoiseParams::gyro_default()).unwrap();
        let run = |seed| {
            let mut r = rng(seed);
            let mut s = SensorErrorState::initial(model.params(), &mut r);
            (0..50).map(|_| model.step(&mut s, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn decimation_must_be_integer() {
        let mut suite = SensorSuite::default();
        assert_eq!(suite.gnss_decimation().unwrap(), 10);
        suite.gnss.ts = 0.105;
        assert!(matches!(suite.gnss_decimation(), Err(Error::Config(_))));
    }

    #[test]
    fn negative_level_is_rejected() {
        let mut p = NoiseParams::gyro_default();
        p.random_walk = -1.0;
        assert!(ErrorModel::new(p).is_err());
    }
}
