//! First observer stage: GNSS reconstructor, continuous course, and the
//! attitude pseudo-measurement `q₁` with its covariance `R(t)`.

pub mod course;
pub mod covariance;
pub mod reconstructor;

use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::attitude::{
    aero_from_velocity, f_theta, quat_from_euler, EulerAngles, InertialVelocityExtended, KinematicStateExtended,
    LapCounters, Quat4, DEFAULT_A_FLOOR, DEFAULT_V_FLOOR, STANDARD_GRAVITY,
};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::sensors::{MeasurementFrame, NoiseParams, SensorSuite};

pub use course::{detect_crossings, update_lap_counters, Crossing, CrossingDirection, LapCounter};
pub use covariance::{beta_r, check_spd, covariance_r, covariance_rtheta, covariance_rxi};
pub use reconstructor::{build_design, evaluate, evaluation_matrix, fit, GnssWindow, LsqDesign, PolyCoeffs};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefilterConfig {
    /// Window length, samples.
    pub n: usize,
    /// GNSS period, s.
    pub tau: f64,
    pub v_floor: f64,
    pub a_floor: f64,
    /// Debounce interval for opposite seam crossings, s.
    pub refractory: f64,
    /// Missed GNSS epochs tolerated before the output is withdrawn.
    pub max_stale: u32,
    /// Ignore the vertical GNSS channel (`gamma ≡ 0`).
    pub flat: bool,
    pub g_hat: f64,
    /// Added to `R_Θ` on the diagonal, rad².
    pub r_theta_floor: f64,
    /// GNSS velocity error variances, (m/s)².
    pub r_nu_s: [f64; 3],
    /// Accelerometer error variances, (m/s²)².
    pub r_nu_a: [f64; 3],
}

impl Default for PrefilterConfig {
    fn default() -> Self {
        Self::from_sensors(&SensorSuite::default())
    }
}

/// Total per-axis error variance of a sensor as seen by one sample.
pub fn sensor_error_variance(p: &NoiseParams) -> [f64; 3] {
    let w = p.white_std();
    let coloured = if p.tau_c > 0.0 {
        p.coloured_steady_variance() + p.sigma0 * p.sigma0
    } else {
        0.0
    };
    [0, 1, 2].map(|k| w[k] * w[k] + coloured)
}

impl PrefilterConfig {
    /// Defaults with the noise covariances implied by the sensor models.
    pub fn from_sensors(suite: &SensorSuite) -> Self {
        Self {
            n: 5,
            tau: suite.gnss.ts,
            v_floor: DEFAULT_V_FLOOR,
            a_floor: DEFAULT_A_FLOOR,
            refractory: 1.0,
            max_stale: 10,
            flat: false,
            g_hat: STANDARD_GRAVITY,
            r_theta_floor: 1e-6,
            r_nu_s: sensor_error_variance(&suite.gnss),
            r_nu_a: sensor_error_variance(&suite.accel),
        }
    }
}

/// One pre-filter output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefilterOutput<T: Real> {
    pub t: T,
    /// Unit attitude pseudo-measurement.
    pub q1: Quat4<T>,
    pub theta_av: EulerAngles<T>,
    pub v_e_hat: InertialVelocityExtended<T>,
    pub xi_e_hat: KinematicStateExtended<T>,
    pub r_t: Matrix4<T>,
    pub r_theta: Matrix3<T>,
    /// GNSS epochs missed since the active fit.
    pub staleness: u32,
    /// Set when the current sample was degenerate and the previous output is repeated.
    pub held: bool,
    pub laps: LapCounters,
}

/// Stateful pre-filter driven by measurement frames.
#[derive(Debug, Clone)]
pub struct Prefilter<T: Real> {
    tau: T,
    v_floor: T,
    a_floor: T,
    g_hat: T,
    max_stale: u32,
    flat: bool,
    r_theta_floor: T,
    r_nu_a: Matrix3<T>,
    design: LsqDesign<T>,
    rv_bar: SMatrix<T, 6, 6>,
    window: GnssWindow<T>,
    coeffs: Option<PolyCoeffs<T>>,
    pending: Vec<Crossing<T>>,
    counter: LapCounter<T>,
    last_t: Option<T>,
    last_output: Option<PrefilterOutput<T>>,
}

fn diag<T: Real>(d: &[f64; 3]) -> Matrix3<T> {
    Matrix3::from_diagonal(&Vector3::new(lit(d[0]), lit(d[1]), lit(d[2])))
}

impl<T: Real> Prefilter<T> {
    pub fn new(cfg: &PrefilterConfig) -> Result<Self> {
        let checks = [cfg.tau, cfg.v_floor, cfg.a_floor, cfg.g_hat];
        if checks.iter().any(|x| !(*x > 0.0)) || !(cfg.refractory >= 0.0) || !(cfg.r_theta_floor >= 0.0) {
            return Err(Error::Config("pre-filter parameters out of range".into()));
        }
        if cfg.r_nu_a.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Config("accelerometer variances must be >= 0".into()));
        }
        let tau: T = lit(cfg.tau);
        let design = build_design(cfg.n, tau, &diag(&cfg.r_nu_s))?;
        let mut rv_bar = design.covariance_rv_bar();
        if cfg.flat {
            for k in [2, 5] {
                rv_bar.row_mut(k).fill(T::zero());
                rv_bar.column_mut(k).fill(T::zero());
            }
        }
        Ok(Self {
            tau,
            v_floor: lit(cfg.v_floor),
            a_floor: lit(cfg.a_floor),
            g_hat: lit(cfg.g_hat),
            max_stale: cfg.max_stale,
            flat: cfg.flat,
            r_theta_floor: lit(cfg.r_theta_floor),
            r_nu_a: diag(&cfg.r_nu_a),
            window: GnssWindow::new(cfg.n),
            design,
            rv_bar,
            coeffs: None,
            pending: Vec::new(),
            counter: LapCounter::new(lit(cfg.refractory)),
            last_t: None,
            last_output: None,
        })
    }

    pub fn design(&self) -> &LsqDesign<T> {
        &self.design
    }

    pub fn laps(&self) -> LapCounters {
        self.counter.laps
    }

    pub fn coefficients(&self) -> Option<&PolyCoeffs<T>> {
        self.coeffs.as_ref()
    }

    fn epoch_time(&self, epoch: i64) -> T {
        self.tau * lit::<T>(epoch as f64)
    }

    fn switch_fit(&mut self, new: PolyCoeffs<T>) {
        let t_new = self.epoch_time(new.epoch);
        for c in std::mem::take(&mut self.pending) {
            if c.t < t_new {
                self.counter.register(c.t, c.direction);
            }
        }
        if let Some(old) = self.coeffs {
            // Keep the wrapped course continuous when consecutive fits straddle the seam.
            let v_old = evaluate(&old, t_new - self.epoch_time(old.epoch)).v;
            let d = new.c0[1].atan2(new.c0[0]) - v_old[1].atan2(v_old[0]);
            if d > T::pi() {
                self.counter.register(t_new, CrossingDirection::Minus);
            } else if d < -T::pi() {
                self.counter.register(t_new, CrossingDirection::Plus);
            }
        }
        let horizon = self.tau * lit::<T>(f64::from(self.max_stale) + 1.0);
        self.pending = detect_crossings(&new, T::zero(), horizon)
            .into_iter()
            .map(|c| Crossing {
                t: c.t + t_new,
                direction: c.direction,
            })
            .collect();
        self.coeffs = Some(new);
    }

    /// Processes one frame; `None` while warming up or after a long GNSS outage.
    pub fn step(&mut self, frame: &MeasurementFrame<T>) -> Result<Option<PrefilterOutput<T>>> {
        if let Some(lt) = self.last_t {
            if !(frame.t > lt) {
                return Err(Error::Data("frame timestamps must increase".into()));
            }
        }
        self.last_t = Some(frame.t);
        if let Some(ys) = frame.y_s {
            let epoch = (frame.t / self.tau).round().to_i64().unwrap_or(0);
            self.window.push(epoch, ys)?;
            if self.window.is_full() {
                let z = fit(&self.window, &self.design)?;
                self.switch_fit(z);
            }
        }
        let Some(coeffs) = self.coeffs else {
            return Ok(None);
        };
        let t_off = frame.t - self.epoch_time(coeffs.epoch);
        let staleness = (t_off / self.tau + lit(1e-6)).floor().max(T::zero()).to_u32().unwrap_or(u32::MAX);
        if staleness > self.max_stale {
            return Ok(None);
        }
        let t = frame.t;
        let due: Vec<_> = self.pending.iter().filter(|c| c.t < t).copied().collect();
        self.pending.retain(|c| !(c.t < t));
        update_lap_counters(&mut self.counter, &due);

        let mut v_e = evaluate(&coeffs, t_off);
        if self.flat {
            v_e.v[2] = T::zero();
            v_e.v_dot[2] = T::zero();
        }
        match self.synthesize(t, &v_e, &frame.y_a, staleness) {
            Ok(out) => {
                self.last_output = Some(out);
                Ok(Some(out))
            }
            Err(Error::DegenerateCourse { .. } | Error::ManoeuvreDegenerate { .. }) => Ok(self.last_output.map(|o| {
                PrefilterOutput {
                    t,
                    staleness,
                    held: true,
                    ..o
                }
            })),
            Err(e) => Err(e),
        }
    }

    fn synthesize(
        &self,
        t: T,
        v_e: &InertialVelocityExtended<T>,
        y_a: &Vector3<T>,
        staleness: u32,
    ) -> Result<PrefilterOutput<T>> {
        let laps = self.counter.laps;
        let xi = aero_from_velocity(v_e, &laps, self.v_floor)?;
        let theta_av = f_theta(y_a, &xi, self.g_hat, self.a_floor)?;
        let q1 = quat_from_euler(&theta_av).into_vector();
        let r_theta = covariance_rtheta(&self.rv_bar, v_e, y_a, &xi, &self.r_nu_a, self.g_hat, self.v_floor)?
            + Matrix3::identity() * self.r_theta_floor;
        let inflate = T::one() + lit::<T>(f64::from(staleness));
        let r_t = covariance_r(&q1, &r_theta, beta_r(&r_theta)) * (inflate * inflate);
        check_spd(&r_t, "R(t)")?;
        Ok(PrefilterOutput {
            t,
            q1,
            theta_av,
            v_e_hat: *v_e,
            xi_e_hat: xi,
            r_t,
            r_theta,
            staleness,
            held: false,
            laps,
        })
    }
}
