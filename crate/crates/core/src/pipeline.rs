//! End-to-end chain: truth, corrupted measurements, observer and baselines.

use crate::analysis::{error_stats, spectrum, ErrorSeries, SpectrumReport};
use crate::baselines::{phi_1, phi_2, phi_3, phi_4_saturated, phi_5, BaselineInput};
use crate::config::{RunConfig, SpeedSource};
use crate::ekf::{Ekf, EkfConfig, EkfOutput};
use crate::error::{Error, Result};
use crate::prefilter::{Prefilter, PrefilterConfig, PrefilterOutput};
use crate::scalar::{to_f64, Real};
use crate::sensors::{corrupt, MeasurementFrame, NoiseParams};
use crate::trajectory::{build_track, simulate_truth, speed_profile, TrajectoryTruth, DEFAULT_PROFILE_STEP};

/// Observer state after one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord<T: Real> {
    pub t: T,
    pub pre: Option<PrefilterOutput<T>>,
    pub ekf: Option<EkfOutput<T>>,
}

/// Pre-filter followed by the EKF.
#[derive(Debug, Clone)]
pub struct Observer<T: Real> {
    prefilter: Prefilter<T>,
    ekf: Ekf<T>,
    last_t: Option<T>,
}

impl<T: Real> Observer<T> {
    pub fn new(pf: &PrefilterConfig, ekf: &EkfConfig, gyro: &NoiseParams) -> Result<Self> {
        Ok(Self {
            prefilter: Prefilter::new(pf)?,
            ekf: Ekf::new(ekf, gyro)?,
            last_t: None,
        })
    }

    pub fn step(&mut self, frame: &MeasurementFrame<T>) -> Result<EstimateRecord<T>> {
        if let Some(t0) = self.last_t {
            if !(frame.t > t0) {
                return Err(Error::Data(format!(
                    "time stamps must increase: {} after {}",
                    to_f64(frame.t),
                    to_f64(t0)
                )));
            }
        }
        self.last_t = Some(frame.t);
        let pre = self.prefilter.step(frame)?;
        let ekf = self.ekf.update(frame.t, frame.y_g, pre.as_ref())?;
        Ok(EstimateRecord { t: frame.t, pre, ekf })
    }

    pub fn prefilter(&self) -> &Prefilter<T> {
        &self.prefilter
    }

    pub fn ekf(&self) -> &Ekf<T> {
        &self.ekf
    }
}

/// Runs the observer over a whole stream.
pub fn run_observer<T: Real>(
    frames: &[MeasurementFrame<T>],
    pf: &PrefilterConfig,
    ekf: &EkfConfig,
    gyro: &NoiseParams,
) -> Result<Vec<EstimateRecord<T>>> {
    if frames.is_empty() {
        return Err(Error::Data("empty measurement stream".into()));
    }
    let mut obs = Observer::new(pf, ekf, gyro)?;
    frames.iter().map(|f| obs.step(f)).collect()
}

/// Truth and its corrupted measurements for a configuration.
pub fn simulate(cfg: &RunConfig) -> Result<(TrajectoryTruth, Vec<MeasurementFrame<f64>>)> {
    cfg.validate()?;
    let (_, _, truth) = simulate_truth(&cfg.track, &cfg.limits, &cfg.truth)?;
    let frames = corrupt(&truth, &cfg.sensors, cfg.seed)?;
    Ok((truth, frames))
}

/// Runs the observer as configured.
pub fn estimate(cfg: &RunConfig, frames: &[MeasurementFrame<f64>]) -> Result<Vec<EstimateRecord<f64>>> {
    run_observer(frames, &cfg.prefilter(), &cfg.ekf, &cfg.sensors.gyro)
}

/// Labels of the compared roll estimates, in output order.
pub const ESTIMATE_LABELS: [&str; 7] = ["phi_av", "phi_1", "phi_2", "phi_3", "phi_4", "phi_5", "phi_hat"];

/// Truth needed to score roll estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct RollReference {
    pub t: Vec<f64>,
    pub phi: Vec<f64>,
    /// Speed along the body x-axis, m/s.
    pub speed: Vec<f64>,
}

impl From<&TrajectoryTruth> for RollReference {
    fn from(truth: &TrajectoryTruth) -> Self {
        Self {
            t: truth.samples.iter().map(|s| s.t).collect(),
            phi: truth.samples.iter().map(|s| s.phi).collect(),
            speed: truth.samples.iter().map(|s| s.xi.v_mag).collect(),
        }
    }
}

/// Roll errors of `φ_av`, the five baselines and `φ̂` over the frames where the
/// observer produced an estimate.
pub fn compare(
    reference: &RollReference,
    g_mag: f64,
    frames: &[MeasurementFrame<f64>],
    records: &[EstimateRecord<f64>],
    speed: SpeedSource,
) -> Result<Vec<ErrorSeries>> {
    let n = reference.t.len();
    if reference.phi.len() != n || reference.speed.len() != n || frames.len() != n || records.len() != n {
        return Err(Error::Data("truth, telemetry and estimates are not aligned".into()));
    }
    let mut t = Vec::new();
    let mut phi = Vec::new();
    let mut est: [Vec<f64>; 7] = Default::default();
    for (i, (f, r)) in frames.iter().zip(records).enumerate() {
        if (reference.t[i] - f.t).abs() > 1e-9 || (f.t - r.t).abs() > 1e-9 {
            return Err(Error::Data(format!("time mismatch at t = {}", f.t)));
        }
        let (Some(pre), Some(ekf)) = (r.pre.as_ref(), r.ekf.as_ref()) else {
            continue;
        };
        let v = match speed {
            SpeedSource::Truth => reference.speed[i],
            SpeedSource::Gnss => pre.v_e_hat.v.norm(),
        };
        let input = BaselineInput {
            v_x_body: v,
            y_g: f.y_g,
            g_mag,
        };
        let vals = [
            pre.theta_av.phi,
            phi_1(&input),
            phi_2(&input),
            phi_3(&input),
            phi_4_saturated(&input),
            phi_5(&input),
            ekf.phi_hat,
        ];
        for (dst, v) in est.iter_mut().zip(vals) {
            dst.push(v);
        }
        t.push(f.t);
        phi.push(reference.phi[i]);
    }
    ESTIMATE_LABELS
        .iter()
        .zip(est.iter())
        .map(|(label, e)| ErrorSeries::new(*label, t.clone(), e, &phi))
        .collect()
}

/// Lap time of the configured track and speed profile, s.
pub fn lap_time(cfg: &RunConfig) -> Result<f64> {
    let track = build_track(&cfg.track)?;
    Ok(speed_profile(&track, &cfg.limits, DEFAULT_PROFILE_STEP)?.lap_time())
}

/// Summary statistics of one roll estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub low_band_energy: f64,
    pub spectrum: SpectrumReport,
}

/// Scores each error series after `t0`.
pub fn score(series: &[ErrorSeries], t0: f64, low_band: f64) -> Result<Vec<Score>> {
    series
        .iter()
        .map(|s| {
            let s = s.after(t0);
            let (mean, std) = error_stats(&s.err)?;
            let spectrum = spectrum(&s, low_band)?;
            Ok(Score {
                label: s.label.clone(),
                mean,
                std,
                low_band_energy: spectrum.low_band_energy,
                spectrum,
            })
        })
        .collect()
}
