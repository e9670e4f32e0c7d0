//! Error statistics, spectra, Allan deviation and Monte Carlo covariance checks.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::attitude::{
    aero_from_velocity, f_theta, quat_from_euler, rotation_from_euler, EulerAngles, GravityModel,
    InertialVelocityExtended, LapCounters,
};
use crate::error::{Error, Result};
use crate::prefilter::{build_design, covariance_rtheta, evaluate, fit, GnssWindow, PrefilterConfig};
use crate::trajectory::TrajectoryTruth;

/// Default upper edge of the low band, Hz.
pub const DEFAULT_LOW_BAND: f64 = 0.5;

/// Estimation error `est - truth` over time.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub label: String,
    pub t: Vec<f64>,
    pub err: Vec<f64>,
}

impl ErrorSeries {
    pub fn new(label: impl Into<String>, t: Vec<f64>, est: &[f64], truth: &[f64]) -> Result<Self> {
        if t.len() != est.len() || est.len() != truth.len() {
            return Err(Error::Data(format!(
                "misaligned series: {} times, {} estimates, {} truth",
                t.len(),
                est.len(),
                truth.len()
            )));
        }
        Ok(Self {
            label: label.into(),
            t,
            err: est.iter().zip(truth).map(|(e, x)| e - x).collect(),
        })
    }

    /// Samples with `t >= t0`.
    pub fn after(&self, t0: f64) -> Self {
        let (t, err) = self
            .t
            .iter()
            .zip(&self.err)
            .filter(|(t, _)| **t >= t0)
            .map(|(t, e)| (*t, *e))
            .unzip();
        Self {
            label: self.label.clone(),
            t,
            err,
        }
    }
}

/// Sample mean and unbiased standard deviation.
pub fn error_stats(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 2 {
        return Err(Error::InsufficientData { have: x.len(), need: 2 });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Bin frequencies `k / (N dt)`, Hz, for `k = 0..=N/2`.
    pub freq: Vec<f64>,
    /// Single-sided Hann-windowed amplitude.
    pub amplitude: Vec<f64>,
    /// Single-sided rectangular periodogram; sums to `variance`.
    pub power: Vec<f64>,
    /// Population variance of the detrended series.
    pub variance: f64,
    pub f_lo: f64,
    /// Power in `(0, f_lo]`.
    pub low_band_energy: f64,
}

impl SpectrumReport {
    /// Power in `(f0, f1]`.
    pub fn band_energy(&self, f0: f64, f1: f64) -> f64 {
        self.freq
            .iter()
            .zip(&self.power)
            .filter(|(f, _)| **f > f0 && **f <= f1)
            .map(|(_, p)| p)
            .sum()
    }
}

/// Checks that `t` is uniformly sampled and returns the period.
pub fn uniform_period(t: &[f64]) -> Result<f64> {
    if t.len() < 2 {
        return Err(Error::InsufficientData { have: t.len(), need: 2 });
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let tol = 1e-6 * dt.abs().max(f64::MIN_POSITIVE);
    if !(dt > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > tol) {
        return Err(Error::Data("timestamps are not uniformly spaced".into()));
    }
    Ok(dt)
}

fn fft(x: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

/// Single-sided spectrum of a uniformly sampled series, mean removed.
pub fn spectrum(series: &ErrorSeries, f_lo: f64) -> Result<SpectrumReport> {
    let dt = uniform_period(&series.t)?;
    let n = series.err.len();
    let mean = series.err.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = series.err.iter().map(|v| v - mean).collect();
    let half = n / 2;
    let nf = n as f64;

    let hann: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / nf).cos())
        .collect();
    let gain: f64 = hann.iter().sum();
    let windowed: Vec<f64> = x.iter().zip(&hann).map(|(a, w)| a * w).collect();
    let hx = fft(&windowed);
    let rx = fft(&x);

    let mut freq = Vec::with_capacity(half + 1);
    let mut amplitude = Vec::with_capacity(half + 1);
    let mut power = Vec::with_capacity(half + 1);
    for k in 0..=half {
        let edge = k == 0 || (n.is_multiple_of(2) && k == half);
        let fold = if edge { 1.0 } else { 2.0 };
        freq.push(k as f64 / (nf * dt));
        amplitude.push(fold * hx[k].norm() / gain);
        power.push(fold * rx[k].norm_sqr() / (nf * nf));
    }
    let variance = x.iter().map(|v| v * v).sum::<f64>() / nf;
    let mut report = SpectrumReport {
        freq,
        amplitude,
        power,
        variance,
        f_lo,
        low_band_energy: 0.0,
    };
    report.low_band_energy = report.band_energy(0.0, f_lo);
    Ok(report)
}

/// Overlapping Allan deviation of a rate signal at cluster size `m`.
pub fn allan_deviation(x: &[f64], dt: f64, m: usize) -> Result<f64> {
    let n = x.len();
    if m == 0 || n < 2 * m + 1 {
        return Err(Error::InsufficientData {
            have: n,
            need: 2 * m + 1,
        });
    }
    let mut theta = Vec::with_capacity(n + 1);
    theta.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v * dt;
        theta.push(acc);
    }
    let tau = m as f64 * dt;
    let terms = theta.len() - 2 * m;
    let sum: f64 = (0..terms)
        .map(|k| (theta[k + 2 * m] - 2.0 * theta[k + m] + theta[k]).powi(2))
        .sum();
    Ok((sum / (2.0 * tau * tau * terms as f64)).sqrt())
}

/// Allan deviation at each cluster size, as `(τ, σ)` pairs.
pub fn allan_curve(x: &[f64], dt: f64, clusters: &[usize]) -> Result<Vec<(f64, f64)>> {
    clusters
        .iter()
        .map(|&m| Ok((m as f64 * dt, allan_deviation(x, dt, m)?)))
        .collect()
}

/// Empirical covariance of zero-mean-corrected samples.
pub fn empirical_covariance(samples: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            have: samples.len(),
            need: 2,
        });
    }
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mean = samples.iter().fold(DVector::zeros(d), |a, s| a + s) / n;
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        let e = s - &mean;
        cov += &e * e.transpose();
    }
    Ok(cov / (n - 1.0))
}

/// Empirical against analytic covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceReport {
    pub trials: usize,
    pub empirical: DMatrix<f64>,
    pub analytic: DMatrix<f64>,
    /// `‖P̂ - P‖_F / ‖P‖_F`.
    pub rel_frobenius: f64,
}

impl CovarianceReport {
    pub fn new(samples: &[DVector<f64>], analytic: DMatrix<f64>) -> Result<Self> {
        let empirical = empirical_covariance(samples)?;
        let rel_frobenius = (&empirical - &analytic).norm() / analytic.norm();
        Ok(Self {
            trials: samples.len(),
            empirical,
            analytic,
            rel_frobenius,
        })
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian3(rng: &mut ChaCha8Rng, var: &[f64; 3]) -> Vector3<f64> {
    Vector3::from_fn(|k, _| var[k].sqrt() * normal(rng))
}

/// Noise-free operating point of the covariance Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McScenario {
    pub v: Vector3<f64>,
    pub v_dot: Vector3<f64>,
    pub roll: f64,
}

impl Default for McScenario {
    /// A banked left-hand turn at 25 m/s on a slight climb.
    fn default() -> Self {
        Self {
            v: Vector3::new(20.0, 15.0, -0.5),
            v_dot: Vector3::new(-4.0, 6.5, 0.1),
            roll: -0.6,
        }
    }
}

fn mc_window(
    cfg: &PrefilterConfig,
    sc: &McScenario,
    rng: &mut ChaCha8Rng,
) -> Result<GnssWindow<f64>> {
    let mut w = GnssWindow::new(cfg.n);
    for i in (0..cfg.n).rev() {
        let t = -(i as f64) * cfg.tau;
        let y = sc.v + sc.v_dot * t + gaussian3(rng, &cfg.r_nu_s);
        w.push(-(i as i64), y)?;
    }
    Ok(w)
}

/// Monte Carlo of the reconstructed `(v, v̇)` at offset `t_offset` against `R_v`.
pub fn mc_covariance_rv(cfg: &PrefilterConfig, trials: usize, seed: u64, t_offset: f64) -> Result<CovarianceReport> {
    let design = build_design(cfg.n, cfg.tau, &Matrix3::from_diagonal(&Vector3::from(cfg.r_nu_s)))?;
    let sc = McScenario::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..trials)
        .map(|_| {
            let coeffs = fit(&mc_window(cfg, &sc, &mut rng)?, &design)?;
            Ok(DVector::from_column_slice(evaluate(&coeffs, t_offset).to_vector().as_slice()))
        })
        .collect::<Result<Vec<_>>>()?;
    let analytic = design.covariance_rv(t_offset);
    CovarianceReport::new(&samples, DMatrix::from_column_slice(6, 6, analytic.as_slice()))
}

/// Monte Carlo of the pseudo-measured attitude `Θ_av` against `R_Θ`.
pub fn mc_covariance_rtheta(
    cfg: &PrefilterConfig,
    scenario: &McScenario,
    trials: usize,
    seed: u64,
) -> Result<CovarianceReport> {
    let design = build_design(cfg.n, cfg.tau, &Matrix3::from_diagonal(&Vector3::from(cfg.r_nu_s)))?;
    let laps = LapCounters::default();
    let ve = InertialVelocityExtended::new(scenario.v, scenario.v_dot);
    let xi = aero_from_velocity(&ve, &laps, cfg.v_floor)?;
    let theta = EulerAngles::new(scenario.roll, xi.gamma, xi.chi);
    let a = rotation_from_euler(&theta) * (scenario.v_dot - GravityModel::new(cfg.g_hat).g_vec);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..trials)
        .map(|_| {
            let coeffs = fit(&mc_window(cfg, scenario, &mut rng)?, &design)?;
            let xi_hat = aero_from_velocity(&evaluate(&coeffs, 0.0), &laps, cfg.v_floor)?;
            let y_a = a + gaussian3(&mut rng, &cfg.r_nu_a);
            let th = f_theta(&y_a, &xi_hat, cfg.g_hat, cfg.a_floor)?;
            Ok(DVector::from_vec(vec![th.phi, th.theta, th.psi]))
        })
        .collect::<Result<Vec<_>>>()?;
    let r_nu_a = Matrix3::from_diagonal(&Vector3::from(cfg.r_nu_a));
    let analytic = covariance_rtheta(&design.covariance_rv(0.0), &ve, &a, &xi, &r_nu_a, cfg.g_hat, cfg.v_floor)?;
    CovarianceReport::new(&samples, DMatrix::from_column_slice(3, 3, analytic.as_slice()))
}

/// Monte Carlo check of both pre-filter covariances at the default operating point.
pub fn mc_covariance(cfg: &PrefilterConfig, trials: usize, seed: u64) -> Result<(CovarianceReport, CovarianceReport)> {
    Ok((
        mc_covariance_rv(cfg, trials, seed, 0.0)?,
        mc_covariance_rtheta(cfg, &McScenario::default(), trials, seed.wrapping_add(1))?,
    ))
}

/// Model mismatch `ν_m = h̄(f_Θ(a, ξ_e, g)) - q` along a truth stream, as `‖ν_m‖`.
///
/// Both quaternions are taken in the same hemisphere.
pub fn nu_m_series(truth: &TrajectoryTruth, a_floor: f64) -> Result<ErrorSeries> {
    let mut t = Vec::with_capacity(truth.samples.len());
    let mut err = Vec::with_capacity(truth.samples.len());
    for s in &truth.samples {
        let a = s.specific_force(truth.g_mag);
        let q_av = quat_from_euler(&f_theta(&a, &s.xi, truth.g_mag, a_floor)?).into_vector();
        let q = quat_from_euler(&s.theta).into_vector();
        t.push(s.t);
        err.push((q_av - q).norm().min((q_av + q).norm()));
    }
    Ok(ErrorSeries {
        label: "nu_m".into(),
        t,
        err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn series(x: Vec<f64>, dt: f64) -> ErrorSeries {
        ErrorSeries {
            label: "x".into(),
            t: (0..x.len()).map(|i| i as f64 * dt).collect(),
            err: x,
        }
    }

    #[test]
    fn stats_of_constant_and_alternating() {
        let (m, s) = error_stats(&[0.3; 10]).unwrap();
        assert_relative_eq!(m, 0.3, epsilon = 1e-15);
        assert!(s < 1e-15);
        let n = 8;
        let c = 0.25;
        let x: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { c } else { -c }).collect();
        let (m, s) = error_stats(&x).unwrap();
        assert_eq!(m, 0.0);
        assert_relative_eq!(s, c * (n as f64 / (n as f64 - 1.0)).sqrt(), epsilon = 1e-15);
        assert!(error_stats(&[1.0]).is_err());
    }

    #[test]
    fn truth_against_truth_is_zero() {
        let x = [0.1, 0.2, -0.4];
        let e = ErrorSeries::new("x", vec![0.0, 1.0, 2.0], &x, &x).unwrap();
        assert_eq!(error_stats(&e.err).unwrap(), (0.0, 0.0));
        assert!(ErrorSeries::new("x", vec![0.0], &x, &x).is_err());
    }

    #[test]
    fn sinusoid_peaks_at_its_amplitude() {
        let (a, f0, dt, n) = (0.7, 2.5, 0.01, 4000);
        let x: Vec<f64> = (0..n).map(|i| a * (std::f64::consts::TAU * f0 * i as f64 * dt).sin()).collect();
        let sp = spectrum(&series(x, dt), DEFAULT_LOW_BAND).unwrap();
        let (k, peak) = sp
            .amplitude
            .iter()
            .enumerate()
            .fold((0, 0.0), |b, (k, v)| if *v > b.1 { (k, *v) } else { b });
        assert_relative_eq!(sp.freq[k], f0, epsilon = 1e-12);
        assert_relative_eq!(peak, a, max_relative = 1e-9);
        assert_relative_eq!(sp.variance, a * a / 2.0, max_relative = 1e-9);
        assert!(sp.low_band_energy < 1e-20);
    }

    #[test]
    fn band_energies_sum_to_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1001, 1024] {
            let x: Vec<f64> = (0..n).map(|i| normal(&mut rng) + 0.01 * i as f64).collect();
            let sp = spectrum(&series(x.clone(), 0.1), 0.5).unwrap();
            let total: f64 = sp.power.iter().sum();
            let m = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            assert_relative_eq!(total, var, max_relative = 1e-10);
            assert_relative_eq!(sp.low_band_energy + sp.band_energy(0.5, 10.0), var, max_relative = 1e-10);
        }
    }

    #[test]
    fn white_sequence_has_a_flat_spectrum() {
        // periodogram bins of unit white noise are ~ (2/N) χ²₂/2; band averages of
        // 100 bins have relative std 0.1
        let n = 8192;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let sp = spectrum(&series(x, 0.01), 0.5).unwrap();
        let expected = 2.0 / n as f64;
        for band in sp.power[1..n / 2].chunks(100).filter(|c| c.len() == 100) {
            let mean = band.iter().sum::<f64>() / 100.0;
            assert!((mean / expected - 1.0).abs() < 0.45, "{}", mean / expected);
        }
    }

    #[test]
    fn non_uniform_timestamps_are_rejected() {
        let s = ErrorSeries {
            label: "x".into(),
            t: vec![0.0, 0.1, 0.25, 0.3],
            err: vec![0.0; 4],
        };
        assert!(matches!(spectrum(&s, 0.5), Err(Error::Data(_))));
    }

    #[test]
    fn allan_deviation_of_white_noise() {
        // white rate with std σ at period dt: σ_A(τ) = σ √(dt / τ)
        let (sigma, dt, n) = (0.02, 0.01, 400_000);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..n).map(|_| sigma * normal(&mut rng)).collect();
        for (tau, ad) in allan_curve(&x, dt, &[1, 10, 100]).unwrap() {
            assert_relative_eq!(ad, sigma * (dt / tau).sqrt(), max_relative = 0.05);
        }
        assert!(allan_deviation(&x[..10], dt, 5).is_err());
    }

    #[test]
    fn allan_deviation_of_a_ramp() {
        // rate ramp R t: σ_A(τ) = R τ / √2
        let (r, dt) = (0.3, 0.01);
        let x: Vec<f64> = (0..2000).map(|i| r * i as f64 * dt).collect();
        assert_relative_eq!(allan_deviation(&x, dt, 50).unwrap(), r * 0.5 / 2f64.sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn reconstructed_velocity_covariance_matches_design() {
        let cfg = PrefilterConfig::default();
        let r = mc_covariance_rv(&cfg, 4000, 1, cfg.tau).unwrap();
        assert!(r.rel_frobenius < 0.1, "{}", r.rel_frobenius);
    }

    #[test]
    fn pseudo_attitude_covariance_matches_linearisation() {
        let cfg = PrefilterConfig::default();
        let r = mc_covariance_rtheta(&cfg, &McScenario::default(), 4000, 2).unwrap();
        assert!(r.rel_frobenius < 0.1, "{}", r.rel_frobenius);
    }
}
