//! Run configuration, read from a single TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ekf::EkfConfig;
use crate::error::{Error, Result};
use crate::prefilter::PrefilterConfig;
use crate::sensors::SensorSuite;
use crate::trajectory::{SpeedProfileLimits, TrackSpec, TruthOptions};

/// Speed fed to the gyro-based baseline estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedSource {
    /// True speed along the body x-axis.
    #[default]
    Truth,
    /// Speed reconstructed by the pre-filter from GNSS.
    Gnss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub track: TrackSpec,
    pub limits: SpeedProfileLimits,
    pub truth: TruthOptions,
    pub sensors: SensorSuite,
    /// Pre-filter settings; derived from `sensors` when absent.
    pub prefilter: Option<PrefilterConfig>,
    pub ekf: EkfConfig,
    pub seed: u64,
    pub baseline_speed: SpeedSource,
    /// Upper edge of the low band in the error spectra, Hz.
    pub low_band: f64,
    /// Statistics skip the first `settle_laps` laps.
    pub settle_laps: f64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            track: TrackSpec::default(),
            limits: SpeedProfileLimits::default(),
            truth: TruthOptions::default(),
            sensors: SensorSuite::default(),
            prefilter: None,
            ekf: EkfConfig::default(),
            seed: 1,
            baseline_speed: SpeedSource::Truth,
            low_band: crate::analysis::DEFAULT_LOW_BAND,
            settle_laps: 1.0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Effective pre-filter settings.
    pub fn prefilter(&self) -> PrefilterConfig {
        self.prefilter
            .unwrap_or_else(|| PrefilterConfig::from_sensors(&self.sensors))
    }

    pub fn validate(&self) -> Result<()> {
        self.sensors.validate()?;
        self.limits.validate()?;
        if (self.truth.dt - self.sensors.gyro.ts).abs() > 1e-9 * self.sensors.gyro.ts {
            return Err(Error::Config(format!(
                "truth step {} s differs from the IMU period {} s",
                self.truth.dt, self.sensors.gyro.ts
            )));
        }
        let pf = self.prefilter();
        if (pf.tau - self.sensors.gnss.ts).abs() > 1e-9 * self.sensors.gnss.ts {
            return Err(Error::Config("pre-filter period differs from the GNSS period".into()));
        }
        if !(self.low_band > 0.0) || !(self.settle_laps >= 0.0) {
            return Err(Error::Config("analysis settings out of range".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::from_toml("seed = 7\n[truth]\nduration = 5.0\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.truth.duration, 5.0);
        assert_eq!(cfg.truth.k_rider, 0.1);
        assert_eq!(cfg.sensors, SensorSuite::default());
    }

    #[test]
    fn bad_files_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("sed = 7"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[truth]\ndt = 0.02\n"), Err(Error::Config(_))));
    }
}
