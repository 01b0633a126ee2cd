use std::path::{Path, PathBuf};

use polarbg_core::sim::demo_sensor;
use polarbg_core::{DmdConfig, Error, PipelineConfig, Result, SensorConfig, TrackerConfig};
use serde::{Deserialize, Serialize};

/// Default file locations, used when the matching flag is absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub frames: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub roi: Option<PathBuf>,
    pub zones: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub sensor: SensorConfig,
    pub dmd: DmdConfig,
    pub pipeline: PipelineConfig,
    pub tracker: TrackerConfig,
    pub paths: Paths,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    sensor: Option<SensorConfig>,
    #[serde(default)]
    dmd: DmdConfig,
    #[serde(default)]
    pipeline: PipelineConfig,
    tracker: Option<serde_json::Value>,
    #[serde(default)]
    paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sensor = demo_sensor();
        let tracker = TrackerConfig::default().with_frame_rate(sensor.frame_rate);
        RunConfig {
            sensor,
            dmd: DmdConfig::default(),
            pipeline: PipelineConfig::default(),
            tracker,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Parse and validate. Missing sections take defaults; the tracker time
    /// step follows the sensor frame rate unless `tracker.dt` is given.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text)?;
        let sensor = raw.sensor.unwrap_or_else(demo_sensor);
        let tracker = match raw.tracker {
            None => TrackerConfig::default().with_frame_rate(sensor.frame_rate),
            Some(value) => {
                let explicit_dt = value.get("dt").is_some();
                let t: TrackerConfig = serde_json::from_value(value)?;
                if explicit_dt {
                    t
                } else {
                    t.with_frame_rate(sensor.frame_rate)
                }
            }
        };
        let cfg = RunConfig { sensor, dmd: raw.dmd, pipeline: raw.pipeline, tracker, paths: raw.paths };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.dmd.validate()?;
        self.pipeline.validate()?;
        self.tracker.validate()
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_json(&text)
            }
        }
    }
}

/// The flag value, else the configured default, else a validation error.
pub fn resolve(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| Error::InvalidConfig(format!("no {what} given (flag or paths.{what} in the config)")))
}
