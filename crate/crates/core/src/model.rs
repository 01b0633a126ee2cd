//! Trained background model: per-beam intensity backgrounds and per-unit range
//! thresholds, with its JSON file format.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cfta::{learn_thresholds, Provenance, ThresholdTable};
use crate::dmd::{temporal_median, train_intensity_model, BackgroundSource, DmdConfig};
use crate::error::{Error, Result};
use crate::frames::{build_st_matrix, Channel, PolarFrame, SensorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamBackground {
    pub beam: usize,
    /// Background intensity per azimuth bin.
    pub background: Vec<f64>,
    /// All DMD eigenvalues as (re, im).
    pub eigenvalues: Vec<[f64; 2]>,
    /// Indices into `eigenvalues` of the static modes.
    pub background_modes: Vec<usize>,
    pub source: BackgroundSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSpan {
    pub first_frame: u64,
    pub last_frame: u64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundModel {
    pub sensor: SensorConfig,
    pub dmd: DmdConfig,
    pub training: TrainingSpan,
    pub beams: Vec<BeamBackground>,
    pub thresholds: ThresholdTable,
}

/// On-disk layout. Thresholds and provenance codes are row-major (beam, bin).
#[derive(Serialize, Deserialize)]
struct ModelFile {
    sensor_hash: String,
    sensor: SensorConfig,
    dmd: DmdConfig,
    training: TrainingSpan,
    beams: Vec<BeamBackground>,
    thresholds: Vec<f64>,
    provenance: Vec<Provenance>,
}

impl BackgroundModel {
    pub fn sensor_hash(&self) -> String {
        self.sensor.hash()
    }

    pub fn background(&self, beam: usize) -> &[f64] {
        &self.beams[beam].background
    }

    /// Fail unless the model was trained for exactly this sensor.
    pub fn check_sensor(&self, cfg: &SensorConfig) -> Result<()> {
        let (ours, theirs) = (self.sensor_hash(), cfg.hash());
        if ours != theirs {
            return Err(Error::ModelMismatch(format!(
                "model sensor hash {ours} differs from configuration hash {theirs}"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            sensor_hash: self.sensor_hash(),
            sensor: self.sensor.clone(),
            dmd: self.dmd.clone(),
            training: self.training,
            beams: self.beams.clone(),
            thresholds: self.thresholds.thresholds.clone(),
            provenance: self.thresholds.provenance.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.sensor.validate()?;
        if file.sensor.hash() != file.sensor_hash {
            return Err(Error::ModelMismatch("stored sensor hash does not match stored sensor".into()));
        }
        let cfg = &file.sensor;
        if file.beams.len() != cfg.beam_count
            || file.beams.iter().enumerate().any(|(b, bb)| bb.beam != b || bb.background.len() != cfg.azimuth_bins)
        {
            return Err(Error::ShapeMismatch("beam backgrounds do not match the sensor grid".into()));
        }
        if file.thresholds.len() != cfg.cells() || file.provenance.len() != cfg.cells() {
            return Err(Error::ShapeMismatch("threshold table does not match the sensor grid".into()));
        }
        Ok(BackgroundModel {
            thresholds: ThresholdTable {
                beam_count: cfg.beam_count,
                azimuth_bins: cfg.azimuth_bins,
                thresholds: file.thresholds,
                provenance: file.provenance,
            },
            sensor: file.sensor,
            dmd: file.dmd,
            training: file.training,
            beams: file.beams,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Train intensity backgrounds (one DMD per beam) and range thresholds.
pub fn train_background_model(
    frames: &[PolarFrame],
    sensor: &SensorConfig,
    dmd: &DmdConfig,
) -> Result<BackgroundModel> {
    sensor.validate()?;
    dmd.validate()?;
    if frames.len() < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: frames.len() });
    }
    if let Some(bad) = frames.iter().find(|f| !f.matches(sensor)) {
        return Err(Error::ShapeMismatch(format!(
            "frame {} has shape {:?}, sensor expects {:?}",
            bad.frame_id,
            bad.shape(),
            (sensor.beam_count, sensor.azimuth_bins)
        )));
    }
    let beams = (0..sensor.beam_count)
        .into_par_iter()
        .map(|beam| {
            let m = match train_intensity_model(frames, beam, dmd) {
                Ok(m) => m,
                // a beam that never returns has nothing to decompose
                Err(Error::DegenerateMatrix(_)) => {
                    let st = build_st_matrix(frames, beam, Channel::Intensity)?;
                    return Ok(BeamBackground {
                        beam,
                        background: temporal_median(&st.data),
                        eigenvalues: Vec::new(),
                        background_modes: Vec::new(),
                        source: BackgroundSource::MedianFallback,
                    });
                }
                Err(e) => return Err(e),
            };
            Ok(BeamBackground {
                beam,
                eigenvalues: m.eigenvalues.iter().map(|l| [l.re, l.im]).collect(),
                background_modes: m.background_indices,
                background: m.background,
                source: m.source,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let thresholds = learn_thresholds(frames, sensor)?;
    let ids = frames.iter().map(|f| f.frame_id);
    Ok(BackgroundModel {
        sensor: sensor.clone(),
        dmd: dmd.clone(),
        training: TrainingSpan {
            first_frame: ids.clone().min().unwrap_or(0),
            last_frame: ids.max().unwrap_or(0),
            frames: frames.len(),
        },
        beams,
        thresholds,
    })
}
