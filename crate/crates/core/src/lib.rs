//! Roadside LiDAR background subtraction, detection and tracking.
//!
//! Frames are hashed onto a `beam x azimuth` grid ([`frames`]). Intensity
//! backgrounds come from dynamic mode decomposition ([`dmd`]) and range
//! thresholds from the coarse-fine triangle rule ([`cfta`]); both are bundled
//! in a [`BackgroundModel`]. [`pipeline`] turns a frame into vehicle detections,
//! [`tracking`] links them into trajectories and movement counts, [`sim`]
//! renders labeled synthetic scenes and [`eval`] scores the results.

pub mod cfta;
pub mod dmd;
pub mod error;
pub mod eval;
pub mod frames;
pub mod geometry;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod tracking;

pub use cfta::{learn_thresholds, Provenance, RangeHistogram, ThresholdTable};
pub use dmd::{fit_dmd, BackgroundSource, DmdConfig, DmdModel};
pub use error::{Error, Result};
pub use eval::{count_metrics, point_metrics, timing_report, CountMetrics, FrameTiming, PointMetrics, TimingReport};
pub use frames::{assemble_frame, build_st_matrix, Channel, PointRecord, PolarFrame, STMatrix, SensorConfig};
pub use geometry::{NamedPolygon, Polygon};
pub use model::{train_background_model, BackgroundModel};
pub use pipeline::{
    build_roi_mask, detect_frame, Detection, FrameDetections, FusionMode, PipelineConfig, RoiMask,
};
pub use sim::{simulate, GroundTruth, Label, Scene};
pub use tracking::{
    count_movements, extract_trajectories, MovementCounts, MovementZones, Track, TrackStatus, Tracker,
    TrackerConfig, Trajectory,
};
