//! Shared fixtures for the benchmarks.

use polarbg_core::sim::{corridor_roi, corridor_scene, demo_sensor};
use polarbg_core::{build_roi_mask, simulate, train_background_model, BackgroundModel, DmdConfig, PipelineConfig, PolarFrame, RoiMask};

pub struct Fixture {
    pub frames: Vec<PolarFrame>,
    pub model: BackgroundModel,
    pub roi: RoiMask,
    pub pipeline: PipelineConfig,
}

/// Corridor frames with a model trained on the first `train` of them.
pub fn corridor_fixture(frames: usize, train: usize) -> Fixture {
    let sensor = demo_sensor();
    let (frames, _) = simulate(&corridor_scene(), frames, &sensor).expect("corridor scene renders");
    let model = train_background_model(&frames[..train], &sensor, &DmdConfig::default()).expect("model trains");
    let pipeline = PipelineConfig::default();
    let roi = build_roi_mask(&corridor_roi(), pipeline.roi_cell_size).expect("valid roi");
    Fixture { frames, model, roi, pipeline }
}
