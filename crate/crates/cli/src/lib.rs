//! Command implementations behind the `polarbg` binary.

pub mod config;
pub mod plot;

#[cfg(test)]
mod command_tests;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use polarbg_core::cfta::collect_unit_ranges;
use polarbg_core::eval::{count_table, point_table, FrameTiming};
use polarbg_core::frames::{load_frames, write_frames_csv};
use polarbg_core::pipeline::{detect_frame_timed, read_detections_csv, read_foreground_csv, write_detections_csv, write_foreground_csv};
use polarbg_core::sim::{read_labels_csv, simulate, write_labels_csv, Label, Scene};
use polarbg_core::tracking::{read_tracks_csv, write_tracks_csv, MovementCounts, MovementZones};
use polarbg_core::{
    build_roi_mask, count_metrics, count_movements, extract_trajectories, point_metrics, timing_report,
    train_background_model, BackgroundModel, Error, FusionMode, Polygon, Result, Tracker,
};

use crate::config::{resolve, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "polarbg", version, about = "Roadside LiDAR background subtraction, detection and tracking")]
pub struct Cli {
    /// Run configuration (sensor, dmd, pipeline, tracker, paths). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene to frames.csv, gt_labels.csv and gt_tracks.csv.
    Simulate(SimulateArgs),
    /// Learn a background model from frames.
    Train(TrainArgs),
    /// Subtract the background and detect vehicles; writes detections.csv and foreground.csv.
    Detect(DetectArgs),
    /// Track detections; writes tracks.csv and counts.json.
    Track(TrackArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Draw a figure.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene JSON.
    #[arg(long)]
    pub scene: PathBuf,
    /// Number of frames to render.
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Frames CSV.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Output model JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FusionArg {
    Union,
    Intersection,
    Range,
    Intensity,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Union => FusionMode::Union,
            FusionArg::Intersection => FusionMode::Intersection,
            FusionArg::Range => FusionMode::RangeOnly,
            FusionArg::Intensity => FusionMode::IntensityOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// ROI JSON: a list of polygons, each a list of [x, y] vertices.
    #[arg(long)]
    pub roi: Option<PathBuf>,
    /// Overrides pipeline.fusion_mode.
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write a per-stage timing report (includes a tracking pass).
    #[arg(long)]
    pub timing: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Zones JSON: a list of {"name", "polygon"} objects.
    #[arg(long)]
    pub zones: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Points,
    Counts,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    /// foreground.csv (points) or counts.json (counts).
    #[arg(long)]
    pub predicted: PathBuf,
    /// gt_labels.csv (points); counts.json or gt_tracks.csv (counts).
    #[arg(long)]
    pub truth: PathBuf,
    /// Frames CSV supplying ranges (points mode).
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Zones used to count a gt_tracks.csv truth (counts mode).
    #[arg(long)]
    pub zones: Option<PathBuf>,
    /// Metrics JSON output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Stmap,
    Trajectories,
    Histogram,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Frames CSV (stmap, histogram).
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Model JSON (stmap).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Tracks CSV (trajectories).
    #[arg(long)]
    pub tracks: Option<PathBuf>,
    /// Zones JSON used to color trajectories.
    #[arg(long)]
    pub zones: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub beam: usize,
    /// Azimuth bin of the histogram unit.
    #[arg(long, default_value_t = 0)]
    pub bin: usize,
    /// Output file (trajectories, histogram) or directory (stmap).
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

/// Parse a `POLARBG_THREADS` value; 0 means automatic.
pub fn thread_count(raw: &str) -> Result<usize> {
    raw.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("POLARBG_THREADS must be a non-negative integer, got {raw:?}")))
}

/// Cap the global rayon pool from `POLARBG_THREADS` (0 or unset: automatic).
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("POLARBG_THREADS") else { return Ok(()) };
    let n = thread_count(&raw)?;
    if n > 0 {
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Write through a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

pub fn load_roi(path: &Path) -> Result<Vec<Polygon>> {
    read_json(path)
}

pub fn load_zones(path: &Path) -> Result<MovementZones> {
    read_json(path)
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&cfg, a),
        Command::Train(a) => cmd_train(&cfg, a),
        Command::Detect(a) => cmd_detect(&cfg, a),
        Command::Track(a) => cmd_track(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Plot(a) => cmd_plot(&cfg, a),
    }
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    resolve(flag, &cfg.paths.out_dir, "out_dir")
}

pub fn cmd_simulate(cfg: &RunConfig, a: SimulateArgs) -> Result<()> {
    let dir = out_dir(a.out_dir, cfg)?;
    let scene = Scene::load(&a.scene)?;
    let (frames, truth) = simulate(&scene, a.frames, &cfg.sensor)?;
    let mut buf = Vec::new();
    write_frames_csv(&frames, &cfg.sensor, &mut buf)?;
    write_atomic(&dir.join("frames.csv"), &buf)?;
    buf.clear();
    write_labels_csv(&truth, &mut buf)?;
    write_atomic(&dir.join("gt_labels.csv"), &buf)?;
    buf.clear();
    write_tracks_csv(&truth.trajectories, &mut buf)?;
    write_atomic(&dir.join("gt_tracks.csv"), &buf)?;
    println!("simulated {} frames, {} vehicles -> {}", frames.len(), truth.trajectories.len(), dir.display());
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, a: TrainArgs) -> Result<()> {
    let frames_path = resolve(a.frames, &cfg.paths.frames, "frames")?;
    let out = resolve(a.out, &cfg.paths.model, "model")?;
    let frames = load_frames(&frames_path, &cfg.sensor)?;
    let model = train_background_model(&frames, &cfg.sensor, &cfg.dmd)?;
    let mut json = model.to_json()?.into_bytes();
    json.push(b'\n');
    write_atomic(&out, &json)?;
    let fallback = model.beams.iter().filter(|b| b.source == polarbg_core::BackgroundSource::MedianFallback).count();
    println!(
        "trained on {} frames: {} beams ({} median fallback) -> {}",
        frames.len(),
        model.beams.len(),
        fallback,
        out.display()
    );
    Ok(())
}

pub fn cmd_detect(cfg: &RunConfig, a: DetectArgs) -> Result<()> {
    let frames_path = resolve(a.frames, &cfg.paths.frames, "frames")?;
    let model_path = resolve(a.model, &cfg.paths.model, "model")?;
    let roi_path = resolve(a.roi, &cfg.paths.roi, "roi")?;
    let dir = out_dir(a.out_dir, cfg)?;
    let model = BackgroundModel::load(&model_path)?;
    model.check_sensor(&cfg.sensor)?;
    let mut pipeline = cfg.pipeline.clone();
    if let Some(f) = a.fusion {
        pipeline.fusion_mode = f.into();
    }
    let roi = build_roi_mask(&load_roi(&roi_path)?, pipeline.roi_cell_size)?;
    let frames = load_frames(&frames_path, &model.sensor)?;

    let mut results = Vec::with_capacity(frames.len());
    let mut timings = Vec::with_capacity(frames.len());
    let mut tracker = Tracker::new(cfg.tracker.clone())?;
    for f in &frames {
        let start = Instant::now();
        let (d, t) = detect_frame_timed(f, &model, &roi, &pipeline)?;
        let track_start = Instant::now();
        if a.timing.is_some() {
            tracker.step(&d.detections, f.frame_id)?;
        }
        let track = track_start.elapsed().as_secs_f64();
        timings.push(FrameTiming {
            mask: t.mask,
            fuse: t.fuse,
            denoise: t.denoise,
            cluster: t.cluster,
            track,
            total: start.elapsed().as_secs_f64(),
        });
        results.push(d);
    }
    let mut buf = Vec::new();
    write_detections_csv(&results, &mut buf)?;
    write_atomic(&dir.join("detections.csv"), &buf)?;
    buf.clear();
    write_foreground_csv(&results, &mut buf)?;
    write_atomic(&dir.join("foreground.csv"), &buf)?;
    if let Some(path) = a.timing {
        write_atomic(&path, &json_bytes(&timing_report(&timings)?)?)?;
    }
    let returns: usize = results.iter().map(|d| d.returns).sum();
    let fused: usize = results.iter().map(|d| d.fused).sum();
    let detections: usize = results.iter().map(|d| d.detections.len()).sum();
    let removed = if returns == 0 { 1.0 } else { 1.0 - fused as f64 / returns as f64 };
    println!(
        "{} frames, {} detections, {:.2}% of returns classified background -> {}",
        frames.len(),
        detections,
        100.0 * removed,
        dir.display()
    );
    Ok(())
}

pub fn cmd_track(cfg: &RunConfig, a: TrackArgs) -> Result<()> {
    let det_path = resolve(a.detections, &cfg.paths.detections, "detections")?;
    let zones_path = resolve(a.zones, &cfg.paths.zones, "zones")?;
    let dir = out_dir(a.out_dir, cfg)?;
    let zones = load_zones(&zones_path)?;
    let per_frame = read_detections_csv(open(&det_path)?)?;
    let tracker = polarbg_core::tracking::track_sequence(&per_frame, &cfg.tracker)?;
    let trajectories = extract_trajectories(&tracker);
    let counts = count_movements(&trajectories, &zones);
    let mut buf = Vec::new();
    write_tracks_csv(&trajectories, &mut buf)?;
    write_atomic(&dir.join("tracks.csv"), &buf)?;
    write_atomic(&dir.join("counts.json"), &json_bytes(&counts)?)?;
    println!(
        "{} trajectories, {} counted, {} unclassified -> {}",
        trajectories.len(),
        counts.total(),
        counts.unclassified,
        dir.display()
    );
    Ok(())
}

fn load_counts(path: &Path, zones: Option<&Path>) -> Result<MovementCounts> {
    if path.extension().is_some_and(|e| e == "json") {
        return read_json(path);
    }
    let zones = zones.ok_or_else(|| Error::InvalidConfig("--zones is required to count a tracks CSV".into()))?;
    let trajectories = read_tracks_csv(open(path)?)?;
    Ok(count_movements(&trajectories, &load_zones(zones)?))
}

pub fn cmd_eval(cfg: &RunConfig, a: EvalArgs) -> Result<()> {
    let (json, table) = match a.mode {
        EvalMode::Points => {
            let frames_path = resolve(a.frames, &cfg.paths.frames, "frames")?;
            let sensor = &cfg.sensor;
            let frames = load_frames(&frames_path, sensor)?;
            let labels = read_labels_csv(open(&a.truth)?, sensor)?;
            let mut predicted: BTreeMap<u64, Vec<bool>> = BTreeMap::new();
            for p in read_foreground_csv(open(&a.predicted)?)? {
                if p.beam >= sensor.beam_count || p.bin >= sensor.azimuth_bins {
                    return Err(Error::ShapeMismatch(format!("foreground cell ({}, {}) outside the sensor grid", p.beam, p.bin)));
                }
                predicted.entry(p.frame).or_insert_with(|| vec![false; sensor.cells()])[p.beam * sensor.azimuth_bins + p.bin] = true;
            }
            if let Some(f) = predicted.keys().chain(labels.keys()).find(|f| !frames.iter().any(|fr| fr.frame_id == **f)) {
                return Err(Error::ShapeMismatch(format!("frame {f} is not in the frames file")));
            }
            let empty_pred = vec![false; sensor.cells()];
            let empty_labels = vec![Label::NonReturn; sensor.cells()];
            let p: Vec<Vec<bool>> = frames.iter().map(|f| predicted.get(&f.frame_id).unwrap_or(&empty_pred).clone()).collect();
            let l: Vec<Vec<Label>> = frames.iter().map(|f| labels.get(&f.frame_id).unwrap_or(&empty_labels).clone()).collect();
            let r: Vec<Vec<f64>> = frames.iter().map(|f| f.range.clone()).collect();
            let m = point_metrics(&p, &l, &r)?;
            (json_bytes(&m)?, point_table(&m))
        }
        EvalMode::Counts => {
            let predicted = load_counts(&a.predicted, a.zones.as_deref())?;
            let truth = load_counts(&a.truth, a.zones.as_deref())?;
            let m = count_metrics(&predicted, &truth);
            (json_bytes(&m)?, count_table(&m))
        }
    };
    write_atomic(&a.out, &json)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_plot(cfg: &RunConfig, a: PlotArgs) -> Result<()> {
    match a.kind {
        PlotKind::Stmap => {
            let frames_path = resolve(a.frames, &cfg.paths.frames, "frames")?;
            let model_path = resolve(a.model, &cfg.paths.model, "model")?;
            let model = BackgroundModel::load(&model_path)?;
            if a.beam >= model.sensor.beam_count {
                return Err(Error::InvalidConfig(format!("beam {} outside 0..{}", a.beam, model.sensor.beam_count)));
            }
            let frames = load_frames(&frames_path, &model.sensor)?;
            let [original, background, foreground] = plot::stmaps(&frames, &model, a.beam);
            let stem = format!("stmap_beam{}", a.beam);
            write_atomic(&a.out.join(format!("{stem}_original.pgm")), original.as_bytes())?;
            write_atomic(&a.out.join(format!("{stem}_background.pgm")), background.as_bytes())?;
            write_atomic(&a.out.join(format!("{stem}_foreground.pgm")), foreground.as_bytes())?;
        }
        PlotKind::Trajectories => {
            let tracks = a.tracks.ok_or_else(|| Error::InvalidConfig("--tracks is required".into()))?;
            let trajectories = read_tracks_csv(open(&tracks)?)?;
            let zones = match a.zones.or_else(|| cfg.paths.zones.clone()) {
                Some(p) => Some(load_zones(&p)?),
                None => None,
            };
            write_atomic(&a.out, plot::trajectories_svg(&trajectories, zones.as_ref()).as_bytes())?;
        }
        PlotKind::Histogram => {
            let frames_path = resolve(a.frames, &cfg.paths.frames, "frames")?;
            let sensor = &cfg.sensor;
            if a.beam >= sensor.beam_count || a.bin >= sensor.azimuth_bins {
                return Err(Error::InvalidConfig(format!("unit ({}, {}) outside the sensor grid", a.beam, a.bin)));
            }
            let frames = load_frames(&frames_path, sensor)?;
            let (samples, _) = collect_unit_ranges(&frames, a.beam, a.bin);
            write_atomic(&a.out, plot::histogram_svg(&samples, sensor.max_range)?.as_bytes())?;
        }
    }
    println!("wrote {}", a.out.display());
    Ok(())
}
