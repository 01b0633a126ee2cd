//! Per-frame detection: background masks, fusion, ROI geofence, k-distance
//! denoising, Euclidean clustering and oriented boxes.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cfta::range_foreground_mask;
use crate::dmd::intensity_foreground_mask;
use crate::error::{Error, Result};
use crate::frames::{spherical_to_cartesian, PolarFrame};
use crate::geometry::Polygon;
use crate::model::BackgroundModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    #[default]
    Union,
    Intersection,
    #[serde(rename = "range")]
    RangeOnly,
    #[serde(rename = "intensity")]
    IntensityOnly,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(FusionMode::Union),
            "intersection" => Ok(FusionMode::Intersection),
            "range" => Ok(FusionMode::RangeOnly),
            "intensity" => Ok(FusionMode::IntensityOnly),
            other => Err(Error::Parse(format!("unknown fusion mode {other:?}"))),
        }
    }
}

fn default_k() -> usize {
    4
}
fn default_dmax() -> f64 {
    1.0
}
fn default_eps() -> f64 {
    1.2
}
fn default_min_points() -> usize {
    10
}
fn default_roi_cell() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub fusion_mode: FusionMode,
    #[serde(default = "default_k")]
    pub denoise_k: usize,
    #[serde(default = "default_dmax")]
    pub denoise_dmax: f64,
    #[serde(default = "default_eps")]
    pub cluster_eps: f64,
    #[serde(default = "default_min_points")]
    pub min_cluster_points: usize,
    /// Raster resolution of the ROI mask, meters.
    #[serde(default = "default_roi_cell")]
    pub roi_cell_size: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fusion_mode: FusionMode::Union,
            denoise_k: default_k(),
            denoise_dmax: default_dmax(),
            cluster_eps: default_eps(),
            min_cluster_points: default_min_points(),
            roi_cell_size: default_roi_cell(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.denoise_k == 0 || self.min_cluster_points == 0 {
            return Err(Error::InvalidConfig("denoise_k and min_cluster_points must be positive".into()));
        }
        if !(self.denoise_dmax > 0.0 && self.cluster_eps > 0.0 && self.roi_cell_size > 0.0) {
            return Err(Error::InvalidConfig("denoise_dmax, cluster_eps and roi_cell_size must be positive".into()));
        }
        Ok(())
    }
}

/// Rasterized drivable area on the x-y plane.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiMask {
    pub cell_size: f64,
    pub origin: [f64; 2],
    pub cols: usize,
    pub rows: usize,
    /// Row-major, row = y index.
    pub grid: Vec<bool>,
    pub source_polygons: Vec<Polygon>,
}

impl RoiMask {
    fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let cx = ((x - self.origin[0]) / self.cell_size).floor();
        let cy = ((y - self.origin[1]) / self.cell_size).floor();
        if cx < 0.0 || cy < 0.0 || cx >= self.cols as f64 || cy >= self.rows as f64 {
            return None;
        }
        Some(cy as usize * self.cols + cx as usize)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some_and(|c| self.grid[c])
    }

    pub fn cell_center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn true_cells(&self) -> usize {
        self.grid.iter().filter(|&&c| c).count()
    }
}

/// Cells whose center lies inside any polygon are drivable.
pub fn build_roi_mask(polygons: &[Polygon], cell_size: f64) -> Result<RoiMask> {
    if polygons.is_empty() {
        return Err(Error::InvalidPolygon("at least one ROI polygon is required".into()));
    }
    if !(cell_size > 0.0) {
        return Err(Error::InvalidConfig("cell_size must be positive".into()));
    }
    let (x0, y0, x1, y1) = polygons.iter().map(Polygon::bounds).fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |a, b| (a.0.min(b.0), a.1.min(b.1), a.2.max(b.2), a.3.max(b.3)),
    );
    let cols = (((x1 - x0) / cell_size).ceil() as usize).max(1);
    let rows = (((y1 - y0) / cell_size).ceil() as usize).max(1);
    let mut mask = RoiMask {
        cell_size,
        origin: [x0, y0],
        cols,
        rows,
        grid: vec![false; cols * rows],
        source_polygons: polygons.to_vec(),
    };
    for row in 0..rows {
        for col in 0..cols {
            let [cx, cy] = mask.cell_center(col, row);
            mask.grid[row * cols + col] = polygons.iter().any(|p| p.contains(cx, cy));
        }
    }
    Ok(mask)
}

/// Which background model flagged a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Flags {
    pub intensity: bool,
    pub range: bool,
}

impl Flags {
    pub fn code(self) -> &'static str {
        match (self.intensity, self.range) {
            (true, true) => "IR",
            (true, false) => "I",
            (false, true) => "R",
            (false, false) => "",
        }
    }

    pub fn parse(code: &str) -> Self {
        Flags {
            intensity: code.contains('I'),
            range: code.contains('R'),
        }
    }
}

/// Per-cell fusion; `Some(flags)` marks foreground.
pub fn fuse_masks(intensity: &[bool], range: &[bool], mode: FusionMode) -> Result<Vec<Option<Flags>>> {
    if intensity.len() != range.len() {
        return Err(Error::ShapeMismatch(format!(
            "intensity mask has {} cells, range mask {}",
            intensity.len(),
            range.len()
        )));
    }
    Ok(intensity
        .iter()
        .zip(range)
        .map(|(&i, &r)| {
            let keep = match mode {
                FusionMode::Union => i || r,
                FusionMode::Intersection => i && r,
                FusionMode::RangeOnly => r,
                FusionMode::IntensityOnly => i,
            };
            keep.then_some(Flags { intensity: i, range: r })
        })
        .collect())
}

/// Foreground return in sensor Cartesian coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForegroundPoint {
    pub frame: u64,
    pub beam: usize,
    pub bin: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub range: f64,
    pub intensity: f64,
    pub flagged_by: Flags,
    /// Index of the detection this point belongs to, if any.
    pub detection: Option<usize>,
}

impl ForegroundPoint {
    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

pub fn apply_roi(points: Vec<ForegroundPoint>, mask: &RoiMask) -> Vec<ForegroundPoint> {
    points.into_iter().filter(|p| mask.contains(p.x, p.y)).collect()
}

/// Uniform hash grid over 3-D points for fixed-radius neighbor queries.
struct VoxelGrid<'a> {
    points: &'a [[f64; 3]],
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> VoxelGrid<'a> {
    fn new(points: &'a [[f64; 3]], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        VoxelGrid { points, cell, buckets }
    }

    fn key(p: &[f64; 3], cell: f64) -> [i64; 3] {
        [
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        ]
    }

    /// Calls `f(j)` for every other point within `radius` (<= cell) of point `i`.
    fn for_neighbors(&self, i: usize, radius: f64, mut f: impl FnMut(usize)) {
        let p = &self.points[i];
        let k = Self::key(p, self.cell);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &j in bucket {
                            if j != i && dist2(p, &self.points[j]) <= r2 {
                                f(j);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Indices of points whose k-th nearest neighbor is within `d_max`. With at
/// most `k` points nothing is removed.
pub fn denoise(points: &[[f64; 3]], k: usize, d_max: f64) -> Vec<usize> {
    assert!(k >= 1, "k must be positive");
    if points.len() <= k {
        return (0..points.len()).collect();
    }
    let grid = VoxelGrid::new(points, d_max);
    (0..points.len())
        .filter(|&i| {
            let mut n = 0;
            grid.for_neighbors(i, d_max, |_| n += 1);
            n >= k
        })
        .collect()
}

/// Connected components of the eps-neighborhood graph, ordered by their
/// smallest member index. Components with fewer than `min_points` members are
/// dropped.
pub fn cluster(points: &[[f64; 3]], eps: f64, min_points: usize) -> Vec<Vec<usize>> {
    assert!(eps > 0.0, "eps must be positive");
    let mut parent: Vec<usize> = (0..points.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let grid = VoxelGrid::new(points, eps);
    for i in 0..points.len() {
        let mut links = Vec::new();
        grid.for_neighbors(i, eps, |j| {
            if j > i {
                links.push(j)
            }
        });
        for j in links {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..points.len() {
        let root = find(&mut parent, i);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups.retain(|g| g.len() >= min_points);
    groups
}

/// Oriented box around one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_id: u64,
    pub centroid: [f64; 3],
    pub center: [f64; 2],
    /// (length / 2, width / 2), length along `yaw`.
    pub half_extents: [f64; 2],
    pub yaw: f64,
    pub z_range: [f64; 2],
    pub point_count: usize,
}

/// Narrowest box side for collinear clusters.
pub const MIN_BOX_WIDTH: f64 = 0.1;

impl Detection {
    pub fn length(&self) -> f64 {
        2.0 * self.half_extents[0]
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_extents[1]
    }

    /// Point inside the box grown by `margin` on every side.
    pub fn contains(&self, p: &[f64; 3], margin: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.half_extents[0] + margin
            && v.abs() <= self.half_extents[1] + margin
            && p[2] >= self.z_range[0] - margin
            && p[2] <= self.z_range[1] + margin
    }
}

/// Box aligned with the principal axis of the x-y scatter.
pub fn bounding_box(points: &[[f64; 3]], frame_id: u64) -> Detection {
    assert!(!points.is_empty(), "bounding box of an empty cluster");
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
        cxx += dx * dx;
        cyy += dy * dy;
        cxy += dx * dy;
    }
    let mut yaw = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    let extents = |yaw: f64| {
        let (s, c) = yaw.sin_cos();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
            let uv = [dx * c + dy * s, -dx * s + dy * c];
            for k in 0..2 {
                lo[k] = lo[k].min(uv[k]);
                hi[k] = hi[k].max(uv[k]);
            }
        }
        (lo, hi)
    };
    let (lo0, hi0) = extents(yaw);
    if hi0[1] - lo0[1] > hi0[0] - lo0[0] {
        yaw += std::f64::consts::FRAC_PI_2;
    }
    // normalize to (-pi/2, pi/2]
    while yaw > std::f64::consts::FRAC_PI_2 {
        yaw -= std::f64::consts::PI;
    }
    while yaw <= -std::f64::consts::FRAC_PI_2 {
        yaw += std::f64::consts::PI;
    }
    // flipping the axis by pi mirrors both coordinates; recompute in the final frame
    let (lo, hi) = extents(yaw);
    let mut half = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1])];
    let mid = [0.5 * (hi[0] + lo[0]), 0.5 * (hi[1] + lo[1])];
    half[1] = half[1].max(0.5 * MIN_BOX_WIDTH);
    half[0] = half[0].max(half[1]);
    let (s, c) = yaw.sin_cos();
    let center = [mean[0] + mid[0] * c - mid[1] * s, mean[1] + mid[0] * s + mid[1] * c];
    let (zmin, zmax) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[2]), b.max(p[2])));
    Detection {
        frame_id,
        centroid: mean,
        center,
        half_extents: half,
        yaw,
        z_range: [zmin, zmax],
        point_count: points.len(),
    }
}

/// Output of [`detect_frame`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_id: u64,
    pub detections: Vec<Detection>,
    /// Foreground points that survived ROI and denoising.
    pub foreground: Vec<ForegroundPoint>,
    /// Returns in the frame.
    pub returns: usize,
    /// Cells flagged by the fused background masks.
    pub fused: usize,
}

impl FrameDetections {
    /// Share of returns classified as background by the fused masks.
    pub fn background_fraction(&self) -> f64 {
        if self.returns == 0 {
            return 1.0;
        }
        1.0 - self.fused as f64 / self.returns as f64
    }
}

/// Wall-clock seconds spent in each stage of one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub mask: f64,
    pub fuse: f64,
    pub denoise: f64,
    pub cluster: f64,
}

/// Run background subtraction and detection on one frame.
pub fn detect_frame(
    frame: &PolarFrame,
    model: &BackgroundModel,
    roi: &RoiMask,
    cfg: &PipelineConfig,
) -> Result<FrameDetections> {
    detect_frame_timed(frame, model, roi, cfg).map(|(d, _)| d)
}

pub fn detect_frame_timed(
    frame: &PolarFrame,
    model: &BackgroundModel,
    roi: &RoiMask,
    cfg: &PipelineConfig,
) -> Result<(FrameDetections, StageTimings)> {
    let sensor = &model.sensor;
    if !frame.matches(sensor) {
        return Err(Error::ModelMismatch(format!(
            "frame {} has shape {:?}, model expects {:?}",
            frame.frame_id,
            frame.shape(),
            (sensor.beam_count, sensor.azimuth_bins)
        )));
    }
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let mut intensity_mask = Vec::with_capacity(sensor.cells());
    for beam in 0..sensor.beam_count {
        intensity_mask.extend(intensity_foreground_mask(
            frame.beam_intensity(beam),
            frame.beam_range(beam),
            model.background(beam),
            model.dmd.intensity_threshold,
        ));
    }
    let range_mask = range_foreground_mask(frame, &model.thresholds)?;
    timings.mask = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let fused = fuse_masks(&intensity_mask, &range_mask, cfg.fusion_mode)?;
    let mut fused_count = 0;
    let mut candidates = Vec::new();
    for (idx, flags) in fused.iter().enumerate() {
        let Some(flags) = *flags else { continue };
        fused_count += 1;
        let (beam, bin) = (idx / sensor.azimuth_bins, idx % sensor.azimuth_bins);
        let range = frame.range[idx];
        let (x, y, z) = spherical_to_cartesian(range, sensor.elevations[beam], sensor.bin_center_azimuth(bin));
        if !roi.contains(x, y) {
            continue;
        }
        candidates.push(ForegroundPoint {
            frame: frame.frame_id,
            beam,
            bin,
            x,
            y,
            z,
            range,
            intensity: frame.intensity[idx],
            flagged_by: flags,
            detection: None,
        });
    }
    timings.fuse = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let xyz: Vec<[f64; 3]> = candidates.iter().map(ForegroundPoint::xyz).collect();
    let keep = denoise(&xyz, cfg.denoise_k, cfg.denoise_dmax);
    let mut foreground: Vec<ForegroundPoint> = keep.iter().map(|&i| candidates[i].clone()).collect();
    timings.denoise = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let xyz: Vec<[f64; 3]> = foreground.iter().map(ForegroundPoint::xyz).collect();
    let clusters = cluster(&xyz, cfg.cluster_eps, cfg.min_cluster_points);
    let mut detections = Vec::with_capacity(clusters.len());
    for (d, members) in clusters.iter().enumerate() {
        let pts: Vec<[f64; 3]> = members.iter().map(|&i| xyz[i]).collect();
        detections.push(bounding_box(&pts, frame.frame_id));
        for &i in members {
            foreground[i].detection = Some(d);
        }
    }
    timings.cluster = t.elapsed().as_secs_f64();

    Ok((
        FrameDetections {
            frame_id: frame.frame_id,
            detections,
            foreground,
            returns: frame.return_count(),
            fused: fused_count,
        },
        timings,
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    frame: u64,
    det_id: usize,
    cx: f64,
    cy: f64,
    cz: f64,
    len: f64,
    wid: f64,
    yaw_rad: f64,
    zmin: f64,
    zmax: f64,
    points: usize,
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// `frame,det_id,cx,cy,cz,len,wid,yaw_rad,zmin,zmax,points`; the c* columns hold
/// the point centroid.
pub fn write_detections_csv<W: Write>(frames: &[FrameDetections], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    let mut any = false;
    for f in frames {
        for (det_id, d) in f.detections.iter().enumerate() {
            any = true;
            w.serialize(DetectionRow {
                frame: f.frame_id,
                det_id,
                cx: d.centroid[0],
                cy: d.centroid[1],
                cz: d.centroid[2],
                len: d.length(),
                wid: d.width(),
                yaw_rad: d.yaw,
                zmin: d.z_range[0],
                zmax: d.z_range[1],
                points: d.point_count,
            })?;
        }
    }
    if !any {
        w.write_record(["frame", "det_id", "cx", "cy", "cz", "len", "wid", "yaw_rad", "zmin", "zmax", "points"])?;
    }
    w.flush().map_err(|e| Error::io("<detections csv>", e))?;
    Ok(())
}

/// Detections grouped by frame, in file order. Box centers are not stored in
/// the file, so they are taken to be the centroid.
pub fn read_detections_csv<R: Read>(input: R) -> Result<Vec<(u64, Vec<Detection>)>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: Vec<(u64, Vec<Detection>)> = Vec::new();
    for row in r.deserialize::<DetectionRow>() {
        let row = row?;
        let det = Detection {
            frame_id: row.frame,
            centroid: [row.cx, row.cy, row.cz],
            center: [row.cx, row.cy],
            half_extents: [row.len / 2.0, row.wid / 2.0],
            yaw: row.yaw_rad,
            z_range: [row.zmin, row.zmax],
            point_count: row.points,
        };
        match out.last_mut() {
            Some((f, dets)) if *f == row.frame => dets.push(det),
            _ => out.push((row.frame, vec![det])),
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ForegroundRow {
    frame: u64,
    beam: usize,
    bin: usize,
    x: f64,
    y: f64,
    z: f64,
    range: f64,
    intensity: f64,
    flags: String,
    det_id: Option<usize>,
}

/// `frame,beam,bin,x,y,z,range,intensity,flags,det_id` with flags in {I, R, IR}
/// and an empty det_id for points outside every detection.
pub fn write_foreground_csv<W: Write>(frames: &[FrameDetections], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    let mut any = false;
    for f in frames {
        for p in &f.foreground {
            any = true;
            w.serialize(ForegroundRow {
                frame: p.frame,
                beam: p.beam,
                bin: p.bin,
                x: p.x,
                y: p.y,
                z: p.z,
                range: p.range,
                intensity: p.intensity,
                flags: p.flagged_by.code().to_string(),
                det_id: p.detection,
            })?;
        }
    }
    if !any {
        w.write_record(["frame", "beam", "bin", "x", "y", "z", "range", "intensity", "flags", "det_id"])?;
    }
    w.flush().map_err(|e| Error::io("<foreground csv>", e))?;
    Ok(())
}

pub fn read_foreground_csv<R: Read>(input: R) -> Result<Vec<ForegroundPoint>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<ForegroundRow>()
        .map(|row| {
            let row = row?;
            Ok(ForegroundPoint {
                frame: row.frame,
                beam: row.beam,
                bin: row.bin,
                x: row.x,
                y: row.y,
                z: row.z,
                range: row.range,
                intensity: row.intensity,
                flagged_by: Flags::parse(&row.flags),
                detection: row.det_id,
            })
        })
        .collect()
}
