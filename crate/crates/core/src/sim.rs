//! Ray-casting scene simulator producing labeled polar frames.
//!
//! Scene coordinates put the ground at `z = 0` and the sensor at
//! `(0, 0, sensor_height)`. Returned points, like everything downstream, are in
//! the sensor frame (origin at the sensor).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{spherical_to_cartesian, PolarFrame, SensorConfig};
use crate::geometry::{NamedPolygon, Polygon};
use crate::tracking::{MovementZones, TrackPoint, TrackStatus, Trajectory};

fn default_range_sigma() -> f64 {
    0.03
}
fn default_intensity_sigma() -> f64 {
    2.0
}
fn default_sensor_height() -> f64 {
    1.7
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    #[serde(default = "default_range_sigma")]
    pub range_sigma: f64,
    #[serde(default = "default_intensity_sigma")]
    pub intensity_sigma: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Noise { range_sigma: default_range_sigma(), intensity_sigma: default_intensity_sigma() }
    }
}

impl Noise {
    pub fn none() -> Self {
        Noise { range_sigma: 0.0, intensity_sigma: 0.0 }
    }
}

/// Static axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSurface {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ground {
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    /// Seconds.
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Degrees, counter-clockwise from +x.
    pub heading: f64,
}

/// Cuboid vehicle resting on the ground, following its waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u32,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub intensity: f64,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians.
    pub heading: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Vehicle {
    /// Pose at time `t`, or `None` outside the waypoint span.
    pub fn pose(&self, t: f64) -> Option<Pose> {
        let first = self.waypoints.first()?;
        let last = self.waypoints.last()?;
        if t < first.t || t > last.t {
            return None;
        }
        if self.waypoints.len() == 1 {
            return Some(Pose { x: first.x, y: first.y, heading: first.heading.to_radians(), vx: 0.0, vy: 0.0 });
        }
        let seg = self.waypoints.windows(2).position(|w| t <= w[1].t).unwrap_or(self.waypoints.len() - 2);
        let (a, b) = (&self.waypoints[seg], &self.waypoints[seg + 1]);
        let span = b.t - a.t;
        let u = (t - a.t) / span;
        let turn = (b.heading - a.heading + 180.0).rem_euclid(360.0) - 180.0;
        Some(Pose {
            x: a.x + u * (b.x - a.x),
            y: a.y + u * (b.y - a.y),
            heading: (a.heading + u * turn).rem_euclid(360.0).to_radians(),
            vx: (b.x - a.x) / span,
            vy: (b.y - a.y) / span,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    #[serde(default)]
    pub surfaces: Vec<BoxSurface>,
    #[serde(default)]
    pub ground: Option<Ground>,
    #[serde(default)]
    pub vehicles: Vec<Vehicle>,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sensor_height")]
    pub sensor_height: f64,
}

fn intensity_ok(v: f64) -> bool {
    (0.0..=255.0).contains(&v)
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        if !(self.sensor_height > 0.0 && self.sensor_height.is_finite()) {
            return bad("sensor_height must be positive".into());
        }
        if !(self.noise.range_sigma >= 0.0 && self.noise.intensity_sigma >= 0.0) {
            return bad("noise must be non-negative".into());
        }
        if let Some(g) = &self.ground {
            if !intensity_ok(g.intensity) {
                return bad("ground intensity outside [0, 255]".into());
            }
        }
        for (i, s) in self.surfaces.iter().enumerate() {
            if !(0..3).all(|k| s.min[k] < s.max[k]) || s.min.iter().chain(&s.max).any(|v| !v.is_finite()) {
                return bad(format!("surface {i}: min must be below max on every axis"));
            }
            if !intensity_ok(s.intensity) {
                return bad(format!("surface {i}: intensity outside [0, 255]"));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for v in &self.vehicles {
            if !ids.insert(v.id) {
                return bad(format!("duplicate vehicle id {}", v.id));
            }
            if !(v.length > 0.0 && v.width > 0.0 && v.height > 0.0) {
                return bad(format!("vehicle {}: dimensions must be positive", v.id));
            }
            if !intensity_ok(v.intensity) {
                return bad(format!("vehicle {}: intensity outside [0, 255]", v.id));
            }
            if v.waypoints.is_empty() {
                return bad(format!("vehicle {}: no waypoints", v.id));
            }
            if v.waypoints.windows(2).any(|w| !(w[0].t < w[1].t)) {
                return bad(format!("vehicle {}: waypoint times must increase strictly", v.id));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scene: Scene = serde_json::from_str(&text)?;
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Background,
    Vehicle(u32),
    NonReturn,
}

/// Ray parameter of the first hit with an axis-aligned box (slab method).
/// Rays starting inside the box do not hit it.
fn ray_aabb(origin: [f64; 3], dir: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> Option<f64> {
    let mut t_in = f64::NEG_INFINITY;
    let mut t_out = f64::INFINITY;
    for k in 0..3 {
        if dir[k] == 0.0 {
            if origin[k] < lo[k] || origin[k] > hi[k] {
                return None;
            }
            continue;
        }
        let a = (lo[k] - origin[k]) / dir[k];
        let b = (hi[k] - origin[k]) / dir[k];
        t_in = t_in.max(a.min(b));
        t_out = t_out.min(a.max(b));
    }
    (t_in <= t_out && t_in > 0.0).then_some(t_in)
}

fn ray_vehicle(origin: [f64; 3], dir: [f64; 3], v: &Vehicle, pose: &Pose) -> Option<f64> {
    let (s, c) = pose.heading.sin_cos();
    let (dx, dy) = (origin[0] - pose.x, origin[1] - pose.y);
    let o = [dx * c + dy * s, -dx * s + dy * c, origin[2]];
    let d = [dir[0] * c + dir[1] * s, -dir[0] * s + dir[1] * c, dir[2]];
    let (hl, hw) = (0.5 * v.length, 0.5 * v.width);
    ray_aabb(o, d, [-hl, -hw, 0.0], [hl, hw, v.height])
}

/// Unit direction of the ray for (`beam`, `bin`).
pub fn ray_direction(sensor: &SensorConfig, beam: usize, bin: usize) -> [f64; 3] {
    let (x, y, z) = spherical_to_cartesian(1.0, sensor.elevations[beam], sensor.bin_center_azimuth(bin));
    [x, y, z]
}

/// What a ray hits first: distance and label. Vehicles are given with their poses.
pub fn first_hit(
    scene: &Scene,
    vehicles: &[(&Vehicle, Pose)],
    dir: [f64; 3],
) -> Option<(f64, Label, f64)> {
    let origin = [0.0, 0.0, scene.sensor_height];
    let mut best: Option<(f64, Label, f64)> = None;
    let mut take = |t: f64, label: Label, intensity: f64| {
        if best.is_none_or(|b| t < b.0) {
            best = Some((t, label, intensity));
        }
    };
    if let Some(g) = &scene.ground {
        if dir[2] < 0.0 {
            take(scene.sensor_height / -dir[2], Label::Background, g.intensity);
        }
    }
    for s in &scene.surfaces {
        if let Some(t) = ray_aabb(origin, dir, s.min, s.max) {
            take(t, Label::Background, s.intensity);
        }
    }
    for (v, pose) in vehicles {
        if let Some(t) = ray_vehicle(origin, dir, v, pose) {
            take(t, Label::Vehicle(v.id), v.intensity);
        }
    }
    best
}

/// Render one sweep at time `t`.
pub fn raycast(scene: &Scene, t: f64, frame_id: u64, sensor: &SensorConfig) -> (PolarFrame, Vec<Label>) {
    let present: Vec<(&Vehicle, Pose)> = scene.vehicles.iter().filter_map(|v| v.pose(t).map(|p| (v, p))).collect();
    let mut frame = PolarFrame::empty(frame_id, sensor);
    let mut labels = vec![Label::NonReturn; sensor.cells()];
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ frame_id);
    let range_noise = Normal::new(0.0, scene.noise.range_sigma).expect("validated sigma");
    let intensity_noise = Normal::new(0.0, scene.noise.intensity_sigma).expect("validated sigma");
    for beam in 0..sensor.beam_count {
        for bin in 0..sensor.azimuth_bins {
            let dir = ray_direction(sensor, beam, bin);
            let Some((dist, label, intensity)) = first_hit(scene, &present, dir) else { continue };
            if dist > sensor.max_range {
                continue;
            }
            let idx = frame.index(beam, bin);
            let mut r = dist;
            let mut i = intensity;
            if scene.noise.range_sigma > 0.0 {
                r = (r + range_noise.sample(&mut rng)).clamp(1e-6, sensor.max_range);
            }
            if scene.noise.intensity_sigma > 0.0 {
                i = (i + intensity_noise.sample(&mut rng)).clamp(0.0, 255.0);
            }
            frame.range[idx] = r;
            frame.intensity[idx] = i;
            labels[idx] = label;
        }
    }
    (frame, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub beam_count: usize,
    pub azimuth_bins: usize,
    pub frame_ids: Vec<u64>,
    /// One label grid per frame, row-major (beam, bin).
    pub labels: Vec<Vec<Label>>,
    /// Vehicle pose centers over the frames in which each vehicle exists.
    pub trajectories: Vec<Trajectory>,
}

impl GroundTruth {
    pub fn labels_for(&self, frame_id: u64) -> Option<&[Label]> {
        self.frame_ids.iter().position(|&f| f == frame_id).map(|k| self.labels[k].as_slice())
    }
}

/// Render frames `0..n_frames` at `t = k / frame_rate`.
pub fn simulate(scene: &Scene, n_frames: usize, sensor: &SensorConfig) -> Result<(Vec<PolarFrame>, GroundTruth)> {
    scene.validate()?;
    sensor.validate()?;
    if n_frames == 0 {
        return Err(Error::InvalidConfig("n_frames must be at least 1".into()));
    }
    let time = |k: u64| k as f64 / sensor.frame_rate;
    let rendered: Vec<(PolarFrame, Vec<Label>)> =
        (0..n_frames as u64).into_par_iter().map(|k| raycast(scene, time(k), k, sensor)).collect();
    let mut trajectories = Vec::new();
    for v in &scene.vehicles {
        let points: Vec<TrackPoint> = (0..n_frames as u64)
            .filter_map(|k| {
                v.pose(time(k)).map(|p| TrackPoint {
                    frame: k,
                    x: p.x,
                    y: p.y,
                    vx: p.vx,
                    vy: p.vy,
                    status: TrackStatus::Confirmed,
                })
            })
            .collect();
        if !points.is_empty() {
            trajectories.push(Trajectory { track_id: v.id as u64, points, status: TrackStatus::Confirmed });
        }
    }
    let (frames, labels): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();
    Ok((
        frames,
        GroundTruth {
            beam_count: sensor.beam_count,
            azimuth_bins: sensor.azimuth_bins,
            frame_ids: (0..n_frames as u64).collect(),
            labels,
            trajectories,
        },
    ))
}

/// Centroid (sensor frame) and point count of each vehicle's returns in one frame.
pub fn vehicle_centroids(frame: &PolarFrame, labels: &[Label], sensor: &SensorConfig) -> BTreeMap<u32, ([f64; 3], usize)> {
    let mut acc: BTreeMap<u32, ([f64; 3], usize)> = BTreeMap::new();
    for (idx, label) in labels.iter().enumerate() {
        let Label::Vehicle(id) = *label else { continue };
        let (beam, bin) = (idx / sensor.azimuth_bins, idx % sensor.azimuth_bins);
        let (x, y, z) = spherical_to_cartesian(frame.range[idx], sensor.elevations[beam], sensor.bin_center_azimuth(bin));
        let e = acc.entry(id).or_insert(([0.0; 3], 0));
        e.0[0] += x;
        e.0[1] += y;
        e.0[2] += z;
        e.1 += 1;
    }
    for (c, n) in acc.values_mut() {
        for v in c.iter_mut() {
            *v /= *n as f64;
        }
    }
    acc
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    frame: u64,
    beam: usize,
    bin: usize,
    label: String,
    vehicle_id: Option<u32>,
}

/// `frame,beam,bin,label,vehicle_id`; non-return cells are omitted.
pub fn write_labels_csv<W: Write>(truth: &GroundTruth, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["frame", "beam", "bin", "label", "vehicle_id"])?;
    for (frame, grid) in truth.frame_ids.iter().zip(&truth.labels) {
        for (idx, label) in grid.iter().enumerate() {
            let (label, vehicle_id) = match *label {
                Label::NonReturn => continue,
                Label::Background => ("background", None),
                Label::Vehicle(id) => ("vehicle", Some(id)),
            };
            w.serialize(LabelRow {
                frame: *frame,
                beam: idx / truth.azimuth_bins,
                bin: idx % truth.azimuth_bins,
                label: label.to_string(),
                vehicle_id,
            })?;
        }
    }
    w.flush().map_err(|e| Error::io("<labels csv>", e))?;
    Ok(())
}

/// Read labels back onto a `beam_count x azimuth_bins` grid per frame. Cells
/// without a row are non-returns.
pub fn read_labels_csv<R: Read>(input: R, sensor: &SensorConfig) -> Result<BTreeMap<u64, Vec<Label>>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: BTreeMap<u64, Vec<Label>> = BTreeMap::new();
    for row in r.deserialize::<LabelRow>() {
        let row = row?;
        if row.beam >= sensor.beam_count || row.bin >= sensor.azimuth_bins {
            return Err(Error::ShapeMismatch(format!("label cell ({}, {}) outside the sensor grid", row.beam, row.bin)));
        }
        let label = match (row.label.as_str(), row.vehicle_id) {
            ("background", _) => Label::Background,
            ("vehicle", Some(id)) => Label::Vehicle(id),
            ("nonreturn", _) => Label::NonReturn,
            (other, _) => return Err(Error::Parse(format!("unknown label {other:?}"))),
        };
        let grid = out.entry(row.frame).or_insert_with(|| vec![Label::NonReturn; sensor.cells()]);
        grid[row.beam * sensor.azimuth_bins + row.bin] = label;
    }
    Ok(out)
}

/// 32-beam sensor with beams concentrated just below the horizon.
pub fn demo_sensor() -> SensorConfig {
    let mut elevations = vec![-15.0, -13.0, -11.0, -9.5, -8.5, -7.5];
    elevations.extend((0..24).map(|i| -6.5 + 0.5 * i as f64));
    elevations.extend([6.0, 7.0]);
    SensorConfig::new(elevations)
}

fn straight(id: u32, t0: f64, from: [f64; 2], to: [f64; 2], speed: f64, intensity: f64) -> Vehicle {
    let dist = (to[0] - from[0]).hypot(to[1] - from[1]);
    let heading = (to[1] - from[1]).atan2(to[0] - from[0]).to_degrees();
    Vehicle {
        id,
        length: 4.5,
        width: 1.8,
        height: 1.5,
        intensity,
        waypoints: vec![
            Waypoint { t: t0, x: from[0], y: from[1], heading },
            Waypoint { t: t0 + dist / speed, x: to[0], y: to[1], heading },
        ],
    }
}

/// Straight road between two walls at 19 m; vehicles pass 15 m from the sensor.
pub fn corridor_scene() -> Scene {
    Scene {
        surfaces: vec![
            BoxSurface { min: [-60.0, 19.0, 0.0], max: [60.0, 19.5, 4.0], intensity: 70.0 },
            BoxSurface { min: [-60.0, -19.5, 0.0], max: [60.0, -19.0, 4.0], intensity: 70.0 },
        ],
        ground: Some(Ground { intensity: 30.0 }),
        vehicles: (0..4)
            .map(|i| straight(i + 1, 4.0 * i as f64, [-45.0, 15.0], [45.0, 15.0], 12.0, 50.0))
            .collect(),
        noise: Noise::default(),
        seed: 19,
        sensor_height: default_sensor_height(),
    }
}

/// Frames rendered from [`corridor_scene`] by the bundled examples.
pub const CORRIDOR_FRAMES: usize = 200;

/// Road between the walls of [`corridor_scene`].
pub fn corridor_roi() -> Vec<Polygon> {
    vec![Polygon::rect(-60.0, -18.5, 60.0, 18.5).expect("valid rect")]
}

/// Four-way intersection centered at (25, 25); two vehicles per through movement.
pub fn intersection_scene() -> Scene {
    let (c, near, far) = (25.0, -5.0, 55.0);
    // (from, to) for northbound, eastbound, southbound, westbound
    let movements = [
        ([c + 1.5, near], [c + 1.5, far]),
        ([near, c - 1.5], [far, c - 1.5]),
        ([c - 1.5, far], [c - 1.5, near]),
        ([far, c + 1.5], [near, c + 1.5]),
    ];
    let vehicles = (0..8)
        .map(|i| {
            let (from, to) = movements[i % 4];
            straight(i as u32 + 1, 2.2 * i as f64, from, to, 15.0, 48.0 + 2.0 * (i % 3) as f64)
        })
        .collect();
    Scene {
        surfaces: vec![
            // corner buildings, none between the sensor and a road
            BoxSurface { min: [33.0, 33.0, 0.0], max: [60.0, 60.0, 8.0], intensity: 80.0 },
            BoxSurface { min: [33.0, -30.0, 0.0], max: [60.0, -8.0, 6.0], intensity: 70.0 },
            BoxSurface { min: [-30.0, 33.0, 0.0], max: [-8.0, 60.0, 6.0], intensity: 75.0 },
        ],
        ground: Some(Ground { intensity: 30.0 }),
        vehicles,
        noise: Noise::default(),
        seed: 4,
        sensor_height: default_sensor_height(),
    }
}

/// Frames rendered from [`intersection_scene`].
pub const INTERSECTION_FRAMES: usize = 200;

/// Road surface of [`intersection_scene`].
pub fn intersection_roi() -> Vec<Polygon> {
    vec![
        Polygon::rect(18.0, -12.0, 32.0, 62.0).expect("valid rect"),
        Polygon::rect(-12.0, 18.0, 18.0, 32.0).expect("valid rect"),
        Polygon::rect(32.0, 18.0, 62.0, 32.0).expect("valid rect"),
    ]
}

/// Approach zones of [`intersection_scene`].
pub fn intersection_zones() -> MovementZones {
    let zone = |name: &str, x0, y0, x1, y1| NamedPolygon {
        name: name.to_string(),
        polygon: Polygon::rect(x0, y0, x1, y1).expect("valid rect"),
    };
    MovementZones::new(vec![
        zone("south", 19.0, -10.0, 31.0, 3.0),
        zone("north", 19.0, 47.0, 31.0, 60.0),
        zone("west", -10.0, 19.0, 3.0, 31.0),
        zone("east", 47.0, 19.0, 60.0, 31.0),
    ])
    .expect("disjoint zones")
}
