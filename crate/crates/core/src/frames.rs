//! Polar frame assembly and per-beam spatial-temporal matrices.
//!
//! A sweep is stored as a `beam_count x azimuth_bins` grid of (range, intensity)
//! cells. Azimuths are hashed to bins with
//! `bin = (floor(alpha / resolution) + 1) mod azimuth_bins`, so bin 0 covers the
//! last sector `[360 - resolution, 360)`. Cells that received no return hold the
//! sentinel `(0, 0)`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn default_azimuth_bins() -> usize {
    1800
}
fn default_azimuth_resolution() -> f64 {
    0.2
}
fn default_max_range() -> f64 {
    200.0
}
fn default_frame_rate() -> f64 {
    10.0
}

/// Static description of the scanner: one fixed pitch per beam and the azimuth grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub beam_count: usize,
    /// Per-beam pitch angles in degrees, strictly increasing.
    pub elevations: Vec<f64>,
    #[serde(default = "default_azimuth_bins")]
    pub azimuth_bins: usize,
    #[serde(default = "default_azimuth_resolution")]
    pub azimuth_resolution: f64,
    #[serde(default = "default_max_range")]
    pub max_range: f64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
}

impl SensorConfig {
    /// Sensor with default azimuth grid and the given beam pitches.
    pub fn new(elevations: Vec<f64>) -> Self {
        SensorConfig {
            beam_count: elevations.len(),
            elevations,
            azimuth_bins: default_azimuth_bins(),
            azimuth_resolution: default_azimuth_resolution(),
            max_range: default_max_range(),
            frame_rate: default_frame_rate(),
        }
    }

    /// `beam_count` pitches spaced evenly over `[lowest, highest]` degrees.
    pub fn uniform(beam_count: usize, lowest: f64, highest: f64) -> Self {
        let elevations = if beam_count == 1 {
            vec![lowest]
        } else {
            (0..beam_count)
                .map(|i| lowest + (highest - lowest) * i as f64 / (beam_count - 1) as f64)
                .collect()
        };
        Self::new(elevations)
    }

    /// Replace the azimuth grid with `bins` equal sectors.
    pub fn with_azimuth_bins(mut self, bins: usize) -> Self {
        self.azimuth_bins = bins;
        self.azimuth_resolution = 360.0 / bins as f64;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.beam_count == 0 {
            return bad("beam_count must be positive".into());
        }
        if self.elevations.len() != self.beam_count {
            return bad(format!(
                "{} elevations for {} beams",
                self.elevations.len(),
                self.beam_count
            ));
        }
        if self.elevations.windows(2).any(|w| w[0] >= w[1]) {
            return bad("elevations must be strictly increasing".into());
        }
        if self.elevations.iter().any(|e| !(-90.0..=90.0).contains(e)) {
            return bad("elevations must lie in [-90, 90]".into());
        }
        if self.azimuth_bins == 0 || !(self.azimuth_resolution > 0.0) {
            return bad("azimuth grid must be non-empty".into());
        }
        if (self.azimuth_bins as f64 * self.azimuth_resolution - 360.0).abs() > 1e-9 {
            return bad(format!(
                "{} bins x {} deg does not cover 360 deg",
                self.azimuth_bins, self.azimuth_resolution
            ));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return bad("max_range must be positive".into());
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad("frame_rate must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("sensor config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn cells(&self) -> usize {
        self.beam_count * self.azimuth_bins
    }

    /// Azimuth at the middle of `bin`, in `[0, 360)`.
    pub fn bin_center_azimuth(&self, bin: usize) -> f64 {
        ((bin as f64 - 0.5) * self.azimuth_resolution).rem_euclid(360.0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SensorConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Cartesian (x, y, z) of a return at range `r`, pitch `omega` and azimuth `alpha` (degrees).
pub fn spherical_to_cartesian(r: f64, omega: f64, alpha: f64) -> (f64, f64, f64) {
    let (sw, cw) = omega.to_radians().sin_cos();
    let (sa, ca) = alpha.to_radians().sin_cos();
    (r * cw * ca, r * cw * sa, r * sw)
}

/// Inverse of [`spherical_to_cartesian`]; azimuth is normalized to `[0, 360)` and
/// is 0 on the vertical axis.
pub fn cartesian_to_spherical(x: f64, y: f64, z: f64) -> Result<(f64, f64, f64)> {
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return Err(Error::DegenerateInput("zero vector has no direction".into()));
    }
    let horizontal = x.hypot(y);
    let omega = z.atan2(horizontal).to_degrees();
    let alpha = if horizontal == 0.0 {
        0.0
    } else {
        normalize_azimuth(y.atan2(x).to_degrees())
    };
    Ok((r, omega, alpha))
}

/// Map any angle in degrees onto `[0, 360)`.
pub fn normalize_azimuth(alpha: f64) -> f64 {
    let a = alpha.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Azimuth hash onto `[0, azimuth_bins)`.
pub fn azimuth_bin(alpha: f64, cfg: &SensorConfig) -> usize {
    // the epsilon absorbs representation error of the resolution (0.2 is not exact in binary)
    let sector = (alpha / cfg.azimuth_resolution + 1e-9).floor() as i64;
    (sector + 1).rem_euclid(cfg.azimuth_bins as i64) as usize
}

/// One laser return. A range of 0 marks a non-return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub beam: usize,
    pub azimuth: f64,
    pub range: f64,
    pub intensity: f64,
}

impl PointRecord {
    pub fn check(&self, cfg: &SensorConfig) -> std::result::Result<(), String> {
        if self.beam >= cfg.beam_count {
            return Err(format!("beam {} >= beam_count {}", self.beam, cfg.beam_count));
        }
        if !(0.0..360.0).contains(&self.azimuth) {
            return Err(format!("azimuth {} outside [0, 360)", self.azimuth));
        }
        if !(0.0..=cfg.max_range).contains(&self.range) {
            return Err(format!("range {} outside [0, {}]", self.range, cfg.max_range));
        }
        if !(0.0..=255.0).contains(&self.intensity) {
            return Err(format!("intensity {} outside [0, 255]", self.intensity));
        }
        Ok(())
    }
}

/// Which measured quantity a spatial-temporal matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Range,
    Intensity,
}

/// One full sweep on the beam x azimuth grid, row-major by beam.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFrame {
    pub frame_id: u64,
    pub beam_count: usize,
    pub azimuth_bins: usize,
    pub range: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl PolarFrame {
    /// Frame with every cell set to the non-return sentinel.
    pub fn empty(frame_id: u64, cfg: &SensorConfig) -> Self {
        PolarFrame {
            frame_id,
            beam_count: cfg.beam_count,
            azimuth_bins: cfg.azimuth_bins,
            range: vec![0.0; cfg.cells()],
            intensity: vec![0.0; cfg.cells()],
        }
    }

    #[inline]
    pub fn index(&self, beam: usize, bin: usize) -> usize {
        beam * self.azimuth_bins + bin
    }

    pub fn timestamp(&self, cfg: &SensorConfig) -> f64 {
        self.frame_id as f64 / cfg.frame_rate
    }

    pub fn beam_range(&self, beam: usize) -> &[f64] {
        let start = beam * self.azimuth_bins;
        &self.range[start..start + self.azimuth_bins]
    }

    pub fn beam_intensity(&self, beam: usize) -> &[f64] {
        let start = beam * self.azimuth_bins;
        &self.intensity[start..start + self.azimuth_bins]
    }

    pub fn beam_channel(&self, beam: usize, channel: Channel) -> &[f64] {
        match channel {
            Channel::Range => self.beam_range(beam),
            Channel::Intensity => self.beam_intensity(beam),
        }
    }

    pub fn is_return(&self, idx: usize) -> bool {
        self.range[idx] > 0.0
    }

    pub fn return_count(&self) -> usize {
        self.range.iter().filter(|&&r| r > 0.0).count()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.beam_count, self.azimuth_bins)
    }

    pub fn matches(&self, cfg: &SensorConfig) -> bool {
        self.beam_count == cfg.beam_count && self.azimuth_bins == cfg.azimuth_bins
    }
}

/// Place points on the polar grid. On a collision the smaller positive range wins;
/// equal ranges keep the smaller azimuth, then the larger intensity, so the
/// result does not depend on input order.
pub fn assemble_frame(points: &[PointRecord], frame_id: u64, cfg: &SensorConfig) -> Result<PolarFrame> {
    let mut frame = PolarFrame::empty(frame_id, cfg);
    // azimuth of the current occupant, for tie breaking
    let mut occupant_azimuth = vec![f64::NAN; cfg.cells()];
    for (index, p) in points.iter().enumerate() {
        p.check(cfg)
            .map_err(|reason| Error::InvalidPoint { index, reason })?;
        if p.range <= 0.0 {
            continue;
        }
        let idx = frame.index(p.beam, azimuth_bin(p.azimuth, cfg));
        let current = frame.range[idx];
        let wins = current == 0.0
            || p.range < current
            || (p.range == current
                && (p.azimuth < occupant_azimuth[idx]
                    || (p.azimuth == occupant_azimuth[idx] && p.intensity > frame.intensity[idx])));
        if wins {
            frame.range[idx] = p.range;
            frame.intensity[idx] = p.intensity;
            occupant_azimuth[idx] = p.azimuth;
        }
    }
    Ok(frame)
}

/// Azimuth bins x frames matrix for one beam and channel.
#[derive(Debug, Clone, PartialEq)]
pub struct STMatrix {
    pub beam: usize,
    pub channel: Channel,
    pub data: DMatrix<f64>,
    pub frame_ids: Vec<u64>,
}

/// Stack one beam's channel vector from each frame as a column, ordered by frame id.
pub fn build_st_matrix(frames: &[PolarFrame], beam: usize, channel: Channel) -> Result<STMatrix> {
    let first = frames
        .first()
        .ok_or(Error::TooFewFrames { needed: 1, got: 0 })?;
    let shape = first.shape();
    if let Some(bad) = frames.iter().find(|f| f.shape() != shape) {
        return Err(Error::ShapeMismatch(format!(
            "frame {} has shape {:?}, expected {:?}",
            bad.frame_id,
            bad.shape(),
            shape
        )));
    }
    if beam >= shape.0 {
        return Err(Error::ShapeMismatch(format!("beam {beam} >= {}", shape.0)));
    }
    let mut order: Vec<&PolarFrame> = frames.iter().collect();
    order.sort_by_key(|f| f.frame_id);
    let rows = shape.1;
    let mut data = DMatrix::zeros(rows, order.len());
    for (j, f) in order.iter().enumerate() {
        data.column_mut(j).copy_from_slice(f.beam_channel(beam, channel));
    }
    Ok(STMatrix {
        beam,
        channel,
        data,
        frame_ids: order.iter().map(|f| f.frame_id).collect(),
    })
}

/// Row of the frame CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameRow {
    frame: u64,
    beam: usize,
    azimuth_deg: f64,
    range_m: f64,
    intensity: f64,
}

/// Write frames as `frame,beam,azimuth_deg,range_m,intensity`, returns only,
/// sorted by (frame, beam, azimuth). Azimuths are bin centers.
pub fn write_frames_csv<W: Write>(frames: &[PolarFrame], cfg: &SensorConfig, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["frame", "beam", "azimuth_deg", "range_m", "intensity"])?;
    let mut order: Vec<&PolarFrame> = frames.iter().collect();
    order.sort_by_key(|f| f.frame_id);
    // bin 0 holds the sector just below 360 deg, so it sorts last
    let bins: Vec<usize> = (1..cfg.azimuth_bins).chain(std::iter::once(0)).collect();
    for f in order {
        for beam in 0..f.beam_count {
            for &bin in &bins {
                let idx = f.index(beam, bin);
                if f.range[idx] > 0.0 {
                    w.serialize(FrameRow {
                        frame: f.frame_id,
                        beam,
                        azimuth_deg: cfg.bin_center_azimuth(bin),
                        range_m: f.range[idx],
                        intensity: f.intensity[idx],
                    })?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io("<frames csv>", e))?;
    Ok(())
}

/// Read a frame CSV and assemble one [`PolarFrame`] per distinct frame id.
pub fn read_frames_csv<R: Read>(input: R, cfg: &SensorConfig) -> Result<Vec<PolarFrame>> {
    let mut r = csv::Reader::from_reader(input);
    let mut grouped: BTreeMap<u64, Vec<PointRecord>> = BTreeMap::new();
    for row in r.deserialize::<FrameRow>() {
        let row = row?;
        grouped.entry(row.frame).or_default().push(PointRecord {
            beam: row.beam,
            azimuth: row.azimuth_deg,
            range: row.range_m,
            intensity: row.intensity,
        });
    }
    grouped
        .into_iter()
        .map(|(id, pts)| assemble_frame(&pts, id, cfg))
        .collect()
}

pub fn load_frames(path: &Path, cfg: &SensorConfig) -> Result<Vec<PolarFrame>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_frames_csv(std::io::BufReader::new(file), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg() -> SensorConfig {
        SensorConfig::uniform(4, -10.0, 5.0)
    }

    #[test]
    fn spherical_examples() {
        let (x, y, z) = spherical_to_cartesian(10.0, 0.0, 0.0);
        assert_abs_diff_eq!(x, 10.0);
        assert_abs_diff_eq!(y, 0.0);
        assert_abs_diff_eq!(z, 0.0);
        let (x, y, z) = spherical_to_cartesian(5.0, 90.0, 123.0);
        assert_abs_diff_eq!(x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z, 5.0, epsilon = 1e-12);
        // 2 cos30 cos60, 2 cos30 sin60, 2 sin30
        let (x, y, z) = spherical_to_cartesian(2.0, 30.0, 60.0);
        assert_abs_diff_eq!(x, 0.86603, epsilon = 1e-5);
        assert_abs_diff_eq!(y, 1.50000, epsilon = 1e-5);
        assert_abs_diff_eq!(z, 1.00000, epsilon = 1e-5);
    }

    #[test]
    fn cartesian_examples() {
        assert_eq!(cartesian_to_spherical(10.0, 0.0, 0.0).unwrap(), (10.0, 0.0, 0.0));
        assert_eq!(cartesian_to_spherical(0.0, 0.0, 5.0).unwrap(), (5.0, 90.0, 0.0));
        assert!(matches!(
            cartesian_to_spherical(0.0, 0.0, 0.0),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_azimuth(-90.0), 270.0);
        assert_eq!(normalize_azimuth(0.0), 0.0);
        assert_eq!(normalize_azimuth(179.99), 179.99);
        assert_eq!(normalize_azimuth(-1e-300), 0.0);
    }

    #[test]
    fn azimuth_bin_examples() {
        let c = SensorConfig::uniform(1, 0.0, 0.0);
        assert_eq!(azimuth_bin(0.0, &c), 1);
        assert_eq!(azimuth_bin(359.9, &c), 0);
        assert_eq!(azimuth_bin(180.0, &c), 901);
    }

    #[test]
    fn azimuth_sweep_covers_all_bins() {
        let c = SensorConfig::uniform(1, 0.0, 0.0);
        let mut seen = vec![0usize; c.azimuth_bins];
        for k in 0..36_000 {
            seen[azimuth_bin(k as f64 * 0.01, &c)] += 1;
        }
        assert!(seen.iter().all(|&n| n == 20));
        for bin in 0..c.azimuth_bins {
            assert_eq!(azimuth_bin(c.bin_center_azimuth(bin), &c), bin);
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let mut c = cfg();
        c.elevations.swap(0, 1);
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.azimuth_bins = 1000;
        assert!(c.validate().is_err());
        let c = cfg().with_azimuth_bins(360);
        assert!(c.validate().is_ok());
        let mut c = cfg();
        c.max_range = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let c: SensorConfig =
            serde_json::from_str(r#"{"beam_count":2,"elevations":[-1.0,1.0]}"#).unwrap();
        assert_eq!(c.azimuth_bins, 1800);
        assert_eq!(c.azimuth_resolution, 0.2);
        assert_eq!(c.max_range, 200.0);
        assert_eq!(c.frame_rate, 10.0);
        assert_ne!(c.hash(), cfg().hash());
        assert_eq!(c.hash(), c.clone().hash());
    }

    fn pt(beam: usize, azimuth: f64, range: f64, intensity: f64) -> PointRecord {
        PointRecord { beam, azimuth, range, intensity }
    }

    #[test]
    fn assemble_empty_is_all_sentinel() {
        let f = assemble_frame(&[], 3, &cfg()).unwrap();
        assert!(f.range.iter().all(|&r| r == 0.0));
        assert!(f.intensity.iter().all(|&i| i == 0.0));
        assert_eq!(f.timestamp(&cfg()), 0.3);
    }

    #[test]
    fn assemble_collision_keeps_nearer() {
        let c = cfg();
        let f = assemble_frame(&[pt(1, 10.05, 18.2, 40.0), pt(1, 10.1, 15.1, 90.0)], 0, &c).unwrap();
        let idx = f.index(1, azimuth_bin(10.05, &c));
        assert_eq!(f.range[idx], 15.1);
        assert_eq!(f.intensity[idx], 90.0);
        assert_eq!(f.return_count(), 1);
    }

    #[test]
    fn assemble_collision_free_bijection() {
        let c = cfg();
        let pts: Vec<_> = (0..50).map(|k| pt(k % 4, k as f64 * 1.3, 5.0 + k as f64, 10.0)).collect();
        let f = assemble_frame(&pts, 0, &c).unwrap();
        assert_eq!(f.return_count(), 50);
    }

    #[test]
    fn assemble_rejects_invalid() {
        let c = cfg();
        let err = assemble_frame(&[pt(0, 1.0, 5.0, 1.0), pt(9, 1.0, 5.0, 1.0)], 0, &c).unwrap_err();
        assert!(matches!(err, Error::InvalidPoint { index: 1, .. }));
        assert!(assemble_frame(&[pt(0, 360.0, 5.0, 1.0)], 0, &c).is_err());
        assert!(assemble_frame(&[pt(0, 1.0, 500.0, 1.0)], 0, &c).is_err());
        assert!(assemble_frame(&[pt(0, 1.0, 5.0, 256.0)], 0, &c).is_err());
    }

    proptest! {
        #[test]
        fn spherical_round_trip(x in -150.0..150.0f64, y in -150.0..150.0f64, z in -50.0..50.0f64) {
            prop_assume!((x * x + y * y + z * z).sqrt() > 1e-6);
            let (r, w, a) = cartesian_to_spherical(x, y, z).unwrap();
            prop_assert!((0.0..360.0).contains(&a));
            let (x2, y2, z2) = spherical_to_cartesian(r, w, a);
            let err = ((x - x2).powi(2) + (y - y2).powi(2) + (z - z2).powi(2)).sqrt();
            prop_assert!(err <= 1e-9 * r);
        }

        #[test]
        fn assemble_is_order_independent(
            raw in prop::collection::vec((0usize..4, 0usize..40, 1u32..6, 0u32..255), 1..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let c = cfg();
            // coarse values force collisions and range ties
            let pts: Vec<_> = raw.iter()
                .map(|&(b, a, r, i)| pt(b, a as f64 * 0.07, r as f64, i as f64))
                .collect();
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let f1 = assemble_frame(&pts, 0, &c).unwrap();
            let f2 = assemble_frame(&shuffled, 0, &c).unwrap();
            prop_assert_eq!(f1, f2);
        }
    }

    fn frame_with(id: u64, c: &SensorConfig, v: f64) -> PolarFrame {
        let mut f = PolarFrame::empty(id, c);
        for (k, r) in f.range.iter_mut().enumerate() {
            *r = v + (k % 7) as f64;
        }
        for (k, i) in f.intensity.iter_mut().enumerate() {
            *i = (k % 11) as f64 + v;
        }
        f
    }

    #[test]
    fn st_matrix_shape_and_columns() {
        let c = cfg().with_azimuth_bins(90);
        let frames: Vec<_> = (0..5).map(|k| frame_with(k, &c, k as f64)).collect();
        let m = build_st_matrix(&frames, 2, Channel::Intensity).unwrap();
        assert_eq!(m.data.shape(), (90, 5));
        for (j, f) in frames.iter().enumerate() {
            assert_eq!(m.data.column(j).as_slice(), f.beam_intensity(2));
        }
        let mut rev = frames.clone();
        rev.reverse();
        assert_eq!(build_st_matrix(&rev, 2, Channel::Intensity).unwrap(), m);

        let same: Vec<_> = (0..3).map(|k| {
            let mut f = frame_with(0, &c, 1.0);
            f.frame_id = k;
            f
        }).collect();
        let m = build_st_matrix(&same, 0, Channel::Range).unwrap();
        assert!(m.data.column_iter().all(|col| col == m.data.column(0)));
    }

    #[test]
    fn st_matrix_shape_mismatch() {
        let c = cfg().with_azimuth_bins(90);
        let other = cfg().with_azimuth_bins(180);
        let frames = vec![PolarFrame::empty(0, &c), PolarFrame::empty(1, &other)];
        assert!(matches!(
            build_st_matrix(&frames, 0, Channel::Range),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(build_st_matrix(&[], 0, Channel::Range).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let c = cfg().with_azimuth_bins(180);
        let mut frames = vec![PolarFrame::empty(4, &c), PolarFrame::empty(2, &c)];
        frames[0].range[5] = 12.5;
        frames[0].intensity[5] = 33.0;
        frames[1].range[c.azimuth_bins] = 7.25; // beam 1, bin 0
        frames[1].intensity[c.azimuth_bins] = 200.0;
        frames[1].range[c.azimuth_bins + 3] = 9.0;
        let mut buf = Vec::new();
        write_frames_csv(&frames, &c, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "frame,beam,azimuth_deg,range_m,intensity");
        assert_eq!(lines.len(), 4, "{text}");
        assert!(lines[1].starts_with("2,1,5.0,9.0"));
        assert!(lines[2].starts_with("2,1,359.0,7.25"));
        let back = read_frames_csv(&buf[..], &c).unwrap();
        assert_eq!(back[0], frames[1]);
        assert_eq!(back[1], frames[0]);
    }
}
