//! Constant-velocity Kalman tracking with gated global-nearest-neighbor
//! association, M-of-N confirmation, and turning-movement counts.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{segments_intersect, NamedPolygon};
use crate::pipeline::Detection;

fn default_accel() -> f64 {
    2.0
}
fn default_meas() -> f64 {
    0.3
}
fn default_gate() -> f64 {
    3.0
}
fn default_m() -> usize {
    3
}
fn default_n() -> usize {
    5
}
fn default_delete() -> usize {
    5
}
fn default_dt() -> f64 {
    0.1
}
fn default_init_vel() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    /// White-acceleration noise, m/s^2.
    #[serde(default = "default_accel")]
    pub process_noise_accel: f64,
    /// Position measurement noise, m.
    #[serde(default = "default_meas")]
    pub meas_noise_pos: f64,
    /// Mahalanobis gate on the position innovation.
    #[serde(default = "default_gate")]
    pub gate: f64,
    #[serde(default = "default_m")]
    pub confirm_m: usize,
    #[serde(default = "default_n")]
    pub confirm_n: usize,
    #[serde(default = "default_delete")]
    pub delete_after_misses: usize,
    /// Seconds between consecutive frames.
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Prior velocity standard deviation of a new track, m/s.
    #[serde(default = "default_init_vel")]
    pub init_velocity_std: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            process_noise_accel: default_accel(),
            meas_noise_pos: default_meas(),
            gate: default_gate(),
            confirm_m: default_m(),
            confirm_n: default_n(),
            delete_after_misses: default_delete(),
            dt: default_dt(),
            init_velocity_std: default_init_vel(),
        }
    }
}

impl TrackerConfig {
    pub fn with_frame_rate(mut self, hz: f64) -> Self {
        self.dt = 1.0 / hz;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.process_noise_accel,
            self.meas_noise_pos,
            self.gate,
            self.dt,
            self.init_velocity_std,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("tracker noise, gate and dt must be positive".into()));
        }
        if self.confirm_m == 0 || self.confirm_n < self.confirm_m || self.delete_after_misses == 0 {
            return Err(Error::InvalidConfig("need 0 < confirm_m <= confirm_n and delete_after_misses > 0".into()));
        }
        Ok(())
    }

    fn measurement_noise(&self) -> Matrix2<f64> {
        Matrix2::identity() * self.meas_noise_pos.powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Deleted,
}

impl TrackStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackStatus::Tentative => "tentative",
            TrackStatus::Confirmed => "confirmed",
            TrackStatus::Deleted => "deleted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame: u64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub status: TrackStatus,
}

const H: Matrix2x4<f64> = Matrix2x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);

#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    /// (x, y, vx, vy)
    pub state: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub status: TrackStatus,
    pub hits: usize,
    /// Consecutive frames without a detection.
    pub misses: usize,
    /// Hit/miss outcome of the last `confirm_n` frames.
    recent: VecDeque<bool>,
    ever_confirmed: bool,
    pub history: Vec<TrackPoint>,
}

impl Track {
    pub fn new(id: u64, position: [f64; 2], frame: u64, cfg: &TrackerConfig) -> Self {
        let p = cfg.meas_noise_pos.powi(2);
        let v = cfg.init_velocity_std.powi(2);
        let mut t = Track {
            id,
            state: Vector4::new(position[0], position[1], 0.0, 0.0),
            covariance: Matrix4::from_diagonal(&Vector4::new(p, p, v, v)),
            status: TrackStatus::Tentative,
            hits: 1,
            misses: 0,
            recent: VecDeque::from([true]),
            ever_confirmed: false,
            history: Vec::new(),
        };
        t.promote(cfg);
        t.record(frame);
        t
    }

    pub fn position(&self) -> [f64; 2] {
        [self.state[0], self.state[1]]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.state[2], self.state[3]]
    }

    pub fn is_live(&self) -> bool {
        self.status != TrackStatus::Deleted
    }

    pub fn was_confirmed(&self) -> bool {
        self.ever_confirmed
    }

    fn record(&mut self, frame: u64) {
        self.history.push(TrackPoint {
            frame,
            x: self.state[0],
            y: self.state[1],
            vx: self.state[2],
            vy: self.state[3],
            status: self.status,
        });
    }

    fn promote(&mut self, cfg: &TrackerConfig) {
        if self.status == TrackStatus::Tentative && self.recent.iter().filter(|&&h| h).count() >= cfg.confirm_m {
            self.status = TrackStatus::Confirmed;
            self.ever_confirmed = true;
        }
    }

    fn push_outcome(&mut self, hit: bool, cfg: &TrackerConfig) {
        self.recent.push_back(hit);
        while self.recent.len() > cfg.confirm_n {
            self.recent.pop_front();
        }
    }

    /// Innovation and its covariance for a position measurement.
    fn innovation(&self, z: [f64; 2], cfg: &TrackerConfig) -> (Vector2<f64>, Matrix2<f64>) {
        let y = Vector2::new(z[0], z[1]) - H * self.state;
        let s = H * self.covariance * H.transpose() + cfg.measurement_noise();
        (y, s)
    }

    /// Mahalanobis distance of a measured position from the predicted one.
    pub fn mahalanobis(&self, z: [f64; 2], cfg: &TrackerConfig) -> f64 {
        let (y, s) = self.innovation(z, cfg);
        match s.cholesky() {
            Some(ch) => y.dot(&ch.solve(&y)).max(0.0).sqrt(),
            None => f64::INFINITY,
        }
    }
}

/// Constant-velocity time update with white-acceleration process noise.
pub fn predict(track: &mut Track, dt: f64, cfg: &TrackerConfig) {
    assert!(dt > 0.0, "dt must be positive");
    let f = Matrix4::new(
        1.0, 0.0, dt, 0.0, //
        0.0, 1.0, 0.0, dt, //
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    );
    let q = cfg.process_noise_accel.powi(2);
    let (a, b, c) = (dt.powi(4) / 4.0 * q, dt.powi(3) / 2.0 * q, dt * dt * q);
    let noise = Matrix4::new(
        a, 0.0, b, 0.0, //
        0.0, a, 0.0, b, //
        b, 0.0, c, 0.0, //
        0.0, b, 0.0, c,
    );
    track.state = f * track.state;
    let p = f * track.covariance * f.transpose() + noise;
    track.covariance = 0.5 * (p + p.transpose());
}

/// Measurement update with a position fix (Joseph form).
pub fn update(track: &mut Track, z: [f64; 2], cfg: &TrackerConfig) -> Result<()> {
    let (y, s) = track.innovation(z, cfg);
    let ch = s
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure(format!("track {}: innovation covariance not PD", track.id)))?;
    let s_inv = ch.inverse();
    let gain = track.covariance * H.transpose() * s_inv;
    track.state += gain * y;
    let i_kh = Matrix4::identity() - gain * H;
    let p = i_kh * track.covariance * i_kh.transpose() + gain * cfg.measurement_noise() * gain.transpose();
    track.covariance = 0.5 * (p + p.transpose());
    Ok(())
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method with
/// potentials). Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let cur = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=n {
        if owner[col] > 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    assignment
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// (track index, detection index, Mahalanobis cost)
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl Association {
    pub fn total_cost(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum()
    }
}

/// Gated global-nearest-neighbor assignment: among matchings that use only
/// pairs inside the gate, the one with the most pairs and, among those, the
/// least total Mahalanobis cost.
pub fn associate(tracks: &[&Track], detections: &[[f64; 2]], cfg: &TrackerConfig) -> Association {
    let (nt, nd) = (tracks.len(), detections.len());
    let cost: Vec<Vec<f64>> = tracks
        .iter()
        .map(|t| detections.iter().map(|&z| t.mahalanobis(z, cfg)).collect())
        .collect();
    let n = nt.max(nd);
    // any forbidden pair costs more than every gated matching combined
    let forbidden = cfg.gate * (n as f64 + 1.0) + 1.0;
    let square: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i < nt && j < nd {
                        if cost[i][j] <= cfg.gate {
                            cost[i][j]
                        } else {
                            forbidden
                        }
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&square);
    let mut out = Association::default();
    let mut det_used = vec![false; nd];
    for (i, &j) in assignment.iter().enumerate().take(nt) {
        if j < nd && cost[i][j] <= cfg.gate {
            out.pairs.push((i, j, cost[i][j]));
            det_used[j] = true;
        } else {
            out.unmatched_tracks.push(i);
        }
    }
    out.unmatched_detections = (0..nd).filter(|&j| !det_used[j]).collect();
    out
}

/// Multi-object tracker state for one scene.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub cfg: TrackerConfig,
    pub tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker { cfg, tracks: Vec::new(), next_id: 1, last_frame: None })
    }

    pub fn live_tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.is_live())
    }

    pub fn confirmed_tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.status == TrackStatus::Confirmed)
    }

    /// Advance to `frame_id` with that frame's detections.
    pub fn step(&mut self, detections: &[Detection], frame_id: u64) -> Result<()> {
        let gap = match self.last_frame {
            Some(last) if frame_id <= last => return Err(Error::FrameOrder { last, got: frame_id }),
            Some(last) => frame_id - last,
            None => 1,
        };
        self.last_frame = Some(frame_id);
        let cfg = self.cfg.clone();
        let dt = cfg.dt * gap as f64;

        let live: Vec<usize> = (0..self.tracks.len()).filter(|&i| self.tracks[i].is_live()).collect();
        for &i in &live {
            predict(&mut self.tracks[i], dt, &cfg);
        }
        let positions: Vec<[f64; 2]> = detections.iter().map(|d| [d.centroid[0], d.centroid[1]]).collect();
        let refs: Vec<&Track> = live.iter().map(|&i| &self.tracks[i]).collect();
        let assoc = associate(&refs, &positions, &cfg);

        for &(ti, di, _) in &assoc.pairs {
            let track = &mut self.tracks[live[ti]];
            update(track, positions[di], &cfg)?;
            track.hits += 1;
            track.misses = 0;
            track.push_outcome(true, &cfg);
            track.promote(&cfg);
            track.record(frame_id);
        }
        for &ti in &assoc.unmatched_tracks {
            let track = &mut self.tracks[live[ti]];
            track.misses += gap as usize;
            track.push_outcome(false, &cfg);
            let stale_tentative = track.status == TrackStatus::Tentative
                && track.recent.len() >= cfg.confirm_n
                && track.recent.iter().filter(|&&h| h).count() < cfg.confirm_m;
            if track.misses >= cfg.delete_after_misses || stale_tentative {
                track.status = TrackStatus::Deleted;
            }
        }
        for &di in &assoc.unmatched_detections {
            let id = self.next_id;
            self.next_id += 1;
            self.tracks.push(Track::new(id, positions[di], frame_id, &cfg));
        }
        Ok(())
    }
}

/// Run a fresh tracker over per-frame detections in frame order.
pub fn track_sequence(frames: &[(u64, Vec<Detection>)], cfg: &TrackerConfig) -> Result<Tracker> {
    let mut tracker = Tracker::new(cfg.clone())?;
    for (frame_id, detections) in frames {
        tracker.step(detections, *frame_id)?;
    }
    Ok(tracker)
}

/// Time-ordered path of a confirmed track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub track_id: u64,
    pub points: Vec<TrackPoint>,
    pub status: TrackStatus,
}

/// Every track that reached confirmation, in id order.
pub fn extract_trajectories(tracker: &Tracker) -> Vec<Trajectory> {
    let mut out: Vec<Trajectory> = tracker
        .tracks
        .iter()
        .filter(|t| t.was_confirmed())
        .map(|t| Trajectory { track_id: t.id, points: t.history.clone(), status: t.status })
        .collect();
    out.sort_by_key(|t| t.track_id);
    out
}

/// Named entry/exit polygons of an intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<NamedPolygon>", into = "Vec<NamedPolygon>")]
pub struct MovementZones {
    zones: Vec<NamedPolygon>,
}

impl MovementZones {
    pub fn new(zones: Vec<NamedPolygon>) -> Result<Self> {
        for (i, a) in zones.iter().enumerate() {
            for b in &zones[i + 1..] {
                if a.name == b.name {
                    return Err(Error::InvalidPolygon(format!("duplicate zone name {:?}", a.name)));
                }
                if polygons_overlap(&a.polygon, &b.polygon) {
                    return Err(Error::InvalidPolygon(format!("zones {:?} and {:?} overlap", a.name, b.name)));
                }
            }
        }
        Ok(MovementZones { zones })
    }

    pub fn zones(&self) -> &[NamedPolygon] {
        &self.zones
    }

    /// First zone, in declaration order, containing any of the points.
    fn classify(&self, points: impl Iterator<Item = [f64; 2]> + Clone) -> Option<&str> {
        self.zones
            .iter()
            .find(|z| points.clone().any(|p| z.polygon.contains(p[0], p[1])))
            .map(|z| z.name.as_str())
    }
}

impl TryFrom<Vec<NamedPolygon>> for MovementZones {
    type Error = Error;
    fn try_from(v: Vec<NamedPolygon>) -> Result<Self> {
        MovementZones::new(v)
    }
}

impl From<MovementZones> for Vec<NamedPolygon> {
    fn from(z: MovementZones) -> Self {
        z.zones
    }
}

fn polygons_overlap(a: &crate::geometry::Polygon, b: &crate::geometry::Polygon) -> bool {
    let (va, vb) = (a.vertices(), b.vertices());
    for i in 0..va.len() {
        for j in 0..vb.len() {
            if segments_intersect(va[i], va[(i + 1) % va.len()], vb[j], vb[(j + 1) % vb.len()]) {
                return true;
            }
        }
    }
    b.contains(va[0][0], va[0][1]) || a.contains(vb[0][0], vb[0][1])
}

/// Trajectory endpoints looked at when assigning entry and exit zones.
pub const ENDPOINT_SAMPLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Movement {
    pub entry: String,
    pub exit: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MovementCounts {
    /// Keyed by `"<entry>-><exit>"`.
    pub movements: BTreeMap<String, Movement>,
    pub unclassified: usize,
}

impl MovementCounts {
    pub fn total(&self) -> usize {
        self.movements.values().map(|m| m.count).sum()
    }

    pub fn count(&self, entry: &str, exit: &str) -> usize {
        self.movements.get(&movement_key(entry, exit)).map_or(0, |m| m.count)
    }
}

pub fn movement_key(entry: &str, exit: &str) -> String {
    format!("{entry}->{exit}")
}

/// Tally trajectories by (entry zone, exit zone).
pub fn count_movements(trajectories: &[Trajectory], zones: &MovementZones) -> MovementCounts {
    let mut counts = MovementCounts::default();
    for t in trajectories {
        let xy = |p: &TrackPoint| [p.x, p.y];
        let n = t.points.len();
        let head = t.points.iter().take(ENDPOINT_SAMPLES).map(xy);
        let tail = t.points.iter().skip(n.saturating_sub(ENDPOINT_SAMPLES)).map(xy);
        match (zones.classify(head), zones.classify(tail)) {
            (Some(entry), Some(exit)) => {
                counts
                    .movements
                    .entry(movement_key(entry, exit))
                    .or_insert_with(|| Movement { entry: entry.to_string(), exit: exit.to_string(), count: 0 })
                    .count += 1;
            }
            _ => counts.unclassified += 1,
        }
    }
    counts
}

#[derive(Debug, Serialize, Deserialize)]
struct TrackRow {
    track_id: u64,
    frame: u64,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    status: String,
}

/// `track_id,frame,x,y,vx,vy,status`
pub fn write_tracks_csv<W: Write>(trajectories: &[Trajectory], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut any = false;
    for t in trajectories {
        for p in &t.points {
            any = true;
            w.serialize(TrackRow {
                track_id: t.track_id,
                frame: p.frame,
                x: p.x,
                y: p.y,
                vx: p.vx,
                vy: p.vy,
                status: p.status.as_str().to_string(),
            })?;
        }
    }
    if !any {
        w.write_record(["track_id", "frame", "x", "y", "vx", "vy", "status"])?;
    }
    w.flush().map_err(|e| Error::io("<tracks csv>", e))?;
    Ok(())
}

/// Group rows by track id. Unknown status strings (e.g. `truth`) read as confirmed.
pub fn read_tracks_csv<R: Read>(input: R) -> Result<Vec<Trajectory>> {
    let mut r = csv::Reader::from_reader(input);
    let mut by_id: BTreeMap<u64, Vec<TrackPoint>> = BTreeMap::new();
    for row in r.deserialize::<TrackRow>() {
        let row = row?;
        let status = match row.status.as_str() {
            "tentative" => TrackStatus::Tentative,
            "deleted" => TrackStatus::Deleted,
            _ => TrackStatus::Confirmed,
        };
        by_id.entry(row.track_id).or_default().push(TrackPoint {
            frame: row.frame,
            x: row.x,
            y: row.y,
            vx: row.vx,
            vy: row.vy,
            status,
        });
    }
    Ok(by_id
        .into_iter()
        .map(|(track_id, mut points)| {
            points.sort_by_key(|p| p.frame);
            let status = points.last().map_or(TrackStatus::Confirmed, |p| p.status);
            Trajectory { track_id, points, status }
        })
        .collect())
}
