//! Point-level and movement-count metrics, and per-stage timing summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::sim::Label;
use crate::tracking::MovementCounts;

/// A ratio that is `undefined` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ratio(pub Option<f64>);

impl Ratio {
    pub fn of(num: f64, den: f64) -> Self {
        Ratio((den != 0.0).then(|| num / den))
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }

    fn percent(self) -> String {
        match self.0 {
            Some(v) => format!("{:.2}%", 100.0 * v),
            None => "undefined".to_string(),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Ratio(Some(v))),
            Raw::Text(t) if t == "undefined" => Ok(Ratio(None)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"undefined\", got {t:?}"))),
        }
    }
}

/// Range bands, meters, half-open.
pub const RANGE_BANDS: [(f64, f64); 2] = [(0.0, 30.0), (30.0, 100.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    pub min_range: f64,
    pub max_range: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
}

impl BandMetrics {
    pub fn from_counts(min_range: f64, max_range: f64, tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = Ratio::of(tp as f64, (tp + fp) as f64);
        let recall = Ratio::of(tp as f64, (tp + fn_) as f64);
        let f1 = match (precision.0, recall.0) {
            (Some(p), Some(r)) => Ratio::of(2.0 * p * r, p + r),
            _ => Ratio(None),
        };
        BandMetrics { min_range, max_range, tp, fp, fn_, precision, recall, f1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub bands: Vec<BandMetrics>,
}

/// Harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        return 0.0;
    }
    2.0 * precision * recall / (precision + recall)
}

/// Classification of returns against simulator labels, per range band.
///
/// `predicted`, `labels` and `ranges` hold one grid per frame. A vehicle cell is
/// banded by its measured range; non-return cells are ignored.
pub fn point_metrics(predicted: &[Vec<bool>], labels: &[Vec<Label>], ranges: &[Vec<f64>]) -> Result<PointMetrics> {
    if predicted.len() != labels.len() || labels.len() != ranges.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} prediction grids, {} label grids, {} range grids",
            predicted.len(),
            labels.len(),
            ranges.len()
        )));
    }
    let mut tally = vec![[0u64; 3]; RANGE_BANDS.len()];
    for (k, ((p, l), r)) in predicted.iter().zip(labels).zip(ranges).enumerate() {
        if p.len() != l.len() || l.len() != r.len() {
            return Err(Error::ShapeMismatch(format!("grid {k}: sizes {}, {}, {}", p.len(), l.len(), r.len())));
        }
        for i in 0..p.len() {
            let Some(band) = RANGE_BANDS.iter().position(|&(lo, hi)| r[i] >= lo && r[i] < hi) else { continue };
            let slot = match (p[i], l[i]) {
                (true, Label::Vehicle(_)) => 0,
                (true, Label::Background) => 1,
                (false, Label::Vehicle(_)) => 2,
                _ => continue,
            };
            tally[band][slot] += 1;
        }
    }
    Ok(PointMetrics {
        bands: RANGE_BANDS
            .iter()
            .zip(&tally)
            .map(|(&(lo, hi), t)| BandMetrics::from_counts(lo, hi, t[0], t[1], t[2]))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub predicted: u64,
    pub truth: u64,
    pub error_rate: Ratio,
    pub accuracy: Ratio,
}

impl CountRow {
    pub fn new(predicted: u64, truth: u64) -> Self {
        let error_rate = Ratio::of((predicted as f64 - truth as f64).abs(), truth as f64);
        CountRow { predicted, truth, error_rate, accuracy: Ratio(error_rate.0.map(|e| 1.0 - e)) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMetrics {
    pub movements: BTreeMap<String, CountRow>,
    pub total: CountRow,
}

/// Per-movement and total counting error. A movement missing on one side counts 0 there.
pub fn count_metrics(predicted: &MovementCounts, truth: &MovementCounts) -> CountMetrics {
    let keys: std::collections::BTreeSet<&String> = predicted.movements.keys().chain(truth.movements.keys()).collect();
    let get = |c: &MovementCounts, k: &str| c.movements.get(k).map_or(0, |m| m.count as u64);
    let movements = keys
        .into_iter()
        .map(|k| (k.clone(), CountRow::new(get(predicted, k), get(truth, k))))
        .collect();
    CountMetrics { movements, total: CountRow::new(predicted.total() as u64, truth.total() as u64) }
}

/// Seconds spent per stage on one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub mask: f64,
    pub fuse: f64,
    pub denoise: f64,
    pub cluster: f64,
    pub track: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub mean_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub frames: usize,
    pub stages: BTreeMap<String, StageStats>,
    pub end_to_end: StageStats,
}

/// Minimum frames for a timing summary.
pub const MIN_TIMING_FRAMES: usize = 10;

pub fn timing_report(samples: &[FrameTiming]) -> Result<TimingReport> {
    if samples.len() < MIN_TIMING_FRAMES {
        return Err(Error::TooFewFrames { needed: MIN_TIMING_FRAMES, got: samples.len() });
    }
    let stats = |f: fn(&FrameTiming) -> f64| {
        let v: Vec<f64> = samples.iter().map(f).collect();
        StageStats {
            mean_ms: 1e3 * v.iter().sum::<f64>() / v.len() as f64,
            max_ms: 1e3 * v.iter().cloned().fold(0.0, f64::max),
        }
    };
    let stages: [(&str, fn(&FrameTiming) -> f64); 5] = [
        ("mask", |t| t.mask),
        ("fuse", |t| t.fuse),
        ("denoise", |t| t.denoise),
        ("cluster", |t| t.cluster),
        ("track", |t| t.track),
    ];
    Ok(TimingReport {
        frames: samples.len(),
        stages: stages.iter().map(|(name, f)| (name.to_string(), stats(*f))).collect(),
        end_to_end: stats(|t| t.total),
    })
}

/// Plain-text table with one column per range band.
pub fn point_table(m: &PointMetrics) -> String {
    let mut out = String::new();
    let header: Vec<String> = m.bands.iter().map(|b| format!("[{}, {}) m", b.min_range, b.max_range)).collect();
    let _ = write!(out, "{:<10}", "");
    for h in &header {
        let _ = write!(out, "{h:>14}");
    }
    out.push('\n');
    let rows: [(&str, fn(&BandMetrics) -> String); 6] = [
        ("TP", |b| b.tp.to_string()),
        ("FP", |b| b.fp.to_string()),
        ("FN", |b| b.fn_.to_string()),
        ("Precision", |b| b.precision.percent()),
        ("Recall", |b| b.recall.percent()),
        ("F1", |b| b.f1.percent()),
    ];
    for (name, f) in rows {
        let _ = write!(out, "{name:<10}");
        for b in &m.bands {
            let _ = write!(out, "{:>14}", f(b));
        }
        out.push('\n');
    }
    out
}

/// Plain-text table with one row per movement plus the total.
pub fn count_table(m: &CountMetrics) -> String {
    let mut out = format!("{:<20}{:>10}{:>10}{:>12}{:>12}\n", "Movement", "Predicted", "Truth", "Error", "Accuracy");
    let mut line = |name: &str, r: &CountRow| {
        let _ = writeln!(
            out,
            "{name:<20}{:>10}{:>10}{:>12}{:>12}",
            r.predicted,
            r.truth,
            r.error_rate.percent(),
            r.accuracy.percent()
        );
    };
    for (k, r) in &m.movements {
        line(k, r);
    }
    line("Total", &m.total);
    out
}
