//! Coarse-fine triangle thresholding of per-unit range histograms.
//!
//! For every (beam, azimuth bin) unit the ranges seen over the training frames
//! are histogrammed. Static background is the farthest, most frequent return,
//! so it forms the dominant peak; the triangle rule places the threshold at the
//! bin farthest from the line joining the empty origin bin to that peak. A coarse
//! pass first strips returns beyond the peak, then the fine pass re-bins the
//! survivors into 100 bins on `[0, R_max]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{PolarFrame, SensorConfig};

/// Bins of the coarse histogram over `[0, max_range]`.
pub const COARSE_BINS: usize = 200;
/// Bins of the fine histogram over `[0, R_max]`.
pub const FINE_BINS: usize = 100;
/// Fewer positive returns than this yields an `Insufficient` unit.
pub const MIN_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct RangeHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub bin_size: f64,
}

impl RangeHistogram {
    /// Uniform histogram on `[0, upper]`; the upper edge is inclusive.
    pub fn build(samples: &[f64], upper: f64, bins: usize) -> Self {
        let bin_size = upper / bins as f64;
        let mut counts = vec![0u64; bins];
        for &s in samples {
            counts[Self::slot(s, bin_size, bins)] += 1;
        }
        RangeHistogram {
            bin_edges: (0..=bins).map(|i| i as f64 * bin_size).collect(),
            counts,
            bin_size,
        }
    }

    fn slot(s: f64, bin_size: f64, bins: usize) -> usize {
        ((s / bin_size).floor().max(0.0) as usize).min(bins - 1)
    }

    pub fn bin_of(&self, s: f64) -> usize {
        Self::slot(s, self.bin_size, self.counts.len())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index of the highest count; ties go to the farther bin.
    pub fn peak(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c >= self.counts[best] {
                best = i;
            }
        }
        best
    }
}

/// How a unit's threshold was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "T")]
    Triangle,
    #[serde(rename = "N")]
    NonReturnMajority,
    #[serde(rename = "I")]
    Insufficient,
}

impl Provenance {
    pub fn code(self) -> char {
        match self {
            Provenance::Triangle => 'T',
            Provenance::NonReturnMajority => 'N',
            Provenance::Insufficient => 'I',
        }
    }
}

/// Positive ranges seen at one unit, and how many frames had no return there.
pub fn collect_unit_ranges(frames: &[PolarFrame], beam: usize, bin: usize) -> (Vec<f64>, usize) {
    let mut samples = Vec::with_capacity(frames.len());
    let mut non_returns = 0;
    for f in frames {
        let r = f.range[f.index(beam, bin)];
        if r > 0.0 {
            samples.push(r);
        } else {
            non_returns += 1;
        }
    }
    (samples, non_returns)
}

/// Drop samples beyond `B_max + 2 sigma`, where `B_max` is the upper edge of the
/// most populated coarse bin and `sigma` the spread of the samples inside it.
pub fn coarse_step(samples: &[f64], max_range: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let hist = RangeHistogram::build(samples, max_range, COARSE_BINS);
    let peak = hist.peak();
    let in_peak: Vec<f64> = samples.iter().copied().filter(|&s| hist.bin_of(s) == peak).collect();
    let mean = in_peak.iter().sum::<f64>() / in_peak.len() as f64;
    let var = in_peak.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / in_peak.len() as f64;
    let cutoff = hist.bin_edges[peak + 1] + 2.0 * var.sqrt();
    Ok(samples.iter().copied().filter(|&s| s <= cutoff).collect())
}

/// 100-bin histogram on `[0, max(samples)]`.
pub fn fine_histogram(samples: &[f64]) -> Result<RangeHistogram> {
    let r_max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(r_max > 0.0) {
        return Err(Error::DegenerateInput("fine histogram needs a positive range".into()));
    }
    Ok(RangeHistogram::build(samples, r_max, FINE_BINS))
}

/// Bin index maximizing the perpendicular distance from `(i, counts[i])` to the
/// line through `(0, 0)` and the peak, searched over `[0, peak]`.
pub fn triangle_index(counts: &[u64]) -> Result<usize> {
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::EmptyHistogram);
    }
    let mut peak = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c >= counts[peak] {
            peak = i;
        }
    }
    let (px, py) = (peak as f64, counts[peak] as f64);
    let mut best = 0;
    let mut best_d = f64::NEG_INFINITY;
    for (i, &c) in counts.iter().enumerate().take(peak + 1) {
        // |py * x - px * y| is the distance scaled by the constant line length
        let d = (py * i as f64 - px * c as f64).abs();
        if d >= best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(best)
}

/// Lower edge of the triangle bin.
pub fn triangle_threshold(hist: &RangeHistogram) -> Result<f64> {
    Ok(hist.bin_edges[triangle_index(&hist.counts)?])
}

/// Threshold for one unit.
pub fn cfta_unit(samples: &[f64], non_return_count: usize, max_range: f64) -> (f64, Provenance) {
    if non_return_count > samples.len() {
        return (max_range, Provenance::NonReturnMajority);
    }
    if samples.len() < MIN_SAMPLES {
        return (max_range, Provenance::Insufficient);
    }
    let threshold = coarse_step(samples, max_range)
        .and_then(|kept| fine_histogram(&kept))
        .and_then(|hist| triangle_threshold(&hist));
    match threshold {
        Ok(t) => (t.clamp(0.0, max_range), Provenance::Triangle),
        // unreachable for positive samples, kept total
        Err(_) => (max_range, Provenance::Insufficient),
    }
}

/// Per-unit range thresholds, row-major by beam.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub beam_count: usize,
    pub azimuth_bins: usize,
    pub thresholds: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl ThresholdTable {
    pub fn get(&self, beam: usize, bin: usize) -> f64 {
        self.thresholds[beam * self.azimuth_bins + bin]
    }

    pub fn provenance_codes(&self) -> Vec<String> {
        self.provenance.iter().map(|p| p.code().to_string()).collect()
    }
}

/// Learn every unit's threshold from the training frames.
pub fn learn_thresholds(frames: &[PolarFrame], cfg: &SensorConfig) -> Result<ThresholdTable> {
    if let Some(bad) = frames.iter().find(|f| !f.matches(cfg)) {
        return Err(Error::ShapeMismatch(format!(
            "frame {} has shape {:?}",
            bad.frame_id,
            bad.shape()
        )));
    }
    let per_beam: Vec<Vec<(f64, Provenance)>> = (0..cfg.beam_count)
        .into_par_iter()
        .map(|beam| {
            (0..cfg.azimuth_bins)
                .map(|bin| {
                    let (samples, missing) = collect_unit_ranges(frames, beam, bin);
                    cfta_unit(&samples, missing, cfg.max_range)
                })
                .collect()
        })
        .collect();
    let (thresholds, provenance) = per_beam.into_iter().flatten().unzip();
    Ok(ThresholdTable {
        beam_count: cfg.beam_count,
        azimuth_bins: cfg.azimuth_bins,
        thresholds,
        provenance,
    })
}

/// `true` where a return is nearer than its unit's threshold.
pub fn range_foreground_mask(frame: &PolarFrame, table: &ThresholdTable) -> Result<Vec<bool>> {
    if frame.shape() != (table.beam_count, table.azimuth_bins) {
        return Err(Error::ShapeMismatch(format!(
            "frame {:?} vs thresholds {:?}",
            frame.shape(),
            (table.beam_count, table.azimuth_bins)
        )));
    }
    Ok(frame
        .range
        .iter()
        .zip(&table.thresholds)
        .map(|(&r, &t)| r > 0.0 && r < t)
        .collect())
}
