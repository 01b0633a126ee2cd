//! Text-format figures: ASCII PGM rasters and SVG line art.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use polarbg_core::cfta::{coarse_step, fine_histogram, triangle_index, RangeHistogram};
use polarbg_core::dmd::intensity_foreground_mask;
use polarbg_core::tracking::MovementZones;
use polarbg_core::{BackgroundModel, PolarFrame, Result, Trajectory};

/// Plain (P2) graymap; values are clamped to `[0, 255]` and rounded.
pub fn pgm(width: usize, height: usize, pixel: impl Fn(usize, usize) -> f64) -> String {
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in 0..height {
        let line: Vec<String> = (0..width).map(|col| (pixel(col, row).clamp(0.0, 255.0).round() as u8).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Azimuth-by-time intensity rasters of one beam: measured, background and foreground.
pub fn stmaps(frames: &[PolarFrame], model: &BackgroundModel, beam: usize) -> [String; 3] {
    let bins = model.sensor.azimuth_bins;
    let background = model.background(beam);
    let masks: Vec<Vec<bool>> = frames
        .iter()
        .map(|f| {
            intensity_foreground_mask(f.beam_intensity(beam), f.beam_range(beam), background, model.dmd.intensity_threshold)
        })
        .collect();
    let original = pgm(bins, frames.len(), |c, r| frames[r].beam_intensity(beam)[c]);
    let bg = pgm(bins, frames.len(), |c, _| background[c]);
    let fg = pgm(bins, frames.len(), |c, r| if masks[r][c] { frames[r].beam_intensity(beam)[c] } else { 0.0 });
    [original, bg, fg]
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
const UNCLASSIFIED: &str = "#7f7f7f";

struct Frame2d {
    x0: f64,
    y1: f64,
    scale: f64,
    width: f64,
    height: f64,
}

impl Frame2d {
    const MARGIN: f64 = 20.0;
    const SIZE: f64 = 800.0;

    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for [x, y] in points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, y0, x1, y1) = (0.0, 0.0, 1.0, 1.0);
        }
        let span = (x1 - x0).max(y1 - y0).max(1e-9);
        let scale = Self::SIZE / span;
        Frame2d {
            x0,
            y1,
            scale,
            width: (x1 - x0) * scale + 2.0 * Self::MARGIN,
            height: (y1 - y0) * scale + 2.0 * Self::MARGIN,
        }
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        (Self::MARGIN + (p[0] - self.x0) * self.scale, Self::MARGIN + (self.y1 - p[1]) * self.scale)
    }
}

/// Trajectories as polylines, colored by movement when zones are given.
pub fn trajectories_svg(trajectories: &[Trajectory], zones: Option<&MovementZones>) -> String {
    let movement_of = |t: &Trajectory| -> Option<String> {
        let zones = zones?;
        let counts = polarbg_core::count_movements(std::slice::from_ref(t), zones);
        counts.movements.keys().next().cloned()
    };
    let labels: Vec<Option<String>> = trajectories.iter().map(movement_of).collect();
    let mut colors: BTreeMap<String, &str> = BTreeMap::new();
    for l in labels.iter().flatten() {
        let next = PALETTE[colors.len() % PALETTE.len()];
        colors.entry(l.clone()).or_insert(next);
    }

    let zone_points = zones.into_iter().flat_map(|z| z.zones().iter().flat_map(|n| n.polygon.vertices().to_vec()));
    let track_points = trajectories.iter().flat_map(|t| t.points.iter().map(|p| [p.x, p.y]));
    let frame = Frame2d::fit(zone_points.chain(track_points));

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
        frame.width, frame.height
    );
    if let Some(z) = zones {
        for named in z.zones() {
            let pts: Vec<String> = named.polygon.vertices().iter().map(|&v| {
                let (x, y) = frame.px(v);
                format!("{x:.2},{y:.2}")
            }).collect();
            let _ = writeln!(svg, "<polygon points=\"{}\" fill=\"#eeeeee\" stroke=\"#999999\"/>", pts.join(" "));
            let (cx, cy) = frame.px(named.polygon.centroid());
            let _ = writeln!(svg, "<text x=\"{cx:.2}\" y=\"{cy:.2}\" font-size=\"12\" text-anchor=\"middle\">{}</text>", named.name);
        }
    }
    for (t, label) in trajectories.iter().zip(&labels) {
        let color = label.as_ref().map_or(UNCLASSIFIED, |l| colors[l]);
        let pts: Vec<String> = t.points.iter().map(|p| {
            let (x, y) = frame.px([p.x, p.y]);
            format!("{x:.2},{y:.2}")
        }).collect();
        let _ = writeln!(
            svg,
            "<polyline id=\"track-{}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            t.track_id,
            pts.join(" ")
        );
    }
    for (i, (label, color)) in colors.iter().enumerate() {
        let y = 20.0 + 16.0 * i as f64;
        let _ = writeln!(svg, "<text x=\"{:.0}\" y=\"{y:.0}\" font-size=\"12\" fill=\"{color}\">{label}</text>", frame.width - 120.0);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Fine range histogram of one unit with the triangle construction line and
/// the chosen threshold.
pub fn histogram_svg(samples: &[f64], max_range: f64) -> Result<String> {
    let kept = coarse_step(samples, max_range)?;
    let hist: RangeHistogram = fine_histogram(&kept)?;
    let idx = triangle_index(&hist.counts)?;
    let threshold = hist.bin_edges[idx];
    let peak = hist.peak();

    let (w, h, m) = (800.0, 400.0, 40.0);
    let top = *hist.counts.iter().max().unwrap_or(&1) as f64;
    let bar_w = (w - 2.0 * m) / hist.counts.len() as f64;
    let x_of = |i: f64| m + i * bar_w;
    let y_of = |c: f64| h - m - (c / top) * (h - 2.0 * m);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (i, &c) in hist.counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let y = y_of(c as f64);
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#4c72b0\"/>",
            x_of(i as f64),
            bar_w,
            h - m - y
        );
    }
    // line from the empty origin bin to the top of the peak bar
    let _ = writeln!(
        svg,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#dd8452\" stroke-width=\"2\"/>",
        x_of(0.5),
        y_of(0.0),
        x_of(peak as f64 + 0.5),
        y_of(hist.counts[peak] as f64)
    );
    let tx = x_of(idx as f64);
    let _ = writeln!(
        svg,
        "<line x1=\"{tx:.2}\" y1=\"{:.2}\" x2=\"{tx:.2}\" y2=\"{:.2}\" stroke=\"#c44e52\" stroke-dasharray=\"6 4\"/>",
        m,
        h - m
    );
    let _ = writeln!(svg, "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">threshold {threshold:.2} m</text>", tx + 4.0, m + 12.0);
    let _ = writeln!(
        svg,
        "<text x=\"{m:.0}\" y=\"{:.0}\" font-size=\"12\">0 m</text><text x=\"{:.0}\" y=\"{:.0}\" font-size=\"12\" text-anchor=\"end\">{:.2} m</text>",
        h - m + 16.0,
        w - m,
        h - m + 16.0,
        hist.bin_edges[hist.bin_edges.len() - 1]
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
