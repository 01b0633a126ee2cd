//! Planar polygons for ROI geofences and movement zones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simple polygon in the sensor's x-y plane. The ring is closed implicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    /// Build and validate: at least three distinct vertices, finite, no
    /// self-intersection. A repeated closing vertex is dropped.
    pub fn new(mut vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!("{} vertices", vertices.len())));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        let poly = Polygon { vertices };
        if poly.area().abs() < 1e-12 {
            return Err(Error::InvalidPolygon("zero area".into()));
        }
        if let Some((a, b)) = poly.find_self_intersection() {
            return Err(Error::InvalidPolygon(format!("edges {a} and {b} intersect")));
        }
        Ok(poly)
    }

    /// Axis-aligned rectangle.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    fn edge(&self, i: usize) -> ([f64; 2], [f64; 2]) {
        (self.vertices[i], self.vertices[(i + 1) % self.vertices.len()])
    }

    /// Signed shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        0.5 * (0..n)
            .map(|i| {
                let (a, b) = self.edge(i);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.vertices.len();
        let a = self.area();
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            let (p, q) = self.edge(i);
            let cross = p[0] * q[1] - q[0] * p[1];
            cx += (p[0] + q[0]) * cross;
            cy += (p[1] + q[1]) * cross;
        }
        [cx / (6.0 * a), cy / (6.0 * a)]
    }

    /// (min_x, min_y, max_x, max_y)
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), v| (a.min(v[0]), b.min(v[1]), c.max(v[0]), d.max(v[1])),
        )
    }

    /// Even-odd point test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    fn find_self_intersection(&self) -> Option<(usize, usize)> {
        let n = self.vertices.len();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (a, b) = self.edge(i);
                let (c, d) = self.edge(j);
                if adjacent {
                    // adjacent edges may only share their common vertex
                    if n > 3 && collinear_overlap(a, b, c, d) {
                        return Some((i, j));
                    }
                    continue;
                }
                if segments_intersect(a, b, c, d) {
                    return Some((i, j));
                }
            }
        }
        None
    }
}

impl TryFrom<Vec<[f64; 2]>> for Polygon {
    type Error = Error;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<[f64; 2]> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test, touching counts.
pub fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

fn collinear_overlap(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    // the shared vertex is b == c (or a == d); overlap means the edges fold back
    if orient(a, b, c) != 0.0 || orient(a, b, d) != 0.0 {
        return false;
    }
    let dir1 = [b[0] - a[0], b[1] - a[1]];
    let dir2 = [d[0] - c[0], d[1] - c[1]];
    let dot = dir1[0] * dir2[0] + dir1[1] * dir2[1];
    if b == c || a == d {
        dot < 0.0
    } else {
        true
    }
}

/// Named polygon, e.g. an intersection approach.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPolygon {
    pub name: String,
    pub polygon: Polygon,
}
