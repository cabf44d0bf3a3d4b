//! Lesion contours and their rasterisation.
//!
//! Rasterisation snaps vertices to a 1/256-pixel grid and decides pixel-centre
//! membership with exact integer arithmetic (boundary points count as
//! inside), so the result is invariant under flips and quarter turns.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wsi::raster::BinaryMask;

const FIXED: f64 = 256.0;

/// A closed polygon in slide pixel coordinates (the last vertex connects back
/// to the first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub points: Vec<(f64, f64)>,
}

type Fixed = (i64, i64);

fn fixed(p: (f64, f64)) -> Fixed {
    ((p.0 * FIXED).round() as i64, (p.1 * FIXED).round() as i64)
}

fn cross(o: Fixed, a: Fixed, b: Fixed) -> i128 {
    (a.0 - o.0) as i128 * (b.1 - o.1) as i128 - (a.1 - o.1) as i128 * (b.0 - o.0) as i128
}

fn on_segment(p: Fixed, a: Fixed, b: Fixed) -> bool {
    cross(a, b, p) == 0 && p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn contains_fixed(pts: &[Fixed], p: Fixed) -> bool {
    let n = pts.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        if on_segment(p, a, b) {
            return true;
        }
        if (a.1 > p.1) != (b.1 > p.1) {
            // crossing lies right of p iff cross(a, b, p) has the sign of (b.y - a.y)
            let c = cross(a, b, p);
            if (c > 0) == (b.1 > a.1) {
                inside = !inside;
            }
        }
    }
    inside
}

fn segments_intersect(a: Fixed, b: Fixed, c: Fixed, d: Fixed) -> bool {
    let (d1, d2) = (cross(c, d, a).signum(), cross(c, d, b).signum());
    let (d3, d4) = (cross(a, b, c).signum(), cross(a, b, d).signum());
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

impl Polygon {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let p = Self { points };
        p.validate()?;
        Ok(p)
    }

    /// At least three distinct vertices, finite coordinates, no two
    /// non-adjacent edges touching.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n < 3 {
            return Err(Error::Data(format!("polygon has {n} vertices, needs >= 3")));
        }
        if self.points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::Data("polygon has non-finite coordinates".into()));
        }
        let f: Vec<Fixed> = self.points.iter().map(|&p| fixed(p)).collect();
        for i in 0..n {
            if f[i] == f[(i + 1) % n] {
                return Err(Error::Data(format!("polygon has a zero-length edge at vertex {i}")));
            }
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if !adjacent && segments_intersect(f[i], f[(i + 1) % n], f[j], f[(j + 1) % n]) {
                    return Err(Error::Data(format!("polygon edges {i} and {j} intersect")));
                }
            }
        }
        Ok(())
    }

    /// Whether the point lies inside or on the boundary.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let f: Vec<Fixed> = self.points.iter().map(|&p| fixed(p)).collect();
        contains_fixed(&f, fixed((x, y)))
    }

    /// Largest vertex-to-vertex distance in pixels.
    pub fn max_diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                best = best.max(((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)).sqrt());
            }
        }
        best
    }

    pub fn area(&self) -> f64 {
        let n = self.points.len();
        let mut s = 0.0;
        for i in 0..n {
            let (a, b) = (self.points[i], self.points[(i + 1) % n]);
            s += a.0 * b.1 - b.0 * a.1;
        }
        s.abs() / 2.0
    }

    pub fn centroid_of_vertices(&self) -> (f64, f64) {
        let n = self.points.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(x, y), p| (x + p.0, y + p.1));
        (sx / n, sy / n)
    }

    pub fn map(&self, f: impl Fn((f64, f64)) -> (f64, f64)) -> Polygon {
        Polygon { points: self.points.iter().map(|&p| f(p)).collect() }
    }

    /// Sets every pixel of `mask` whose centre lies in the polygon.
    pub fn rasterize_into(&self, mask: &mut BinaryMask) {
        let f: Vec<Fixed> = self.points.iter().map(|&p| fixed(p)).collect();
        let (w, h) = (mask.width() as i64, mask.height() as i64);
        let half = (FIXED / 2.0) as i64;
        let unit = FIXED as i64;
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for p in &f {
            x0 = x0.min(p.0);
            y0 = y0.min(p.1);
            x1 = x1.max(p.0);
            y1 = y1.max(p.1);
        }
        let lo = |v: i64| ((v - half).div_euclid(unit)).max(0);
        let hi = |v: i64, n: i64| ((v - half).div_euclid(unit) + 1).min(n - 1);
        for y in lo(y0)..=hi(y1, h) {
            for x in lo(x0)..=hi(x1, w) {
                if contains_fixed(&f, (x * unit + half, y * unit + half)) {
                    mask.set(x as usize, y as usize, true);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub id: String,
    pub polygon: Polygon,
}

/// All annotated lesions of one slide.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub lesions: Vec<Lesion>,
}

impl AnnotationSet {
    pub fn validate(&self) -> Result<()> {
        for l in &self.lesions {
            l.polygon.validate().map_err(|e| Error::Data(format!("lesion {}: {e}", l.id)))?;
        }
        Ok(())
    }

    pub fn rasterize(&self, width: usize, height: usize) -> BinaryMask {
        let mut m = BinaryMask::new(width, height);
        for l in &self.lesions {
            l.polygon.rasterize_into(&mut m);
        }
        m
    }
}
