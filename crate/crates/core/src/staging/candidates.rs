//! Lesion candidates from a probability map.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::geometry::ProbabilityMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionCandidate {
    /// Component index in row-major order of first cell.
    pub id: usize,
    /// Member cells as (x, y).
    pub cells: Vec<(usize, usize)>,
    pub peak: f32,
    /// First cell (row-major) attaining the peak.
    pub peak_cell: (usize, usize),
    /// Slide-pixel centre of the peak cell.
    pub peak_px: (f64, f64),
    /// Mean slide-pixel position of the member cells.
    pub centroid_px: (f64, f64),
    pub area_mm2: f64,
    /// Largest distance between member cell centres (Feret diameter).
    pub major_axis_mm: f64,
}

/// Largest pairwise distance between cells, in cell units (brute force).
pub fn feret_cells(cells: &[(usize, usize)]) -> f64 {
    let mut best = 0u64;
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            let dx = a.0.abs_diff(b.0) as u64;
            let dy = a.1.abs_diff(b.1) as u64;
            best = best.max(dx * dx + dy * dy);
        }
    }
    (best as f64).sqrt()
}

/// 8-connected components of cells with probability `>= threshold`.
pub fn extract_candidates(map: &ProbabilityMap, threshold: f32) -> Vec<LesionCandidate> {
    let (w, h) = (map.width, map.height);
    let on = |x: usize, y: usize| map.get(x, y) >= threshold;
    let mut seen = alloc::vec![false; w * h];
    let pitch_mm = map.cell_pitch_mm();
    let mut out = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if seen[y0 * w + x0] || !on(x0, y0) {
                continue;
            }
            let mut cells = Vec::new();
            let mut queue = VecDeque::from([(x0, y0)]);
            seen[y0 * w + x0] = true;
            while let Some((x, y)) = queue.pop_front() {
                cells.push((x, y));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !seen[ny * w + nx] && on(nx, ny) {
                            seen[ny * w + nx] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            cells.sort_unstable_by_key(|&(x, y)| (y, x));
            let mut peak_cell = cells[0];
            for &c in &cells {
                if map.get(c.0, c.1) > map.get(peak_cell.0, peak_cell.1) {
                    peak_cell = c;
                }
            }
            let n = cells.len() as f64;
            let (sx, sy) = cells.iter().fold((0.0, 0.0), |(sx, sy), &(x, y)| {
                let (px, py) = map.cell_center(x, y);
                (sx + px, sy + py)
            });
            out.push(LesionCandidate {
                id: out.len(),
                peak: map.get(peak_cell.0, peak_cell.1),
                peak_cell,
                peak_px: map.cell_center(peak_cell.0, peak_cell.1),
                centroid_px: (sx / n, sy / n),
                area_mm2: n * pitch_mm * pitch_mm,
                major_axis_mm: feret_cells(&cells) * pitch_mm,
                cells,
            });
        }
    }
    out
}

/// Node feature vector: (largest major axis mm, total area mm², candidate
/// count, largest peak probability). All zeros without candidates.
pub fn node_features(cands: &[LesionCandidate]) -> [f64; 4] {
    let mut f = [0.0; 4];
    for c in cands {
        f[0] = f[0].max(c.major_axis_mm);
        f[1] += c.area_mm2;
        f[2] += 1.0;
        f[3] = f[3].max(c.peak as f64);
    }
    f
}
