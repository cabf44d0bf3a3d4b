//! Tile arithmetic, ROI scheduling, stitching and the dense/patch
//! equivalence certifier.
//!
//! A dense pass over an ROI of `L_R = L_p + (L_m - 1)·c` pixels, with cell
//! pitch `c = S_p/α`, yields an `L_m`×`L_m` tile whose cell `(u, v)` equals
//! the training-mode classifier applied to the `L_p` patch at `(u·c, v·c)`.
//! ROIs are refetched every `S_R = c·L_m` pixels so consecutive tiles abut.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, geometry, Error, Result};
use crate::params::NetworkParams;
use crate::pyramid::{detector_forward, Cost, DetectorRun, NetworkSpec, PoolFault};
use crate::rng::{derive_seed, stream};
use crate::tensor::{crop_window, Real, Tensor};
use crate::wsi::raster::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGeometry {
    /// `L_p`, training patch extent in pixels.
    pub patch_extent: usize,
    /// `L_m`, tile extent in cells.
    pub tile_extent: usize,
    /// `S_p`, native output stride in pixels.
    pub output_stride: usize,
    /// `α`, dense coefficient.
    pub alpha: usize,
    /// `L_R`, ROI extent in pixels.
    pub roi_extent: usize,
    /// `S_R`, ROI refetch stride in pixels.
    pub roi_stride: usize,
    /// `S_p/α`, cell pitch in pixels.
    pub cell_pitch: usize,
}

pub fn solve_geometry(patch_extent: usize, tile_extent: usize, output_stride: usize, alpha: usize) -> Result<TileGeometry> {
    if patch_extent == 0 || tile_extent == 0 || output_stride == 0 {
        return Err(config(format!(
            "L_p={patch_extent}, L_m={tile_extent}, S_p={output_stride} must all be positive"
        )));
    }
    if alpha == 0 || output_stride % alpha != 0 {
        return Err(config(format!(
            "dense coefficient alpha={alpha} does not divide output stride S_p={output_stride}"
        )));
    }
    let pitch = output_stride / alpha;
    let overflow = || config("tile geometry overflows");
    let roi_extent = (tile_extent - 1)
        .checked_mul(pitch)
        .and_then(|v| v.checked_add(patch_extent))
        .ok_or_else(overflow)?;
    let roi_stride = pitch.checked_mul(tile_extent).ok_or_else(overflow)?;
    Ok(TileGeometry {
        patch_extent,
        tile_extent,
        output_stride,
        alpha,
        roi_extent,
        roi_stride,
        cell_pitch: pitch,
    })
}

impl TileGeometry {
    /// Geometry for `spec`, checking that the dense strides exist for `alpha`.
    pub fn for_network(spec: &NetworkSpec, alpha: usize, tile_extent: usize) -> Result<Self> {
        spec.validate()?;
        let g = solve_geometry(spec.patch_extent, tile_extent, spec.output_stride, alpha)?;
        spec.dense_strides(alpha)?;
        let lm = spec.tile_extent(g.roi_extent, alpha)?;
        debug_assert_eq!(lm, tile_extent);
        Ok(g)
    }

    /// Pixel offset of cell `j` of ROI `r` along one axis, relative to the
    /// start of ROI 0.
    pub fn cell_offset(&self, roi: usize, j: usize) -> usize {
        roi * self.roi_stride + j * self.cell_pitch
    }
}

/// Background padding added around the slide, in pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiPlacement {
    pub index: usize,
    pub col: usize,
    pub row: usize,
    /// Top-left corner in slide pixels; negative inside the padding.
    pub origin: (i64, i64),
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    /// (width, height) in pixels.
    pub slide_extent: (usize, usize),
    pub geometry: TileGeometry,
    pub padding: Padding,
    /// ROI grid (columns, rows).
    pub grid: (usize, usize),
    pub rois: Vec<RoiPlacement>,
    /// Lattice cells whose centres fall inside the slide: (first, count) per axis.
    pub valid_cells: ((usize, usize), (usize, usize)),
}

struct AxisPlan {
    rois: usize,
    pad_before: usize,
    pad_after: usize,
    first_cell: usize,
    cells: usize,
}

fn plan_axis(extent: usize, g: &TileGeometry) -> Result<AxisPlan> {
    if extent == 0 {
        return Err(geometry("plan_scan", "slide extent must be >= 1"));
    }
    let c = g.cell_pitch;
    let cells = if extent >= g.patch_extent { (extent - g.patch_extent) / c + 1 } else { 1 };
    let rois = cells.div_ceil(g.tile_extent);
    let padded = g.roi_extent + (rois - 1) * g.roi_stride;
    let pad = padded - extent.min(padded);
    let total = rois * g.tile_extent;
    // cells whose centre i·c + L_p/2 − pad_before lies in [0, extent)
    let valid = |pad_before: usize| -> Vec<usize> {
        let twice = |i: usize| 2 * (i * c) as i64 + g.patch_extent as i64 - 2 * pad_before as i64;
        (0..total).filter(|&i| (0..2 * extent as i64).contains(&twice(i))).collect()
    };
    let mut pad_before = pad / 2;
    let mut cells_in = valid(pad_before);
    if cells_in.is_empty() {
        // slide narrower than one pitch: centre cell 0 on it instead
        pad_before = ((g.patch_extent as i64 - extent as i64 + 1).div_euclid(2)).clamp(0, pad as i64) as usize;
        cells_in = valid(pad_before);
    }
    let (first_cell, n) = match (cells_in.first(), cells_in.last()) {
        (Some(&a), Some(&b)) => (a, b - a + 1),
        _ => return Err(geometry("plan_scan", format!("no lattice cell centre falls inside extent {extent}"))),
    };
    Ok(AxisPlan { rois, pad_before, pad_after: pad - pad_before, first_cell, cells: n })
}

/// Places ROIs on the `S_R` lattice over a `width`×`height` slide.
///
/// The lattice covers every patch position that fits inside the slide; the
/// remainder up to a whole number of ROIs is split evenly as background
/// padding on both sides. A slide narrower than one cell pitch is instead
/// padded so that cell 0 is centred on it. With a tissue mask, ROIs whose tissue fraction is
/// below `min_tissue_fraction` are flagged as skipped.
pub fn plan_scan(
    slide_extent: (usize, usize),
    geometry: TileGeometry,
    tissue: Option<&BinaryMask>,
    min_tissue_fraction: f64,
) -> Result<ScanPlan> {
    let ax = plan_axis(slide_extent.0, &geometry)?;
    let ay = plan_axis(slide_extent.1, &geometry)?;
    if let Some(m) = tissue {
        if (m.width(), m.height()) != slide_extent {
            return Err(Error::Dimension {
                op: "plan_scan",
                axis: "tissue mask",
                expected: slide_extent.0 * slide_extent.1,
                found: m.width() * m.height(),
            });
        }
    }
    let integral = tissue.map(|m| m.integral());
    let mut rois = Vec::with_capacity(ax.rois * ay.rois);
    for row in 0..ay.rois {
        for col in 0..ax.rois {
            let origin = (
                (col * geometry.roi_stride) as i64 - ax.pad_before as i64,
                (row * geometry.roi_stride) as i64 - ay.pad_before as i64,
            );
            let skipped = match &integral {
                Some(ii) => {
                    let count = ii.count_in(origin, geometry.roi_extent);
                    (count as f64) < min_tissue_fraction * (geometry.roi_extent * geometry.roi_extent) as f64
                }
                None => false,
            };
            rois.push(RoiPlacement { index: rois.len(), col, row, origin, skipped });
        }
    }
    Ok(ScanPlan {
        slide_extent,
        geometry,
        padding: Padding { left: ax.pad_before, top: ay.pad_before, right: ax.pad_after, bottom: ay.pad_after },
        grid: (ax.rois, ay.rois),
        rois,
        valid_cells: ((ax.first_cell, ax.cells), (ay.first_cell, ay.cells)),
    })
}

impl ScanPlan {
    /// Centre of lattice cell `(i, j)` in slide pixels.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let g = &self.geometry;
        let at = |k: usize, pad: usize| (k * g.cell_pitch) as f64 + g.patch_extent as f64 / 2.0 - pad as f64;
        (at(i, self.padding.left), at(j, self.padding.top))
    }
}

/// Summed-area table of a binary mask.
pub(crate) struct Integral {
    table: Vec<u64>,
    w: usize,
    h: usize,
}

impl BinaryMask {
    pub(crate) fn integral(&self) -> Integral {
        let (w, h) = (self.width(), self.height());
        let mut table = alloc::vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += self.get(x, y) as u64;
                table[(y + 1) * (w + 1) + x + 1] = table[y * (w + 1) + x + 1] + row;
            }
        }
        Integral { table, w, h }
    }
}

impl Integral {
    /// Set pixels inside the square at `origin` with side `extent`, clipped to the mask.
    fn count_in(&self, origin: (i64, i64), extent: usize) -> u64 {
        let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
        let (x0, y0) = (clip(origin.0, self.w), clip(origin.1, self.h));
        let (x1, y1) = (clip(origin.0 + extent as i64, self.w), clip(origin.1 + extent as i64, self.h));
        let s = self.w + 1;
        self.table[y1 * s + x1] + self.table[y0 * s + x0] - self.table[y0 * s + x1] - self.table[y1 * s + x0]
    }
}

/// Stitched tumour probabilities on the cell lattice, restricted to cells
/// whose centres lie inside the slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMap {
    pub slide_id: String,
    /// Extent in cells.
    pub width: usize,
    pub height: usize,
    pub cell_pitch_px: usize,
    /// Micrometres per slide pixel.
    pub spacing_um: f64,
    /// Slide-pixel centre of cell (0, 0).
    pub origin_px: (f64, f64),
    pub alpha: usize,
    pub network_hash: String,
    /// Row-major, `width * height` values.
    pub values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn cell_center(&self, x: usize, y: usize) -> (f64, f64) {
        let p = self.cell_pitch_px as f64;
        (self.origin_px.0 + x as f64 * p, self.origin_px.1 + y as f64 * p)
    }

    /// Cell pitch in millimetres.
    pub fn cell_pitch_mm(&self) -> f64 {
        self.cell_pitch_px as f64 * self.spacing_um / 1000.0
    }
}

/// One finished dense tile: `L_m`×`L_m` tumour probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub roi: usize,
    pub values: Vec<f32>,
}

/// Metadata copied into a stitched map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapMeta {
    pub slide_id: String,
    pub spacing_um: f64,
    pub network_hash: String,
}

/// Assembles tiles into a map. Skipped ROIs contribute zeros; the result does
/// not depend on tile order.
pub fn stitch(plan: &ScanPlan, tiles: &[Tile], meta: &MapMeta) -> Result<ProbabilityMap> {
    let g = &plan.geometry;
    let lm = g.tile_extent;
    let mut by_roi: BTreeMap<usize, &Tile> = BTreeMap::new();
    for t in tiles {
        if t.roi >= plan.rois.len() {
            return Err(Error::Data(format!("tile for unknown ROI {}", t.roi)));
        }
        if t.values.len() != lm * lm {
            return Err(Error::Dimension { op: "stitch", axis: "tile", expected: lm * lm, found: t.values.len() });
        }
        if plan.rois[t.roi].skipped {
            return Err(Error::Data(format!("tile supplied for skipped ROI {}", t.roi)));
        }
        if by_roi.insert(t.roi, t).is_some() {
            return Err(Error::Data(format!("duplicate tile for ROI {}", t.roi)));
        }
    }
    let missing: Vec<String> = plan
        .rois
        .iter()
        .filter(|r| !r.skipped && !by_roi.contains_key(&r.index))
        .map(|r| format!("({},{})", r.origin.0, r.origin.1))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Assembly(missing.join(" ")));
    }
    let ((fx, nx), (fy, ny)) = plan.valid_cells;
    let mut values = alloc::vec![0f32; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let (gx, gy) = (fx + x, fy + y);
            let roi = (gy / lm) * plan.grid.0 + gx / lm;
            if let Some(t) = by_roi.get(&roi) {
                values[y * nx + x] = t.values[(gy % lm) * lm + gx % lm];
            }
        }
    }
    Ok(ProbabilityMap {
        slide_id: meta.slide_id.clone(),
        width: nx,
        height: ny,
        cell_pitch_px: g.cell_pitch,
        spacing_um: meta.spacing_um,
        origin_px: plan.cell_center(fx, fy),
        alpha: g.alpha,
        network_hash: meta.network_hash.clone(),
        values,
    })
}

fn check_roi<T: Real>(roi: &Tensor<T>, g: &TileGeometry, op: &'static str) -> Result<()> {
    let (_, _, h, w) = roi.dims4();
    if h != g.roi_extent || w != g.roi_extent {
        return Err(geometry(op, format!("ROI is {h}x{w}, geometry requires {0}x{0}", g.roi_extent)));
    }
    Ok(())
}

/// Sliding-window reference: runs the training-mode classifier on every
/// `L_p` patch of the ROI at stride `S_p/α`. Returns `[n, 2, L_m, L_m]`.
pub fn patch_oracle<T: Real>(
    roi: &Tensor<T>,
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    g: &TileGeometry,
    cost: &mut Cost,
) -> Result<Tensor<T>> {
    check_roi(roi, g, "patch_oracle")?;
    if g.patch_extent != spec.patch_extent {
        return Err(geometry("patch_oracle", "geometry and network disagree on L_p"));
    }
    let (n, _, _, _) = roi.dims4();
    let lm = g.tile_extent;
    let mut out = Tensor::zeros(&[n, 2, lm, lm]);
    for b in 0..n {
        let item = crop_batch(roi, b)?;
        for u in 0..lm {
            for v in 0..lm {
                let patch = crop_window(&item, u * g.cell_pitch, v * g.cell_pitch, g.patch_extent, g.patch_extent)?;
                let p = detector_forward(&patch, spec, params, DetectorRun::train(), cost)?;
                for c in 0..2 {
                    out.data_mut()[((b * 2 + c) * lm + u) * lm + v] = p.data()[c];
                }
            }
        }
    }
    Ok(out)
}

fn crop_batch<T: Real>(x: &Tensor<T>, b: usize) -> Result<Tensor<T>> {
    let (_, c, h, w) = x.dims4();
    let len = c * h * w;
    Tensor::new(alloc::vec![1, c, h, w], x.data()[b * len..(b + 1) * len].to_vec())
}

/// Dense tile `[n, 2, L_m, L_m]` for one ROI.
pub fn dense_tile<T: Real>(
    roi: &Tensor<T>,
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    g: &TileGeometry,
    fault: Option<PoolFault>,
    cost: &mut Cost,
) -> Result<Tensor<T>> {
    check_roi(roi, g, "dense_tile")?;
    let run = DetectorRun { fault, ..DetectorRun::dense(g.alpha) };
    detector_forward(roi, spec, params, run, cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// 32-bit dense path against the 64-bit oracle.
    Mixed,
    /// Both paths in 64-bit.
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub alpha: usize,
    pub tile_extent: usize,
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub precision: Precision,
    /// Test hook: deliberately misplace one level's dense pooling windows.
    pub fault: Option<PoolFault>,
}

impl CertifyConfig {
    pub fn new(alpha: usize, tile_extent: usize, trials: usize, seed: u64) -> Self {
        Self { alpha, tile_extent, trials, seed, tolerance: 1e-4, precision: Precision::Mixed, fault: None }
    }

    pub fn double(mut self) -> Self {
        self.precision = Precision::Double;
        self.tolerance = 1e-9;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCell {
    pub trial: usize,
    pub row: usize,
    pub col: usize,
    pub dense: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub geometry: TileGeometry,
    pub trials: usize,
    pub precision: Precision,
    pub tolerance: f64,
    pub max_abs_deviation: f64,
    pub worst: Option<WorstCell>,
    pub passed: bool,
}

/// Compares dense tiles with the patch oracle on random weights and ROIs.
///
/// Each trial draws fresh weights, biases and an input ROI from streams
/// derived from `cfg.seed`. Weights and inputs are rounded to `f32` first so
/// both paths see identical values.
pub fn certify_equivalence(spec: &NetworkSpec, cfg: &CertifyConfig) -> Result<CertifyReport> {
    let g = TileGeometry::for_network(spec, cfg.alpha, cfg.tile_extent)?;
    let detector_spec = NetworkSpec { decoder: None, ..spec.clone() };
    let mut worst: Option<WorstCell> = None;
    let mut max_dev = 0.0f64;
    for trial in 0..cfg.trials {
        let seed = derive_seed(cfg.seed, &[trial as u64]);
        let mut p64 = NetworkParams::<f64>::init(&detector_spec, seed)?;
        p64.randomize_biases(seed, 0.1);
        let p32: NetworkParams<f32> = p64.cast();
        let p64: NetworkParams<f64> = p32.cast();
        let mut rng = stream(seed, 3);
        let shape = [1, spec.input_channels, g.roi_extent, g.roi_extent];
        let x32 = Tensor::<f32>::from_fn(&shape, |_| rng.gen_range(-1.0f32..1.0));
        let x64: Tensor<f64> = x32.cast();
        let oracle = patch_oracle(&x64, &detector_spec, &p64, &g, &mut Cost::default())?;
        let dense: Tensor<f64> = match cfg.precision {
            Precision::Mixed => dense_tile(&x32, &detector_spec, &p32, &g, cfg.fault, &mut Cost::default())?.cast(),
            Precision::Double => dense_tile(&x64, &detector_spec, &p64, &g, cfg.fault, &mut Cost::default())?,
        };
        let lm = g.tile_extent;
        for row in 0..lm {
            for col in 0..lm {
                // channel 1 is the tumour probability
                let i = (lm + row) * lm + col;
                let (d, o) = (dense.data()[i], oracle.data()[i]);
                let dev = (d - o).abs();
                if !(dev <= max_dev) {
                    max_dev = if dev.is_nan() { f64::INFINITY } else { dev };
                    worst = Some(WorstCell { trial, row, col, dense: d, oracle: o });
                }
            }
        }
    }
    Ok(CertifyReport {
        geometry: g,
        trials: cfg.trials,
        precision: cfg.precision,
        tolerance: cfg.tolerance,
        max_abs_deviation: max_dev,
        worst,
        passed: max_dev <= cfg.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_tuple() {
        let g = solve_geometry(692, 64, 512, 16).unwrap();
        assert_eq!((g.roi_extent, g.roi_stride, g.cell_pitch), (2708, 2048, 32));
    }

    #[test]
    fn one_cell_tile_is_patch_stepping() {
        let g = solve_geometry(52, 1, 64, 2).unwrap();
        assert_eq!((g.roi_extent, g.roi_stride), (52, 32));
    }

    #[test]
    fn desk_tuple() {
        let g = solve_geometry(52, 8, 64, 4).unwrap();
        assert_eq!((g.roi_extent, g.roi_stride), (164, 128));
    }

    #[test]
    fn alpha_must_divide_stride() {
        let e = solve_geometry(52, 8, 64, 3).unwrap_err();
        let msg = format!("{e}");
        assert!(msg.contains("alpha=3") && msg.contains("S_p=64"), "{msg}");
        assert!(solve_geometry(52, 0, 64, 4).is_err());
    }

    #[test]
    fn slide_of_one_roi() {
        let g = solve_geometry(52, 8, 64, 4).unwrap();
        let p = plan_scan((164, 164), g, None, 0.0).unwrap();
        assert_eq!(p.rois.len(), 1);
        assert_eq!(p.padding, Padding::default());
        assert_eq!(p.valid_cells, ((0, 8), (0, 8)));
    }

    #[test]
    fn two_abutting_columns() {
        let g = solve_geometry(52, 8, 64, 4).unwrap();
        let w = 2 * g.roi_stride + g.patch_extent - g.cell_pitch;
        let p = plan_scan((w, g.roi_extent), g, None, 0.0).unwrap();
        assert_eq!(p.grid, (2, 1));
        let mut centers = Vec::new();
        for r in &p.rois {
            for j in 0..g.tile_extent {
                centers.push(r.origin.0 as usize + j * g.cell_pitch + g.patch_extent / 2);
            }
        }
        let mut dedup = centers.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), centers.len());
        assert!(centers.windows(2).all(|w| w[1] - w[0] == g.cell_pitch));
    }

    #[test]
    fn small_slide_is_padded_symmetrically() {
        let g = solve_geometry(52, 8, 64, 4).unwrap();
        let p = plan_scan((100, 60), g, None, 0.0).unwrap();
        assert_eq!(p.rois.len(), 1);
        assert_eq!(p.padding.left + p.padding.right, 64);
        assert_eq!(p.padding.left, 32);
        assert_eq!(p.padding.top, 52);
        assert_eq!(p.valid_cells, ((1, 6), (2, 4)));
    }

    #[test]
    fn background_mask_skips_everything() {
        let g = solve_geometry(52, 4, 64, 4).unwrap();
        let mask = BinaryMask::new(300, 200);
        let p = plan_scan((300, 200), g, Some(&mask), 0.01).unwrap();
        assert!(p.rois.iter().all(|r| r.skipped));
        let meta = MapMeta { slide_id: "s".into(), spacing_um: 8.0, network_hash: "h".into() };
        let m = stitch(&p, &[], &meta).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stitch_two_constant_blocks() {
        let g = solve_geometry(52, 2, 64, 4).unwrap();
        let w = 2 * g.roi_stride + g.patch_extent - g.cell_pitch;
        let p = plan_scan((w, g.roi_extent), g, None, 0.0).unwrap();
        let meta = MapMeta { slide_id: "s".into(), spacing_um: 8.0, network_hash: "h".into() };
        let tiles = [Tile { roi: 1, values: alloc::vec![0.75; 4] }, Tile { roi: 0, values: alloc::vec![0.25; 4] }];
        let m = stitch(&p, &tiles, &meta).unwrap();
        assert_eq!((m.width, m.height), (4, 2));
        assert_eq!(m.values, [0.25, 0.25, 0.75, 0.75, 0.25, 0.25, 0.75, 0.75]);
        let missing = stitch(&p, &tiles[..1], &meta).unwrap_err();
        assert!(matches!(missing, Error::Assembly(ref s) if s.contains("(0,0)")));
    }
}
