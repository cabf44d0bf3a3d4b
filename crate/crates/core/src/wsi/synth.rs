//! Synthetic slides and patient cohorts with exact lesion ground truth.
//!
//! A slide is a textured tissue blob on a near-white background. Lesions are
//! star-shaped polygons scaled so their major axis (largest vertex distance)
//! is exactly the requested size, rendered with a darker, denser texture.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use core::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::{derive_seed, stream};
use crate::staging::{NodeClass, PnStage};
use crate::wsi::polygon::{AnnotationSet, Lesion, Polygon};
use crate::wsi::raster::{BinaryMask, RgbImage, SlideRaster, BACKGROUND};
use crate::wsi::sample::{ITC_MAX_MM, MICRO_MAX_MM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LesionSpec {
    pub diameter_mm: f64,
    /// Fixed centre in pixels; drawn inside the tissue when absent.
    #[serde(default)]
    pub center: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideSpec {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub spacing_um: f64,
    pub lesions: Vec<LesionSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSlide {
    pub slide: SlideRaster,
    pub annotations: AnnotationSet,
    pub lesion_truth: BinaryMask,
    pub tissue_truth: BinaryMask,
}

const TISSUE: [f64; 3] = [226.0, 164.0, 198.0];
const TISSUE_NUCLEUS: [f64; 3] = [168.0, 112.0, 178.0];
const TUMOR: [f64; 3] = [150.0, 86.0, 168.0];
const TUMOR_NUCLEUS: [f64; 3] = [84.0, 36.0, 120.0];

fn star(rng: &mut ChaCha8Rng, vertices: usize, roughness: f64) -> Vec<(f64, f64)> {
    let phase = rng.gen_range(0.0..2.0 * PI);
    (0..vertices)
        .map(|k| {
            let a = phase + 2.0 * PI * (k as f64 + rng.gen_range(-0.3..0.3)) / vertices as f64;
            let r = 1.0 + roughness * rng.gen_range(-1.0..1.0);
            (r * a.cos(), r * a.sin())
        })
        .collect()
}

fn scaled_to_diameter(unit: &[(f64, f64)], diameter: f64, center: (f64, f64)) -> Polygon {
    let d = Polygon { points: unit.to_vec() }.max_diameter();
    let k = diameter / d;
    Polygon { points: unit.iter().map(|&(x, y)| (center.0 + k * x, center.1 + k * y)).collect() }
}

/// Points along the boundary at most `step` pixels apart.
fn boundary_points(poly: &Polygon, step: f64) -> Vec<(f64, f64)> {
    let n = poly.points.len();
    let mut out = Vec::new();
    for i in 0..n {
        let (a, b) = (poly.points[i], poly.points[(i + 1) % n]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let k = (len / step).ceil().max(1.0) as usize;
        for j in 0..k {
            let t = j as f64 / k as f64;
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    out
}

const LESION_GAP_PX: f64 = 16.0;

fn separated(a: &Polygon, b: &Polygon) -> bool {
    let (pa, pb) = (boundary_points(a, 4.0), boundary_points(b, 4.0));
    if pa.iter().any(|&(x, y)| b.contains(x, y)) || pb.iter().any(|&(x, y)| a.contains(x, y)) {
        return false;
    }
    pa.iter().all(|p| pb.iter().all(|q| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2) > LESION_GAP_PX * LESION_GAP_PX))
}

/// Places lesions largest first by rejection sampling. `Ok(None)` asks the
/// caller to retry with the next attempt index.
fn place_lesions(
    spec: &SlideSpec,
    tissue: &Polygon,
    (cx, cy, radius): (f64, f64, f64),
    seed: u64,
    attempt: u64,
) -> Result<Option<Vec<Polygon>>> {
    let mut order: Vec<usize> = (0..spec.lesions.len()).collect();
    order.sort_by(|&a, &b| spec.lesions[b].diameter_mm.total_cmp(&spec.lesions[a].diameter_mm));
    let mut placed: Vec<(usize, Polygon)> = Vec::new();
    let tissue_edge = boundary_points(tissue, 4.0);
    for &i in &order {
        let l = &spec.lesions[i];
        if !(l.diameter_mm > 0.0) {
            return Err(config(format!("lesion {i}: diameter must be positive")));
        }
        let d_px = l.diameter_mm * 1000.0 / spec.spacing_um;
        let mut lrng = stream(derive_seed(seed, &[attempt]), 1 + i as u64);
        let unit = star(&mut lrng, 20, 0.15);
        let mut found = None;
        for _ in 0..500 {
            let c = match l.center {
                Some(c) => c,
                None => (lrng.gen_range(cx - radius..cx + radius), lrng.gen_range(cy - radius..cy + radius)),
            };
            let poly = scaled_to_diameter(&unit, d_px, c);
            let inside = boundary_points(&poly, 4.0).iter().all(|&(x, y)| tissue.contains(x, y))
                && !tissue_edge.iter().any(|&(x, y)| poly.contains(x, y));
            if inside && placed.iter().all(|(_, q)| separated(&poly, q)) {
                found = Some(poly);
                break;
            }
            if l.center.is_some() {
                break;
            }
        }
        match found {
            Some(poly) => {
                poly.validate()?;
                placed.push((i, poly));
            }
            None if l.center.is_some() => {
                return Err(config(format!("lesion {i} does not fit at its fixed centre on slide {}", spec.id)))
            }
            None => return Ok(None),
        }
    }
    placed.sort_by_key(|p| p.0);
    Ok(Some(placed.into_iter().map(|p| p.1).collect()))
}

/// Renders a slide from `spec`. Deterministic in `seed`.
pub fn generate_synthetic_slide(spec: &SlideSpec, seed: u64) -> Result<SyntheticSlide> {
    let (w, h) = (spec.width, spec.height);
    if w < 16 || h < 16 {
        return Err(config(format!("synthetic slide {}x{} is too small", w, h)));
    }
    if !(spec.spacing_um > 0.0) {
        return Err(config("pixel spacing must be positive"));
    }
    let mut rng = stream(seed, 0);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let radius = 0.42 * w.min(h) as f64;
    let tissue_poly = Polygon {
        points: star(&mut rng, 40, 0.08).into_iter().map(|(x, y)| (cx + radius * x, cy + radius * y)).collect(),
    };
    tissue_poly.validate()?;
    let mut tissue_truth = BinaryMask::new(w, h);
    tissue_poly.rasterize_into(&mut tissue_truth);

    let polys = (0..20)
        .find_map(|attempt| place_lesions(spec, &tissue_poly, (cx, cy, radius), seed, attempt).transpose())
        .unwrap_or_else(|| {
            Err(config(format!("lesions do not fit on slide {}", spec.id)))
        })?;
    let annotations = AnnotationSet {
        lesions: polys
            .into_iter()
            .enumerate()
            .map(|(i, polygon)| Lesion { id: format!("{}-L{i}", spec.id), polygon })
            .collect(),
    };
    let lesion_truth = annotations.rasterize(w, h);

    let mut trng = stream(seed, 1000);
    let nuclei = |rng: &mut ChaCha8Rng, density: f64, mask: &BinaryMask| -> BinaryMask {
        let mut m = BinaryMask::new(w, h);
        let n = (density * (w * h) as f64) as usize;
        for _ in 0..n {
            let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
            if !mask.get(x, y) {
                continue;
            }
            let r = rng.gen_range(1..=2i64);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (px, py) = (x as i64 + dx, y as i64 + dy);
                    if dx * dx + dy * dy <= r * r && px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                        m.set(px as usize, py as usize, true);
                    }
                }
            }
        }
        m
    };
    let tissue_nuclei = nuclei(&mut trng, 0.010, &tissue_truth);
    let tumor_nuclei = nuclei(&mut trng, 0.045, &lesion_truth);
    let mut image = RgbImage::new(w, h, BACKGROUND);
    for y in 0..h {
        for x in 0..w {
            let noise: f64 = trng.gen_range(-1.0..1.0);
            let px = if lesion_truth.get(x, y) {
                let base = if tumor_nuclei.get(x, y) { TUMOR_NUCLEUS } else { TUMOR };
                base.map(|c| c + 14.0 * noise)
            } else if tissue_truth.get(x, y) {
                let base = if tissue_nuclei.get(x, y) { TISSUE_NUCLEUS } else { TISSUE };
                base.map(|c| c + 12.0 * noise)
            } else {
                BACKGROUND.map(|c| c as f64 + 3.0 * noise)
            };
            image.set(x, y, px.map(|c| c.round().clamp(0.0, 255.0) as u8));
        }
    }
    Ok(SyntheticSlide {
        slide: SlideRaster::new(spec.id.clone(), spec.spacing_um, image)?,
        annotations,
        lesion_truth,
        tissue_truth,
    })
}

/// Node class implied by the largest lesion major axis (mm).
pub fn class_of_diameter(max_mm: Option<f64>) -> NodeClass {
    match max_mm {
        None => NodeClass::Normal,
        Some(d) if d < ITC_MAX_MM => NodeClass::Itc,
        Some(d) if d < MICRO_MAX_MM => NodeClass::Micro,
        Some(_) => NodeClass::Macro,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub patients: usize,
    pub width: usize,
    pub height: usize,
    pub spacing_um: f64,
    /// (lo, hi) major-axis ranges in mm per lesion kind.
    pub itc_mm: (f64, f64),
    pub micro_mm: (f64, f64),
    pub macro_mm: (f64, f64),
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            patients: 10,
            width: 704,
            height: 704,
            spacing_um: 8.0,
            itc_mm: (0.13, 0.18),
            micro_mm: (0.5, 1.4),
            macro_mm: (2.2, 2.6),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64), max: f64| lo > 0.0 && lo <= hi && hi < max;
        if !ok(self.itc_mm, ITC_MAX_MM) || !ok(self.micro_mm, MICRO_MAX_MM) || !ok(self.macro_mm, f64::INFINITY) {
            return Err(config("cohort lesion ranges must be ordered and inside their class bounds"));
        }
        if self.itc_mm.1 >= self.micro_mm.0 || self.micro_mm.0 < ITC_MAX_MM || self.macro_mm.0 < MICRO_MAX_MM {
            return Err(config("cohort lesion ranges overlap class boundaries"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPlan {
    pub id: String,
    pub stage: PnStage,
    pub nodes: Vec<NodeClass>,
    pub slides: Vec<SlideSpec>,
}

fn node_classes(stage: PnStage, rng: &mut ChaCha8Rng) -> Vec<NodeClass> {
    use NodeClass::*;
    let mut nodes = alloc::vec![Normal; 5];
    let mut set = |count: usize, f: &mut dyn FnMut(usize) -> NodeClass| {
        for (k, n) in nodes.iter_mut().enumerate().take(count) {
            *n = f(k);
        }
    };
    match stage {
        PnStage::PN0 => {}
        PnStage::PN0ItcOnly => {
            let n = rng.gen_range(1..=2);
            set(n, &mut |_| Itc);
        }
        PnStage::PN1Mi => {
            let n = rng.gen_range(1..=3);
            set(n, &mut |k| if k == 0 { Micro } else if rng.gen::<bool>() { Micro } else { Itc });
        }
        PnStage::PN1 => {
            let n = rng.gen_range(1..=3);
            set(n, &mut |k| if k == 0 || rng.gen::<bool>() { Macro } else { Micro });
        }
        PnStage::PN2 => {
            let n = rng.gen_range(4..=5);
            set(n, &mut |k| if k == 0 || rng.gen::<bool>() { Macro } else { Micro });
        }
    }
    // shuffle node order
    for i in (1..5).rev() {
        let j = rng.gen_range(0..=i);
        nodes.swap(i, j);
    }
    nodes
}

/// Patients cycle through the five stages (patient `i` has stage `i mod 5`);
/// node classes and lesion sizes are drawn per patient.
pub fn plan_cohort(cfg: &CohortConfig, seed: u64) -> Result<Vec<PatientPlan>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for p in 0..cfg.patients {
        let stage = PnStage::ALL[p % 5];
        let mut rng = stream(derive_seed(seed, &[p as u64]), 0);
        let nodes = node_classes(stage, &mut rng);
        let id = format!("patient_{p:03}");
        let slides = nodes
            .iter()
            .enumerate()
            .map(|(n, class)| {
                let draw = |rng: &mut ChaCha8Rng, r: (f64, f64)| LesionSpec { diameter_mm: rng.gen_range(r.0..=r.1), center: None };
                let lesions = match class {
                    NodeClass::Normal => Vec::new(),
                    NodeClass::Itc => alloc::vec![draw(&mut rng, cfg.itc_mm)],
                    NodeClass::Micro => {
                        let mut v = alloc::vec![draw(&mut rng, cfg.micro_mm)];
                        if rng.gen::<bool>() {
                            v.push(draw(&mut rng, cfg.itc_mm));
                        }
                        v
                    }
                    NodeClass::Macro => {
                        let mut v = alloc::vec![draw(&mut rng, cfg.macro_mm)];
                        if rng.gen::<bool>() {
                            v.push(draw(&mut rng, (cfg.micro_mm.0, cfg.micro_mm.0 + 0.2)));
                        }
                        v
                    }
                };
                SlideSpec {
                    id: format!("{id}_node_{n}"),
                    width: cfg.width,
                    height: cfg.height,
                    spacing_um: cfg.spacing_um,
                    lesions,
                }
            })
            .collect();
        out.push(PatientPlan { id, stage, nodes, slides });
    }
    Ok(out)
}
