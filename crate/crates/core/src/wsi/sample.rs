//! Training patch extraction.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::stream;
use crate::wsi::polygon::AnnotationSet;
use crate::wsi::raster::{BinaryMask, RgbImage, SlideRaster, BACKGROUND};

/// Lesions below this major axis (mm) are isolated tumour cells.
pub const ITC_MAX_MM: f64 = 0.2;
/// Lesions below this major axis (mm) are micro-metastases.
pub const MICRO_MAX_MM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Uniform over tissue.
    Random,
    /// Uniform over lesion interiors.
    Lesion,
    /// Centred on a lesion with major axis below 0.2 mm.
    Itc,
    /// Centred on a lesion boundary pixel.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSample {
    pub slide_id: String,
    /// Patch centre in slide pixels.
    pub center: (usize, usize),
    /// 1 = tumour (the mask pixel under the centre is set).
    pub label: u8,
    pub provenance: Provenance,
    #[serde(skip)]
    pub image: Option<RgbImage>,
    #[serde(skip)]
    pub mask: Option<BinaryMask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleCounts {
    pub random: usize,
    pub lesion: usize,
    pub itc: usize,
    pub boundary: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self { random: 24, lesion: 12, itc: 6, boundary: 8 }
    }
}

/// Emitted when a requested patch kind has no candidates on the slide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleWarning {
    pub slide_id: String,
    pub provenance: Provenance,
    pub requested: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub patch_extent: usize,
    pub mask_extent: usize,
}

/// Top-left corner of a window of `extent` centred on pixel `c`
/// (the centre pixel is `extent / 2` from the corner).
pub fn window_origin(c: usize, extent: usize) -> i64 {
    c as i64 - (extent / 2) as i64
}

/// Cuts the image and mask windows centred on `center`.
pub fn cut_patch(
    slide: &RgbImage,
    lesions: &BinaryMask,
    center: (usize, usize),
    geom: PatchGeometry,
) -> (RgbImage, BinaryMask) {
    let (p, m) = (geom.patch_extent, geom.mask_extent);
    let img = slide.crop(window_origin(center.0, p), window_origin(center.1, p), p, p, BACKGROUND);
    // mask window shares the patch centre
    let o = (p - m) / 2;
    let mask = lesions.crop(window_origin(center.0, p) + o as i64, window_origin(center.1, p) + o as i64, m, m);
    (img, mask)
}

/// Draws patch centres of each kind and cuts the windows. Deterministic in
/// `seed`; the four kinds use independent streams.
pub fn sample_patches(
    slide: &SlideRaster,
    annotations: &AnnotationSet,
    tissue: &BinaryMask,
    counts: SampleCounts,
    geom: PatchGeometry,
    seed: u64,
) -> Result<(Vec<PatchSample>, Vec<SampleWarning>)> {
    if geom.mask_extent > geom.patch_extent || (geom.patch_extent - geom.mask_extent) % 2 != 0 {
        return Err(config("mask extent must not exceed the patch extent and must share its parity"));
    }
    annotations.validate()?;
    let (w, h) = (slide.width(), slide.height());
    let lesions = annotations.rasterize(w, h);
    let pixels = |m: &BinaryMask| -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(x, y) {
                    v.push((x, y));
                }
            }
        }
        v
    };
    let random = pixels(tissue);
    let inside = pixels(&lesions);
    let mut itc_mask = BinaryMask::new(w, h);
    for l in &annotations.lesions {
        if l.polygon.max_diameter() * slide.spacing_um / 1000.0 < ITC_MAX_MM {
            l.polygon.rasterize_into(&mut itc_mask);
        }
    }
    let itc = pixels(&itc_mask);
    let boundary: Vec<(usize, usize)> = inside
        .iter()
        .copied()
        .filter(|&(x, y)| {
            x == 0 || y == 0 || x + 1 == w || y + 1 == h
                || !lesions.get(x - 1, y)
                || !lesions.get(x + 1, y)
                || !lesions.get(x, y - 1)
                || !lesions.get(x, y + 1)
        })
        .collect();
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    let kinds = [
        (Provenance::Random, counts.random, &random),
        (Provenance::Lesion, counts.lesion, &inside),
        (Provenance::Itc, counts.itc, &itc),
        (Provenance::Boundary, counts.boundary, &boundary),
    ];
    for (k, (prov, n, cands)) in kinds.into_iter().enumerate() {
        if n == 0 {
            continue;
        }
        if cands.is_empty() {
            warnings.push(SampleWarning { slide_id: slide.id.clone(), provenance: prov, requested: n, emitted: 0 });
            continue;
        }
        let mut rng = stream(seed, k as u64);
        for _ in 0..n {
            let center = cands[rng.gen_range(0..cands.len())];
            let (image, mask) = cut_patch(&slide.image, &lesions, center, geom);
            out.push(PatchSample {
                slide_id: slide.id.clone(),
                center,
                label: lesions.get(center.0, center.1) as u8,
                provenance: prov,
                image: Some(image),
                mask: Some(mask),
            });
        }
    }
    Ok((out, warnings))
}
