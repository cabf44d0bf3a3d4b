//! Slide-level processing shared by the commands: dense inference, training
//! patches, staging and evaluation.

use densescan_core::geometry::{dense_tile, plan_scan, stitch, MapMeta, ProbabilityMap, Tile, TileGeometry};
use densescan_core::params::NetworkParams;
use densescan_core::pyramid::{Cost, NetworkSpec};
use densescan_core::rng::{derive_seed, stream};
use densescan_core::staging::{
    auc, classify_node, extract_candidates, froc, node_features, rf_train, stage_kappa, stage_patient, Detection,
    ForestConfig, LesionCandidate, NodeClass, NodeClassifier, PnStage, RandomForest, SlideEvaluation, TruthLesion,
};
use densescan_core::tensor::Tensor;
use densescan_core::train::{Batch, BatchSource};
use densescan_core::wsi::raster::BACKGROUND;
use densescan_core::wsi::sample::{cut_patch, ITC_MAX_MM};
use densescan_core::wsi::{
    augment, images_to_tensor, tissue_mask, AnnotationSet, AugmentConfig, AugmentDraw, BinaryMask, PatchGeometry,
    PatchSample, RgbImage, SlideRaster,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Detector weights ready for dense scanning.
pub struct InferenceModel {
    pub spec: NetworkSpec,
    pub params: NetworkParams<f32>,
    pub geometry: TileGeometry,
    pub network_hash: String,
    pub min_tissue_fraction: f64,
}

impl InferenceModel {
    pub fn new(spec: &NetworkSpec, params: &NetworkParams<f32>, geometry: TileGeometry, network_hash: String, min_tissue_fraction: f64) -> Self {
        Self {
            spec: NetworkSpec { decoder: None, ..spec.clone() },
            params: params.detector_only(),
            geometry,
            network_hash,
            min_tissue_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferStats {
    pub rois: usize,
    pub skipped: usize,
    pub macs: u64,
}

/// Tissue mask, ROI plan, dense tiles (in parallel, collected in ROI order)
/// and stitching.
pub fn infer_slide(model: &InferenceModel, slide: &SlideRaster) -> CliResult<(ProbabilityMap, InferStats)> {
    let tissue = tissue_mask(&slide.image);
    let g = model.geometry;
    let plan = plan_scan((slide.width(), slide.height()), g, Some(&tissue.mask), model.min_tissue_fraction)?;
    let lm = g.tile_extent;
    let results: Vec<densescan_core::Result<(Tile, u64)>> = plan
        .rois
        .par_iter()
        .filter(|r| !r.skipped)
        .map(|r| {
            let crop = slide.image.crop(r.origin.0, r.origin.1, g.roi_extent, g.roi_extent, BACKGROUND);
            let x = images_to_tensor::<f32>(&[&crop])?;
            let mut cost = Cost::default();
            let out = dense_tile(&x, &model.spec, &model.params, &g, None, &mut cost)?;
            // channel 1 is the tumour probability
            let values = out.data()[lm * lm..2 * lm * lm].to_vec();
            Ok((Tile { roi: r.index, values }, cost.macs))
        })
        .collect();
    let mut tiles = Vec::with_capacity(results.len());
    let mut stats = InferStats { rois: plan.rois.len(), ..InferStats::default() };
    for r in results {
        let (t, macs) = r?;
        stats.macs += macs;
        tiles.push(t);
    }
    stats.skipped = stats.rois - tiles.len();
    let meta = MapMeta { slide_id: slide.id.clone(), spacing_um: slide.spacing_um, network_hash: model.network_hash.clone() };
    Ok((stitch(&plan, &tiles, &meta)?, stats))
}

/// One training example: patch, centred mask and label.
#[derive(Debug, Clone)]
pub struct TrainingPatch {
    pub image: RgbImage,
    pub mask: BinaryMask,
    pub label: u8,
}

/// Re-cuts the windows of previously sampled patch centres.
pub fn recut(slide: &SlideRaster, annotations: &AnnotationSet, samples: &[PatchSample], geom: PatchGeometry) -> Vec<TrainingPatch> {
    let lesions = annotations.rasterize(slide.width(), slide.height());
    samples
        .iter()
        .map(|s| {
            let (image, mask) = cut_patch(&slide.image, &lesions, s.center, geom);
            TrainingPatch { image, mask, label: s.label }
        })
        .collect()
}

/// Training patches with a fresh augmentation per (step, batch position).
pub struct PatchSet {
    pub patches: Vec<TrainingPatch>,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub mask_extent: usize,
}

impl BatchSource<f32> for PatchSet {
    fn len(&self) -> usize {
        self.patches.len()
    }

    fn batch(&self, step: usize, indices: &[usize]) -> densescan_core::Result<Batch<f32>> {
        let step_seed = derive_seed(self.seed, &[step as u64]);
        let mut images = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut masks = Vec::with_capacity(indices.len() * self.mask_extent * self.mask_extent);
        for (k, &i) in indices.iter().enumerate() {
            let p = &self.patches[i];
            let draw = AugmentDraw::sample(&self.augment, &mut stream(step_seed, k as u64));
            let (img, mask) = augment(&p.image, &p.mask, &draw);
            images.push(img);
            labels.push(p.label);
            masks.extend_from_slice(mask.data());
        }
        let refs: Vec<&RgbImage> = images.iter().collect();
        let images: Tensor<f32> = images_to_tensor(&refs)?;
        Ok(Batch { images, labels, masks, mask_extent: self.mask_extent })
    }
}

/// Candidates of one slide plus the detections they imply (peak cell
/// centre, scored by the peak probability).
pub fn slide_detections(map: &ProbabilityMap, threshold: f32) -> (Vec<LesionCandidate>, Vec<Detection>) {
    let cands = extract_candidates(map, threshold);
    let dets = cands.iter().map(|c| Detection { score: c.peak as f64, x: c.peak_px.0, y: c.peak_px.1 }).collect();
    (cands, dets)
}

pub fn forest_config(trees: usize, max_depth: usize, bootstrap: bool, seed: u64) -> ForestConfig {
    ForestConfig { trees, max_depth, seed: derive_seed(seed, &[0xF0_2E57]), bootstrap }
}

/// Fits the node classifier on candidate features against reference classes.
/// Only the leading `n_features` entries of each vector are used.
pub fn fit_forest(features: &[[f64; 4]], n_features: usize, classes: &[NodeClass], cfg: &ForestConfig) -> CliResult<RandomForest> {
    let x: Vec<Vec<f64>> = features.iter().map(|f| f[..n_features].to_vec()).collect();
    let y: Vec<usize> = classes.iter().map(|c| c.index()).collect();
    Ok(rf_train(&x, &y, NodeClass::ALL.len(), cfg)?)
}

pub fn classify(cands: &[LesionCandidate], classifier: &NodeClassifier) -> CliResult<NodeClass> {
    Ok(classify_node(cands, classifier)?)
}

pub fn features(cands: &[LesionCandidate]) -> [f64; 4] {
    node_features(cands)
}

pub fn patient_stage(nodes: &[NodeClass]) -> CliResult<PnStage> {
    Ok(stage_patient(nodes)?)
}

/// Reference lesions of a slide; ITC-sized lesions are excluded from
/// sensitivity.
pub fn truth_lesions(annotations: &AnnotationSet, spacing_um: f64) -> Vec<TruthLesion> {
    annotations
        .lesions
        .iter()
        .map(|l| TruthLesion {
            polygon: l.polygon.clone(),
            countable: l.polygon.max_diameter() * spacing_um / 1000.0 >= ITC_MAX_MM,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocSummary {
    pub rates: [f64; 6],
    pub sensitivities: [f64; 6],
    pub average: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub patients: usize,
    pub slides: usize,
    pub kappa: f64,
    /// Rows are reference stages, columns predicted, in pN0, pN0(i+), pN1mi, pN1, pN2 order.
    pub stage_confusion: [[usize; 5]; 5],
    pub froc: Option<FrocSummary>,
    /// Slide-level ROC AUC of the largest detection score against "slide has a lesion".
    pub auc: Option<f64>,
    pub notes: Vec<String>,
}

pub struct SlideOutcome {
    pub detections: Vec<Detection>,
    pub lesions: Vec<TruthLesion>,
    pub has_lesion: bool,
}

pub fn evaluate(pred: &[PnStage], truth: &[PnStage], slides: Vec<SlideOutcome>) -> CliResult<Metrics> {
    if pred.len() != truth.len() {
        return Err(CliError::Validation(format!("{} predicted stages for {} patients", pred.len(), truth.len())));
    }
    let kappa = stage_kappa(pred, truth)?;
    let mut stage_confusion = [[0usize; 5]; 5];
    for (p, t) in pred.iter().zip(truth) {
        stage_confusion[t.index()][p.index()] += 1;
    }
    let mut notes = Vec::new();
    let scores: Vec<f64> = slides.iter().map(|s| s.detections.iter().map(|d| d.score).fold(0.0, f64::max)).collect();
    let labels: Vec<bool> = slides.iter().map(|s| s.has_lesion).collect();
    let auc = match auc(&scores, &labels) {
        Ok(a) => Some(a),
        Err(e) => {
            notes.push(format!("AUC not reported: {e}"));
            None
        }
    };
    let n_slides = slides.len();
    let evals: Vec<SlideEvaluation> =
        slides.into_iter().map(|s| SlideEvaluation { detections: s.detections, lesions: s.lesions }).collect();
    let froc = match froc(&evals) {
        Ok(r) => Some(FrocSummary { rates: densescan_core::staging::FROC_RATES, sensitivities: r.sensitivities, average: r.average }),
        Err(e) => {
            notes.push(format!("FROC not reported: {e}"));
            None
        }
    };
    Ok(Metrics { patients: pred.len(), slides: n_slides, kappa, stage_confusion, froc, auc, notes })
}

/// Plain-text rendering of [`Metrics`].
pub fn metrics_text(m: &Metrics) -> String {
    let mut s = String::new();
    s.push_str(&format!("patients {}\nslides {}\nkappa {:.6}\n", m.patients, m.slides, m.kappa));
    match &m.froc {
        Some(f) => {
            s.push_str(&format!("froc {:.6}\n", f.average));
            for (r, v) in f.rates.iter().zip(&f.sensitivities) {
                s.push_str(&format!("  sensitivity@{r} {v:.6}\n"));
            }
        }
        None => s.push_str("froc n/a\n"),
    }
    match m.auc {
        Some(a) => s.push_str(&format!("auc {a:.6}\n")),
        None => s.push_str("auc n/a\n"),
    }
    s.push_str("stage confusion (rows reference, columns predicted)\n");
    let labels = PnStage::ALL.map(|p| p.label());
    s.push_str(&format!("{:>8}", ""));
    for l in labels {
        s.push_str(&format!("{l:>8}"));
    }
    s.push('\n');
    for (i, row) in m.stage_confusion.iter().enumerate() {
        s.push_str(&format!("{:>8}", labels[i]));
        for v in row {
            s.push_str(&format!("{v:>8}"));
        }
        s.push('\n');
    }
    for n in &m.notes {
        s.push_str(&format!("note {n}\n"));
    }
    s
}
