//! Slide preprocessing and training data: rasters, annotations, tissue
//! masks, patch sampling, augmentation and the synthetic slide generator.

pub mod augment;
pub mod otsu;
pub mod polygon;
pub mod raster;
pub mod sample;
pub mod synth;

pub use augment::{augment, AugmentConfig, AugmentDraw};
pub use otsu::{otsu_threshold, tissue_mask, OtsuResult, TissueMask};
pub use polygon::{AnnotationSet, Lesion, Polygon};
pub use raster::{images_to_tensor, BinaryMask, RgbImage, SlideRaster};
pub use sample::{sample_patches, PatchGeometry, PatchSample, Provenance, SampleCounts, SampleWarning};
pub use synth::{generate_synthetic_slide, plan_cohort, CohortConfig, LesionSpec, PatientPlan, SlideSpec, SyntheticSlide};
