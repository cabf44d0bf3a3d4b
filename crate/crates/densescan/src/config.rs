//! Run configuration: one TOML (or JSON) document, every section optional,
//! unknown keys rejected.

use std::path::{Path, PathBuf};

use densescan_core::geometry::{Precision, TileGeometry};
use densescan_core::loss::LossConfig;
use densescan_core::pyramid::{NetworkSpec, PoolFault};
use densescan_core::wsi::synth::CohortConfig;
use densescan_core::wsi::{AugmentConfig, SampleCounts};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::hash::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub network: NetworkConfig,
    pub geometry: GeometryConfig,
    pub loss: LossSection,
    pub train: TrainConfig,
    pub cohort: CohortConfig,
    pub staging: StagingConfig,
    pub verify: VerifyConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            network: NetworkConfig::default(),
            geometry: GeometryConfig::default(),
            loss: LossSection::default(),
            train: TrainConfig::default(),
            cohort: CohortConfig::default(),
            staging: StagingConfig::default(),
            verify: VerifyConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Default locations; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub cohort: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub maps: Option<PathBuf>,
    pub stages: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Built-in network ("desk").
    pub preset: Option<String>,
    /// JSON network description; overrides `preset`.
    pub spec: Option<PathBuf>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { preset: Some("desk".into()), spec: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub alpha: usize,
    pub tile_extent: usize,
    /// ROIs with a smaller tissue fraction are skipped.
    pub min_tissue_fraction: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { alpha: 4, tile_extent: 8, min_tissue_fraction: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self { gamma: 0.04, lambda: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Patches drawn per slide.
    pub samples: SampleCounts,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            steps: 300,
            batch_size: 16,
            samples: SampleCounts::default(),
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Forest,
    Rules,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StagingConfig {
    /// Candidate cells have probability at or above this.
    pub threshold: f32,
    pub classifier: ClassifierKind,
    pub trees: usize,
    pub max_depth: usize,
    pub bootstrap: bool,
    /// Forest also sees candidate count and largest peak, besides major axis and area.
    pub extra_features: bool,
}

impl Default for StagingConfig {
    fn default() -> Self {
        Self { threshold: 0.5, classifier: ClassifierKind::Forest, trees: 50, max_depth: 8, bootstrap: true, extra_features: true }
    }
}

impl StagingConfig {
    pub fn forest_features(&self) -> usize {
        if self.extra_features {
            4
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub alphas: Vec<usize>,
    pub tile_extents: Vec<usize>,
    pub trials: usize,
    pub precision: Precision,
    /// Deliberately misplaced pooling window (self-test of the certifier).
    pub fault: Option<PoolFault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { alphas: vec![1, 2, 4], tile_extents: vec![2, 4, 8], trials: 10, precision: Precision::Mixed, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub alpha: usize,
    pub tile_extents: Vec<usize>,
    /// ROIs timed per tile extent.
    pub rois: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { alpha: 4, tile_extents: vec![1, 2, 4, 8], rois: 3 }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl RunConfig {
    pub fn parse_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| config_err(format!("config: {}", e.message())))
    }

    pub fn parse_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| config_err(format!("config: {e}")))
    }

    /// Reads `path` as JSON when it ends in `.json`, TOML otherwise.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::parse_json(&text)
        } else {
            Self::parse_toml(&text)
        }
    }

    pub fn network_spec(&self) -> CliResult<NetworkSpec> {
        let spec = match (&self.network.spec, self.network.preset.as_deref()) {
            (Some(p), _) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| config_err(format!("network spec {}: {e}", p.display())))?
            }
            (None, Some("desk")) => NetworkSpec::desk(),
            (None, Some(other)) => return Err(config_err(format!("unknown network preset `{other}`"))),
            (None, None) => return Err(config_err("network needs `preset` or `spec`")),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn loss_config(&self) -> CliResult<LossConfig> {
        Ok(LossConfig::new(self.loss.gamma, self.loss.lambda)?)
    }

    pub fn tile_geometry(&self, spec: &NetworkSpec) -> CliResult<TileGeometry> {
        Ok(TileGeometry::for_network(spec, self.geometry.alpha, self.geometry.tile_extent)?)
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> CliResult<()> {
        let spec = self.network_spec()?;
        self.tile_geometry(&spec)?;
        self.loss_config()?;
        let g = &self.geometry;
        if !(0.0..=1.0).contains(&g.min_tissue_fraction) {
            return Err(config_err("geometry.min_tissue_fraction must lie in [0, 1]"));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(config_err("train.batch_size must be >= 1"));
        }
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) || !(0.0..1.0).contains(&t.momentum) {
            return Err(config_err("train.learning_rate must be finite and >= 0, train.momentum in [0, 1)"));
        }
        t.augment.validate()?;
        self.cohort.validate()?;
        let s = &self.staging;
        if !(s.threshold > 0.0 && s.threshold < 1.0) {
            return Err(config_err("staging.threshold must lie in (0, 1)"));
        }
        if s.trees == 0 {
            return Err(config_err("staging.trees must be >= 1"));
        }
        if self.verify.trials == 0 || self.verify.alphas.is_empty() || self.verify.tile_extents.is_empty() {
            return Err(config_err("verify needs at least one trial, alpha and tile extent"));
        }
        if self.bench.rois == 0 || self.bench.tile_extents.is_empty() {
            return Err(config_err("bench needs at least one ROI and tile extent"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}
