//! Cohort directories: `cohort.json` plus one slide PNG, sidecar and
//! annotation file per node under `slides/`.

use std::path::{Path, PathBuf};

use densescan_core::rng::derive_seed;
use densescan_core::staging::{NodeClass, PnStage};
use densescan_core::wsi::{generate_synthetic_slide, plan_cohort, CohortConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::formats::{annotations_path, read_json, write_json, write_slide};

pub const INDEX_FILE: &str = "cohort.json";
pub const SLIDES_DIR: &str = "slides";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientEntry {
    pub id: String,
    /// Reference stage.
    pub stage: PnStage,
    /// Reference node classes, one per slide.
    pub nodes: Vec<NodeClass>,
    pub slides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortIndex {
    pub patients: Vec<PatientEntry>,
}

impl CohortIndex {
    pub fn slide_ids(&self) -> impl Iterator<Item = &str> {
        self.patients.iter().flat_map(|p| p.slides.iter().map(String::as_str))
    }
}

pub struct Cohort {
    pub root: PathBuf,
    pub index: CohortIndex,
}

impl Cohort {
    pub fn load(root: &Path) -> CliResult<Self> {
        let index: CohortIndex = read_json(&root.join(INDEX_FILE))?;
        for p in &index.patients {
            if p.slides.len() != p.nodes.len() {
                return Err(CliError::Validation(format!("patient {}: {} slides for {} nodes", p.id, p.slides.len(), p.nodes.len())));
            }
        }
        Ok(Self { root: root.to_path_buf(), index })
    }

    pub fn slides_dir(&self) -> PathBuf {
        self.root.join(SLIDES_DIR)
    }

    /// Cohort-relative paths of every file describing slide `id`.
    pub fn slide_files(&self, id: &str) -> Vec<PathBuf> {
        let mut v = vec![
            PathBuf::from(SLIDES_DIR).join(format!("{id}.png")),
            PathBuf::from(SLIDES_DIR).join(format!("{id}.json")),
        ];
        if annotations_path(&self.slides_dir(), id).exists() {
            v.push(PathBuf::from(SLIDES_DIR).join(format!("{id}.annotations.json")));
        }
        v
    }
}

/// Renders a synthetic cohort into `out`. Returns the cohort-relative paths written.
pub fn write_synthetic_cohort(cfg: &CohortConfig, seed: u64, out: &Path) -> CliResult<Vec<PathBuf>> {
    let plans = plan_cohort(cfg, seed)?;
    let slides_dir = out.join(SLIDES_DIR);
    let jobs: Vec<(usize, usize)> =
        plans.iter().enumerate().flat_map(|(p, plan)| (0..plan.slides.len()).map(move |n| (p, n))).collect();
    let written: Vec<CliResult<Vec<PathBuf>>> = jobs
        .par_iter()
        .map(|&(p, n)| {
            let spec = &plans[p].slides[n];
            let s = generate_synthetic_slide(spec, derive_seed(seed, &[p as u64, n as u64]))?;
            write_slide(&slides_dir, &s.slide)?;
            write_json(&annotations_path(&slides_dir, &spec.id), &s.annotations)?;
            let rel = PathBuf::from(SLIDES_DIR);
            Ok(vec![
                rel.join(format!("{}.png", spec.id)),
                rel.join(format!("{}.json", spec.id)),
                rel.join(format!("{}.annotations.json", spec.id)),
            ])
        })
        .collect();
    let mut files = Vec::new();
    for w in written {
        files.extend(w?);
    }
    let index = CohortIndex {
        patients: plans
            .iter()
            .map(|p| PatientEntry {
                id: p.id.clone(),
                stage: p.stage,
                nodes: p.nodes.clone(),
                slides: p.slides.iter().map(|s| s.id.clone()).collect(),
            })
            .collect(),
    };
    write_json(&out.join(INDEX_FILE), &index)?;
    files.push(PathBuf::from(INDEX_FILE));
    Ok(files)
}
