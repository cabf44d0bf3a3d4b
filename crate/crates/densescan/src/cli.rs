use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "densescan", version, about = "Dense-scanning metastasis detection and pN staging")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Render a synthetic cohort with reference annotations.
    Synth,
    /// Otsu tissue masks for every slide of a cohort.
    Mask {
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Draw training patch centres.
    Sample {
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Train the detector and decoder on sampled patches.
    Train {
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Patch list from `sample`; drawn afresh when absent.
        #[arg(long)]
        patches: Option<PathBuf>,
    },
    /// Dense probability maps for every slide.
    Infer {
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write a blue-to-red heatmap PNG per slide.
        #[arg(long)]
        heatmap: bool,
    },
    /// Certify dense tiles against the patch-by-patch oracle.
    Verify,
    /// Node classes and patient stages from probability maps.
    Stage {
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        maps: Option<PathBuf>,
        /// Trained node classifier.
        #[arg(long, conflicts_with = "fit")]
        forest: Option<PathBuf>,
        /// Fit the node classifier on this cohort's reference classes first.
        #[arg(long)]
        fit: bool,
    },
    /// Kappa, FROC and AUC against the cohort's reference.
    Eval {
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Directory holding stages.json and detections.json.
        #[arg(long)]
        stages: Option<PathBuf>,
    },
    /// Patch-by-patch versus dense cost and timing.
    Bench,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Mask { .. } => "mask",
            Command::Sample { .. } => "sample",
            Command::Train { .. } => "train",
            Command::Infer { .. } => "infer",
            Command::Verify => "verify",
            Command::Stage { .. } => "stage",
            Command::Eval { .. } => "eval",
            Command::Bench => "bench",
        }
    }
}
