//! Command implementations. Each reads its inputs, writes its outputs under
//! `--out` and finishes with a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use densescan_core::geometry::{certify_equivalence, patch_oracle, dense_tile, CertifyConfig, Precision, TileGeometry};
use densescan_core::params::NetworkParams;
use densescan_core::pyramid::{Cost, NetworkSpec};
use densescan_core::rng::{derive_seed, stream};
use densescan_core::staging::{Detection, NodeClass, NodeClassifier, PnStage, RandomForest};
use densescan_core::tensor::Tensor;
use densescan_core::train::{train, LossCurve, SgdConfig};
use densescan_core::wsi::{sample_patches, tissue_mask, PatchGeometry, PatchSample, SampleWarning};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cli::{Cli, Command};
use crate::cohort::{write_synthetic_cohort, Cohort};
use crate::config::{ClassifierKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::formats::{
    read_annotations, read_json, read_map, read_slide, read_weights, write_heatmap, write_json, write_map,
    write_mask_png, write_text, write_weights,
};
use crate::manifest::Ledger;
use crate::pipeline::{
    classify, evaluate, features, fit_forest, forest_config, infer_slide, metrics_text, patient_stage, recut,
    slide_detections, truth_lesions, InferStats, InferenceModel, Metrics, PatchSet, SlideOutcome, TrainingPatch,
};

// seed-derivation labels
const SEED_SAMPLE: u64 = 1;
const SEED_INIT: u64 = 2;
const SEED_SGD: u64 = 3;
const SEED_AUGMENT: u64 = 4;
const SEED_VERIFY: u64 = 5;
const SEED_BENCH: u64 = 6;

pub const MODEL_FILE: &str = "model.dstb";
pub const STAGES_FILE: &str = "stages.json";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const FOREST_FILE: &str = "forest.json";
pub const PATCHES_FILE: &str = "patches.json";

/// Shared state of one command run.
pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub out: &'a Path,
    pub ledger: Ledger,
}

impl Ctx<'_> {
    fn output(&mut self, rel: impl AsRef<Path>) {
        self.ledger.output(self.out, rel);
    }
}

/// Parses the configuration, runs the command in a thread pool of the
/// requested size and writes the manifest.
pub fn run(cli: &Cli) -> CliResult<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = cli.global.out.clone().ok_or_else(|| CliError::Config("--out is required".into()))?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut ledger = Ledger::default();
    if let Some(p) = &cli.global.config {
        ledger.input_file("config", p)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let mut ctx = Ctx { cfg: &cfg, out: &out, ledger };
    let result = pool.install(|| dispatch(&cli.command, &mut ctx));
    match result {
        Ok(()) => {
            ctx.ledger.write(cli.command.name(), &cfg, &out)?;
            Ok(())
        }
        Err(e @ CliError::Validation(_)) => {
            let _ = ctx.ledger.write(cli.command.name(), &cfg, &out);
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn dispatch(cmd: &Command, ctx: &mut Ctx<'_>) -> CliResult<()> {
    let paths = &ctx.cfg.paths;
    let need = |flag: &Option<PathBuf>, fallback: &Option<PathBuf>, name: &str| -> CliResult<PathBuf> {
        flag.clone()
            .or_else(|| fallback.clone())
            .ok_or_else(|| CliError::Config(format!("--{name} is required (or set paths.{name})")))
    };
    match cmd {
        Command::Synth => cmd_synth(ctx),
        Command::Mask { cohort } => cmd_mask(ctx, &need(cohort, &paths.cohort, "cohort")?),
        Command::Sample { cohort } => cmd_sample(ctx, &need(cohort, &paths.cohort, "cohort")?),
        Command::Train { cohort, patches } => cmd_train(ctx, &need(cohort, &paths.cohort, "cohort")?, patches.as_deref()),
        Command::Infer { cohort, model, heatmap } => {
            let (c, m) = (need(cohort, &paths.cohort, "cohort")?, need(model, &paths.model, "model")?);
            cmd_infer(ctx, &c, &m, *heatmap)
        }
        Command::Verify => cmd_verify(ctx).map(|_| ()),
        Command::Stage { cohort, maps, forest, fit } => {
            let (c, m) = (need(cohort, &paths.cohort, "cohort")?, need(maps, &paths.maps, "maps")?);
            cmd_stage(ctx, &c, &m, forest.as_deref(), *fit)
        }
        Command::Eval { cohort, stages } => {
            let (c, s) = (need(cohort, &paths.cohort, "cohort")?, need(stages, &paths.stages, "stages")?);
            cmd_eval(ctx, &c, &s).map(|_| ())
        }
        Command::Bench => cmd_bench(ctx).map(|_| ()),
    }
}

fn load_cohort(ctx: &mut Ctx<'_>, root: &Path) -> CliResult<Cohort> {
    let cohort = Cohort::load(root)?;
    ctx.ledger.input("cohort", root, Path::new(crate::cohort::INDEX_FILE))?;
    Ok(cohort)
}

fn cmd_synth(ctx: &mut Ctx<'_>) -> CliResult<()> {
    for f in write_synthetic_cohort(&ctx.cfg.cohort, ctx.cfg.seed, ctx.out)? {
        ctx.output(f);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub slide_id: String,
    pub otsu_threshold: u8,
    pub degenerate: bool,
    pub tissue_fraction: f64,
}

fn cmd_mask(ctx: &mut Ctx<'_>, root: &Path) -> CliResult<()> {
    let cohort = load_cohort(ctx, root)?;
    let mut summary = Vec::new();
    for id in cohort.index.slide_ids() {
        for f in cohort.slide_files(id) {
            ctx.ledger.input("cohort", root, &f)?;
        }
        let slide = read_slide(&cohort.slides_dir(), id)?;
        let t = tissue_mask(&slide.image);
        let rel = PathBuf::from("masks").join(format!("{id}.png"));
        write_mask_png(&ctx.out.join(&rel), &t.mask)?;
        ctx.output(rel);
        summary.push(MaskSummary {
            slide_id: id.to_string(),
            otsu_threshold: t.otsu.threshold,
            degenerate: t.otsu.degenerate,
            tissue_fraction: t.mask.count() as f64 / (slide.width() * slide.height()) as f64,
        });
    }
    write_json(&ctx.out.join("masks.json"), &summary)?;
    ctx.output("masks.json");
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchList {
    pub patch_extent: usize,
    pub mask_extent: usize,
    pub patches: Vec<PatchSample>,
    pub warnings: Vec<SampleWarning>,
}

fn patch_geometry(spec: &NetworkSpec) -> CliResult<PatchGeometry> {
    let mask_extent = match &spec.decoder {
        Some(d) => d.mask_extent(spec)?,
        None => spec.patch_extent % 2,
    };
    Ok(PatchGeometry { patch_extent: spec.patch_extent, mask_extent })
}

/// Samples every slide; returns the patch list and the cut windows.
fn sample_cohort(ctx: &mut Ctx<'_>, cohort: &Cohort, geom: PatchGeometry) -> CliResult<(PatchList, Vec<TrainingPatch>)> {
    let mut list = PatchList { patch_extent: geom.patch_extent, mask_extent: geom.mask_extent, patches: Vec::new(), warnings: Vec::new() };
    let mut cut = Vec::new();
    for (si, id) in cohort.index.slide_ids().enumerate() {
        for f in cohort.slide_files(id) {
            ctx.ledger.input("cohort", &cohort.root, &f)?;
        }
        let slide = read_slide(&cohort.slides_dir(), id)?;
        let ann = read_annotations(&cohort.slides_dir(), id)?;
        let tissue = tissue_mask(&slide.image);
        let seed = derive_seed(ctx.cfg.seed, &[SEED_SAMPLE, si as u64]);
        let (samples, warnings) = sample_patches(&slide, &ann, &tissue.mask, ctx.cfg.train.samples, geom, seed)?;
        for s in samples {
            cut.push(TrainingPatch {
                image: s.image.clone().expect("sampled with windows"),
                mask: s.mask.clone().expect("sampled with windows"),
                label: s.label,
            });
            list.patches.push(PatchSample { image: None, mask: None, ..s });
        }
        list.warnings.extend(warnings);
    }
    Ok((list, cut))
}

fn warn(w: &SampleWarning) {
    eprintln!("{}", serde_json::json!({ "warning": "sample", "detail": w }));
}

fn cmd_sample(ctx: &mut Ctx<'_>, root: &Path) -> CliResult<()> {
    let spec = ctx.cfg.network_spec()?;
    let cohort = load_cohort(ctx, root)?;
    let (list, _) = sample_cohort(ctx, &cohort, patch_geometry(&spec)?)?;
    list.warnings.iter().for_each(warn);
    write_json(&ctx.out.join(PATCHES_FILE), &list)?;
    ctx.output(PATCHES_FILE);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub patches: usize,
    pub positives: usize,
    pub parameters: usize,
    pub network_hash: String,
    pub loss: LossCurve,
}

fn cmd_train(ctx: &mut Ctx<'_>, root: &Path, patches: Option<&Path>) -> CliResult<()> {
    let cfg = ctx.cfg;
    let spec = cfg.network_spec()?;
    let loss_cfg = cfg.loss_config()?;
    let geom = patch_geometry(&spec)?;
    let cohort = load_cohort(ctx, root)?;
    let cut = match patches {
        None => {
            let (list, cut) = sample_cohort(ctx, &cohort, geom)?;
            list.warnings.iter().for_each(warn);
            cut
        }
        Some(p) => {
            ctx.ledger.input_file("patches", p)?;
            let list: PatchList = read_json(p)?;
            if (list.patch_extent, list.mask_extent) != (geom.patch_extent, geom.mask_extent) {
                return Err(CliError::Validation(format!(
                    "{}: patches are {}px with {}px masks, the network needs {}px with {}px",
                    p.display(),
                    list.patch_extent,
                    list.mask_extent,
                    geom.patch_extent,
                    geom.mask_extent
                )));
            }
            let mut cut = Vec::new();
            for id in cohort.index.slide_ids() {
                let mine: Vec<PatchSample> = list.patches.iter().filter(|s| s.slide_id == id).cloned().collect();
                if mine.is_empty() {
                    continue;
                }
                for f in cohort.slide_files(id) {
                    ctx.ledger.input("cohort", root, &f)?;
                }
                let slide = read_slide(&cohort.slides_dir(), id)?;
                let ann = read_annotations(&cohort.slides_dir(), id)?;
                cut.extend(recut(&slide, &ann, &mine, geom));
            }
            if cut.len() != list.patches.len() {
                return Err(CliError::Validation(format!("{}: patches reference slides outside the cohort", p.display())));
            }
            cut
        }
    };
    let positives = cut.iter().filter(|p| p.label == 1).count();
    let data = PatchSet {
        patches: cut,
        augment: cfg.train.augment,
        seed: derive_seed(cfg.seed, &[SEED_AUGMENT]),
        mask_extent: geom.mask_extent,
    };
    let init = NetworkParams::<f32>::init(&spec, derive_seed(cfg.seed, &[SEED_INIT]))?;
    let t = &cfg.train;
    let sgd = SgdConfig {
        learning_rate: t.learning_rate,
        momentum: t.momentum,
        steps: t.steps,
        batch_size: t.batch_size,
        seed: derive_seed(cfg.seed, &[SEED_SGD]),
    };
    let (params, loss) = train(&spec, init, &data, &loss_cfg, &sgd)?;
    let network_hash = write_weights(&ctx.out.join(MODEL_FILE), &params)?;
    ctx.output(MODEL_FILE);
    let report = TrainingReport { patches: data.patches.len(), positives, parameters: params.parameter_count(), network_hash, loss };
    write_json(&ctx.out.join("training.json"), &report)?;
    ctx.output("training.json");
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferSummary {
    pub slide_id: String,
    pub width: usize,
    pub height: usize,
    pub stats: InferStats,
}

fn cmd_infer(ctx: &mut Ctx<'_>, root: &Path, model: &Path, heatmap: bool) -> CliResult<()> {
    let cfg = ctx.cfg;
    let spec = cfg.network_spec()?;
    let g = cfg.tile_geometry(&spec)?;
    let cohort = load_cohort(ctx, root)?;
    ctx.ledger.input_file("model", model)?;
    let (params, hash) = read_weights(model, &spec)?;
    let m = InferenceModel::new(&spec, &params, g, hash, cfg.geometry.min_tissue_fraction);
    let mut summary = Vec::new();
    for id in cohort.index.slide_ids() {
        for f in cohort.slide_files(id) {
            ctx.ledger.input("cohort", root, &f)?;
        }
        let slide = read_slide(&cohort.slides_dir(), id)?;
        let (map, stats) = infer_slide(&m, &slide)?;
        let rel = format!("{id}.dspm");
        write_map(&ctx.out.join(&rel), &map)?;
        ctx.output(rel);
        if heatmap {
            let rel = format!("{id}.heatmap.png");
            write_heatmap(&ctx.out.join(&rel), &map)?;
            ctx.output(rel);
        }
        summary.push(InferSummary { slide_id: id.to_string(), width: map.width, height: map.height, stats });
    }
    write_json(&ctx.out.join("inference.json"), &summary)?;
    ctx.output("inference.json");
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyEntry {
    pub alpha: usize,
    pub tile_extent: usize,
    pub passed: bool,
    pub max_abs_deviation: Option<f64>,
    pub tolerance: f64,
    pub report: Option<densescan_core::geometry::CertifyReport>,
    pub error: Option<String>,
}

/// Certifies every (α, L_m) pair. A failing pair or a geometry error inside
/// the dense path fails the command with exit code 3 after the report is
/// written.
pub fn cmd_verify(ctx: &mut Ctx<'_>) -> CliResult<Vec<VerifyEntry>> {
    let cfg = ctx.cfg;
    let spec = cfg.network_spec()?;
    let v = &cfg.verify;
    let mut entries = Vec::new();
    for &alpha in &v.alphas {
        for &lm in &v.tile_extents {
            // invalid pairs are configuration errors before any work
            TileGeometry::for_network(&spec, alpha, lm)?;
            let mut c = CertifyConfig::new(alpha, lm, v.trials, derive_seed(cfg.seed, &[SEED_VERIFY, alpha as u64, lm as u64]));
            if v.precision == Precision::Double {
                c = c.double();
            }
            c.fault = v.fault;
            let entry = match certify_equivalence(&spec, &c) {
                Ok(r) => VerifyEntry {
                    alpha,
                    tile_extent: lm,
                    passed: r.passed,
                    max_abs_deviation: Some(r.max_abs_deviation),
                    tolerance: r.tolerance,
                    report: Some(r),
                    error: None,
                },
                Err(e) => VerifyEntry {
                    alpha,
                    tile_extent: lm,
                    passed: false,
                    max_abs_deviation: None,
                    tolerance: c.tolerance,
                    report: None,
                    error: Some(e.to_string()),
                },
            };
            entries.push(entry);
        }
    }
    write_json(&ctx.out.join("verify.json"), &entries)?;
    ctx.output("verify.json");
    let failed: Vec<String> = entries
        .iter()
        .filter(|e| !e.passed)
        .map(|e| match (&e.error, e.max_abs_deviation) {
            (Some(err), _) => format!("alpha={} L_m={}: {err}", e.alpha, e.tile_extent),
            (None, d) => format!("alpha={} L_m={}: deviation {:e} > {:e}", e.alpha, e.tile_extent, d.unwrap_or(f64::NAN), e.tolerance),
        })
        .collect();
    if failed.is_empty() {
        Ok(entries)
    } else {
        Err(CliError::Validation(format!("equivalence certification failed: {}", failed.join("; "))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResult {
    pub slide_id: String,
    pub class: NodeClass,
    pub candidates: usize,
    /// Largest major axis (mm), total area (mm²), candidate count, largest peak.
    pub features: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientResult {
    pub id: String,
    pub stage: PnStage,
    pub nodes: Vec<NodeResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub classifier: ClassifierKind,
    pub threshold: f32,
    pub patients: Vec<PatientResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideDetections {
    pub slide_id: String,
    pub detections: Vec<Detection>,
}

fn cmd_stage(ctx: &mut Ctx<'_>, root: &Path, maps: &Path, forest: Option<&Path>, fit: bool) -> CliResult<()> {
    let cfg = ctx.cfg;
    let s = &cfg.staging;
    let cohort = load_cohort(ctx, root)?;
    let mut per_slide = Vec::new();
    let mut dets = Vec::new();
    for id in cohort.index.slide_ids() {
        let rel = format!("{id}.dspm");
        ctx.ledger.input("maps", maps, Path::new(&rel))?;
        let map = read_map(&maps.join(&rel))?;
        if map.slide_id != id {
            return Err(CliError::Validation(format!("{rel}: map belongs to slide `{}`", map.slide_id)));
        }
        let (cands, d) = slide_detections(&map, s.threshold);
        dets.push(SlideDetections { slide_id: id.to_string(), detections: d });
        per_slide.push(cands);
    }
    let classifier = match s.classifier {
        ClassifierKind::Rules => NodeClassifier::Rules,
        ClassifierKind::Forest if fit => {
            let feats: Vec<[f64; 4]> = per_slide.iter().map(|c| features(c)).collect();
            let truth: Vec<NodeClass> = cohort.index.patients.iter().flat_map(|p| p.nodes.iter().copied()).collect();
            let rf = fit_forest(&feats, s.forest_features(), &truth, &forest_config(s.trees, s.max_depth, s.bootstrap, cfg.seed))?;
            write_json(&ctx.out.join(FOREST_FILE), &rf)?;
            ctx.output(FOREST_FILE);
            NodeClassifier::Forest(rf)
        }
        ClassifierKind::Forest => {
            let p = forest.ok_or_else(|| CliError::Config("staging.classifier = \"forest\" needs --forest or --fit".into()))?;
            ctx.ledger.input_file("forest", p)?;
            let rf: RandomForest = read_json(p)?;
            if rf.n_features != s.forest_features() || rf.n_classes != NodeClass::ALL.len() {
                return Err(CliError::Validation(format!("{}: forest has {} features and {} classes, config expects {}", p.display(), rf.n_features, rf.n_classes, s.forest_features())));
            }
            NodeClassifier::Forest(rf)
        }
    };
    let mut patients = Vec::new();
    let mut k = 0;
    for p in &cohort.index.patients {
        let mut nodes = Vec::new();
        for id in &p.slides {
            let cands = &per_slide[k];
            k += 1;
            nodes.push(NodeResult { slide_id: id.clone(), class: classify(cands, &classifier)?, candidates: cands.len(), features: features(cands) });
        }
        let classes: Vec<NodeClass> = nodes.iter().map(|n| n.class).collect();
        patients.push(PatientResult { id: p.id.clone(), stage: patient_stage(&classes)?, nodes });
    }
    write_json(&ctx.out.join(STAGES_FILE), &StageReport { classifier: s.classifier, threshold: s.threshold, patients })?;
    ctx.output(STAGES_FILE);
    write_json(&ctx.out.join(DETECTIONS_FILE), &dets)?;
    ctx.output(DETECTIONS_FILE);
    Ok(())
}

pub fn cmd_eval(ctx: &mut Ctx<'_>, root: &Path, stages: &Path) -> CliResult<Metrics> {
    let cohort = load_cohort(ctx, root)?;
    ctx.ledger.input("stages", stages, Path::new(STAGES_FILE))?;
    ctx.ledger.input("stages", stages, Path::new(DETECTIONS_FILE))?;
    let report: StageReport = read_json(&stages.join(STAGES_FILE))?;
    let dets: Vec<SlideDetections> = read_json(&stages.join(DETECTIONS_FILE))?;
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for p in &cohort.index.patients {
        let r = report
            .patients
            .iter()
            .find(|r| r.id == p.id)
            .ok_or_else(|| CliError::Validation(format!("no predicted stage for patient {}", p.id)))?;
        pred.push(r.stage);
        truth.push(p.stage);
    }
    let mut slides = Vec::new();
    for id in cohort.index.slide_ids() {
        for f in cohort.slide_files(id) {
            if f.to_string_lossy().ends_with(".json") {
                ctx.ledger.input("cohort", root, &f)?;
            }
        }
        let meta: crate::formats::SlideMeta = read_json(&cohort.slides_dir().join(format!("{id}.json")))?;
        let ann = read_annotations(&cohort.slides_dir(), id)?;
        let detections = dets.iter().find(|d| d.slide_id == id).map(|d| d.detections.clone()).unwrap_or_default();
        slides.push(SlideOutcome { detections, lesions: truth_lesions(&ann, meta.spacing_um), has_lesion: !ann.lesions.is_empty() });
    }
    let m = evaluate(&pred, &truth, slides)?;
    let text = metrics_text(&m);
    write_json(&ctx.out.join("metrics.json"), &m)?;
    ctx.output("metrics.json");
    write_text(&ctx.out.join("metrics.txt"), &text)?;
    ctx.output("metrics.txt");
    print!("{text}");
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub alpha: usize,
    pub tile_extent: usize,
    pub roi_extent: usize,
    pub rois: usize,
    /// Counted multiply-accumulates per ROI.
    pub dense_macs: u64,
    pub analytic_dense_macs: u64,
    pub patch_macs: u64,
    pub mac_ratio: f64,
    pub dense_seconds: f64,
    pub patch_seconds: f64,
    pub speedup: f64,
}

/// Patch-by-patch against dense on the calling thread only.
pub fn cmd_bench(ctx: &mut Ctx<'_>) -> CliResult<Vec<BenchRow>> {
    let cfg = ctx.cfg;
    let full = cfg.network_spec()?;
    let spec = NetworkSpec { decoder: None, ..full };
    let b = &cfg.bench;
    let params = NetworkParams::<f32>::init(&spec, derive_seed(cfg.seed, &[SEED_BENCH]))?;
    let mut rows = Vec::new();
    for &lm in &b.tile_extents {
        let g = TileGeometry::for_network(&spec, b.alpha, lm)?;
        let mut rng = stream(derive_seed(cfg.seed, &[SEED_BENCH, lm as u64]), 0);
        let shape = [1, spec.input_channels, g.roi_extent, g.roi_extent];
        let rois: Vec<Tensor<f32>> =
            (0..b.rois).map(|_| Tensor::from_fn(&shape, |_| rng.gen_range(-1.0f32..1.0))).collect();
        let (mut dense_cost, mut patch_cost) = (Cost::default(), Cost::default());
        let t0 = Instant::now();
        for x in &rois {
            std::hint::black_box(dense_tile(x, &spec, &params, &g, None, &mut dense_cost)?);
        }
        let dense_seconds = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        for x in &rois {
            std::hint::black_box(patch_oracle(x, &spec, &params, &g, &mut patch_cost)?);
        }
        let patch_seconds = t1.elapsed().as_secs_f64();
        let n = b.rois as u64;
        let (dense_macs, patch_macs) = (dense_cost.macs / n, patch_cost.macs / n);
        rows.push(BenchRow {
            alpha: b.alpha,
            tile_extent: lm,
            roi_extent: g.roi_extent,
            rois: b.rois,
            dense_macs,
            analytic_dense_macs: spec.analytic_macs(g.roi_extent, b.alpha)?,
            patch_macs,
            mac_ratio: patch_macs as f64 / dense_macs as f64,
            dense_seconds,
            patch_seconds,
            speedup: patch_seconds / dense_seconds,
        });
    }
    write_json(&ctx.out.join("bench.json"), &rows)?;
    ctx.output("bench.json");
    println!("{:>4} {:>4} {:>6} {:>14} {:>14} {:>8} {:>8}", "α", "L_m", "L_R", "dense MACs", "patch MACs", "ratio", "speedup");
    for r in &rows {
        println!(
            "{:>4} {:>4} {:>6} {:>14} {:>14} {:>8.3} {:>8.3}",
            r.alpha, r.tile_extent, r.roi_extent, r.dense_macs, r.patch_macs, r.mac_ratio, r.speedup
        );
    }
    Ok(rows)
}
