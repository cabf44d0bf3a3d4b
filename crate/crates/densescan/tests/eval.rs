//! `eval` against predictions that equal the reference.

use clap::Parser;
use densescan::cli::Cli;
use densescan::cohort::Cohort;
use densescan::commands::{run, NodeResult, PatientResult, SlideDetections, StageReport, DETECTIONS_FILE, STAGES_FILE};
use densescan::config::ClassifierKind;
use densescan::formats::{read_annotations, write_json};
use densescan_core::staging::Detection;
use densescan_core::wsi::BinaryMask;

fn cli(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("densescan").chain(args.iter().copied())).unwrap()
}

#[test]
fn perfect_predictions_score_one() {
    let d = tempfile::tempdir().unwrap();
    let p = |s: &str| d.path().join(s).to_str().unwrap().to_string();
    std::fs::write(p("c.toml"), "[cohort]\npatients = 5\nwidth = 704\nheight = 704\nspacing_um = 8.0\nitc_mm = [0.13, 0.18]\nmicro_mm = [0.5, 1.4]\nmacro_mm = [2.2, 2.6]\n").unwrap();
    run(&cli(&["synth", "--config", &p("c.toml"), "--seed", "5", "--out", &p("cohort")])).unwrap();
    let cohort = Cohort::load(&d.path().join("cohort")).unwrap();

    let patients = cohort
        .index
        .patients
        .iter()
        .map(|pt| PatientResult {
            id: pt.id.clone(),
            stage: pt.stage,
            nodes: pt
                .slides
                .iter()
                .zip(&pt.nodes)
                .map(|(s, &class)| NodeResult { slide_id: s.clone(), class, candidates: 0, features: [0.0; 4] })
                .collect(),
        })
        .collect();
    let report = StageReport { classifier: ClassifierKind::Rules, threshold: 0.5, patients };
    let mut dets = Vec::new();
    for id in cohort.index.slide_ids() {
        let ann = read_annotations(&cohort.slides_dir(), id).unwrap();
        let detections = ann
            .lesions
            .iter()
            .map(|l| {
                let mut m = BinaryMask::new(704, 704);
                l.polygon.rasterize_into(&mut m);
                let i = m.data().iter().position(|&v| v == 1).unwrap();
                Detection { score: 1.0, x: (i % 704) as f64 + 0.5, y: (i / 704) as f64 + 0.5 }
            })
            .collect();
        dets.push(SlideDetections { slide_id: id.to_string(), detections });
    }
    write_json(&d.path().join("pred").join(STAGES_FILE), &report).unwrap();
    write_json(&d.path().join("pred").join(DETECTIONS_FILE), &dets).unwrap();

    run(&cli(&["eval", "--cohort", &p("cohort"), "--stages", &p("pred"), "--out", &p("eval")])).unwrap();
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(p("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(m["kappa"], 1.0);
    assert_eq!(m["froc"]["average"], 1.0);
    assert_eq!(m["auc"], 1.0);
    let text = std::fs::read_to_string(p("eval/metrics.txt")).unwrap();
    assert!(text.contains("kappa 1.000000") && text.contains("froc 1.000000"));
}
