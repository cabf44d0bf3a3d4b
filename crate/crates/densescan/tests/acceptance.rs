//! The eight acceptance criteria, one PASS/FAIL line each. Exits non-zero
//! when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use densescan::cli::Cli;
use densescan::commands::{cmd_bench, run, Ctx};
use densescan::config::RunConfig;
use densescan::manifest::Ledger;
use densescan_core::geometry::{certify_equivalence, solve_geometry, CertifyConfig};
use densescan_core::loss::{truncated_bce, truncated_bce_grad, LossConfig, EPS};
use densescan_core::params::NetworkParams;
use densescan_core::pyramid::{NetworkSpec, PoolFault};
use densescan_core::rng::stream;
use densescan_core::staging::{auc, froc, quadratic_kappa, Detection, SlideEvaluation, TruthLesion};
use densescan_core::tensor::Tensor;
use densescan_core::train::{loss_and_grads, Batch};
use densescan_core::wsi::{otsu_threshold, Polygon};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

// 1. dense tile vs patch oracle
fn certification(fault: Option<PoolFault>, trials: usize) -> Result<Vec<(usize, usize, bool, bool, f64)>, String> {
    let spec = NetworkSpec::desk();
    let mut rows = Vec::new();
    for alpha in [1, 2, 4] {
        for lm in [2, 4, 8] {
            let mut mixed = CertifyConfig::new(alpha, lm, trials, 1000 + (alpha * 10 + lm) as u64);
            mixed.fault = fault;
            let double = mixed.double();
            let run = |c: &CertifyConfig| certify_equivalence(&spec, c).map(|r| (r.passed, r.max_abs_deviation));
            let (m, d) = (run(&mixed), run(&double));
            match (m, d) {
                (Ok((mp, md)), Ok((dp, _))) => rows.push((alpha, lm, mp, dp, md)),
                (Err(e), _) | (_, Err(e)) if fault.is_some() => {
                    let _ = e;
                    rows.push((alpha, lm, false, false, f64::INFINITY));
                }
                (Err(e), _) | (_, Err(e)) => return Err(format!("alpha={alpha} L_m={lm}: {e}")),
            }
        }
    }
    Ok(rows)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let rows = certification(None, 10)?;
    let secs = t.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.4).fold(0.0, f64::max);
    for (a, lm, mp, dp, d) in &rows {
        ensure(*mp && *dp, format!("alpha={a} L_m={lm} deviation {d:e}"))?;
    }
    ensure(secs <= 300.0, format!("took {secs:.1}s > 300s"))?;
    Ok(format!("9 configs x 10 trials, worst f32 deviation {worst:.2e} (<= 1e-4), f64 <= 1e-9, {secs:.1}s"))
}

// 2. lattice tiling against brute-force search
fn fitting_positions(extent: usize, lp: usize, c: usize) -> usize {
    if extent < lp {
        0
    } else {
        (extent - lp) / c + 1
    }
}

fn criterion_2() -> Outcome {
    let mut rng = stream(2, 0);
    for i in 0..1000 {
        let lp = rng.gen_range(1..400);
        let lm = rng.gen_range(1..24);
        let alpha = rng.gen_range(1..17);
        let sp = alpha * rng.gen_range(1..40);
        let g = solve_geometry(lp, lm, sp, alpha).map_err(|e| format!("tuple {i}: {e}"))?;
        let c = sp / alpha;
        // smallest ROI holding exactly L_m patch positions
        let mut lr = lp;
        while fitting_positions(lr, lp, c) < lm {
            lr += 1;
        }
        // smallest refetch stride whose ROI origins neither overlap nor leave a gap
        let origins = |r: usize, s: usize| (0..lm).map(move |j| r * s + j * c);
        let mut sr = 1;
        loop {
            let mut all: Vec<usize> = (0..4).flat_map(|r| origins(r, sr)).collect();
            all.sort_unstable();
            let distinct = all.windows(2).all(|w| w[0] != w[1]);
            let contiguous = all.iter().enumerate().all(|(k, &o)| o == k * c);
            if distinct && contiguous {
                break;
            }
            sr += 1;
            ensure(sr <= lm * c + 1, format!("tuple {i}: no tiling stride found"))?;
        }
        ensure(
            (g.roi_extent, g.roi_stride) == (lr, sr),
            format!("tuple ({lp},{lm},{sp},{alpha}): got ({}, {}), oracle ({lr}, {sr})", g.roi_extent, g.roi_stride),
        )?;
    }
    let big = solve_geometry(692, 64, 512, 16).map_err(|e| e.to_string())?;
    ensure((big.roi_extent, big.roi_stride) == (2708, 2048), format!("full-scale gives {}/{}", big.roi_extent, big.roi_stride))?;
    Ok("1000 tuples match brute-force tiling; (692,64,512,16) -> L_R=2708, S_R=2048".into())
}

// 3. truncated loss
fn bce(p: f64) -> f64 {
    -p.clamp(EPS, 1.0 - EPS).ln()
}

fn fd_worst() -> Result<f64, String> {
    let spec = NetworkSpec::desk();
    let cfg = LossConfig::new(0.04, 0.5).map_err(|e| e.to_string())?;
    let mut params = NetworkParams::<f64>::init(&spec, 21).map_err(|e| e.to_string())?;
    params.randomize_biases(21, 0.05);
    let e = spec.decoder.as_ref().unwrap().mask_extent(&spec).map_err(|e| e.to_string())?;
    let mut rng = stream(22, 0);
    let b = Batch {
        images: Tensor::from_fn(&[2, 3, 52, 52], |_| rng.gen_range(-1.0..1.0)),
        labels: vec![1, 0],
        masks: (0..2 * e * e).map(|i| (i % 5 < 2) as u8).collect(),
        mask_extent: e,
    };
    let total = |p: &NetworkParams<f64>| loss_and_grads(&spec, p, &b, &cfg).map(|r| r.0.total).map_err(|e| e.to_string());
    let (_, grads) = loss_and_grads(&spec, &params, &b, &cfg).map_err(|e| e.to_string())?;
    let g: Vec<(String, Vec<f64>)> = grads.named_tensors().into_iter().map(|(n, t)| (n, t.data().to_vec())).collect();
    let mut worst = 0.0f64;
    let h = 1e-6;
    for (name, gv) in &g {
        let i = rng.gen_range(0..gv.len());
        let shifted = |d: f64| {
            let mut q = params.clone();
            for (n, t) in q.named_tensors_mut() {
                if &n == name {
                    t.data_mut()[i] += d;
                }
            }
            q
        };
        let fd = (total(&shifted(h))? - total(&shifted(-h))?) / (2.0 * h);
        let scale = fd.abs().max(gv[i].abs());
        if scale > 1e-6 {
            worst = worst.max((fd - gv[i]).abs() / scale);
        }
    }
    Ok(worst)
}

fn criterion_3() -> Outcome {
    let grid = |i: usize| i as f64 / 10_000.0;
    for i in 0..=10_000 {
        let p = grid(i);
        ensure(truncated_bce(p, 0.0).unwrap() == bce(p), format!("gamma=0 differs from BCE at p={p}"))?;
    }
    for g in [0.01, 0.04, 0.1, 0.25, 0.5] {
        let d = 1e-10;
        let (lo, hi) = (truncated_bce(g - d, g).unwrap(), truncated_bce(g + d, g).unwrap());
        ensure((lo - hi).abs() <= 1e-6, format!("value jump {} at gamma={g}", (lo - hi).abs()))?;
        let (dlo, dhi) = (truncated_bce_grad(g - d, g).unwrap(), truncated_bce_grad(g + d, g).unwrap());
        ensure((dlo - dhi).abs() <= 1e-6 * dhi.abs().max(1.0), format!("slope jump at gamma={g}"))?;
        for i in 0..=10_000 {
            let p = grid(i);
            ensure(truncated_bce(p, g).unwrap() <= bce(p), format!("truncated > BCE at p={p}, gamma={g}"))?;
            ensure(truncated_bce_grad(p, g).unwrap().abs() <= 1.0 / g, format!("|g| > 1/gamma at p={p}, gamma={g}"))?;
        }
    }
    let worst = fd_worst()?;
    ensure(worst <= 1e-3, format!("finite-difference relative error {worst:e}"))?;
    Ok(format!("gamma=0 exact, continuity <= 1e-6, bounds on 10^4 grid, FD rel err {worst:.1e}"))
}

// 4. cost and speed
fn criterion_4() -> Outcome {
    let d = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let mut ctx = Ctx { cfg: &cfg, out: d.path(), ledger: Ledger::default() };
    let rows = cmd_bench(&mut ctx).map_err(|e| e.to_line())?;
    let r8 = rows.iter().find(|r| r.tile_extent == 8 && r.alpha == 4).ok_or("no L_m=8 row")?;
    for w in rows.windows(2) {
        ensure(w[1].mac_ratio > w[0].mac_ratio, "MAC ratio is not increasing in L_m")?;
    }
    for r in &rows {
        ensure(r.dense_macs == r.analytic_dense_macs, format!("L_m={} counted MACs differ from closed form", r.tile_extent))?;
    }
    ensure(r8.mac_ratio >= 5.0, format!("MAC ratio {:.3} < 5", r8.mac_ratio))?;
    ensure(r8.speedup >= 3.0, format!("speedup {:.2} < 3", r8.speedup))?;
    let ratios: Vec<String> = rows.iter().map(|r| format!("{:.2}", r.mac_ratio)).collect();
    Ok(format!("L_m=8 alpha=4: MAC ratio {:.3}, speedup {:.2}x on one thread; ratios by L_m {}", r8.mac_ratio, r8.speedup, ratios.join(" ")))
}

// 5. metric hand cases
fn square(x: f64, y: f64) -> Polygon {
    Polygon::new(vec![(x, y), (x + 10.0, y), (x + 10.0, y + 10.0), (x, y + 10.0)]).unwrap()
}

fn criterion_5() -> Outcome {
    let s = SlideEvaluation {
        detections: vec![
            Detection { score: 0.9, x: 5.0, y: 5.0 },
            Detection { score: 0.8, x: 50.0, y: 50.0 },
            Detection { score: 0.4, x: 25.0, y: 5.0 },
        ],
        lesions: vec![
            TruthLesion { polygon: square(0.0, 0.0), countable: true },
            TruthLesion { polygon: square(20.0, 0.0), countable: true },
        ],
    };
    // sensitivities at rates 1/4..8: 1/2, 1/2, 1, 1, 1, 1
    let f = froc(&[s]).map_err(|e| e.to_string())?.average;
    ensure((f - 0.8333333333333334).abs() <= 1e-9, format!("FROC {f}"))?;
    let a = auc(&[0.9, 0.8, 0.7, 0.1], &[true, false, true, false]).map_err(|e| e.to_string())?;
    ensure(a == 0.75, format!("AUC {a}"))?;
    // O = [[2,1],[1,2]]
    let k = quadratic_kappa(&[0, 0, 1, 0, 1, 1], &[0, 0, 0, 1, 1, 1], 2).map_err(|e| e.to_string())?;
    ensure((k - 1.0 / 3.0).abs() <= 1e-12, format!("kappa {k}"))?;
    let kp = quadratic_kappa(&[0, 1, 2, 3, 4, 2], &[0, 1, 2, 3, 4, 2], 5).map_err(|e| e.to_string())?;
    let perfect = SlideEvaluation {
        detections: vec![Detection { score: 0.7, x: 5.0, y: 5.0 }, Detection { score: 0.6, x: 25.0, y: 5.0 }],
        lesions: vec![
            TruthLesion { polygon: square(0.0, 0.0), countable: true },
            TruthLesion { polygon: square(20.0, 0.0), countable: true },
        ],
    };
    let fp = froc(&[perfect]).map_err(|e| e.to_string())?.average;
    let ap = auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).map_err(|e| e.to_string())?;
    ensure(kp == 1.0 && fp == 1.0 && ap == 1.0, format!("perfect agreement gives kappa {kp}, FROC {fp}, AUC {ap}"))?;
    Ok(format!("FROC {f:.10}, AUC {a}, kappa {k:.12}, perfect cases 1.0"))
}

// 6. end to end
fn cli(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("densescan").chain(args.iter().copied())).expect("valid arguments")
}

fn pipeline(root: &Path) -> Result<(f64, f64), String> {
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--seed".into(), "11".into(), "--out".into(), p("train_cohort")],
        vec!["synth".into(), "--seed".into(), "12".into(), "--out".into(), p("test_cohort")],
        vec!["train".into(), "--seed".into(), "13".into(), "--cohort".into(), p("train_cohort"), "--out".into(), p("model")],
        vec!["infer".into(), "--cohort".into(), p("train_cohort"), "--model".into(), p("model/model.dstb"), "--out".into(), p("maps_train")],
        vec!["stage".into(), "--seed".into(), "14".into(), "--cohort".into(), p("train_cohort"), "--maps".into(), p("maps_train"), "--fit".into(), "--out".into(), p("stage_train")],
        vec!["infer".into(), "--cohort".into(), p("test_cohort"), "--model".into(), p("model/model.dstb"), "--heatmap".into(), "--out".into(), p("maps_test")],
        vec!["stage".into(), "--cohort".into(), p("test_cohort"), "--maps".into(), p("maps_test"), "--forest".into(), p("stage_train/forest.json"), "--out".into(), p("stage_test")],
        vec!["eval".into(), "--cohort".into(), p("test_cohort"), "--stages".into(), p("stage_test"), "--out".into(), p("eval")],
    ];
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        run(&cli(&args)).map_err(|e| format!("{}: {}", args[0], e.to_line()))?;
    }
    let m: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("eval/metrics.json")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let kappa = m["kappa"].as_f64().ok_or("no kappa")?;
    let froc = m["froc"]["average"].as_f64().ok_or("no FROC")?;
    Ok((kappa, froc))
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_6() -> Outcome {
    let d = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (d.path().join("run_a"), d.path().join("run_b"));
    let t = Instant::now();
    let (kappa, froc) = pipeline(&a)?;
    let first = t.elapsed();
    pipeline(&b)?;
    let (fa, fb) = (files(&a), files(&b));
    ensure(fa.len() == fb.len() && fa.keys().eq(fb.keys()), "runs wrote different file sets")?;
    let differing: Vec<String> = fa.iter().filter(|(k, v)| fb[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    ensure(differing.is_empty(), format!("not byte-reproducible: {}", differing.join(", ")))?;
    ensure(first <= Duration::from_secs(20 * 60), format!("run took {:.0}s", first.as_secs_f64()))?;
    ensure(kappa >= 0.8, format!("held-out kappa {kappa}"))?;
    ensure(froc >= 0.8, format!("held-out FROC {froc}"))?;
    Ok(format!(
        "held-out 10 patients / 50 slides: kappa {kappa:.3}, FROC {froc:.3}; run {:.0}s; {} files identical across two runs",
        first.as_secs_f64(),
        fa.len()
    ))
}

// 7. mutation sensitivity
fn criterion_7() -> Outcome {
    let mut detected = Vec::new();
    for level in [3u8, 4, 5] {
        let rows = certification(Some(PoolFault { level, shift: 1 }), 10)?;
        let caught = rows.iter().filter(|r| r.1 >= 2 && !(r.2 && r.3)).count();
        ensure(caught == rows.len(), format!("level {level} fault slipped past {} configs", rows.len() - caught))?;
        detected.push(format!("level {level}: {caught}/{}", rows.len()));
    }
    Ok(format!("one-cell pooling offset fails certification everywhere ({})", detected.join(", ")))
}

// 8. Otsu against exhaustive search
fn exhaustive_otsu(h: &[u64; 256]) -> Option<u8> {
    let n: u128 = h.iter().map(|&v| v as u128).sum();
    let s: u128 = h.iter().enumerate().map(|(i, &v)| i as u128 * v as u128).sum();
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 0..256usize {
        let n0: u128 = h[..=t].iter().map(|&v| v as u128).sum();
        let s0: u128 = h[..=t].iter().enumerate().map(|(i, &v)| i as u128 * v as u128).sum();
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // between-class variance ∝ (s·n0 − n·s0)² / (n0·n1)
        let d = (s * n0).abs_diff(n * s0);
        let (num, den) = (d * d, n0 * n1);
        if best.map_or(true, |(_, bn, bd)| num * bd > bn * den) {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|b| b.0)
}

fn criterion_8() -> Outcome {
    let mut rng = stream(8, 0);
    for k in 0..100 {
        let density = rng.gen_range(0.02..1.0);
        let mut h = [0u64; 256];
        for v in h.iter_mut() {
            if rng.gen_bool(density) {
                *v = rng.gen_range(1..100);
            }
        }
        if k < 3 {
            h = [0; 256];
            h[k * 7] = 5;
            h[200 - k] = 3 + k as u64;
        }
        let got = otsu_threshold(&h);
        match exhaustive_otsu(&h) {
            Some(t) => ensure(!got.degenerate && got.threshold == t, format!("histogram {k}: {} vs oracle {t}", got.threshold))?,
            None => ensure(got.degenerate, format!("histogram {k}: expected degenerate"))?,
        }
    }
    Ok("100 random histograms equal the exhaustive 256-threshold search".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("scan equivalence certification", criterion_1),
        ("ROI lattice tiling", criterion_2),
        ("truncated loss", criterion_3),
        ("dense cost and speed", criterion_4),
        ("metric oracles", criterion_5),
        ("end-to-end synthetic run", criterion_6),
        ("mutation sensitivity", criterion_7),
        ("Otsu oracle", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
