use densescan_core::rng::stream;
use densescan_core::wsi::otsu::{otsu_threshold, tissue_mask};
use densescan_core::wsi::synth::{generate_synthetic_slide, LesionSpec, SlideSpec};
use num_bigint::BigInt;
use rand::Rng;

/// Exhaustive arbitrary-precision Otsu: maximises (s·n0 − n·s0)² / (n0·n1),
/// first maximum wins.
fn oracle(hist: &[u64; 256]) -> Option<u8> {
    let n: BigInt = hist.iter().map(|&h| BigInt::from(h)).sum();
    let s: BigInt = hist.iter().enumerate().map(|(i, &h)| BigInt::from(h) * i).sum();
    let mut best: Option<(u8, BigInt, BigInt)> = None;
    for t in 0..255usize {
        let n0: BigInt = hist[..=t].iter().map(|&h| BigInt::from(h)).sum();
        let s0: BigInt = hist[..=t].iter().enumerate().map(|(i, &h)| BigInt::from(h) * i).sum();
        let n1 = &n - &n0;
        if n0 == BigInt::from(0) || n1 == BigInt::from(0) {
            continue;
        }
        let d = &s * &n0 - &n * &s0;
        let num = &d * &d;
        let den = &n0 * &n1;
        let better = match &best {
            None => true,
            Some((_, bn, bd)) => &num * bd > bn * &den,
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map(|b| b.0)
}

fn random_hist(rng: &mut impl Rng, k: usize) -> [u64; 256] {
    let mut h = [0u64; 256];
    match k % 4 {
        0 => h.iter_mut().for_each(|v| *v = rng.gen_range(0..1000)),
        1 => {
            for _ in 0..rng.gen_range(2..6) {
                h[rng.gen_range(0..256)] += rng.gen_range(1..1u64 << 40);
            }
        }
        2 => {
            let (a, b) = (rng.gen_range(0..128), rng.gen_range(128..256));
            for i in 0..256usize {
                let da = i.abs_diff(a) as u64;
                let db = i.abs_diff(b) as u64;
                h[i] = 5000 / (1 + da * da) + 3000 / (1 + db * db);
            }
        }
        _ => {
            // symmetric pairs provoke exact ties
            let v = rng.gen_range(1..50);
            let c = rng.gen_range(10..240);
            h[c - 5] = v;
            h[c + 5] = v;
            h[c] = rng.gen_range(0..3);
        }
    }
    h
}

#[test]
fn matches_exhaustive_oracle_on_100_histograms() {
    let mut rng = stream(77, 0);
    for k in 0..100 {
        let h = random_hist(&mut rng, k);
        let r = otsu_threshold(&h);
        match oracle(&h) {
            Some(t) => assert!(!r.degenerate && r.threshold == t, "histogram {k}: {} vs {t}", r.threshold),
            None => assert!(r.degenerate),
        }
    }
}

#[test]
fn tissue_mask_recovers_generator_tissue() {
    for seed in 0..4 {
        let spec = SlideSpec {
            id: format!("s{seed}"),
            width: 400,
            height: 320,
            spacing_um: 8.0,
            lesions: vec![LesionSpec { diameter_mm: 0.8, center: None }],
        };
        let s = generate_synthetic_slide(&spec, seed).unwrap();
        let t = tissue_mask(&s.slide.image);
        let iou = t.mask.iou(&s.tissue_truth);
        assert!(iou >= 0.9, "seed {seed}: IoU {iou}");
    }
}
