use densescan_core::rng::stream;
use densescan_core::wsi::{augment, AugmentConfig, AugmentDraw, BinaryMask, Polygon, RgbImage};
use proptest::prelude::*;
use rand::Rng;

fn image(seed: u64, e: usize) -> RgbImage {
    let mut rng = stream(seed, 0);
    RgbImage::from_raw(e, e, (0..e * e * 3).map(|_| rng.gen()).collect()).unwrap()
}

fn mask(seed: u64, e: usize) -> BinaryMask {
    let mut rng = stream(seed, 1);
    BinaryMask::from_fn(e, e, |_, _| rng.gen_bool(0.3))
}

fn geometric() -> impl Strategy<Value = AugmentDraw> {
    (any::<bool>(), 0u8..8).prop_map(|(flip, quarter_turns)| AugmentDraw { flip, quarter_turns, ..AugmentDraw::IDENTITY })
}

fn poly_strategy(e: f64) -> impl Strategy<Value = Polygon> {
    // star-shaped around an interior point keeps the polygon simple
    (4usize..9, 0.0f64..1.0, prop::collection::vec(0.3f64..1.0, 9), (0.3f64..0.7, 0.3f64..0.7)).prop_map(
        move |(n, phase, radii, (cx, cy))| {
            let pts = (0..n)
                .map(|i| {
                    let a = phase + i as f64 * std::f64::consts::TAU / n as f64;
                    let r = radii[i] * 0.3 * e;
                    (cx * e + r * a.cos(), cy * e + r * a.sin())
                })
                .collect();
            Polygon::new(pts).unwrap()
        },
    )
}

#[test]
fn identity_draw_changes_nothing() {
    let (img, m) = (image(1, 20), mask(1, 20));
    let (a, b) = augment(&img, &m, &AugmentDraw::IDENTITY);
    assert_eq!((a, b), (img, m));
}

#[test]
fn identity_config_only_draws_identity() {
    let mut rng = stream(4, 0);
    for _ in 0..50 {
        assert_eq!(AugmentDraw::sample(&AugmentConfig::none(), &mut rng), AugmentDraw::IDENTITY);
    }
}

proptest! {
    #[test]
    fn double_flip_restores(seed in 0u64..500, e in 1usize..24) {
        let flip = AugmentDraw { flip: true, ..AugmentDraw::IDENTITY };
        let (img, m) = (image(seed, e), mask(seed, e));
        let (a, b) = augment(&img, &m, &flip);
        let (a2, b2) = augment(&a, &b, &flip);
        prop_assert_eq!(a2, img);
        prop_assert_eq!(b2, m);
    }

    #[test]
    fn four_quarter_turns_restore(seed in 0u64..500, e in 1usize..24) {
        let turn = AugmentDraw { quarter_turns: 1, ..AugmentDraw::IDENTITY };
        let mut m = mask(seed, e);
        let orig = m.clone();
        for _ in 0..4 {
            m = turn.apply_mask(&m);
        }
        prop_assert_eq!(m, orig);
    }

    #[test]
    fn mask_count_changes_only_under_scaling(seed in 0u64..1000, e in 2usize..30) {
        let mut rng = stream(seed, 7);
        let cfg = AugmentConfig { scale: (1.0, 1.0), ..AugmentConfig::default() };
        let d = AugmentDraw::sample(&cfg, &mut rng);
        let m = mask(seed, e);
        let (_, out) = augment(&image(seed, e), &m, &d);
        prop_assert_eq!(out.count(), m.count());
    }

    #[test]
    fn rasterize_commutes_with_flips_and_turns(d in geometric(), poly in poly_strategy(32.0)) {
        let e = 32;
        let mut before = BinaryMask::new(e, e);
        poly.rasterize_into(&mut before);
        let mut after = BinaryMask::new(e, e);
        d.apply_polygon(&poly, e).rasterize_into(&mut after);
        prop_assert_eq!(d.apply_mask(&before), after);
    }

    #[test]
    fn colour_shift_leaves_mask_alone(seed in 0u64..200) {
        let mut rng = stream(seed, 3);
        let d = AugmentDraw::sample(&AugmentConfig::default(), &mut rng);
        let colour_only = AugmentDraw { flip: false, quarter_turns: 0, scale: 1.0, ..d };
        let m = mask(seed, 12);
        let (_, out) = augment(&image(seed, 12), &m, &colour_only);
        prop_assert_eq!(out, m);
    }
}
