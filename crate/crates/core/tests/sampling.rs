use densescan_core::wsi::otsu::tissue_mask;
use densescan_core::wsi::synth::{generate_synthetic_slide, LesionSpec, SlideSpec};
use densescan_core::wsi::{sample_patches, PatchGeometry, Provenance, SampleCounts};

const GEOM: PatchGeometry = PatchGeometry { patch_extent: 52, mask_extent: 14 };

#[test]
fn itc_patches_contain_the_whole_lesion() {
    let spec = SlideSpec {
        id: "itc".into(),
        width: 400,
        height: 400,
        spacing_um: 8.0,
        lesions: vec![LesionSpec { diameter_mm: 0.15, center: None }, LesionSpec { diameter_mm: 1.0, center: None }],
    };
    let s = generate_synthetic_slide(&spec, 3).unwrap();
    let tissue = tissue_mask(&s.slide.image).mask;
    let counts = SampleCounts { random: 0, lesion: 0, itc: 25, boundary: 0 };
    let (patches, warnings) = sample_patches(&s.slide, &s.annotations, &tissue, counts, GEOM, 9).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(patches.len(), 25);
    let itc = s
        .annotations
        .lesions
        .iter()
        .find(|l| l.polygon.max_diameter() * 8.0 / 1000.0 < 0.2)
        .expect("one ITC lesion");
    let mut itc_mask = densescan_core::wsi::BinaryMask::new(400, 400);
    itc.polygon.rasterize_into(&mut itc_mask);
    for p in &patches {
        assert_eq!(p.provenance, Provenance::Itc);
        assert_eq!(p.label, 1);
        let (x0, y0) = (p.center.0 as i64 - 26, p.center.1 as i64 - 26);
        let inside = itc_mask.crop(x0, y0, 52, 52).count();
        assert_eq!(inside, itc_mask.count(), "patch at {:?} clips the lesion", p.center);
        assert!(p.mask.as_ref().unwrap().count() > 0);
    }
}

#[test]
fn sampling_is_deterministic_and_warns_without_candidates() {
    let spec = SlideSpec { id: "n".into(), width: 300, height: 300, spacing_um: 8.0, lesions: vec![] };
    let s = generate_synthetic_slide(&spec, 1).unwrap();
    let tissue = tissue_mask(&s.slide.image).mask;
    let counts = SampleCounts { random: 10, lesion: 3, itc: 0, boundary: 2 };
    let a = sample_patches(&s.slide, &s.annotations, &tissue, counts, GEOM, 5).unwrap();
    let b = sample_patches(&s.slide, &s.annotations, &tissue, counts, GEOM, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.0.len(), 10);
    assert!(a.0.iter().all(|p| p.label == 0 && tissue.get(p.center.0, p.center.1)));
    let kinds: Vec<_> = a.1.iter().map(|w| w.provenance).collect();
    assert_eq!(kinds, [Provenance::Lesion, Provenance::Boundary]);
}
