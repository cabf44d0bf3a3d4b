use densescan::config::{ClassifierKind, RunConfig};
use densescan::CliError;

#[test]
fn empty_document_gives_defaults() {
    let c = RunConfig::parse_toml("").unwrap();
    assert_eq!(c, RunConfig::default());
    assert_eq!(c.geometry.alpha, 4);
    assert_eq!(c.geometry.tile_extent, 8);
    assert_eq!(c.staging.trees, 50);
    assert_eq!(c.staging.max_depth, 8);
    assert_eq!(c.staging.classifier, ClassifierKind::Forest);
    c.validate().unwrap();
}

#[test]
fn unknown_keys_are_config_errors() {
    for doc in ["colour = 1", "[geometry]\nalfa = 2", "[train.samples]\nrandom = 1\nlesion = 1\nitc = 1\nboundary = 1\nextra = 2", "[nonsense]"] {
        let e = RunConfig::parse_toml(doc).unwrap_err();
        assert!(matches!(e, CliError::Config(_)), "{doc}: {e:?}");
        assert_eq!(e.exit_code(), 2);
    }
    assert!(matches!(RunConfig::parse_json(r#"{"seeds": 3}"#), Err(CliError::Config(_))));
}

#[test]
fn partial_sections_keep_other_defaults() {
    let c = RunConfig::parse_toml("seed = 9\n[geometry]\nalpha = 2\n[verify]\ntrials = 3").unwrap();
    assert_eq!(c.seed, 9);
    assert_eq!(c.geometry.alpha, 2);
    assert_eq!(c.geometry.tile_extent, 8);
    assert_eq!(c.verify.trials, 3);
    assert_eq!(c.verify.alphas, vec![1, 2, 4]);
}

#[test]
fn partial_nested_sections_keep_other_defaults() {
    let doc = "[cohort]\npatients = 3\n[train.samples]\nitc = 2\n[train.augment]\nhue = 0.0\n[verify]\nprecision = \"double\"\n[staging]\nextra_features = false";
    let c = RunConfig::parse_toml(doc).unwrap();
    let d = RunConfig::default();
    assert_eq!(c.cohort.patients, 3);
    assert_eq!(c.cohort.width, d.cohort.width);
    assert_eq!((c.train.samples.itc, c.train.samples.random), (2, d.train.samples.random));
    assert_eq!((c.train.augment.hue, c.train.augment.scale), (0.0, d.train.augment.scale));
    assert_eq!(c.verify.precision, densescan_core::geometry::Precision::Double);
    assert_eq!(c.staging.forest_features(), 2);
    c.validate().unwrap();
}

#[test]
fn invalid_values_fail_validation() {
    for doc in [
        "[geometry]\nalpha = 3",
        "[geometry]\ntile_extent = 0",
        "[loss]\ngamma = 0.7",
        "[train]\nbatch_size = 0",
        "[staging]\nthreshold = 1.5",
        "[network]\npreset = \"huge\"",
        "[cohort]\npatients = 5\nwidth = 704\nheight = 704\nspacing_um = 8.0\nitc_mm = [0.1, 0.3]\nmicro_mm = [0.5, 1.0]\nmacro_mm = [2.2, 2.6]",
    ] {
        let c = RunConfig::parse_toml(doc).unwrap();
        assert!(matches!(c.validate(), Err(CliError::Config(_))), "{doc}");
    }
}

#[test]
fn hash_tracks_content() {
    let a = RunConfig::default();
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.seed = 1;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
    let json = serde_json::to_string(&a).unwrap();
    assert_eq!(RunConfig::parse_json(&json).unwrap(), a);
}
