use densescan_core::geometry::{certify_equivalence, CertifyConfig};
use densescan_core::pyramid::{NetworkSpec, PoolFault};

#[test]
fn dense_tiles_equal_patch_classifier() {
    let spec = NetworkSpec::desk();
    for alpha in [1, 2, 4] {
        let r = certify_equivalence(&spec, &CertifyConfig::new(alpha, 2, 2, 1).double()).unwrap();
        assert!(r.passed, "alpha {alpha}: {}", r.max_abs_deviation);
        let r = certify_equivalence(&spec, &CertifyConfig::new(alpha, 2, 2, 1)).unwrap();
        assert!(r.passed, "alpha {alpha} mixed: {}", r.max_abs_deviation);
    }
}

#[test]
fn shifted_pooling_window_is_caught() {
    let spec = NetworkSpec::desk();
    for level in [3, 4, 5] {
        let cfg = CertifyConfig { fault: Some(PoolFault { level, shift: 1 }), ..CertifyConfig::new(2, 2, 2, 1) };
        match certify_equivalence(&spec, &cfg) {
            Ok(r) => assert!(!r.passed && r.worst.is_some(), "fault at level {level} went unnoticed"),
            // a full-extent window has no room to move
            Err(e) => assert!(level == 5 && matches!(e, densescan_core::Error::Geometry { .. })),
        }
    }
}

#[test]
fn unsupported_alpha_is_config_error() {
    let err = certify_equivalence(&NetworkSpec::desk(), &CertifyConfig::new(3, 2, 1, 0)).unwrap_err();
    assert!(matches!(err, densescan_core::Error::Config(_)));
}
