//! Central finite differences against the analytic backward pass.

use densescan_core::loss::LossConfig;
use densescan_core::params::NetworkParams;
use densescan_core::pyramid::NetworkSpec;
use densescan_core::rng::stream;
use densescan_core::tensor::Tensor;
use densescan_core::train::{loss_and_grads, Batch};
use rand::Rng;

fn batch(spec: &NetworkSpec, seed: u64) -> Batch<f64> {
    let mut rng = stream(seed, 0);
    let lp = spec.patch_extent;
    let e = spec.decoder.as_ref().map_or(0, |d| d.mask_extent(spec).unwrap());
    Batch {
        images: Tensor::from_fn(&[2, 3, lp, lp], |_| rng.gen_range(-1.0..1.0)),
        labels: vec![0, 1],
        masks: (0..2 * e * e).map(|i| ((i / 5 + i % 7) % 3 == 0) as u8).collect(),
        mask_extent: e,
    }
}

fn flat(p: &NetworkParams<f64>) -> Vec<(String, Vec<f64>)> {
    p.named_tensors().into_iter().map(|(n, t)| (n, t.data().to_vec())).collect()
}

fn perturb(p: &NetworkParams<f64>, name: &str, i: usize, h: f64) -> NetworkParams<f64> {
    let mut q = p.clone();
    for (n, t) in q.named_tensors_mut() {
        if n == name {
            t.data_mut()[i] += h;
        }
    }
    q
}

/// Largest relative error over a deterministic sample of coordinates.
fn check(spec: &NetworkSpec, cfg: &LossConfig, seed: u64, per_tensor: usize) -> (f64, usize) {
    let mut params = NetworkParams::<f64>::init(spec, seed).unwrap();
    params.randomize_biases(seed, 0.05);
    let b = batch(spec, seed);
    let (_, grads) = loss_and_grads(spec, &params, &b, cfg).unwrap();
    let g = flat(&grads);
    let mut rng = stream(seed, 9);
    let (mut worst, mut checked) = (0.0f64, 0);
    let h = 1e-6;
    for (name, gv) in &g {
        for _ in 0..per_tensor {
            let i = rng.gen_range(0..gv.len());
            let up = loss_and_grads(spec, &perturb(&params, name, i, h), &b, cfg).unwrap().0.total;
            let dn = loss_and_grads(spec, &perturb(&params, name, i, -h), &b, cfg).unwrap().0.total;
            let fd = (up - dn) / (2.0 * h);
            let scale = fd.abs().max(gv[i].abs());
            if scale < 1e-6 {
                assert!((fd - gv[i]).abs() < 1e-8, "{name}[{i}]: fd {fd} vs {}", gv[i]);
                continue;
            }
            worst = worst.max((fd - gv[i]).abs() / scale);
            checked += 1;
        }
    }
    (worst, checked)
}

#[test]
fn detector_only_gradients_match_finite_differences() {
    let spec = NetworkSpec { decoder: None, ..NetworkSpec::desk() };
    let (worst, checked) = check(&spec, &LossConfig::new(0.04, 0.0).unwrap(), 11, 3);
    assert!(checked > 20);
    assert!(worst <= 1e-3, "relative error {worst}");
}

#[test]
fn synergistic_gradients_match_finite_differences() {
    let spec = NetworkSpec::desk();
    let (worst, checked) = check(&spec, &LossConfig::new(0.04, 0.5).unwrap(), 5, 2);
    assert!(checked > 30);
    assert!(worst <= 1e-3, "relative error {worst}");
}

#[test]
fn untruncated_segmentation_gradients_match_finite_differences() {
    let spec = NetworkSpec::desk();
    let (worst, _) = check(&spec, &LossConfig::new(0.0, 1.0).unwrap(), 8, 1);
    assert!(worst <= 1e-3, "relative error {worst}");
}
