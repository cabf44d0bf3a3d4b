use densescan_core::loss::LossConfig;
use densescan_core::params::NetworkParams;
use densescan_core::pyramid::NetworkSpec;
use densescan_core::rng::{derive_seed, stream};
use densescan_core::tensor::Tensor;
use densescan_core::train::{train, Batch, BatchSource, SgdConfig};
use densescan_core::Result;
use rand::Rng;

/// Class 0: smooth noise. Class 1: vertical stripes with a period of 4 pixels.
struct TwoTextures {
    n: usize,
    extent: usize,
    mask_extent: usize,
}

impl BatchSource<f64> for TwoTextures {
    fn len(&self) -> usize {
        self.n
    }

    fn batch(&self, _step: usize, indices: &[usize]) -> Result<Batch<f64>> {
        let e = self.extent;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut masks = Vec::new();
        for &i in indices {
            let label = (i % 2) as u8;
            let mut rng = stream(derive_seed(17, &[i as u64]), 0);
            for _ in 0..3 {
                for _y in 0..e {
                    for x in 0..e {
                        let base = if label == 1 { if x % 4 < 2 { 0.6 } else { -0.6 } } else { 0.0 };
                        data.push(base + rng.gen_range(-0.3..0.3));
                    }
                }
            }
            labels.push(label);
            masks.extend(std::iter::repeat(label).take(self.mask_extent * self.mask_extent));
        }
        Ok(Batch {
            images: Tensor::new(vec![indices.len(), 3, e, e], data)?,
            labels,
            masks,
            mask_extent: self.mask_extent,
        })
    }
}

fn data(spec: &NetworkSpec) -> TwoTextures {
    TwoTextures { n: 64, extent: spec.patch_extent, mask_extent: spec.decoder.as_ref().unwrap().mask_extent(spec).unwrap() }
}

#[test]
fn lambda_zero_leaves_decoder_untouched() {
    let spec = NetworkSpec::desk();
    let p0 = NetworkParams::<f64>::init(&spec, 1).unwrap();
    let cfg = SgdConfig { learning_rate: 0.01, steps: 3, batch_size: 4, ..SgdConfig::default() };
    let (p, _) = train(&spec, p0.clone(), &data(&spec), &LossConfig::new(0.04, 0.0).unwrap(), &cfg).unwrap();
    assert_eq!(p.decoder, p0.decoder);
    assert_ne!(p.detector, p0.detector);
}

#[test]
fn zero_learning_rate_is_bitwise_identity() {
    let spec = NetworkSpec::desk();
    let p0 = NetworkParams::<f64>::init(&spec, 2).unwrap();
    let cfg = SgdConfig { learning_rate: 0.0, steps: 3, batch_size: 4, ..SgdConfig::default() };
    let (p, curve) = train(&spec, p0.clone(), &data(&spec), &LossConfig::default(), &cfg).unwrap();
    for ((_, a), (_, b)) in p.named_tensors().into_iter().zip(p0.named_tensors()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(curve.total.len(), 3);
}

#[test]
fn two_textures_halve_the_classification_loss() {
    let spec = NetworkSpec::desk();
    let p0 = NetworkParams::<f64>::init(&spec, 3).unwrap();
    let cfg = SgdConfig { learning_rate: 0.01, momentum: 0.9, steps: 200, batch_size: 8, seed: 4 };
    let (_, curve) = train(&spec, p0, &data(&spec), &LossConfig::default(), &cfg).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let first = mean(&curve.classification[..10]);
    let last = mean(&curve.classification[190..]);
    assert!(last <= 0.5 * first, "classification loss {first} -> {last}");
}

#[test]
fn training_is_reproducible() {
    let spec = NetworkSpec::desk();
    let cfg = SgdConfig { learning_rate: 0.01, steps: 4, batch_size: 2, ..SgdConfig::default() };
    let run = || train(&spec, NetworkParams::<f64>::init(&spec, 5).unwrap(), &data(&spec), &LossConfig::default(), &cfg).unwrap();
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
}
