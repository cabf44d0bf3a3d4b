//! Synergistic training: one backward pass through the decoder and the
//! detector sharing the trunk, and plain SGD with momentum.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{decoder_backward, decoder_forward, sample_ground_truth};
use crate::error::{config, Error, Result};
use crate::loss::{total_loss, LossConfig, LossValue, SegTarget};
use crate::params::NetworkParams;
use crate::pyramid::{detector_backward, detector_forward_full, Cost, DetectorRun, NetworkSpec};
use crate::rng::stream;
use crate::tensor::{Real, Tensor};

/// A batch of training patches with labels and centred masks.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `[n, C, L_p, L_p]`.
    pub images: Tensor<T>,
    pub labels: Vec<u8>,
    /// `n` row-major masks of `mask_extent`² pixels, centred in the patch.
    pub masks: Vec<u8>,
    pub mask_extent: usize,
}

/// Total loss and gradients with respect to every parameter.
pub fn loss_and_grads<T: Real>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    batch: &Batch<T>,
    cfg: &LossConfig,
) -> Result<(LossValue, NetworkParams<T>)> {
    let use_decoder = cfg.lambda() > 0.0 && spec.decoder.is_some() && params.decoder.is_some();
    let run = DetectorRun { refine_all: use_decoder, ..DetectorRun::train() };
    let (_, logits, feats) = detector_forward_full(&batch.images, spec, &params.detector, run, &mut Cost::default())?;
    let n = batch.labels.len();
    if logits.dims4().0 != n {
        return Err(Error::Dimension { op: "loss_and_grads", axis: "batch", expected: logits.dims4().0, found: n });
    }
    let mut grads = NetworkParams::zeros_like(spec);
    let mut grad_refined = BTreeMap::new();
    let value;
    if use_decoder {
        let dspec = spec.decoder.as_ref().expect("checked");
        let dparams = params.decoder.as_ref().expect("checked");
        let (maps, trace) = decoder_forward(&feats.refined, spec, dspec, dparams)?;
        let e = batch.mask_extent;
        if batch.masks.len() != n * e * e {
            return Err(Error::Dimension { op: "loss_and_grads", axis: "mask", expected: n * e * e, found: batch.masks.len() });
        }
        let origin = (spec.patch_extent - e) / 2;
        let gts: Vec<Vec<u8>> = maps
            .iter()
            .map(|m| {
                let (_, _, h, w) = m.logits.dims4();
                (0..n)
                    .flat_map(|b| sample_ground_truth(&batch.masks[b * e * e..(b + 1) * e * e], e, origin, m.lattice, (h, w)))
                    .collect()
            })
            .collect();
        let targets: Vec<SegTarget<'_, T>> = maps
            .iter()
            .zip(&gts)
            .map(|(m, gt)| SegTarget { logits: &m.logits, mask: gt, weight: m.weight })
            .collect();
        let (v, gcls, gseg) = total_loss(&logits, &batch.labels, &targets, cfg)?;
        value = v;
        let gdec = grads.decoder.as_mut().expect("same layout");
        grad_refined = decoder_backward(&feats.refined, dspec, dparams, &trace, &gseg, gdec)?;
        detector_backward(&batch.images, spec, &params.detector, &feats, &gcls, grad_refined, &mut grads.detector)?;
    } else {
        let (v, gcls, _) = total_loss(&logits, &batch.labels, &[], cfg)?;
        value = v;
        detector_backward(&batch.images, spec, &params.detector, &feats, &gcls, core::mem::take(&mut grad_refined), &mut grads.detector)?;
    }
    Ok((value, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, momentum: 0.9, steps: 200, batch_size: 8, seed: 0 }
    }
}

/// SGD with classical momentum: `v ← μv + g`, `θ ← θ − ηv`.
pub struct Sgd<T> {
    velocity: NetworkParams<T>,
    lr: T,
    momentum: T,
}

impl<T: Real> Sgd<T> {
    pub fn new(spec: &NetworkSpec, cfg: &SgdConfig) -> Self {
        Self {
            velocity: NetworkParams::zeros_like(spec),
            lr: T::of(cfg.learning_rate),
            momentum: T::of(cfg.momentum),
        }
    }

    pub fn step(&mut self, params: &mut NetworkParams<T>, grads: &NetworkParams<T>) {
        let g = grads.named_tensors();
        let v = self.velocity.named_tensors_mut();
        let p = params.named_tensors_mut();
        for (((_, pt), (_, vt)), (_, gt)) in p.into_iter().zip(v).zip(g) {
            for ((pv, vv), &gv) in pt.data_mut().iter_mut().zip(vt.data_mut()).zip(gt.data()) {
                *vv = self.momentum * *vv + gv;
                *pv -= self.lr * *vv;
            }
        }
    }
}

/// Loss of each step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub classification: Vec<f64>,
    pub segmentation: Vec<f64>,
    pub total: Vec<f64>,
}

/// Source of training batches; `batch(step, indices)` must be a pure function.
pub trait BatchSource<T> {
    fn len(&self) -> usize;
    fn batch(&self, step: usize, indices: &[usize]) -> Result<Batch<T>>;
}

/// Runs `cfg.steps` SGD steps on minibatches drawn (with replacement) from
/// `data` by a seeded stream per step.
pub fn train<T: Real>(
    spec: &NetworkSpec,
    mut params: NetworkParams<T>,
    data: &dyn BatchSource<T>,
    loss_cfg: &LossConfig,
    sgd_cfg: &SgdConfig,
) -> Result<(NetworkParams<T>, LossCurve)> {
    if data.len() == 0 {
        return Err(config("training set is empty"));
    }
    if sgd_cfg.batch_size == 0 {
        return Err(config("batch size must be >= 1"));
    }
    let mut opt = Sgd::new(spec, sgd_cfg);
    let mut curve = LossCurve::default();
    for step in 0..sgd_cfg.steps {
        let mut rng = stream(sgd_cfg.seed, step as u64);
        let idx: Vec<usize> = (0..sgd_cfg.batch_size).map(|_| rng.gen_range(0..data.len())).collect();
        let batch = data.batch(step, &idx)?;
        let (loss, grads) = loss_and_grads(spec, &params, &batch, loss_cfg)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { step, loss: loss.total });
        }
        curve.classification.push(loss.classification);
        curve.segmentation.push(loss.segmentation);
        curve.total.push(loss.total);
        opt.step(&mut params, &grads);
    }
    Ok((params, curve))
}
