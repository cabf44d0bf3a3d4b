//! Classification and truncated segmentation losses.
//!
//! The segmentation loss caps the penalty on confidently wrong pixels: below
//! the truncation point `γ` the `-ln p` curve is replaced by a quadratic that
//! matches it in value and slope at `p = γ`, so every pixel's gradient is
//! bounded by `1/γ`.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::tensor::{softmax_channels, softmax_channels_backward, Real, Tensor};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before logarithms.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    gamma: f64,
    lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { gamma: 0.04, lambda: 0.5 }
    }
}

impl LossConfig {
    pub fn new(gamma: f64, lambda: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(config(format!("trade-off weight {lambda} must be finite and >= 0")));
        }
        Ok(Self { gamma, lambda })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&gamma) {
        return Err(config(format!("truncation point {gamma} outside [0, 0.5]")));
    }
    Ok(())
}

fn clamp(p: f64) -> f64 {
    p.max(EPS).min(1.0 - EPS)
}

/// Per-pixel truncated cross-entropy of the true-class probability `p`.
pub fn truncated_bce(p: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(truncated_unchecked(clamp(p), gamma))
}

fn truncated_unchecked(p: f64, gamma: f64) -> f64 {
    if p >= gamma {
        -p.ln()
    } else {
        -gamma.ln() + 0.5 * (1.0 - (p * p) / (gamma * gamma))
    }
}

/// `d truncated_bce / d p`.
pub fn truncated_bce_grad(p: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok(truncated_grad_unchecked(clamp(p), gamma))
}

fn truncated_grad_unchecked(p: f64, gamma: f64) -> f64 {
    if p >= gamma {
        -1.0 / p
    } else {
        -p / (gamma * gamma)
    }
}

/// Mean truncated loss of a logit map against a binary mask, and the
/// gradient with respect to the logits.
pub fn segmentation_loss<T: Real>(logits: &Tensor<T>, mask: &[u8], gamma: f64) -> Result<(f64, Tensor<T>)> {
    let (n, c, h, w) = logits.dims4();
    if c != 2 {
        return Err(Error::Dimension { op: "segmentation_loss", axis: "channels", expected: 2, found: c });
    }
    if mask.len() != n * h * w {
        return Err(Error::Dimension {
            op: "segmentation_loss",
            axis: "mask",
            expected: n * h * w,
            found: mask.len(),
        });
    }
    check_gamma(gamma)?;
    let probs = softmax_channels(logits)?;
    let count = (n * h * w) as f64;
    let mut total = 0.0;
    let mut gp = Tensor::zeros(logits.shape());
    let hw = h * w;
    for b in 0..n {
        for i in 0..hw {
            let t = mask[b * hw + i] as usize;
            if t > 1 {
                return Err(Error::Data(format!("mask value {t} is not binary")));
            }
            let idx = (b * 2 + t) * hw + i;
            let raw = probs.data()[idx].as_f64();
            let p = clamp(raw);
            total += truncated_unchecked(p, gamma);
            // clamping is flat outside [EPS, 1-EPS]
            let g = if raw > EPS && raw < 1.0 - EPS { truncated_grad_unchecked(p, gamma) } else { 0.0 };
            gp.data_mut()[idx] = T::of(g / count);
        }
    }
    Ok((total / count, softmax_channels_backward(&probs, &gp)))
}

/// Mean binary cross-entropy of `[n, 2, 1, 1]` classifier logits against labels.
pub fn classification_loss<T: Real>(logits: &Tensor<T>, labels: &[u8]) -> Result<(f64, Tensor<T>)> {
    let (n, c, h, w) = logits.dims4();
    if c != 2 || h * w != 1 {
        return Err(Error::Dimension { op: "classification_loss", axis: "channels", expected: 2, found: c });
    }
    let mask: Vec<u8> = labels.to_vec();
    if mask.len() != n {
        return Err(Error::Dimension { op: "classification_loss", axis: "batch", expected: n, found: mask.len() });
    }
    segmentation_loss(logits, &mask, 0.0)
}

/// A score map with its ground truth and weight in the segmentation loss.
pub struct SegTarget<'a, T> {
    pub logits: &'a Tensor<T>,
    pub mask: &'a [u8],
    pub weight: f64,
}

/// Loss breakdown of one synergistic step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub classification: f64,
    pub segmentation: f64,
    pub total: f64,
}

/// `L_cla + λ · Σ_h w_h · mean_h(truncated)`; returns the value and the
/// logit gradients (classifier first, then one per segmentation target).
pub fn total_loss<T: Real>(
    cls_logits: &Tensor<T>,
    labels: &[u8],
    seg: &[SegTarget<'_, T>],
    cfg: &LossConfig,
) -> Result<(LossValue, Tensor<T>, Vec<Tensor<T>>)> {
    let (lc, gc) = classification_loss(cls_logits, labels)?;
    let mut ls = 0.0;
    let mut grads = Vec::with_capacity(seg.len());
    for s in seg {
        let (l, g) = segmentation_loss(s.logits, s.mask, cfg.gamma)?;
        ls += s.weight * l;
        grads.push(g.scale(T::of(cfg.lambda * s.weight)));
    }
    Ok((
        LossValue { classification: lc, segmentation: ls, total: lc + cfg.lambda * ls },
        gc,
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gamma_is_plain_bce() {
        assert!((truncated_bce(0.5, 0.0).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        for &p in &[1e-3, 0.1, 0.3, 0.9] {
            assert_eq!(truncated_bce(p, 0.0).unwrap(), -(p as f64).ln());
        }
    }

    #[test]
    fn branch_values() {
        let a = truncated_bce(0.04, 0.04).unwrap();
        let below = -(0.04f64).ln() + 0.5 * (1.0 - 1.0);
        assert!((a - below).abs() < 1e-15);
        assert!((a - 3.2189).abs() < 1e-4);
        let b = truncated_bce(0.01, 0.04).unwrap();
        assert!((b - (-(0.04f64).ln() + 0.5 * (1.0 - 0.0625))).abs() < 1e-15);
        assert!((b - 3.6876).abs() < 1e-4);
    }

    #[test]
    fn gradient_values() {
        assert_eq!(truncated_bce_grad(0.5, 0.3).unwrap(), -2.0);
        let g = 0.04;
        let at = truncated_bce_grad(g, g).unwrap();
        let below = -g / (g * g);
        assert!((at + 1.0 / g).abs() < 1e-12 && (below + 1.0 / g).abs() < 1e-12);
    }

    #[test]
    fn gamma_out_of_range() {
        assert!(truncated_bce(0.5, 0.6).is_err());
        assert!(truncated_bce_grad(0.5, -0.1).is_err());
        assert!(LossConfig::new(0.7, 0.5).is_err());
        assert!(LossConfig::new(0.04, -1.0).is_err());
    }

    #[test]
    fn lambda_zero_is_classification_only() {
        let cls = Tensor::<f64>::new(alloc::vec![1, 2, 1, 1], alloc::vec![0.2, -0.4]).unwrap();
        let seg = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64 * 0.3 - 1.0);
        let mask = [1u8, 0, 0, 1];
        let cfg = LossConfig::new(0.04, 0.0).unwrap();
        let (v, _, g) = total_loss(&cls, &[1], &[SegTarget { logits: &seg, mask: &mask, weight: 1.0 }], &cfg).unwrap();
        let (lc, _) = classification_loss(&cls, &[1]).unwrap();
        assert_eq!(v.total, lc);
        assert!(g[0].data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let seg = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        assert!(matches!(segmentation_loss(&seg, &[0, 1], 0.04), Err(Error::Dimension { .. })));
    }
}
