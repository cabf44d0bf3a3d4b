//! Learnable tensors of the detector and decoder.
//!
//! Normalisation layers are folded into the convolution weight and bias
//! (per-channel scale and shift), so every layer here is a plain affine
//! convolution evaluated with fixed statistics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderSpec;
use crate::error::{Error, Result};
use crate::pyramid::NetworkSpec;
use crate::rng::stream;
use crate::tensor::{ConvSpec, Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn zeros(spec: &ConvSpec) -> Self {
        Self {
            weight: Tensor::zeros(&spec.weight_shape()),
            bias: Tensor::zeros(&[spec.out_channels]),
        }
    }

    fn he_uniform(spec: &ConvSpec, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (spec.in_channels * spec.kernel_h * spec.kernel_w) as f64;
        let bound = libm_sqrt(6.0 / fan_in);
        Self {
            weight: Tensor::from_fn(&spec.weight_shape(), |_| T::of(rng.gen_range(-bound..bound))),
            bias: Tensor::zeros(&[spec.out_channels]),
        }
    }

    pub fn cast<U: Real>(&self) -> ConvParams<U> {
        ConvParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

fn libm_sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}

/// The two separable branches of a global convolution:
/// `(1×k then k×1)` and `(k×1 then 1×k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalConvParams<T> {
    pub row_then_col: [ConvParams<T>; 2],
    pub col_then_row: [ConvParams<T>; 2],
}

impl<T: Real> GlobalConvParams<T> {
    pub fn specs(k: usize, cin: usize, cout: usize) -> [[ConvSpec; 2]; 2] {
        let row = |i, o| ConvSpec { kernel_h: 1, kernel_w: k, in_channels: i, out_channels: o, stride: 1 };
        let col = |i, o| ConvSpec { kernel_h: k, kernel_w: 1, in_channels: i, out_channels: o, stride: 1 };
        [[row(cin, cout), col(cout, cout)], [col(cin, cout), row(cout, cout)]]
    }

    fn build(k: usize, cin: usize, cout: usize, mut f: impl FnMut(&ConvSpec) -> ConvParams<T>) -> Self {
        let [a, b] = Self::specs(k, cin, cout);
        Self {
            row_then_col: [f(&a[0]), f(&a[1])],
            col_then_row: [f(&b[0]), f(&b[1])],
        }
    }

    pub fn cast<U: Real>(&self) -> GlobalConvParams<U> {
        GlobalConvParams {
            row_then_col: [self.row_then_col[0].cast(), self.row_then_col[1].cast()],
            col_then_row: [self.col_then_row[0].cast(), self.col_then_row[1].cast()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams<T> {
    pub trunk: Vec<ConvParams<T>>,
    /// One entry per PFE level, in the order of `PfeConfig::levels`.
    pub global: Vec<GlobalConvParams<T>>,
    pub head: ConvParams<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryParams<T> {
    pub conv1: ConvParams<T>,
    pub conv2: ConvParams<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams<T> {
    /// One block per decoder level, top (coarsest) first.
    pub boundary: Vec<BoundaryParams<T>>,
    /// Transposed-conv weights between consecutive decoder levels.
    pub up: Vec<Tensor<T>>,
    /// Upsampling from the finest decoder level to input resolution.
    pub final_up: Option<Tensor<T>>,
    pub aux_heads: Vec<ConvParams<T>>,
    pub final_head: ConvParams<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams<T> {
    pub detector: DetectorParams<T>,
    pub decoder: Option<DecoderParams<T>>,
}

impl<T: Real> NetworkParams<T> {
    /// He-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(seed, 0);
        Ok(Self::build(spec, |s| ConvParams::he_uniform(s, &mut rng), |shape| {
            Tensor::zeros(shape)
        })
        .randomize_deconvs(seed))
    }

    pub fn zeros_like(spec: &NetworkSpec) -> Self {
        Self::build(spec, ConvParams::zeros, Tensor::zeros)
    }

    fn randomize_deconvs(mut self, seed: u64) -> Self {
        let mut rng = stream(seed, 1);
        if let Some(dec) = &mut self.decoder {
            for w in dec.up.iter_mut().chain(dec.final_up.iter_mut()) {
                let (_, cout, kh, kw) = w.dims4();
                let bound = libm_sqrt(3.0 / (cout * kh * kw) as f64);
                for v in w.data_mut() {
                    *v = T::of(rng.gen_range(-bound..bound));
                }
            }
        }
        self
    }

    fn build(
        spec: &NetworkSpec,
        mut conv: impl FnMut(&ConvSpec) -> ConvParams<T>,
        mut deconv: impl FnMut(&[usize]) -> Tensor<T>,
    ) -> Self {
        let trunk = spec.trunk.iter().map(|l| conv(&l.conv)).collect();
        let cr = spec.pfe.reduced_channels;
        let global = spec
            .pfe
            .levels
            .iter()
            .map(|l| {
                let cin = spec.level_channels(l.level).unwrap_or(1);
                GlobalConvParams::build(l.kernel, cin, cr, &mut conv)
            })
            .collect();
        let head = conv(&ConvSpec::square(1, cr, 2, 1));
        let decoder = spec.decoder.as_ref().map(|d| decoder_params(d, cr, &mut conv, &mut deconv, spec));
        Self {
            detector: DetectorParams { trunk, global, head },
            decoder,
        }
    }

    /// Adds uniform noise in `[-scale, scale)` to every bias.
    pub fn randomize_biases(&mut self, seed: u64, scale: f64) {
        let mut rng = stream(seed, 2);
        for (name, t) in self.named_tensors_mut() {
            if name.ends_with(".bias") {
                for v in t.data_mut() {
                    *v = T::of(rng.gen_range(-scale..scale));
                }
            }
        }
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            detector: DetectorParams {
                trunk: self.detector.trunk.iter().map(ConvParams::cast).collect(),
                global: self.detector.global.iter().map(GlobalConvParams::cast).collect(),
                head: self.detector.head.cast(),
            },
            decoder: self.decoder.as_ref().map(|d| DecoderParams {
                boundary: d
                    .boundary
                    .iter()
                    .map(|b| BoundaryParams { conv1: b.conv1.cast(), conv2: b.conv2.cast() })
                    .collect(),
                up: d.up.iter().map(Tensor::cast).collect(),
                final_up: d.final_up.as_ref().map(Tensor::cast),
                aux_heads: d.aux_heads.iter().map(ConvParams::cast).collect(),
                final_head: d.final_head.cast(),
            }),
        }
    }

    /// Every learnable tensor with a stable dotted name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        fn conv<'a, T>(out: &mut Vec<(String, &'a Tensor<T>)>, prefix: String, p: &'a ConvParams<T>) {
            out.push((format!("{prefix}.weight"), &p.weight));
            out.push((format!("{prefix}.bias"), &p.bias));
        }
        let d = &self.detector;
        for (i, p) in d.trunk.iter().enumerate() {
            conv(&mut out, format!("detector.trunk.{i}"), p);
        }
        for (i, g) in d.global.iter().enumerate() {
            for (j, p) in g.row_then_col.iter().enumerate() {
                conv(&mut out, format!("detector.global.{i}.row_then_col.{j}"), p);
            }
            for (j, p) in g.col_then_row.iter().enumerate() {
                conv(&mut out, format!("detector.global.{i}.col_then_row.{j}"), p);
            }
        }
        conv(&mut out, "detector.head".into(), &d.head);
        if let Some(dec) = &self.decoder {
            for (i, b) in dec.boundary.iter().enumerate() {
                conv(&mut out, format!("decoder.boundary.{i}.conv1"), &b.conv1);
                conv(&mut out, format!("decoder.boundary.{i}.conv2"), &b.conv2);
            }
            for (i, w) in dec.up.iter().enumerate() {
                out.push((format!("decoder.up.{i}.weight"), w));
            }
            if let Some(w) = &dec.final_up {
                out.push(("decoder.final_up.weight".into(), w));
            }
            for (i, p) in dec.aux_heads.iter().enumerate() {
                conv(&mut out, format!("decoder.aux_head.{i}"), p);
            }
            conv(&mut out, "decoder.final_head".into(), &dec.final_head);
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        fn conv<'a, T>(out: &mut Vec<(String, &'a mut Tensor<T>)>, prefix: String, p: &'a mut ConvParams<T>) {
            out.push((format!("{prefix}.weight"), &mut p.weight));
            out.push((format!("{prefix}.bias"), &mut p.bias));
        }
        let d = &mut self.detector;
        for (i, p) in d.trunk.iter_mut().enumerate() {
            conv(&mut out, format!("detector.trunk.{i}"), p);
        }
        for (i, g) in d.global.iter_mut().enumerate() {
            for (j, p) in g.row_then_col.iter_mut().enumerate() {
                conv(&mut out, format!("detector.global.{i}.row_then_col.{j}"), p);
            }
            for (j, p) in g.col_then_row.iter_mut().enumerate() {
                conv(&mut out, format!("detector.global.{i}.col_then_row.{j}"), p);
            }
        }
        conv(&mut out, "detector.head".into(), &mut d.head);
        if let Some(dec) = &mut self.decoder {
            for (i, b) in dec.boundary.iter_mut().enumerate() {
                conv(&mut out, format!("decoder.boundary.{i}.conv1"), &mut b.conv1);
                conv(&mut out, format!("decoder.boundary.{i}.conv2"), &mut b.conv2);
            }
            for (i, w) in dec.up.iter_mut().enumerate() {
                out.push((format!("decoder.up.{i}.weight"), w));
            }
            if let Some(w) = &mut dec.final_up {
                out.push(("decoder.final_up.weight".into(), w));
            }
            for (i, p) in dec.aux_heads.iter_mut().enumerate() {
                conv(&mut out, format!("decoder.aux_head.{i}"), p);
            }
            conv(&mut out, "decoder.final_head".into(), &mut dec.final_head);
        }
        out
    }

    /// Replaces tensors by name; every present name must match an existing
    /// tensor of identical shape, and every tensor must be provided.
    pub fn load_named(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let mut slots = self.named_tensors_mut();
        for (name, slot) in slots.iter_mut() {
            let found = tensors
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Decode(format!("missing tensor `{name}`")))?;
            if found.1.shape() != slot.shape() {
                return Err(Error::Decode(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    found.1.shape(),
                    slot.shape()
                )));
            }
            **slot = found.1.clone();
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Drops the decoder, leaving the parameters needed for inference.
    pub fn detector_only(&self) -> Self {
        Self {
            detector: self.detector.clone(),
            decoder: None,
        }
    }
}

fn decoder_params<T: Real>(
    d: &DecoderSpec,
    cr: usize,
    conv: &mut impl FnMut(&ConvSpec) -> ConvParams<T>,
    deconv: &mut impl FnMut(&[usize]) -> Tensor<T>,
    spec: &NetworkSpec,
) -> DecoderParams<T> {
    let boundary = d
        .levels
        .iter()
        .map(|l| BoundaryParams {
            conv1: conv(&ConvSpec::square(l.boundary_kernel, cr, cr, 1)),
            conv2: conv(&ConvSpec::square(l.boundary_kernel, cr, cr, 1)),
        })
        .collect();
    let up = (1..d.levels.len())
        .map(|_| deconv(&[cr, cr, d.up_kernel, d.up_kernel]))
        .collect();
    let final_up = d
        .final_upsample_stride(spec)
        .map(|_| deconv(&[cr, cr, d.final_up_kernel, d.final_up_kernel]));
    let aux_heads = d.aux_heads.iter().map(|_| conv(&ConvSpec::square(1, cr, 2, 1))).collect();
    let final_head = conv(&ConvSpec::square(1, cr, 2, 1));
    DecoderParams {
        boundary,
        up,
        final_up,
        aux_heads,
        final_head,
    }
}
