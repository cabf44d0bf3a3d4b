//! Auxiliary segmentation decoder used only during training.
//!
//! Starting from the coarsest refined map, each level applies a
//! boundary-refinement block, upsamples with a transposed convolution, and is
//! summed with the next finer refined map after both are cropped to their
//! common, lattice-aligned region. Deep-supervision heads read selected
//! levels; the final head reads the finest level upsampled to input
//! resolution.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config, geometry, Result};
use crate::params::{BoundaryParams, ConvParams, DecoderParams};
use crate::pyramid::{Lattice, NetworkSpec};
use crate::tensor::{
    conv2d_backward, conv2d_valid, crop_window, crop_window_backward, elementwise_add, relu,
    relu_backward, transposed_conv2d, transposed_conv2d_backward, Real, Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderLevel {
    pub level: u8,
    /// Kernel of both convolutions in the boundary block.
    pub boundary_kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxHead {
    pub level: u8,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderSpec {
    /// Coarsest level first.
    pub levels: Vec<DecoderLevel>,
    pub up_kernel: usize,
    pub final_up_kernel: usize,
    pub aux_heads: Vec<AuxHead>,
    pub final_weight: f64,
}

impl DecoderSpec {
    pub fn desk() -> Self {
        DecoderSpec {
            levels: alloc::vec![
                DecoderLevel { level: 5, boundary_kernel: 1 },
                DecoderLevel { level: 4, boundary_kernel: 1 },
                DecoderLevel { level: 3, boundary_kernel: 3 },
                DecoderLevel { level: 2, boundary_kernel: 3 },
            ],
            up_kernel: 4,
            final_up_kernel: 4,
            aux_heads: alloc::vec![AuxHead { level: 4, weight: 0.3 }, AuxHead { level: 3, weight: 0.3 }],
            final_weight: 1.0,
        }
    }

    /// Stride of the transposed convolution bringing the finest level to
    /// input resolution, if it is not already there.
    pub fn final_upsample_stride(&self, spec: &NetworkSpec) -> Option<usize> {
        let finest = self.levels.last()?.level;
        let shapes = spec.level_shapes(spec.patch_extent).ok()?;
        let stride = shapes.iter().find(|s| s.level == finest)?.lattice.stride;
        (stride > 1).then_some(stride)
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.levels.is_empty() {
            return Err(config("decoder needs at least one level"));
        }
        if self.levels.windows(2).any(|w| w[1].level >= w[0].level) {
            return Err(config("decoder levels must run coarse to fine"));
        }
        for l in &self.levels {
            if !spec.pfe.levels.iter().any(|p| p.level == l.level) {
                return Err(config(format!("decoder level {} has no refined map", l.level)));
            }
            if l.boundary_kernel == 0 {
                return Err(config("boundary kernel must be >= 1"));
            }
        }
        for a in &self.aux_heads {
            if !self.levels.iter().any(|l| l.level == a.level) {
                return Err(config(format!("aux head at level {} is not a decoder level", a.level)));
            }
        }
        if self.up_kernel == 0 || self.final_up_kernel == 0 {
            return Err(config("transposed conv kernels must be >= 1"));
        }
        self.plan(spec, spec.patch_extent).map(|_| ())
    }

    /// Shape and alignment plan of the decoder for an input of `extent` pixels.
    pub fn plan(&self, spec: &NetworkSpec, extent: usize) -> Result<DecoderPlan> {
        let refined = spec.refined_shapes(extent)?;
        let get = |level: u8| {
            refined
                .get(&level)
                .copied()
                .ok_or_else(|| config(format!("level {level} is not refined")))
        };
        let mut steps = Vec::new();
        let first = &self.levels[0];
        let (mut n, mut lat) = get(first.level)?;
        let mut up = None;
        for (i, l) in self.levels.iter().enumerate() {
            let mut align = None;
            if i > 0 {
                let (nx, latx) = get(l.level)?;
                let ratio = lat.stride / latx.stride;
                if ratio == 0 || lat.stride % latx.stride != 0 {
                    return Err(config(format!("level {} stride does not divide its parent", l.level)));
                }
                let ulat = lat.transposed(self.up_kernel, ratio).expect("divides");
                let un = (n - 1) * ratio + self.up_kernel;
                let a = align_crops((un, ulat), (nx, latx)).ok_or_else(|| {
                    geometry(
                        "decoder",
                        format!(
                            "level {}: upsampled map ({un} cells at {:?}) and refined map ({nx} cells at {:?}) do not align",
                            l.level, ulat, latx
                        ),
                    )
                })?;
                up = Some(ratio);
                n = a.extent;
                lat = latx.shift(a.refined_offset);
                align = Some(a);
            }
            let k = l.boundary_kernel;
            if n < 2 * (k - 1) + 1 {
                return Err(geometry(
                    "boundary_aware",
                    format!("level {}: extent {n} too small for two {k}x{k} convolutions", l.level),
                ));
            }
            n -= 2 * (k - 1);
            lat = lat.shift(k - 1);
            steps.push(PlanStep {
                level: l.level,
                up_stride: if i > 0 { up } else { None },
                align,
                boundary_kernel: k,
                extent: n,
                lattice: lat,
            });
        }
        let final_up = self.final_upsample_stride(spec);
        let (fe, flat) = match final_up {
            Some(s) => ((n - 1) * s + self.final_up_kernel, lat.transposed(self.final_up_kernel, s).expect("divides")),
            None => (n, lat),
        };
        Ok(DecoderPlan {
            steps,
            final_up,
            final_extent: fe,
            final_lattice: flat,
        })
    }

    /// Extent of the final score map for a training patch (the mask extent).
    pub fn mask_extent(&self, spec: &NetworkSpec) -> Result<usize> {
        Ok(self.plan(spec, spec.patch_extent)?.final_extent)
    }
}

/// Crop offsets bringing an upsampled map and a refined map onto their
/// common lattice-aligned region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub upsampled_offset: usize,
    pub refined_offset: usize,
    pub extent: usize,
}

fn align_crops(a: (usize, Lattice), b: (usize, Lattice)) -> Option<Alignment> {
    let (na, la) = a;
    let (nb, lb) = b;
    if la.stride != lb.stride {
        return None;
    }
    let step = 2 * la.stride as i64;
    let diff = la.origin2 - lb.origin2;
    if diff % step != 0 {
        return None;
    }
    let start = la.origin2.max(lb.origin2);
    let end_a = la.origin2 + step * (na as i64 - 1);
    let end_b = lb.origin2 + step * (nb as i64 - 1);
    let end = end_a.min(end_b);
    if end < start {
        return None;
    }
    Some(Alignment {
        upsampled_offset: ((start - la.origin2) / step) as usize,
        refined_offset: ((start - lb.origin2) / step) as usize,
        extent: ((end - start) / step + 1) as usize,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub level: u8,
    pub up_stride: Option<usize>,
    pub align: Option<Alignment>,
    pub boundary_kernel: usize,
    /// Extent after the boundary block.
    pub extent: usize,
    pub lattice: Lattice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderPlan {
    pub steps: Vec<PlanStep>,
    pub final_up: Option<usize>,
    pub final_extent: usize,
    pub final_lattice: Lattice,
}

/// `x + conv2(relu(conv1(x)))` with valid convolutions; `x` is centre-cropped
/// by `k - 1` on each side so the residual sum aligns.
pub fn boundary_aware<T: Real>(x: &Tensor<T>, params: &BoundaryParams<T>) -> Result<Tensor<T>> {
    Ok(boundary_forward(x, params)?.out)
}

struct BoundaryTrace<T> {
    h1: Tensor<T>,
    r: Tensor<T>,
    out: Tensor<T>,
}

fn boundary_forward<T: Real>(x: &Tensor<T>, p: &BoundaryParams<T>) -> Result<BoundaryTrace<T>> {
    let (_, _, h, w) = x.dims4();
    let k = p.conv1.weight.dims4().2;
    if h < 2 * (k - 1) + 1 || w < 2 * (k - 1) + 1 {
        return Err(geometry(
            "boundary_aware",
            format!("extent {h}x{w} too small for two {k}x{k} convolutions"),
        ));
    }
    let h1 = conv2d_valid(x, &p.conv1.weight, &p.conv1.bias, 1)?;
    let r = relu(&h1);
    let h2 = conv2d_valid(&r, &p.conv2.weight, &p.conv2.bias, 1)?;
    let (_, _, oh, ow) = h2.dims4();
    let xc = crop_window(x, k - 1, k - 1, oh, ow)?;
    let out = elementwise_add(&xc, &h2)?;
    Ok(BoundaryTrace { h1, r, out })
}

fn boundary_backward<T: Real>(
    x: &Tensor<T>,
    p: &BoundaryParams<T>,
    trace: &BoundaryTrace<T>,
    g: &Tensor<T>,
    grads: &mut BoundaryParams<T>,
) -> Result<Tensor<T>> {
    let k = p.conv1.weight.dims4().2;
    let g2 = conv2d_backward(&trace.r, &p.conv2.weight, g, 1)?;
    grads.conv2.weight.add_assign(&g2.w);
    grads.conv2.bias.add_assign(&g2.b);
    let gh1 = relu_backward(&trace.h1, &g2.x);
    let g1 = conv2d_backward(x, &p.conv1.weight, &gh1, 1)?;
    grads.conv1.weight.add_assign(&g1.w);
    grads.conv1.bias.add_assign(&g1.b);
    let mut gx = g1.x;
    gx.add_assign(&crop_window_backward(x.shape(), g, k - 1, k - 1));
    Ok(gx)
}

/// A 2-channel logit map with its position and loss weight.
#[derive(Debug, Clone)]
pub struct ScoreMap<T> {
    /// Supervised decoder level, or `None` for the final head.
    pub level: Option<u8>,
    pub logits: Tensor<T>,
    pub lattice: Lattice,
    pub weight: f64,
}

struct LevelTrace<T> {
    upsampled: Option<Tensor<T>>,
    input: Tensor<T>,
    boundary: BoundaryTrace<T>,
}

/// Intermediate values of a decoder pass, consumed by [`decoder_backward`].
pub struct DecoderTrace<T> {
    plan: DecoderPlan,
    levels: Vec<LevelTrace<T>>,
    final_input: Option<Tensor<T>>,
}

fn head<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_valid(x, &p.weight, &p.bias, 1)
}

/// Runs the decoder on refined maps `X_i'` and returns every score map
/// (auxiliary heads first, final head last).
pub fn decoder_forward<T: Real>(
    refined: &BTreeMap<u8, Tensor<T>>,
    spec: &NetworkSpec,
    dspec: &DecoderSpec,
    params: &DecoderParams<T>,
) -> Result<(Vec<ScoreMap<T>>, DecoderTrace<T>)> {
    let extent_px = {
        // Recover the input extent from the coarsest refined map's size.
        let first = dspec.levels[0].level;
        let x = refined
            .get(&first)
            .ok_or_else(|| config(format!("missing refined level {first}")))?;
        infer_input_extent(spec, first, x.dims4().2)?
    };
    let plan = dspec.plan(spec, extent_px)?;
    let mut maps = Vec::new();
    let mut traces = Vec::new();
    let mut s: Option<Tensor<T>> = None;
    for (i, step) in plan.steps.iter().enumerate() {
        let x = refined
            .get(&step.level)
            .ok_or_else(|| config(format!("missing refined level {}", step.level)))?;
        let (upsampled, input) = match (&s, step.align) {
            (Some(prev), Some(a)) => {
                let u = transposed_conv2d(prev, &params.up[i - 1], step.up_stride.expect("set"))?;
                let uc = crop_window(&u, a.upsampled_offset, a.upsampled_offset, a.extent, a.extent)?;
                let xc = crop_window(x, a.refined_offset, a.refined_offset, a.extent, a.extent)?;
                (Some(u), elementwise_add(&uc, &xc)?)
            }
            _ => (None, x.clone()),
        };
        let bt = boundary_forward(&input, &params.boundary[i])?;
        if let Some(h) = dspec.aux_heads.iter().position(|a| a.level == step.level) {
            maps.push(ScoreMap {
                level: Some(step.level),
                logits: head(&bt.out, &params.aux_heads[h])?,
                lattice: step.lattice,
                weight: dspec.aux_heads[h].weight,
            });
        }
        s = Some(bt.out.clone());
        traces.push(LevelTrace { upsampled, input, boundary: bt });
    }
    let last = s.expect("at least one level");
    let (final_in, final_input) = match (plan.final_up, &params.final_up) {
        (Some(stride), Some(w)) => (transposed_conv2d(&last, w, stride)?, Some(last)),
        (None, _) => (last, None),
        (Some(_), None) => return Err(config("decoder parameters lack the final upsampling")),
    };
    maps.push(ScoreMap {
        level: None,
        logits: head(&final_in, &params.final_head)?,
        lattice: plan.final_lattice,
        weight: dspec.final_weight,
    });
    Ok((
        maps,
        DecoderTrace {
            plan,
            levels: traces,
            final_input,
        },
    ))
}

fn infer_input_extent(spec: &NetworkSpec, level: u8, refined_extent: usize) -> Result<usize> {
    let base = spec.refined_shapes(spec.patch_extent)?[&level].0;
    let stride = spec
        .level_shapes(spec.patch_extent)?
        .iter()
        .find(|s| s.level == level)
        .map(|s| s.lattice.stride)
        .ok_or_else(|| config(format!("level {level} not produced")))?;
    if refined_extent < base {
        return Err(geometry("decoder", format!("level {level} map smaller than a training patch")));
    }
    Ok(spec.patch_extent + (refined_extent - base) * stride)
}

/// Backpropagates score-map logit gradients (same order as returned by
/// [`decoder_forward`]). Returns gradients at each refined map.
pub fn decoder_backward<T: Real>(
    refined: &BTreeMap<u8, Tensor<T>>,
    dspec: &DecoderSpec,
    params: &DecoderParams<T>,
    trace: &DecoderTrace<T>,
    grad_logits: &[Tensor<T>],
    grads: &mut DecoderParams<T>,
) -> Result<BTreeMap<u8, Tensor<T>>> {
    let mut grad_refined: BTreeMap<u8, Tensor<T>> = BTreeMap::new();
    let gfinal = grad_logits.last().ok_or_else(|| config("missing final gradient"))?;
    let steps = &trace.plan.steps;
    let last_out = &trace.levels.last().expect("levels").boundary.out;
    let final_in = match (&trace.final_input, trace.plan.final_up) {
        (Some(x), Some(stride)) => {
            let fi = transposed_conv2d(x, params.final_up.as_ref().expect("checked"), stride)?;
            Some((x, fi, stride))
        }
        _ => None,
    };
    let head_in = final_in.as_ref().map_or(last_out, |f| &f.1);
    let gh = conv2d_backward(head_in, &params.final_head.weight, gfinal, 1)?;
    grads.final_head.weight.add_assign(&gh.w);
    grads.final_head.bias.add_assign(&gh.b);
    let mut g = match final_in {
        Some((x, _, stride)) => {
            let w = params.final_up.as_ref().expect("checked");
            let (gx, gw) = transposed_conv2d_backward(x, w, &gh.x, stride)?;
            grads.final_up.as_mut().expect("same layout").add_assign(&gw);
            gx
        }
        None => gh.x,
    };
    for i in (0..steps.len()).rev() {
        let step = &steps[i];
        let lt = &trace.levels[i];
        if let Some(h) = dspec.aux_heads.iter().position(|a| a.level == step.level) {
            let ga = &grad_logits[h];
            let gh = conv2d_backward(&lt.boundary.out, &params.aux_heads[h].weight, ga, 1)?;
            grads.aux_heads[h].weight.add_assign(&gh.w);
            grads.aux_heads[h].bias.add_assign(&gh.b);
            g.add_assign(&gh.x);
        }
        let gin = boundary_backward(&lt.input, &params.boundary[i], &lt.boundary, &g, &mut grads.boundary[i])?;
        let x = &refined[&step.level];
        match (step.align, &lt.upsampled) {
            (Some(a), Some(u)) => {
                let gx = crop_window_backward(x.shape(), &gin, a.refined_offset, a.refined_offset);
                accumulate(&mut grad_refined, step.level, gx);
                let gu = crop_window_backward(u.shape(), &gin, a.upsampled_offset, a.upsampled_offset);
                let prev = &trace.levels[i - 1].boundary.out;
                let (gp, gw) = transposed_conv2d_backward(prev, &params.up[i - 1], &gu, step.up_stride.expect("set"))?;
                grads.up[i - 1].add_assign(&gw);
                g = gp;
            }
            _ => {
                accumulate(&mut grad_refined, step.level, gin);
                break;
            }
        }
    }
    Ok(grad_refined)
}

fn accumulate<T: Real>(map: &mut BTreeMap<u8, Tensor<T>>, level: u8, g: Tensor<T>) {
    match map.get_mut(&level) {
        Some(acc) => acc.add_assign(&g),
        None => {
            map.insert(level, g);
        }
    }
}

/// Nearest-neighbour ground truth for a score map: each cell takes the mask
/// pixel under its centre; centres outside the mask clamp to the border.
///
/// `mask` is `mask_extent`² row-major, placed with its top-left pixel at
/// `mask_origin` input pixels.
pub fn sample_ground_truth(
    mask: &[u8],
    mask_extent: usize,
    mask_origin: usize,
    lattice: Lattice,
    out: (usize, usize),
) -> Vec<u8> {
    let pick = |j: usize| -> usize {
        // centre (origin2 + 2*stride*j)/2 lies in pixel floor(centre)
        let c2 = lattice.origin2 + (2 * lattice.stride * j) as i64;
        let px = c2.div_euclid(2) - mask_origin as i64;
        px.clamp(0, mask_extent as i64 - 1) as usize
    };
    let mut gt = Vec::with_capacity(out.0 * out.1);
    for y in 0..out.0 {
        let my = pick(y);
        for x in 0..out.1 {
            gt.push(mask[my * mask_extent + pick(x)]);
        }
    }
    gt
}
