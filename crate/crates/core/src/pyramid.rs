//! The detector: a valid-padding trunk that emits pyramid levels, a
//! separable global convolution per level, crop-and-pool feature extraction
//! and a top-down sum feeding a 1×1 softmax classifier.
//!
//! Two evaluation modes share the same weights:
//!
//! * **train** – input is one `L_p`×`L_p` patch. Each pooled level is
//!   centre-cropped by its fraction and globally averaged to one cell.
//! * **dense** – input is an ROI of `L_p + (L_m - 1)·S_p/α` pixels. Each
//!   pooled level is average-pooled with the same window, at stride
//!   `P_i/α`, yielding an `L_m`×`L_m` probability tile whose cells equal the
//!   train-mode outputs of the corresponding patches.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderSpec;
use crate::error::{config, geometry, Error, Result};
use crate::params::{ConvParams, DetectorParams, GlobalConvParams, NetworkParams};
use crate::tensor::{
    avg_pool, avg_pool_backward, avg_pool_exact, center_crop_layout, conv2d_backward, conv2d_valid,
    crop_center, crop_window_backward, relu, relu_backward, softmax_channels, ConvSpec, Fraction,
    Real, Tensor,
};

/// A trunk convolution, optionally followed by ReLU, optionally tagged as the
/// output of pyramid level `level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrunkLayer {
    pub conv: ConvSpec,
    #[serde(default = "default_true")]
    pub relu: bool,
    #[serde(default)]
    pub level: Option<u8>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfeLevel {
    pub level: u8,
    /// Large-kernel size of the separable global convolution.
    pub kernel: usize,
    /// Crop fraction; levels without one feed only the decoder.
    #[serde(default)]
    pub crop: Option<Fraction>,
    /// Pooling stride in feature cells during training.
    #[serde(default)]
    pub train_pool_stride: Option<usize>,
}

impl PfeLevel {
    pub fn is_pooled(&self) -> bool {
        self.crop.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfeConfig {
    pub reduced_channels: usize,
    /// Ascending by level.
    pub levels: Vec<PfeLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    /// Training patch extent `L_p` in pixels.
    pub patch_extent: usize,
    /// Native output stride `S_p` in pixels.
    pub output_stride: usize,
    pub trunk: Vec<TrunkLayer>,
    pub pfe: PfeConfig,
    #[serde(default)]
    pub decoder: Option<DecoderSpec>,
}

/// Position of a feature grid in input pixels. Cell `j` is centred at
/// `(origin2 + 2 * stride * j) / 2`, where input pixel `p` has centre `p + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub origin2: i64,
    pub stride: usize,
}

impl Lattice {
    pub const INPUT: Lattice = Lattice { origin2: 1, stride: 1 };

    /// Lattice after a valid window of size `k` and stride `s`.
    pub fn window(self, k: usize, s: usize) -> Self {
        Lattice {
            origin2: self.origin2 + (self.stride * (k - 1)) as i64,
            stride: self.stride * s,
        }
    }

    /// Lattice after skipping `cells` leading cells.
    pub fn shift(self, cells: usize) -> Self {
        Lattice {
            origin2: self.origin2 + (2 * self.stride * cells) as i64,
            stride: self.stride,
        }
    }

    /// Lattice after a transposed convolution of size `k` and stride `s`.
    pub fn transposed(self, k: usize, s: usize) -> Option<Self> {
        (self.stride % s == 0).then(|| {
            let stride = self.stride / s;
            Lattice {
                origin2: self.origin2 - (stride * (k - 1)) as i64,
                stride,
            }
        })
    }

    /// Centre of cell `j` in input pixel coordinates.
    pub fn center(&self, j: usize) -> f64 {
        (self.origin2 as f64 + (2 * self.stride * j) as f64) / 2.0
    }
}

/// Extent, stride and position of one pyramid level for a given input extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelShape {
    pub level: u8,
    pub extent: usize,
    pub channels: usize,
    pub lattice: Lattice,
    /// Input pixels spanned by the whole feature map.
    pub span: usize,
}

/// Pooling window of a pooled level in dense mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DensePool {
    pub level: u8,
    /// Window extent in feature cells (the training crop extent).
    pub kernel: usize,
    /// Leading offset of the first window (the training crop offset).
    pub offset: usize,
    pub stride: usize,
}

/// Test hook: shifts one level's dense pooling windows by `shift` cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PoolFault {
    pub level: u8,
    pub shift: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Dense { alpha: usize },
}

/// Multiply-accumulate counter (convolution taps plus pooling additions).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cost {
    pub macs: u64,
}

impl Cost {
    fn conv<T: Real>(&mut self, x: &Tensor<T>, w: &Tensor<T>, stride: usize) {
        let (n, cin, h, wd) = x.dims4();
        let (cout, _, kh, kw) = w.dims4();
        let spec = ConvSpec { kernel_h: kh, kernel_w: kw, in_channels: cin, out_channels: cout, stride };
        self.macs += n as u64 * spec.macs(h, wd);
    }

    fn pool(&mut self, out: &[usize], kernel: usize) {
        self.macs += out.iter().product::<usize>() as u64 * (kernel * kernel) as u64;
    }
}

impl NetworkSpec {
    /// Desk-scale reference network: `L_p = 52`, `S_p = 64`, pyramid levels
    /// 2..5 at strides {2, 4, 8, 16}, training pool strides {16, 8, 4}.
    pub fn desk() -> Self {
        let conv = |k, i, o, s, level| TrunkLayer { conv: ConvSpec::square(k, i, o, s), relu: true, level };
        NetworkSpec {
            input_channels: 3,
            patch_extent: 52,
            output_stride: 64,
            trunk: alloc::vec![
                conv(2, 3, 12, 2, None),
                conv(3, 12, 12, 1, Some(2)),
                conv(2, 12, 16, 2, Some(3)),
                conv(2, 16, 16, 2, Some(4)),
                conv(3, 16, 24, 1, None),
                conv(2, 24, 24, 2, Some(5)),
            ],
            pfe: PfeConfig {
                reduced_channels: 16,
                levels: alloc::vec![
                    PfeLevel { level: 2, kernel: 3, crop: None, train_pool_stride: None },
                    PfeLevel { level: 3, kernel: 3, crop: Some(Fraction::QUARTER), train_pool_stride: Some(16) },
                    PfeLevel { level: 4, kernel: 3, crop: Some(Fraction::HALF), train_pool_stride: Some(8) },
                    PfeLevel { level: 5, kernel: 2, crop: Some(Fraction::ONE), train_pool_stride: Some(4) },
                ],
            },
            decoder: Some(DecoderSpec::desk()),
        }
    }

    /// Full-scale geometry: `L_p = 692`, `S_p = 512`, 15-wide global
    /// convolutions, training pool strides {128, 64, 32}. Channel widths are
    /// set by `width`; no decoder.
    pub fn full_scale(width: usize) -> Self {
        let conv = |k, i, o, s, level| TrunkLayer { conv: ConvSpec::square(k, i, o, s), relu: true, level };
        let c = width;
        NetworkSpec {
            input_channels: 3,
            patch_extent: 692,
            output_stride: 512,
            trunk: alloc::vec![
                conv(2, 3, c, 2, None),
                conv(3, c, c, 1, Some(2)),
                conv(2, c, c, 2, None),
                conv(3, c, c, 1, Some(3)),
                conv(2, c, c, 2, None),
                conv(2, c, c, 1, Some(4)),
                conv(2, c, c, 2, Some(5)),
            ],
            pfe: PfeConfig {
                reduced_channels: c,
                levels: alloc::vec![
                    PfeLevel { level: 3, kernel: 15, crop: Some(Fraction::QUARTER), train_pool_stride: Some(128) },
                    PfeLevel { level: 4, kernel: 15, crop: Some(Fraction::HALF), train_pool_stride: Some(64) },
                    PfeLevel { level: 5, kernel: 15, crop: Some(Fraction::ONE), train_pool_stride: Some(32) },
                ],
            },
            decoder: None,
        }
    }

    pub fn level_channels(&self, level: u8) -> Option<usize> {
        self.trunk
            .iter()
            .find(|l| l.level == Some(level))
            .map(|l| l.conv.out_channels)
    }

    pub fn pooled_levels(&self) -> impl Iterator<Item = &PfeLevel> {
        self.pfe.levels.iter().filter(|l| l.is_pooled())
    }

    /// Propagates an `extent`×`extent` input through the trunk.
    pub fn level_shapes(&self, extent: usize) -> Result<Vec<LevelShape>> {
        let mut n = extent;
        let mut lattice = Lattice::INPUT;
        let mut rf = 1usize;
        let mut out = Vec::new();
        for (i, layer) in self.trunk.iter().enumerate() {
            let c = &layer.conv;
            n = crate::tensor::valid_extent(n, c.kernel_h, c.stride).ok_or_else(|| {
                geometry("trunk", format!("layer {i}: extent too small for kernel {}", c.kernel_h))
            })?;
            rf += (c.kernel_h - 1) * lattice.stride;
            lattice = lattice.window(c.kernel_h, c.stride);
            if let Some(level) = layer.level {
                out.push(LevelShape {
                    level,
                    extent: n,
                    channels: c.out_channels,
                    lattice,
                    span: (n - 1) * lattice.stride + rf,
                });
            }
        }
        Ok(out)
    }

    /// Extent and lattice of `X_i'` (after the global convolution).
    pub fn refined_shapes(&self, extent: usize) -> Result<BTreeMap<u8, (usize, Lattice)>> {
        let shapes = self.level_shapes(extent)?;
        let mut out = BTreeMap::new();
        for p in &self.pfe.levels {
            let s = shapes
                .iter()
                .find(|s| s.level == p.level)
                .ok_or_else(|| config(format!("level {} is not produced by the trunk", p.level)))?;
            let g = crate::tensor::valid_extent(s.extent, p.kernel, 1).ok_or_else(|| {
                geometry(
                    "global_conv",
                    format!("level {} extent {} smaller than kernel {}", p.level, s.extent, p.kernel),
                )
            })?;
            out.insert(p.level, (g, s.lattice.window(p.kernel, 1)));
        }
        Ok(out)
    }

    /// Checks channel chaining, level ordering, the stride alignment
    /// `s_i · P_i = S_p`, and that a training patch propagates cleanly with
    /// every level spanning exactly `L_p` pixels.
    pub fn validate(&self) -> Result<()> {
        if self.patch_extent == 0 || self.output_stride == 0 || self.input_channels == 0 {
            return Err(config("patch extent, output stride and input channels must be >= 1"));
        }
        if self.pfe.reduced_channels == 0 {
            return Err(config("reduced channel count must be >= 1"));
        }
        let mut cin = self.input_channels;
        let mut last_level = 0u8;
        for (i, l) in self.trunk.iter().enumerate() {
            l.conv.validate()?;
            if l.conv.kernel_h != l.conv.kernel_w {
                return Err(config(format!("trunk layer {i}: kernels must be square")));
            }
            if l.conv.in_channels != cin {
                return Err(config(format!(
                    "trunk layer {i}: expects {} input channels, previous layer gives {cin}",
                    l.conv.in_channels
                )));
            }
            cin = l.conv.out_channels;
            if let Some(level) = l.level {
                if level <= last_level {
                    return Err(config(format!("trunk layer {i}: levels must be strictly increasing")));
                }
                last_level = level;
            }
        }
        let shapes = self.level_shapes(self.patch_extent)?;
        for w in shapes.windows(2) {
            if w[1].lattice.stride <= w[0].lattice.stride {
                return Err(config("level strides must increase with level"));
            }
        }
        for s in &shapes {
            if s.span != self.patch_extent {
                return Err(config(format!(
                    "level {} spans {} input pixels, expected the full patch {}",
                    s.level, s.span, self.patch_extent
                )));
            }
        }
        if self.pfe.levels.windows(2).any(|w| w[1].level <= w[0].level) {
            return Err(config("PFE levels must be strictly increasing"));
        }
        if self.pooled_levels().next().is_none() {
            return Err(config("at least one PFE level must be pooled"));
        }
        let refined = self.refined_shapes(self.patch_extent)?;
        for p in &self.pfe.levels {
            if p.kernel == 0 {
                return Err(config("global conv kernel must be >= 1"));
            }
            match (p.crop, p.train_pool_stride) {
                (None, None) => {}
                (Some(crop), Some(stride)) => {
                    if crop.num == 0 || crop.den == 0 || crop.num > crop.den {
                        return Err(config(format!("level {}: crop fraction must be in (0, 1]", p.level)));
                    }
                    let shape = shapes.iter().find(|s| s.level == p.level).expect("checked above");
                    if shape.lattice.stride * stride != self.output_stride {
                        return Err(config(format!(
                            "level {}: stride {} x pool stride {stride} != output stride {}",
                            p.level, shape.lattice.stride, self.output_stride
                        )));
                    }
                    let (g, _) = refined[&p.level];
                    center_crop_layout(g, crop).ok_or_else(|| {
                        geometry("crop_center", format!("level {}: degenerate crop of extent {g}", p.level))
                    })?;
                }
                _ => {
                    return Err(config(format!(
                        "level {}: crop and training pool stride must be given together",
                        p.level
                    )))
                }
            }
        }
        if let Some(d) = &self.decoder {
            d.validate(self)?;
        }
        Ok(())
    }

    /// Dense pooling strides `P_i / α`; α must divide `S_p` and every `P_i`.
    pub fn dense_strides(&self, alpha: usize) -> Result<Vec<(u8, usize)>> {
        if alpha == 0 || self.output_stride % alpha != 0 {
            return Err(config(format!(
                "dense coefficient {alpha} does not divide output stride {}",
                self.output_stride
            )));
        }
        self.pooled_levels()
            .map(|p| {
                let s = p.train_pool_stride.expect("pooled level has a stride");
                if s % alpha != 0 {
                    Err(config(format!(
                        "dense coefficient {alpha} does not divide pool stride {s} at level {}",
                        p.level
                    )))
                } else {
                    Ok((p.level, s / alpha))
                }
            })
            .collect()
    }

    /// Dense pooling windows for coefficient `alpha`, derived from the
    /// training-patch crop layout.
    pub fn dense_layout(&self, alpha: usize) -> Result<Vec<DensePool>> {
        let strides = self.dense_strides(alpha)?;
        let refined = self.refined_shapes(self.patch_extent)?;
        self.pooled_levels()
            .zip(strides)
            .map(|(p, (level, stride))| {
                let (g, _) = refined[&level];
                let (kernel, offset) = center_crop_layout(g, p.crop.expect("pooled")).ok_or_else(|| {
                    geometry("dense_layout", format!("level {level}: degenerate crop"))
                })?;
                Ok(DensePool { level, kernel, offset, stride })
            })
            .collect()
    }

    /// Tile extent produced by a dense ROI of `extent` pixels.
    pub fn tile_extent(&self, extent: usize, alpha: usize) -> Result<usize> {
        self.dense_strides(alpha)?;
        let pitch = self.output_stride / alpha;
        if extent < self.patch_extent || (extent - self.patch_extent) % pitch != 0 {
            let cells = if extent < self.patch_extent {
                0
            } else {
                ((extent - self.patch_extent) as f64 / pitch as f64 + 0.5) as usize
            };
            return Err(geometry(
                "detector_forward",
                format!(
                    "ROI extent {extent} is not L_p + k*{pitch}; nearest valid extent is {}",
                    self.patch_extent + cells * pitch
                ),
            ));
        }
        Ok((extent - self.patch_extent) / pitch + 1)
    }

    /// Multiply-accumulates of one dense forward pass over an
    /// `extent`×`extent` ROI, from closed-form layer shapes.
    pub fn analytic_macs(&self, extent: usize, alpha: usize) -> Result<u64> {
        let lm = self.tile_extent(extent, alpha)?;
        let mut macs = 0u64;
        let mut n = extent;
        let top = self.pooled_levels().map(|l| l.level).max().unwrap_or(0);
        for l in &self.trunk {
            macs += l.conv.macs(n, n);
            n = crate::tensor::valid_extent(n, l.conv.kernel_h, l.conv.stride).expect("validated");
            if l.level.is_some_and(|lv| lv >= top) {
                break;
            }
        }
        let shapes = self.level_shapes(extent)?;
        let cr = self.pfe.reduced_channels;
        for p in self.pooled_levels() {
            let s = shapes.iter().find(|s| s.level == p.level).expect("validated");
            let k = p.kernel;
            let e = s.extent;
            let mid = e - k + 1;
            // 1×k then k×1, and k×1 then 1×k
            macs += (2 * (e * mid * cr * s.channels * k) + 2 * (mid * mid * cr * cr * k)) as u64;
        }
        for d in self.dense_layout(alpha)? {
            macs += (lm * lm * cr * d.kernel * d.kernel) as u64;
        }
        macs += (lm * lm * cr * 2) as u64;
        Ok(macs)
    }
}

fn level_param<'a, T>(spec: &'a NetworkSpec, params: &'a DetectorParams<T>, level: u8) -> Result<(&'a GlobalConvParams<T>, &'a PfeLevel)>
where
    T: Real,
{
    let idx = spec
        .pfe
        .levels
        .iter()
        .position(|l| l.level == level)
        .ok_or_else(|| config(format!("no PFE configuration for level {level}")))?;
    Ok((&params.global[idx], &spec.pfe.levels[idx]))
}

/// Runs the trunk, returning each tagged level's activation.
pub fn trunk_forward<T: Real>(
    spec: &NetworkSpec,
    params: &DetectorParams<T>,
    x: &Tensor<T>,
    cost: &mut Cost,
) -> Result<BTreeMap<u8, Tensor<T>>> {
    let mut levels = BTreeMap::new();
    let mut h = x.clone();
    let top = spec.pooled_levels().map(|l| l.level).max().unwrap_or(0);
    for (layer, p) in spec.trunk.iter().zip(&params.trunk) {
        cost.conv(&h, &p.weight, layer.conv.stride);
        let pre = conv2d_valid(&h, &p.weight, &p.bias, layer.conv.stride)?;
        h = if layer.relu { relu(&pre) } else { pre };
        if let Some(level) = layer.level {
            levels.insert(level, h.clone());
            if level >= top {
                break;
            }
        }
    }
    Ok(levels)
}

/// Separable large-kernel convolution: `(1×k → k×1) + (k×1 → 1×k)`.
pub fn global_conv<T: Real>(x: &Tensor<T>, params: &GlobalConvParams<T>, cost: &mut Cost) -> Result<Tensor<T>> {
    let branch = |p: &[ConvParams<T>; 2], cost: &mut Cost| -> Result<Tensor<T>> {
        cost.conv(x, &p[0].weight, 1);
        let mid = conv2d_valid(x, &p[0].weight, &p[0].bias, 1)?;
        cost.conv(&mid, &p[1].weight, 1);
        conv2d_valid(&mid, &p[1].weight, &p[1].bias, 1)
    };
    let mut a = branch(&params.row_then_col, cost).map_err(|e| match e {
        Error::Dimension { axis, found, expected, .. } if axis == "height" || axis == "width" => geometry(
            "global_conv",
            format!("{axis} {found} is smaller than kernel {expected}"),
        ),
        e => e,
    })?;
    let b = branch(&params.col_then_row, cost)?;
    a.add_assign(&b);
    Ok(a)
}

/// Gradients of [`global_conv`] into `grads`; returns the input gradient.
pub fn global_conv_backward<T: Real>(
    x: &Tensor<T>,
    params: &GlobalConvParams<T>,
    grad_out: &Tensor<T>,
    grads: &mut GlobalConvParams<T>,
) -> Result<Tensor<T>> {
    let mut gx = Tensor::zeros(x.shape());
    for (p, g) in [
        (&params.row_then_col, &mut grads.row_then_col),
        (&params.col_then_row, &mut grads.col_then_row),
    ] {
        let mid = conv2d_valid(x, &p[0].weight, &p[0].bias, 1)?;
        let g2 = conv2d_backward(&mid, &p[1].weight, grad_out, 1)?;
        g[1].weight.add_assign(&g2.w);
        g[1].bias.add_assign(&g2.b);
        let g1 = conv2d_backward(x, &p[0].weight, &g2.x, 1)?;
        g[0].weight.add_assign(&g1.w);
        g[0].bias.add_assign(&g1.b);
        gx.add_assign(&g1.x);
    }
    Ok(gx)
}

/// Pooled contribution of one level. In train mode the input must be the
/// patch-sized refined map and the result is 1×1; in dense mode the result
/// has `tile`×`tile` cells.
pub fn pfe_pool<T: Real>(
    refined: &Tensor<T>,
    level: &PfeLevel,
    mode: Mode,
    dense: Option<&DensePool>,
    tile: (usize, usize),
    fault: Option<PoolFault>,
    cost: &mut Cost,
) -> Result<Tensor<T>> {
    let crop = level
        .crop
        .ok_or_else(|| config(format!("level {} is not pooled", level.level)))?;
    match mode {
        Mode::Train => {
            let c = crop_center(refined, crop)?;
            let k = c.dims4().2;
            if c.dims4().3 != k {
                return Err(geometry("pfe", "training crop must be square"));
            }
            let y = avg_pool(&c, k, 1, 0)?;
            cost.pool(y.shape(), k);
            Ok(y)
        }
        Mode::Dense { .. } => {
            let d = dense.ok_or_else(|| config("dense layout missing"))?;
            let shift = fault.filter(|f| f.level == level.level).map_or(0, |f| f.shift);
            let off = d.offset + shift;
            let y = avg_pool_exact(refined, d.kernel, d.stride, (off, off), tile)?;
            cost.pool(y.shape(), d.kernel);
            Ok(y)
        }
    }
}

/// Everything computed by a detector forward pass.
#[derive(Debug, Clone)]
pub struct PyramidFeatures<T> {
    /// Trunk activations `X_i`.
    pub raw: BTreeMap<u8, Tensor<T>>,
    /// Refined maps `X_i'`.
    pub refined: BTreeMap<u8, Tensor<T>>,
    /// Top-down accumulators `M_i`, keyed by level.
    pub accum: BTreeMap<u8, Tensor<T>>,
}

/// Detector forward pass with explicit options.
#[derive(Debug, Clone, Copy)]
pub struct DetectorRun {
    pub mode: Mode,
    pub fault: Option<PoolFault>,
    /// Also refine levels that feed only the decoder.
    pub refine_all: bool,
}

impl DetectorRun {
    pub fn train() -> Self {
        Self { mode: Mode::Train, fault: None, refine_all: false }
    }

    pub fn dense(alpha: usize) -> Self {
        Self { mode: Mode::Dense { alpha }, fault: None, refine_all: false }
    }
}

/// Returns (softmax probabilities [n, 2, L_m, L_m], logits, features).
pub fn detector_forward_full<T: Real>(
    input: &Tensor<T>,
    spec: &NetworkSpec,
    params: &DetectorParams<T>,
    run: DetectorRun,
    cost: &mut Cost,
) -> Result<(Tensor<T>, Tensor<T>, PyramidFeatures<T>)> {
    let (_, c, h, w) = input.dims4();
    if c != spec.input_channels {
        return Err(Error::Dimension {
            op: "detector_forward",
            axis: "channels",
            expected: spec.input_channels,
            found: c,
        });
    }
    let (tile, layout) = match run.mode {
        Mode::Train => {
            if h != spec.patch_extent || w != spec.patch_extent {
                return Err(geometry(
                    "detector_forward",
                    format!(
                        "training input {h}x{w} must be {0}x{0}; nearest valid extent is {0}",
                        spec.patch_extent
                    ),
                ));
            }
            ((1, 1), Vec::new())
        }
        Mode::Dense { alpha } => (
            (spec.tile_extent(h, alpha)?, spec.tile_extent(w, alpha)?),
            spec.dense_layout(alpha)?,
        ),
    };
    let raw = trunk_forward(spec, params, input, cost)?;
    let mut refined = BTreeMap::new();
    let mut contributions = BTreeMap::new();
    for (i, lv) in spec.pfe.levels.iter().enumerate() {
        if !lv.is_pooled() && !run.refine_all {
            continue;
        }
        let x = raw
            .get(&lv.level)
            .ok_or_else(|| config(format!("trunk does not produce level {}", lv.level)))?;
        let xr = global_conv(x, &params.global[i], cost)?;
        if lv.is_pooled() {
            let d = layout.iter().find(|d| d.level == lv.level);
            let m = pfe_pool(&xr, lv, run.mode, d, tile, run.fault, cost)?;
            contributions.insert(lv.level, m);
        }
        refined.insert(lv.level, xr);
    }
    let mut accum = BTreeMap::new();
    let mut running: Option<Tensor<T>> = None;
    for (&level, m) in contributions.iter().rev() {
        let next = match running {
            None => m.clone(),
            Some(prev) => crate::tensor::elementwise_add(m, &prev)?,
        };
        accum.insert(level, next.clone());
        running = Some(next);
    }
    let m = running.ok_or_else(|| config("no pooled levels"))?;
    cost.conv(&m, &params.head.weight, 1);
    let logits = conv2d_valid(&m, &params.head.weight, &params.head.bias, 1)?;
    let probs = softmax_channels(&logits)?;
    Ok((probs, logits, PyramidFeatures { raw, refined, accum }))
}

/// Probability tile `[n, 2, L_m, L_m]` (1×1 in train mode).
pub fn detector_forward<T: Real>(
    input: &Tensor<T>,
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    run: DetectorRun,
    cost: &mut Cost,
) -> Result<Tensor<T>> {
    detector_forward_full(input, spec, &params.detector, run, cost).map(|r| r.0)
}

/// Backward pass of the train-mode detector.
///
/// `grad_logits` is the loss gradient at the head logits (`[n, 2, 1, 1]`);
/// `grad_refined` holds extra gradients arriving at `X_i'` (from the
/// decoder). Parameter gradients are accumulated into `grads`.
pub fn detector_backward<T: Real>(
    input: &Tensor<T>,
    spec: &NetworkSpec,
    params: &DetectorParams<T>,
    feats: &PyramidFeatures<T>,
    grad_logits: &Tensor<T>,
    mut grad_refined: BTreeMap<u8, Tensor<T>>,
    grads: &mut DetectorParams<T>,
) -> Result<()> {
    let m = feats
        .accum
        .values()
        .next()
        .ok_or_else(|| config("missing accumulator"))?;
    let gh = conv2d_backward(m, &params.head.weight, grad_logits, 1)?;
    grads.head.weight.add_assign(&gh.w);
    grads.head.bias.add_assign(&gh.b);
    // Every pooled contribution is summed into M, so each receives dL/dM.
    for lv in spec.pooled_levels() {
        let xr = feats
            .refined
            .get(&lv.level)
            .ok_or_else(|| config(format!("missing refined level {}", lv.level)))?;
        let (_, _, g, gw) = xr.dims4();
        let (k, off) = center_crop_layout(g, lv.crop.expect("pooled")).expect("validated");
        let (kw, offw) = center_crop_layout(gw, lv.crop.expect("pooled")).expect("validated");
        debug_assert_eq!((k, off), (kw, offw));
        let crop_shape = [xr.dims4().0, xr.dims4().1, k, k];
        let g_crop = avg_pool_backward(&crop_shape, &gh.x, k, 1, (0, 0));
        let g_full = crop_window_backward(xr.shape(), &g_crop, off, off);
        match grad_refined.get_mut(&lv.level) {
            Some(acc) => acc.add_assign(&g_full),
            None => {
                grad_refined.insert(lv.level, g_full);
            }
        }
    }
    let mut grad_raw: BTreeMap<u8, Tensor<T>> = BTreeMap::new();
    for (level, g) in grad_refined {
        let (gp, _) = level_param(spec, params, level)?;
        let idx = spec.pfe.levels.iter().position(|l| l.level == level).expect("exists");
        let x = feats
            .raw
            .get(&level)
            .ok_or_else(|| config(format!("missing trunk level {level}")))?;
        let gx = global_conv_backward(x, gp, &g, &mut grads.global[idx])?;
        grad_raw.insert(level, gx);
    }
    trunk_backward(input, spec, params, grad_raw, grads)
}

fn trunk_backward<T: Real>(
    input: &Tensor<T>,
    spec: &NetworkSpec,
    params: &DetectorParams<T>,
    mut grad_raw: BTreeMap<u8, Tensor<T>>,
    grads: &mut DetectorParams<T>,
) -> Result<()> {
    let deepest = match grad_raw.keys().max() {
        Some(&l) => l,
        None => return Ok(()),
    };
    let depth = spec
        .trunk
        .iter()
        .position(|l| l.level == Some(deepest))
        .ok_or_else(|| config(format!("trunk does not produce level {deepest}")))?;
    // Recompute layer inputs and pre-activations.
    let mut inputs = Vec::with_capacity(depth + 1);
    let mut pres = Vec::with_capacity(depth + 1);
    let mut h = input.clone();
    for (layer, p) in spec.trunk.iter().zip(&params.trunk).take(depth + 1) {
        let pre = conv2d_valid(&h, &p.weight, &p.bias, layer.conv.stride)?;
        let next = if layer.relu { relu(&pre) } else { pre.clone() };
        inputs.push(h);
        pres.push(pre);
        h = next;
    }
    let mut g: Option<Tensor<T>> = None;
    for i in (0..=depth).rev() {
        let layer = &spec.trunk[i];
        if let Some(level) = layer.level {
            if let Some(extra) = grad_raw.remove(&level) {
                g = Some(match g {
                    None => extra,
                    Some(mut acc) => {
                        acc.add_assign(&extra);
                        acc
                    }
                });
            }
        }
        let Some(gy) = g.take() else { continue };
        let gpre = if layer.relu { relu_backward(&pres[i], &gy) } else { gy };
        let gc = conv2d_backward(&inputs[i], &params.trunk[i].weight, &gpre, layer.conv.stride)?;
        grads.trunk[i].weight.add_assign(&gc.w);
        grads.trunk[i].bias.add_assign(&gc.b);
        g = Some(gc.x);
    }
    Ok(())
}
