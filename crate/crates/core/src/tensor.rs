//! Dense NCHW tensors and the handful of differentiable operators the
//! network is built from.
//!
//! Every operator is a pure function. Convolutions are cross-correlations
//! with valid padding only; pooling windows are placed explicitly and never
//! read outside the input.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{geometry, Error, Result};

/// Scalar type used by tensors: `f32` on production paths, `f64` for oracles.
pub trait Real:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(geometry("tensor", alloc::format!("invalid extents {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                axis: "data",
                expected: len,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(!shape.is_empty() && shape.iter().all(|&e| e > 0), "extents must be >= 1");
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (batch, channels, height, width) of a rank-4 tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected a rank-4 tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    #[inline]
    pub fn at4(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let (_, ch, h, w) = self.dims4();
        self.data[((n * ch + c) * h + y) * w + x]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                axis: "len",
                expected: self.data.len(),
                found: len,
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn check_rank4<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.shape.len() != 4 {
        return Err(Error::Dimension {
            op,
            axis: "rank",
            expected: 4,
            found: t.shape.len(),
        });
    }
    Ok(())
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape.len() != b.shape.len() {
        return Err(Error::Dimension {
            op,
            axis: "rank",
            expected: a.shape.len(),
            found: b.shape.len(),
        });
    }
    const AXES: [&str; 4] = ["batch", "channels", "height", "width"];
    for (i, (&ea, &eb)) in a.shape.iter().zip(&b.shape).enumerate() {
        if ea != eb {
            return Err(Error::Dimension {
                op,
                axis: AXES.get(i).copied().unwrap_or("axis"),
                expected: ea,
                found: eb,
            });
        }
    }
    Ok(())
}

/// Output extent of a valid window of size `k` with stride `s` over `n` cells.
pub fn valid_extent(n: usize, k: usize, s: usize) -> Option<usize> {
    (s >= 1 && k >= 1 && n >= k).then(|| (n - k) / s + 1)
}

/// Shape-only description of a valid-padding convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn square(k: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kernel_h: k,
            kernel_w: k,
            in_channels,
            out_channels,
            stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 {
            return Err(crate::error::config("conv kernel and stride must be >= 1"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(crate::error::config("conv channel counts must be >= 1"));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            valid_extent(h, self.kernel_h, self.stride)?,
            valid_extent(w, self.kernel_w, self.stride)?,
        ))
    }

    /// Multiply-accumulates for one batch item on an `h`×`w` input.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        match self.output_extent(h, w) {
            Some((oh, ow)) => {
                (oh * ow * self.out_channels * self.in_channels * self.kernel_h * self.kernel_w)
                    as u64
            }
            None => 0,
        }
    }
}

fn conv_shapes<T: Real>(
    op: &'static str,
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize, usize)> {
    check_rank4(op, x)?;
    check_rank4(op, w)?;
    if stride == 0 {
        return Err(crate::error::config("stride must be >= 1"));
    }
    let (n, cin, h, wd) = x.dims4();
    let (cout, wcin, kh, kw) = w.dims4();
    if wcin != cin {
        return Err(Error::Dimension {
            op,
            axis: "channels",
            expected: wcin,
            found: cin,
        });
    }
    let oh = valid_extent(h, kh, stride).ok_or(Error::Dimension {
        op,
        axis: "height",
        expected: kh,
        found: h,
    })?;
    let ow = valid_extent(wd, kw, stride).ok_or(Error::Dimension {
        op,
        axis: "width",
        expected: kw,
        found: wd,
    })?;
    Ok((n, cin, h, wd, cout, kh, kw, oh, ow))
}

/// Valid cross-correlation. `w` is (out, in, kh, kw); `b` has `out` entries.
pub fn conv2d_valid<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, wd, cout, kh, kw, oh, ow) = conv_shapes("conv2d_valid", x, w, stride)?;
    if b.len() != cout {
        return Err(Error::Dimension {
            op: "conv2d_valid",
            axis: "bias",
            expected: cout,
            found: b.len(),
        });
    }
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let xd = &x.data;
    let wdta = &w.data;
    for bn in 0..n {
        for oc in 0..cout {
            let obase = (bn * cout + oc) * oh * ow;
            let plane = &mut out.data[obase..obase + oh * ow];
            plane.fill(b.data[oc]);
            for ic in 0..cin {
                let ibase = (bn * cin + ic) * h * wd;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wdta[((oc * cin + ic) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let row = ibase + (oy * stride + ky) * wd + kx;
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            if stride == 1 {
                                let irow = &xd[row..row + ow];
                                for (o, &i) in orow.iter_mut().zip(irow) {
                                    *o += wv * i;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += wv * xd[row + ox * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_valid`] with respect to its three inputs.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
) -> Result<ConvGrads<T>> {
    let (n, cin, h, wd, cout, kh, kw, oh, ow) = conv_shapes("conv2d_backward", x, w, stride)?;
    let expected = Tensor::<T>::zeros(&[n, cout, oh, ow]);
    same_shape("conv2d_backward", &expected, grad_out)?;
    let gx = conv_input_grad(grad_out, w, stride, h, wd);
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[cout]);
    let g = &grad_out.data;
    for bn in 0..n {
        for oc in 0..cout {
            let gbase = (bn * cout + oc) * oh * ow;
            let gplane = &g[gbase..gbase + oh * ow];
            gb.data[oc] += gplane.iter().fold(T::zero(), |a, &v| a + v);
            for ic in 0..cin {
                let ibase = (bn * cin + ic) * h * wd;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let row = ibase + (oy * stride + ky) * wd + kx;
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            for (ox, &gv) in grow.iter().enumerate() {
                                acc += gv * x.data[row + ox * stride];
                            }
                        }
                        gw.data[((oc * cin + ic) * kh + ky) * kw + kx] += acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads { x: gx, w: gw, b: gb })
}

/// Scatter `g` (n, cout, oh, ow) back through the kernel onto an `h`×`wd` input grid.
fn conv_input_grad<T: Real>(
    g: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    h: usize,
    wd: usize,
) -> Tensor<T> {
    let (n, cout, oh, ow) = g.dims4();
    let (_, cin, kh, kw) = w.dims4();
    let mut gx = Tensor::zeros(&[n, cin, h, wd]);
    for bn in 0..n {
        for oc in 0..cout {
            let gbase = (bn * cout + oc) * oh * ow;
            for ic in 0..cin {
                let ibase = (bn * cin + ic) * h * wd;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w.data[((oc * cin + ic) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let row = ibase + (oy * stride + ky) * wd + kx;
                            let grow = &g.data[gbase + oy * ow..gbase + (oy + 1) * ow];
                            if stride == 1 {
                                let irow = &mut gx.data[row..row + ow];
                                for (i, &gv) in irow.iter_mut().zip(grow) {
                                    *i += wv * gv;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    gx.data[row + ox * stride] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Transposed convolution: the adjoint of [`conv2d_valid`] with respect to
/// its input. `w` is laid out (in, out, kh, kw), i.e. the weight of the
/// forward convolution mapping `out` channels to `in` channels.
/// Output extent is `(n - 1) * stride + k` per axis.
pub fn transposed_conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    check_rank4("transposed_conv2d", x)?;
    check_rank4("transposed_conv2d", w)?;
    if stride == 0 {
        return Err(crate::error::config("stride must be >= 1"));
    }
    let (_, cin, h, wd) = x.dims4();
    let (wcin, _, kh, kw) = w.dims4();
    if wcin != cin {
        return Err(Error::Dimension {
            op: "transposed_conv2d",
            axis: "channels",
            expected: wcin,
            found: cin,
        });
    }
    Ok(conv_input_grad(x, w, stride, (h - 1) * stride + kh, (wd - 1) * stride + kw))
}

/// Gradients of [`transposed_conv2d`]: (input, weight).
pub fn transposed_conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    // The transposed op is linear in x with adjoint conv2d_valid(., w).
    // Its weight gradient is the forward conv's weight gradient with the
    // roles of input and output swapped.
    let zero_b = Tensor::zeros(&[w.dims4().0]);
    let gx = conv2d_valid(grad_out, w, &zero_b, stride)?;
    if gx.shape() != x.shape() {
        return Err(Error::Dimension {
            op: "transposed_conv2d_backward",
            axis: "height",
            expected: x.dims4().2,
            found: gx.dims4().2,
        });
    }
    let grads = conv2d_backward(grad_out, w, x, stride)?;
    Ok((gx, grads.w))
}

/// Average pooling with windows at `offset + i * stride` along both axes.
/// Produces as many windows as fit; fails if not even one fits.
pub fn avg_pool<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize, offset: usize) -> Result<Tensor<T>> {
    let (oh, ow) = pool_extent(x, kernel, stride, offset)?;
    avg_pool_exact(x, kernel, stride, (offset, offset), (oh, ow))
}

fn pool_extent<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize, offset: usize) -> Result<(usize, usize)> {
    check_rank4("avg_pool", x)?;
    if kernel == 0 || stride == 0 {
        return Err(crate::error::config("pool kernel and stride must be >= 1"));
    }
    let (_, _, h, w) = x.dims4();
    let fit = |n: usize| {
        (offset + kernel <= n).then(|| (n - offset - kernel) / stride + 1)
    };
    match (fit(h), fit(w)) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(geometry(
            "avg_pool",
            alloc::format!(
                "window offset {offset} + kernel {kernel} exceeds extent {h}x{w}"
            ),
        )),
    }
}

/// Average pooling producing exactly `out` windows with per-axis offsets.
pub fn avg_pool_exact<T: Real>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    offset: (usize, usize),
    out: (usize, usize),
) -> Result<Tensor<T>> {
    check_rank4("avg_pool", x)?;
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = out;
    if kernel == 0 || stride == 0 || oh == 0 || ow == 0 {
        return Err(crate::error::config("pool kernel, stride and output extent must be >= 1"));
    }
    if offset.0 + (oh - 1) * stride + kernel > h || offset.1 + (ow - 1) * stride + kernel > w {
        return Err(geometry(
            "avg_pool",
            alloc::format!(
                "{oh}x{ow} windows of {kernel} at stride {stride}, offset {offset:?} exceed extent {h}x{w}"
            ),
        ));
    }
    let inv = T::one() / T::of((kernel * kernel) as f64);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    for p in 0..n * c {
        let ib = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let y0 = offset.0 + oy * stride;
                let x0 = offset.1 + ox * stride;
                let mut acc = T::zero();
                for yy in y0..y0 + kernel {
                    for &v in &x.data[ib + yy * w + x0..ib + yy * w + x0 + kernel] {
                        acc += v;
                    }
                }
                y.data[(p * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    Ok(y)
}

/// Spreads each output gradient uniformly over its pooling window.
pub fn avg_pool_backward<T: Real>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
    kernel: usize,
    stride: usize,
    offset: (usize, usize),
) -> Tensor<T> {
    let (n, c, oh, ow) = grad_out.dims4();
    let (h, w) = (input_shape[2], input_shape[3]);
    let inv = T::one() / T::of((kernel * kernel) as f64);
    let mut gx = Tensor::zeros(&[n, c, h, w]);
    for p in 0..n * c {
        let ib = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out.data[(p * oh + oy) * ow + ox] * inv;
                let y0 = offset.0 + oy * stride;
                let x0 = offset.1 + ox * stride;
                for yy in y0..y0 + kernel {
                    for v in &mut gx.data[ib + yy * w + x0..ib + yy * w + x0 + kernel] {
                        *v += g;
                    }
                }
            }
        }
    }
    gx
}

/// Softmax across the channel axis at every (batch, y, x), max-stabilised.
pub fn softmax_channels<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    check_rank4("softmax_channels", x)?;
    let (n, c, h, w) = x.dims4();
    if c < 2 {
        return Err(Error::Dimension {
            op: "softmax_channels",
            axis: "channels",
            expected: 2,
            found: c,
        });
    }
    let hw = h * w;
    let mut y = Tensor::zeros(x.shape());
    for bn in 0..n {
        for p in 0..hw {
            let idx = |ch: usize| (bn * c + ch) * hw + p;
            let m = (0..c).map(|ch| x.data[idx(ch)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for ch in 0..c {
                let e = (x.data[idx(ch)] - m).exp();
                y.data[idx(ch)] = e;
                z += e;
            }
            for ch in 0..c {
                y.data[idx(ch)] /= z;
            }
        }
    }
    Ok(y)
}

/// Given softmax output `y` and upstream gradient, returns the logit gradient.
pub fn softmax_channels_backward<T: Real>(y: &Tensor<T>, grad_y: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = y.dims4();
    let hw = h * w;
    let mut gx = Tensor::zeros(y.shape());
    for bn in 0..n {
        for p in 0..hw {
            let idx = |ch: usize| (bn * c + ch) * hw + p;
            let dot = (0..c).fold(T::zero(), |a, ch| a + y.data[idx(ch)] * grad_y.data[idx(ch)]);
            for ch in 0..c {
                gx.data[idx(ch)] = y.data[idx(ch)] * (grad_y.data[idx(ch)] - dot);
            }
        }
    }
    gx
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given its input `x`.
pub fn relu_backward<T: Real>(x: &Tensor<T>, grad_y: &Tensor<T>) -> Tensor<T> {
    let mut g = grad_y.clone();
    for (gv, &xv) in g.data.iter_mut().zip(&x.data) {
        if xv <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

pub fn elementwise_add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("elementwise_add", a, b)?;
    let mut out = a.clone();
    out.add_assign(b);
    Ok(out)
}

/// Rectangular spatial window `[top, top+h) × [left, left+w)`.
pub fn crop_window<T: Real>(x: &Tensor<T>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    check_rank4("crop", x)?;
    let (n, c, ih, iw) = x.dims4();
    if h == 0 || w == 0 || top + h > ih || left + w > iw {
        return Err(geometry(
            "crop",
            alloc::format!("window {h}x{w} at ({top},{left}) does not fit {ih}x{iw}"),
        ));
    }
    let mut y = Tensor::zeros(&[n, c, h, w]);
    for p in 0..n * c {
        for yy in 0..h {
            let src = p * ih * iw + (top + yy) * iw + left;
            let dst = (p * h + yy) * w;
            y.data[dst..dst + w].copy_from_slice(&x.data[src..src + w]);
        }
    }
    Ok(y)
}

/// Embeds a cropped gradient back into a zero tensor of `input_shape`.
pub fn crop_window_backward<T: Real>(
    input_shape: &[usize],
    grad: &Tensor<T>,
    top: usize,
    left: usize,
) -> Tensor<T> {
    let (n, c, h, w) = grad.dims4();
    let (ih, iw) = (input_shape[2], input_shape[3]);
    let mut gx = Tensor::zeros(&[n, c, ih, iw]);
    for p in 0..n * c {
        for yy in 0..h {
            let dst = p * ih * iw + (top + yy) * iw + left;
            let src = (p * h + yy) * w;
            gx.data[dst..dst + w].copy_from_slice(&grad.data[src..src + w]);
        }
    }
    gx
}

/// A crop fraction `num / den` of a spatial extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: usize,
    pub den: usize,
}

impl Fraction {
    pub const ONE: Fraction = Fraction { num: 1, den: 1 };
    pub const HALF: Fraction = Fraction { num: 1, den: 2 };
    pub const QUARTER: Fraction = Fraction { num: 1, den: 4 };

    /// `round(fraction * extent)`, halves rounded up.
    pub fn of(&self, extent: usize) -> usize {
        (2 * self.num * extent + self.den) / (2 * self.den)
    }
}

/// Extent and leading offset of a centred crop; odd slack goes to the bottom/right.
pub fn center_crop_layout(extent: usize, fraction: Fraction) -> Option<(usize, usize)> {
    let size = fraction.of(extent);
    (size >= 1 && size <= extent).then(|| (size, (extent - size) / 2))
}

/// Centred crop keeping `round(fraction * extent)` cells per spatial axis.
pub fn crop_center<T: Real>(x: &Tensor<T>, fraction: Fraction) -> Result<Tensor<T>> {
    check_rank4("crop_center", x)?;
    let (_, _, h, w) = x.dims4();
    let (ch, top) = center_crop_layout(h, fraction)
        .ok_or_else(|| geometry("crop_center", alloc::format!("degenerate crop of height {h}")))?;
    let (cw, left) = center_crop_layout(w, fraction)
        .ok_or_else(|| geometry("crop_center", alloc::format!("degenerate crop of width {w}")))?;
    crop_window(x, top, left, ch, cw)
}

/// Adds one bias value per channel.
pub fn add_channel_bias<T: Real>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4();
    if b.len() != c {
        return Err(Error::Dimension {
            op: "add_channel_bias",
            axis: "channels",
            expected: c,
            found: b.len(),
        });
    }
    let mut y = x.clone();
    for bn in 0..n {
        for ch in 0..c {
            let base = (bn * c + ch) * h * w;
            for v in &mut y.data[base..base + h * w] {
                *v += b.data[ch];
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4();
        let (cout, _, kh, kw) = w.dims4();
        let (oh, ow) = ((h - kh) / s + 1, (wd - kw) / s + 1);
        let mut out = Tensor::zeros(&[n, cout, oh, ow]);
        let mut i = 0;
        for bn in 0..n {
            for oc in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[oc];
                        for ic in 0..cin {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    acc += w.at4(oc, ic, ky, kx) * x.at4(bn, ic, oy * s + ky, ox * s + kx);
                                }
                            }
                        }
                        out.data_mut()[i] = acc;
                        i += 1;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_valid(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 5, 5], |i| i as f32);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d_valid(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for stride in 1..=3 {
            let x = rand_tensor(&mut rng, &[2, 2, 6, 6]);
            let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
            let b = rand_tensor(&mut rng, &[3]);
            let fast = conv2d_valid(&x, &w, &b, stride).unwrap();
            let slow = naive_conv(&x, &w, &b, stride);
            assert!(fast.max_abs_diff(&slow) <= 1e-12, "stride {stride}");
        }
    }

    #[test]
    fn conv_shape_errors_name_axis() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2, 5]);
        let w = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        match conv2d_valid(&x, &w, &Tensor::zeros(&[1]), 1) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "height"),
            other => panic!("unexpected {other:?}"),
        }
        let w = Tensor::<f32>::zeros(&[1, 3, 1, 1]);
        match conv2d_valid(&x, &w, &Tensor::zeros(&[1]), 1) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "channels"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[1, 2, 5, 5]);
        let w = rand_tensor(&mut rng, &[2, 2, 2, 2]);
        let g = conv2d_backward(&x, &w, &Tensor::zeros(&[1, 2, 4, 4]), 1).unwrap();
        assert!(g.x.data().iter().chain(g.w.data()).chain(g.b.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_weight_grad_is_product() {
        let x = Tensor::<f64>::full(&[1, 1, 1, 1], 3.0);
        let w = Tensor::<f64>::full(&[1, 1, 1, 1], -2.0);
        let g = conv2d_backward(&x, &w, &Tensor::full(&[1, 1, 1, 1], 0.5), 1).unwrap();
        assert_eq!(g.w.data()[0], 1.5);
        assert_eq!(g.x.data()[0], -1.0);
        assert_eq!(g.b.data()[0], 0.5);
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(conv2d_backward(&x, &w, &Tensor::zeros(&[1, 1, 2, 2]), 1).is_err());
    }

    #[test]
    fn avg_pool_blocks() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| (i + 1) as f64);
        let y = avg_pool(&x, 2, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn avg_pool_of_constant_and_global_mean() {
        let x = Tensor::<f64>::full(&[1, 2, 6, 6], 4.25);
        assert!(avg_pool(&x, 3, 1, 1).unwrap().data().iter().all(|&v| v == 4.25));
        let x = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let g = avg_pool(&x, 3, 1, 0).unwrap();
        assert_eq!(g.shape(), &[1, 1, 1, 1]);
        assert_eq!(g.data()[0], 4.0);
    }

    #[test]
    fn avg_pool_never_pads() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        assert!(matches!(avg_pool(&x, 3, 1, 2), Err(Error::Geometry { .. })));
        assert!(avg_pool_exact(&x, 2, 2, (1, 0), (2, 2)).is_err());
    }

    #[test]
    fn transposed_single_tap_spreads() {
        let x = Tensor::<f64>::full(&[1, 1, 1, 1], 2.5);
        let w = Tensor::<f64>::full(&[1, 1, 2, 2], 1.0);
        let y = transposed_conv2d(&x, &w, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 2.5));
        let z = transposed_conv2d(&Tensor::<f64>::zeros(&[1, 1, 3, 3]), &w, 2).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_equals_conv_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for stride in 1..=2 {
            let x = rand_tensor(&mut rng, &[1, 3, 7, 7]);
            let w = rand_tensor(&mut rng, &[2, 3, 3, 3]);
            let b = Tensor::zeros(&[2]);
            let y = conv2d_valid(&x, &w, &b, stride).unwrap();
            let g = rand_tensor(&mut rng, y.shape());
            let grads = conv2d_backward(&x, &w, &g, stride).unwrap();
            let t = transposed_conv2d(&g, &w, stride).unwrap();
            // Output extent of the transposed op may exceed the input when the
            // forward dropped trailing cells; compare on the common region.
            let (_, _, h, wd) = x.dims4();
            let t = crop_window(&t, 0, 0, h.min(t.dims4().2), wd.min(t.dims4().3)).unwrap();
            let gx = crop_window(&grads.x, 0, 0, t.dims4().2, t.dims4().3).unwrap();
            assert!(t.max_abs_diff(&gx) <= 1e-12);
        }
    }

    #[test]
    fn softmax_values() {
        let x = Tensor::<f64>::new(vec![1, 2, 1, 1], vec![0.3, 0.3]).unwrap();
        assert_eq!(softmax_channels(&x).unwrap().data(), &[0.5, 0.5]);
        let x = Tensor::<f64>::new(vec![1, 2, 1, 1], vec![0.0, 3.0f64.ln()]).unwrap();
        let y = softmax_channels(&x).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15 && (y.data()[1] - 0.75).abs() < 1e-15);
        let shifted = x.map(|v| v + 123.0);
        assert!(softmax_channels(&shifted).unwrap().max_abs_diff(&y) <= 1e-7);
        assert!(softmax_channels(&Tensor::<f64>::zeros(&[1, 1, 2, 2])).is_err());
    }

    #[test]
    fn crop_center_fractions() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 8, 8], |i| i as f64);
        assert_eq!(crop_center(&x, Fraction::ONE).unwrap(), x);
        let c = crop_center(&x, Fraction::HALF).unwrap();
        assert_eq!(c.shape(), &[1, 1, 4, 4]);
        // brute enumeration of rows/cols 2..=5
        let mut expected = Vec::new();
        for y in 2..=5 {
            for xx in 2..=5 {
                expected.push((y * 8 + xx) as f64);
            }
        }
        assert_eq!(c.data(), &expected[..]);
        let tiny = Tensor::<f64>::zeros(&[1, 1, 1, 1]);
        assert!(matches!(crop_center(&tiny, Fraction::QUARTER), Err(Error::Geometry { .. })));
    }

    #[test]
    fn crop_ties_go_top_left() {
        // 7 cells, half -> round(3.5) = 4 cells, slack 3 -> offset 1
        assert_eq!(center_crop_layout(7, Fraction::HALF), Some((4, 1)));
        assert_eq!(center_crop_layout(10, Fraction::QUARTER), Some((3, 3)));
    }

    #[test]
    fn relu_sum_is_abs() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64 - 4.0);
        let s = elementwise_add(&relu(&x.scale(-1.0)), &relu(&x)).unwrap();
        assert_eq!(s, x.map(f64::abs));
    }

    #[test]
    fn pool_then_repeat_keeps_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[1, 2, 6, 6]);
        let p = avg_pool(&x, 3, 3, 0).unwrap();
        // repeat-upsample back to 6x6 via the pool's own backward scaled by k^2
        let up = avg_pool_backward(x.shape(), &p, 3, 3, (0, 0)).scale(9.0);
        assert!((up.mean() - x.mean()).abs() < 1e-12);
    }

    #[test]
    fn new_checks_invariants() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
    }
}
