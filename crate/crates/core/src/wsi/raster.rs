//! In-memory rasters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Near-white slide background.
pub const BACKGROUND: [u8; 3] = [242, 242, 242];

/// 8-bit RGB raster, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension { op: "RgbImage", axis: "data", expected: width * height * 3, found: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&v);
    }

    /// `w`×`h` window at `(x0, y0)`; pixels outside the image are `background`.
    pub fn crop(&self, x0: i64, y0: i64, w: usize, h: usize, background: [u8; 3]) -> RgbImage {
        let mut out = RgbImage::new(w, h, background);
        for y in 0..h {
            let sy = y0 + y as i64;
            if sy < 0 || sy >= self.height as i64 {
                continue;
            }
            for x in 0..w {
                let sx = x0 + x as i64;
                if sx >= 0 && sx < self.width as i64 {
                    out.set(x, y, self.get(sx as usize, sy as usize));
                }
            }
        }
        out
    }
}

/// Binary raster, one byte (0 or 1) per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: alloc::vec![0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y) as u8;
            }
        }
        m
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension { op: "BinaryMask", axis: "data", expected: width * height, found: data.len() });
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("mask value {v} is not binary")));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// `w`×`h` window at `(x0, y0)`; pixels outside the mask are unset.
    pub fn crop(&self, x0: i64, y0: i64, w: usize, h: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            let (sx, sy) = (x0 + x as i64, y0 + y as i64);
            sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height && self.get(sx as usize, sy as usize)
        })
    }

    /// Intersection over union; two empty masks score 1.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a & b) as usize;
            union += (a | b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// An RGB raster with its physical pixel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideRaster {
    pub id: String,
    /// Micrometres per pixel.
    pub spacing_um: f64,
    pub image: RgbImage,
}

impl SlideRaster {
    pub fn new(id: impl Into<String>, spacing_um: f64, image: RgbImage) -> Result<Self> {
        if !(spacing_um > 0.0) || !spacing_um.is_finite() {
            return Err(Error::Data(format!("pixel spacing {spacing_um} must be positive")));
        }
        if image.width() == 0 || image.height() == 0 {
            return Err(Error::Data("slide extents must be >= 1".into()));
        }
        Ok(Self { id: id.into(), spacing_um, image })
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }
}

/// Maps 8-bit intensities to `[-1, 1]`.
pub fn normalize<T: Real>(v: u8) -> T {
    T::of(v as f64 / 127.5 - 1.0)
}

/// Stacks equally sized images into a `[n, 3, h, w]` tensor.
pub fn images_to_tensor<T: Real>(images: &[&RgbImage]) -> Result<Tensor<T>> {
    let (w, h) = images.first().map_or((0, 0), |i| (i.width(), i.height()));
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::Dimension { op: "images_to_tensor", axis: "extent", expected: w * h, found: img.width() * img.height() });
        }
        for c in 0..3 {
            data.extend(img.data().chunks_exact(3).map(|p| normalize::<T>(p[c])));
        }
    }
    Tensor::new(alloc::vec![images.len(), 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_fills_background() {
        let mut img = RgbImage::new(2, 2, [1, 2, 3]);
        img.set(1, 1, [9, 9, 9]);
        let c = img.crop(1, 1, 2, 2, [0, 0, 0]);
        assert_eq!(c.get(0, 0), [9, 9, 9]);
        assert_eq!(c.get(1, 0), [0, 0, 0]);
    }

    #[test]
    fn tensor_layout_is_planar() {
        let mut img = RgbImage::new(2, 1, [0, 255, 0]);
        img.set(1, 0, [255, 0, 0]);
        let t = images_to_tensor::<f64>(&[&img]).unwrap();
        assert_eq!(t.shape(), &[1, 3, 1, 2]);
        assert_eq!(t.data(), &[-1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn iou_of_identical_masks() {
        let m = BinaryMask::from_fn(4, 4, |x, y| x < y);
        assert_eq!(m.iou(&m), 1.0);
        assert_eq!(BinaryMask::new(2, 2).iou(&BinaryMask::new(2, 2)), 1.0);
        assert!(SlideRaster::new("a", 0.0, RgbImage::new(1, 1, BACKGROUND)).is_err());
    }
}
