//! Joint patch/mask augmentation.
//!
//! Geometric operations (horizontal flip, quarter turns, scaling about the
//! centre with re-crop) act identically on the patch and its mask; colour
//! shifts in HSV act on the patch only.

use rand::Rng;
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::wsi::polygon::Polygon;
use crate::wsi::raster::{BinaryMask, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flips: bool,
    pub rotations: bool,
    /// Inclusive scale range.
    pub scale: (f64, f64),
    /// Maximum absolute hue shift (fraction of a turn).
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flips: true, rotations: true, scale: (0.9, 1.1), hue: 0.04, saturation: 0.1, value: 0.1 }
    }
}

impl AugmentConfig {
    /// No-op configuration.
    pub fn none() -> Self {
        Self { flips: false, rotations: false, scale: (1.0, 1.0), hue: 0.0, saturation: 0.0, value: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(config("augmentation scale range must satisfy 0 < lo <= hi"));
        }
        for (name, v) in [("hue", self.hue), ("saturation", self.saturation), ("value", self.value)] {
            if !(0.0..=0.5).contains(&v) {
                return Err(config(alloc::format!("augmentation {name} shift {v} outside [0, 0.5]")));
            }
        }
        Ok(())
    }
}

/// One sampled augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub flip: bool,
    pub quarter_turns: u8,
    pub scale: f64,
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw =
        AugmentDraw { flip: false, quarter_turns: 0, scale: 1.0, hue: 0.0, saturation: 0.0, value: 0.0 };

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let sym = |rng: &mut dyn rand::RngCore, m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let flip = cfg.flips && rng.gen::<bool>();
        let quarter_turns = if cfg.rotations { rng.gen_range(0..4) } else { 0 };
        let scale = if cfg.scale.0 < cfg.scale.1 { rng.gen_range(cfg.scale.0..=cfg.scale.1) } else { cfg.scale.0 };
        let hue = sym(rng, cfg.hue);
        let saturation = sym(rng, cfg.saturation);
        let value = sym(rng, cfg.value);
        Self { flip, quarter_turns, scale, hue, saturation, value }
    }

    /// Source pixel of output pixel `(x, y)` in a square raster of side `e`.
    fn source(&self, x: usize, y: usize, e: usize) -> (usize, usize) {
        let (mut x, mut y) = (x, y);
        if self.scale != 1.0 {
            let c = e as f64 / 2.0;
            let un = |v: usize| (((v as f64 + 0.5 - c) / self.scale + c).floor().max(0.0) as usize).min(e - 1);
            x = un(x);
            y = un(y);
        }
        for _ in 0..self.quarter_turns % 4 {
            (x, y) = (y, e - 1 - x);
        }
        if self.flip {
            x = e - 1 - x;
        }
        (x, y)
    }

    /// Applies the geometric part to a square mask.
    pub fn apply_mask(&self, mask: &BinaryMask) -> BinaryMask {
        let e = mask.width();
        debug_assert_eq!(e, mask.height());
        BinaryMask::from_fn(e, e, |x, y| {
            let (sx, sy) = self.source(x, y, e);
            mask.get(sx, sy)
        })
    }

    /// Applies the geometric and colour parts to a square image.
    pub fn apply_image(&self, img: &RgbImage) -> RgbImage {
        let e = img.width();
        debug_assert_eq!(e, img.height());
        let mut out = RgbImage::new(e, e, [0, 0, 0]);
        let color = self.hue != 0.0 || self.saturation != 0.0 || self.value != 0.0;
        for y in 0..e {
            for x in 0..e {
                let (sx, sy) = self.source(x, y, e);
                let p = img.get(sx, sy);
                out.set(x, y, if color { self.shift(p) } else { p });
            }
        }
        out
    }

    fn shift(&self, p: [u8; 3]) -> [u8; 3] {
        let (h, s, v) = rgb_to_hsv(p);
        let h = modulo(h + self.hue, 1.0);
        hsv_to_rgb(h, (s + self.saturation).clamp(0.0, 1.0), (v + self.value).clamp(0.0, 1.0))
    }

    /// Maps a polygon given in patch pixel coordinates (square of side `e`)
    /// through the flips and quarter turns of this draw.
    pub fn apply_polygon(&self, poly: &Polygon, e: usize) -> Polygon {
        let e = e as f64;
        let mut out = poly.clone();
        if self.flip {
            out = out.map(|(x, y)| (e - x, y));
        }
        for _ in 0..self.quarter_turns % 4 {
            out = out.map(|(x, y)| (e - y, x));
        }
        out
    }
}

/// Augments a patch and its centred mask together.
pub fn augment(img: &RgbImage, mask: &BinaryMask, draw: &AugmentDraw) -> (RgbImage, BinaryMask) {
    (draw.apply_image(img), draw.apply_mask(mask))
}

fn modulo(x: f64, m: f64) -> f64 {
    let r = x - (x / m).floor() * m;
    if r >= m { 0.0 } else { r }
}

fn rgb_to_hsv(p: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = p.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        modulo((g - b) / d, 6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_round_trip_is_exact() {
        for r in (0..=255).step_by(15) {
            for g in (0..=255).step_by(17) {
                for b in (0..=255).step_by(51) {
                    let (h, s, v) = rgb_to_hsv([r, g, b]);
                    assert_eq!(hsv_to_rgb(h, s, v), [r, g, b]);
                }
            }
        }
    }

    #[test]
    fn quarter_turn_moves_corner() {
        let mut m = BinaryMask::new(4, 4);
        m.set(0, 0, true);
        let d = AugmentDraw { quarter_turns: 1, ..AugmentDraw::IDENTITY };
        let r = d.apply_mask(&m);
        assert!(r.get(3, 0));
        let d4 = AugmentDraw { quarter_turns: 4, ..AugmentDraw::IDENTITY };
        assert_eq!(d4.apply_mask(&m), m);
    }

    #[test]
    fn config_bounds() {
        assert!(AugmentConfig::default().validate().is_ok());
        assert!(AugmentConfig { scale: (1.2, 1.1), ..AugmentConfig::default() }.validate().is_err());
    }
}
