//! Otsu thresholding and tissue masks.
//!
//! For a threshold `t` (class 0 = bins `0..=t`) with `n0`, `n1` pixels and
//! class-0 intensity sum `s0`, the between-class variance is proportional to
//! `(S·n0 − N·s0)² / (n0·n1)`. Candidates are compared by cross-multiplying
//! these integer quantities, so the arg-max is exact.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::wsi::raster::{BinaryMask, RgbImage};

/// Little-endian multi-limb product.
fn mul(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = alloc::vec![0u64; a.len() + b.len()];
    for (i, &x) in a.iter().enumerate() {
        let mut carry = 0u128;
        for (j, &y) in b.iter().enumerate() {
            let cur = out[i + j] as u128 + x as u128 * y as u128 + carry;
            out[i + j] = cur as u64;
            carry = cur >> 64;
        }
        out[i + b.len()] = carry as u64;
    }
    out
}

fn limbs(v: u128) -> [u64; 2] {
    [v as u64, (v >> 64) as u64]
}

fn cmp_limbs(a: &[u64], b: &[u64]) -> core::cmp::Ordering {
    debug_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().rev().zip(b.iter().rev()) {
        match x.cmp(y) {
            core::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    core::cmp::Ordering::Equal
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OtsuResult {
    pub threshold: u8,
    /// Fewer than two occupied bins: no split exists and `threshold` is the
    /// single occupied value (0 for an empty histogram).
    pub degenerate: bool,
}

/// Threshold maximising between-class variance; ties go to the lowest `t`.
/// The histogram total must stay below 2^60.
pub fn otsu_threshold(hist: &[u64; 256]) -> OtsuResult {
    let n: u128 = hist.iter().map(|&h| h as u128).sum();
    let s: u128 = hist.iter().enumerate().map(|(i, &h)| i as u128 * h as u128).sum();
    let occupied: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    if occupied.len() < 2 {
        return OtsuResult { threshold: occupied.first().map_or(0, |&i| i as u8), degenerate: true };
    }
    let (mut n0, mut s0) = (0u128, 0u128);
    // best numerator D², denominator n0·n1
    let mut best: Option<(u8, Vec<u64>, [u64; 2])> = None;
    for t in 0..255usize {
        n0 += hist[t] as u128;
        s0 += t as u128 * hist[t] as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let (a, b) = (s.checked_mul(n0).expect("total below 2^60"), n * s0);
        let d = a.abs_diff(b);
        let d2 = mul(&limbs(d), &limbs(d));
        let q = limbs(n0 * n1);
        let better = match &best {
            None => true,
            Some((_, bd2, bq)) => cmp_limbs(&mul(&d2, bq), &mul(bd2, &q)) == core::cmp::Ordering::Greater,
        };
        if better {
            best = Some((t as u8, d2, q));
        }
    }
    OtsuResult { threshold: best.expect("two occupied bins").0, degenerate: false }
}

/// Per-pixel `max(R,G,B) − min(R,G,B)`.
pub fn saturation(p: [u8; 3]) -> u8 {
    p.iter().max().expect("3 channels") - p.iter().min().expect("3 channels")
}

pub fn saturation_histogram(img: &RgbImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for p in img.data().chunks_exact(3) {
        h[saturation([p[0], p[1], p[2]]) as usize] += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    pub mask: BinaryMask,
    pub otsu: OtsuResult,
}

/// Tissue = saturation strictly above the Otsu threshold. A degenerate
/// histogram yields an empty mask.
pub fn tissue_mask(img: &RgbImage) -> TissueMask {
    let otsu = otsu_threshold(&saturation_histogram(img));
    let mask = if otsu.degenerate {
        BinaryMask::new(img.width(), img.height())
    } else {
        BinaryMask::from_fn(img.width(), img.height(), |x, y| saturation(img.get(x, y)) > otsu.threshold)
    };
    TissueMask { mask, otsu }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_deltas_split_at_lower() {
        let mut h = [0u64; 256];
        h[50] = 10;
        h[200] = 30;
        assert_eq!(otsu_threshold(&h), OtsuResult { threshold: 50, degenerate: false });
    }

    #[test]
    fn single_value_is_degenerate() {
        let mut h = [0u64; 256];
        h[17] = 5;
        assert_eq!(otsu_threshold(&h), OtsuResult { threshold: 17, degenerate: true });
        assert!(otsu_threshold(&[0; 256]).degenerate);
    }

    #[test]
    fn white_slide_has_no_tissue() {
        let img = RgbImage::new(8, 8, [255, 255, 255]);
        assert_eq!(tissue_mask(&img).mask.count(), 0);
    }

    #[test]
    fn wide_products_compare_exactly() {
        let big = u64::MAX as u128 * 3;
        let p = mul(&limbs(big), &limbs(big));
        assert_eq!(p.len(), 4);
        assert_eq!(cmp_limbs(&p, &p), core::cmp::Ordering::Equal);
        assert_eq!(cmp_limbs(&mul(&limbs(2), &limbs(big)), &mul(&limbs(1), &limbs(big))), core::cmp::Ordering::Greater);
    }
}
