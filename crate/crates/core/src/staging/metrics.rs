//! Detection and staging metrics: FROC, ROC AUC, quadratic-weighted kappa.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wsi::polygon::Polygon;

/// False-positive-per-slide rates at which sensitivity is averaged.
pub const FROC_RATES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// A scored detection at a slide-pixel location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub score: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLesion {
    pub polygon: Polygon,
    /// Lesions excluded from sensitivity; detections inside them are neither
    /// hits nor false positives.
    pub countable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideEvaluation {
    pub detections: Vec<Detection>,
    pub lesions: Vec<TruthLesion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocReport {
    pub sensitivities: [f64; 6],
    pub average: f64,
    /// (false positives per slide, sensitivity) at each distinct threshold.
    pub curve: Vec<(f64, f64)>,
}

enum Outcome {
    Hit(usize),
    Ignored,
    FalsePositive,
}

/// Average sensitivity at [`FROC_RATES`]. A detection hits a lesion when its
/// location lies inside the lesion polygon; repeated hits on one lesion count
/// once and are not false positives.
pub fn froc(slides: &[SlideEvaluation]) -> Result<FrocReport> {
    let mut lesion_base = Vec::with_capacity(slides.len());
    let mut total = 0usize;
    for s in slides {
        lesion_base.push(total);
        total += s.lesions.len();
    }
    let countable = slides.iter().flat_map(|s| &s.lesions).filter(|l| l.countable).count();
    if countable == 0 {
        return Err(Error::Data("FROC undefined: no countable ground-truth lesions".into()));
    }
    let mut scored: Vec<(f64, Outcome)> = Vec::new();
    for (si, s) in slides.iter().enumerate() {
        for d in &s.detections {
            let mut outcome = Outcome::FalsePositive;
            for (li, l) in s.lesions.iter().enumerate() {
                if l.polygon.contains(d.x, d.y) {
                    if l.countable {
                        outcome = Outcome::Hit(lesion_base[si] + li);
                        break;
                    }
                    outcome = Outcome::Ignored;
                }
            }
            scored.push((d.score, outcome));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_slides = slides.len().max(1) as f64;
    let mut hit = alloc::vec![false; total];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = alloc::vec![(0.0, 0.0)];
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            match scored[i].1 {
                Outcome::Hit(l) if !hit[l] => {
                    hit[l] = true;
                    tp += 1;
                }
                Outcome::FalsePositive => fp += 1,
                _ => {}
            }
            i += 1;
        }
        curve.push((fp as f64 / n_slides, tp as f64 / countable as f64));
    }
    let mut sensitivities = [0.0; 6];
    for (k, &r) in FROC_RATES.iter().enumerate() {
        sensitivities[k] = curve.iter().filter(|p| p.0 <= r).map(|p| p.1).fold(0.0, f64::max);
    }
    let average = sensitivities.iter().sum::<f64>() / 6.0;
    Ok(FrocReport { sensitivities, average, curve })
}

/// Area under the ROC curve as the Mann–Whitney statistic (ties count ½).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension { op: "auc", axis: "slides", expected: scores.len(), found: labels.len() });
    }
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|p| *p.1).map(|p| *p.0).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|p| !*p.1).map(|p| *p.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data("AUC undefined: labels contain a single class".into()));
    }
    let mut twice = 0u64;
    for &p in &pos {
        for &n in &neg {
            twice += if p > n { 2 } else if p == n { 1 } else { 0 };
        }
    }
    Ok(twice as f64 / (2 * pos.len() * neg.len()) as f64)
}

/// Cohen's kappa with weights `(i − j)² / (K − 1)²` over `k` ordered classes.
pub fn quadratic_kappa(pred: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension { op: "quadratic_kappa", axis: "items", expected: truth.len(), found: pred.len() });
    }
    if pred.len() < 2 || k < 2 {
        return Err(Error::Data("kappa needs at least two items and two classes".into()));
    }
    if let Some(&c) = pred.iter().chain(truth).find(|&&c| c >= k) {
        return Err(Error::Data(format!("class {c} outside {k} classes")));
    }
    let mut o = alloc::vec![0.0f64; k * k];
    let (mut rows, mut cols) = (alloc::vec![0.0f64; k], alloc::vec![0.0f64; k]);
    for (&p, &t) in pred.iter().zip(truth) {
        o[t * k + p] += 1.0;
        rows[t] += 1.0;
        cols[p] += 1.0;
    }
    let n = pred.len() as f64;
    let denom_w = ((k - 1) * (k - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64).powi(2)) / denom_w;
            num += w * o[i * k + j];
            den += w * rows[i] * cols[j] / n;
        }
    }
    if den == 0.0 {
        return if num == 0.0 {
            Ok(1.0)
        } else {
            Err(Error::Data("kappa undefined: degenerate marginals".into()))
        };
    }
    Ok(1.0 - num / den)
}
