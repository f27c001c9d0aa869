//! Class-balanced pseudo-labels: per class, only the most confident fraction
//! `k` of that class's predictions is kept.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{ClassId, LabelMap, IGNORE};

/// Softmax output of one target sample plus its occupancy mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub classes: usize,
    pub h: usize,
    pub w: usize,
    /// Channel-major `(C, H, W)`.
    pub probs: Vec<f64>,
    pub occupied: Vec<bool>,
}

impl ProbMap {
    pub fn new(classes: usize, h: usize, w: usize, probs: Vec<f64>, occupied: Vec<bool>) -> Result<Self> {
        if probs.len() != classes * h * w || occupied.len() != h * w {
            return Err(Error::Shape(format!(
                "probability map {classes}x{h}x{w} given {} probabilities and {} mask cells",
                probs.len(),
                occupied.len()
            )));
        }
        Ok(ProbMap {
            classes,
            h,
            w,
            probs,
            occupied,
        })
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn prob(&self, class: usize, pixel: usize) -> f64 {
        self.probs[class * self.pixels() + pixel]
    }

    /// Argmax class (lowest id on ties) and its probability.
    pub fn top(&self, pixel: usize) -> (usize, f64) {
        let mut best = (0, self.prob(0, pixel));
        for c in 1..self.classes {
            let p = self.prob(c, pixel);
            if p > best.1 {
                best = (c, p);
            }
        }
        best
    }
}

/// `ceil(fraction * n)` with a small tolerance so products such as
/// `0.1 * 30` do not round up past the intended count.
pub fn proportion_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

pub(crate) fn check_proportion(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v <= 1.0) {
        return Err(Error::Config(format!("{name} = {v} must lie in (0, 1]")));
    }
    Ok(())
}

/// Per-class confidence thresholds `θ_c`: sort the confidences of occupied
/// pixels predicted as `c` in descending order and take the value at rank
/// `ceil(k * count_c)`. Classes never predicted get `+inf`.
pub fn class_thresholds<'a>(maps: impl IntoIterator<Item = &'a ProbMap>, classes: usize, k: f64) -> Result<Vec<f64>> {
    check_proportion("k", k)?;
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); classes];
    for m in maps {
        if m.classes != classes {
            return Err(Error::Shape(format!("map has {} classes, expected {classes}", m.classes)));
        }
        for i in 0..m.pixels() {
            if m.occupied[i] {
                let (c, p) = m.top(i);
                per_class[c].push(p);
            }
        }
    }
    Ok(per_class
        .into_iter()
        .map(|mut conf| {
            if conf.is_empty() {
                return f64::INFINITY;
            }
            conf.sort_by(|a, b| b.total_cmp(a));
            let rank = proportion_count(k, conf.len()).max(1);
            conf[rank - 1]
        })
        .collect())
}

/// Argmax label where its confidence reaches the class threshold, IGNORE
/// elsewhere and on empty pixels.
pub fn generate_pseudolabels(map: &ProbMap, thresholds: &[f64]) -> Result<LabelMap> {
    if thresholds.len() != map.classes {
        return Err(Error::Shape(format!(
            "{} thresholds for {} classes",
            thresholds.len(),
            map.classes
        )));
    }
    let data = (0..map.pixels())
        .map(|i| {
            if !map.occupied[i] {
                return IGNORE;
            }
            let (c, p) = map.top(i);
            if p >= thresholds[c] {
                c as ClassId
            } else {
                IGNORE
            }
        })
        .collect();
    LabelMap::from_vec(map.h, map.w, data)
}

/// Per-class `(accepted, predicted)` pixel counts for a set of pseudo-labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acceptance {
    pub accepted: Vec<usize>,
    pub predicted: Vec<usize>,
}

pub fn acceptance<'a>(maps: impl IntoIterator<Item = &'a ProbMap>, labels: &[LabelMap], classes: usize) -> Acceptance {
    let mut accepted = vec![0; classes];
    let mut predicted = vec![0; classes];
    for (m, l) in maps.into_iter().zip(labels) {
        for i in 0..m.pixels() {
            if m.occupied[i] {
                predicted[m.top(i).0] += 1;
                let v = l.as_slice()[i];
                if v != IGNORE {
                    accepted[v as usize] += 1;
                }
            }
        }
    }
    Acceptance { accepted, predicted }
}
