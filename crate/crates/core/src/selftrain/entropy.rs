//! Normalized per-pixel entropy and the per-sample median used to rank
//! target samples by confidence.

use super::pseudo::{check_proportion, proportion_count, ProbMap};
use crate::error::{Error, Result};

/// `-(1 / ln C) * sum_c p_c ln p_c` per pixel, with `0 ln 0 = 0`.
pub fn entropy_map(map: &ProbMap) -> Result<Vec<f64>> {
    let c = map.classes;
    if c < 2 {
        return Err(Error::InvalidInput("entropy needs at least two classes".into()));
    }
    let norm = (c as f64).ln();
    (0..map.pixels())
        .map(|i| {
            let mut h = 0.0;
            for k in 0..c {
                let p = map.prob(k, i);
                if p < 0.0 {
                    return Err(Error::InvalidInput(format!("negative probability {p} at pixel {i}")));
                }
                if p > 0.0 {
                    h -= p * p.ln();
                }
            }
            Ok((h / norm).clamp(0.0, 1.0))
        })
        .collect()
}

/// Median of all values; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("median of nothing".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median normalized entropy over every pixel of the sample, empty or not.
pub fn sample_uncertainty(map: &ProbMap) -> Result<f64> {
    median(&entropy_map(map)?)
}

/// Ids of the `ceil(ϖ * N)` samples with the lowest uncertainty, ascending
/// by `(uncertainty, id)`.
pub fn entropy_aggregate(uncertainty: &[f64], keep: f64) -> Result<Vec<usize>> {
    check_proportion("ϖ", keep)?;
    if uncertainty.is_empty() {
        return Err(Error::InvalidInput("no target samples to rank".into()));
    }
    let mut order: Vec<usize> = (0..uncertainty.len()).collect();
    order.sort_by(|&a, &b| uncertainty[a].total_cmp(&uncertainty[b]).then(a.cmp(&b)));
    order.truncate(proportion_count(keep, uncertainty.len()).max(1));
    Ok(order)
}
