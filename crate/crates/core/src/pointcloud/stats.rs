use serde::{Deserialize, Serialize};

use super::{LabelMap, RangeImage, IGNORE};
use crate::concat::band_ranges;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyStats {
    /// Fraction of pixels with mask 0.
    pub empty_fraction: f64,
    /// Region grid used for the histograms.
    pub m: usize,
    pub n: usize,
    /// Row-major over the `m x n` regions; each entry counts labels per class.
    /// Empty when no label map was supplied.
    pub region_histograms: Vec<Vec<u64>>,
}

/// Empty-cell fraction of a range image, plus per-region class histograms
/// when labels are given.
pub fn occupancy_stats(
    image: &RangeImage,
    split: (usize, usize),
    labels: Option<(&LabelMap, usize)>,
) -> Result<OccupancyStats> {
    let (h, w) = (image.height(), image.width());
    let (m, n) = split;
    let rows = band_ranges(h, m)?;
    let cols = band_ranges(w, n)?;
    let empty = h * w - image.occupied_count();

    let mut region_histograms = Vec::new();
    if let Some((lm, classes)) = labels {
        if lm.height() != h || lm.width() != w {
            return Err(Error::Shape(format!(
                "label map {}x{} vs image {h}x{w}",
                lm.height(),
                lm.width()
            )));
        }
        for rr in &rows {
            for cr in &cols {
                let mut hist = vec![0u64; classes];
                for r in rr.clone() {
                    for c in cr.clone() {
                        let l = lm.get(r, c);
                        if l != IGNORE {
                            let slot = hist.get_mut(l as usize).ok_or_else(|| {
                                Error::InvalidInput(format!("label {l} outside {classes} classes"))
                            })?;
                            *slot += 1;
                        }
                    }
                }
                region_histograms.push(hist);
            }
        }
    }

    Ok(OccupancyStats {
        empty_fraction: empty as f64 / (h * w) as f64,
        m,
        n,
        region_histograms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::{Point, Projection};

    fn image_with(occupied: &[(usize, usize)]) -> RangeImage {
        let proj = Projection::new(4, 4, 0.2, -0.2).unwrap();
        let mut ri = RangeImage::empty(proj);
        for (k, &(r, c)) in occupied.iter().enumerate() {
            ri.write_pixel(r * 4 + c, &Point::new(1.0, 0.0, 0.0, 0.0), 1.0, k as u32);
        }
        ri
    }

    #[test]
    fn half_occupied() {
        let px: Vec<_> = (0..8).map(|i| (i / 4, i % 4)).collect();
        let s = occupancy_stats(&image_with(&px), (1, 1), None).unwrap();
        assert_eq!(s.empty_fraction, 0.5);
        assert!(s.region_histograms.is_empty());
    }

    #[test]
    fn fully_occupied() {
        let px: Vec<_> = (0..16).map(|i| (i / 4, i % 4)).collect();
        assert_eq!(occupancy_stats(&image_with(&px), (2, 2), None).unwrap().empty_fraction, 0.0);
    }

    #[test]
    fn region_histograms_count_per_quadrant() {
        let mut lm = LabelMap::filled(4, 4, IGNORE);
        lm.set(0, 0, 1);
        lm.set(0, 3, 2);
        lm.set(3, 3, 2);
        lm.set(3, 2, 0);
        let s = occupancy_stats(&image_with(&[]), (2, 2), Some((&lm, 3))).unwrap();
        assert_eq!(
            s.region_histograms,
            vec![vec![0, 1, 0], vec![0, 0, 1], vec![0, 0, 0], vec![1, 0, 1]]
        );
    }
}
