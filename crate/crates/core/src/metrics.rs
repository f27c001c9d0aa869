//! Confusion matrices and IoU scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{ClassId, IGNORE};

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Per-class IoU; `None` for classes absent from both truth and prediction.
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub fiou: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            total: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Add element pairs; truth IGNORE is skipped.
    pub fn accumulate(&mut self, truth: &[ClassId], pred: &[ClassId]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!("{} truth vs {} predicted labels", truth.len(), pred.len())));
        }
        for (&t, &p) in truth.iter().zip(pred) {
            if t == IGNORE {
                continue;
            }
            let (t, p) = (t as usize, p as usize);
            if t >= self.classes || p >= self.classes {
                return Err(Error::InvalidInput(format!(
                    "class pair ({t}, {p}) outside {} classes",
                    self.classes
                )));
            }
            self.counts[t * self.classes + p] += 1;
            self.total += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!("{} vs {} classes", self.classes, other.classes)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// IoU per class, mean IoU over classes present in truth or prediction,
    /// and truth-frequency-weighted IoU.
    pub fn scores(&self) -> Result<Scores> {
        if self.total == 0 {
            return Err(Error::InvalidInput("empty confusion matrix".into()));
        }
        let c = self.classes;
        let mut iou = Vec::with_capacity(c);
        let mut fiou = 0.0;
        for k in 0..c {
            let tp = self.count(k, k);
            let truth: u64 = (0..c).map(|p| self.count(k, p)).sum();
            let pred: u64 = (0..c).map(|t| self.count(t, k)).sum();
            let union = truth + pred - tp;
            let v = (union > 0).then(|| tp as f64 / union as f64);
            if let Some(v) = v {
                fiou += truth as f64 / self.total as f64 * v;
            }
            iou.push(v);
        }
        let present: Vec<f64> = iou.iter().flatten().copied().collect();
        let miou = present.iter().sum::<f64>() / present.len() as f64;
        Ok(Scores { iou, miou, fiou })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction_is_diagonal() {
        let mut cm = ConfusionMatrix::new(3);
        let labels = [0, 1, 2, 2, 1];
        cm.accumulate(&labels, &labels).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.count(t, p) > 0, t == p);
            }
        }
        let s = cm.scores().unwrap();
        assert_eq!(s.iou, vec![Some(1.0); 3]);
        assert_eq!((s.miou, s.fiou), (1.0, 1.0));
    }

    #[test]
    fn single_off_diagonal_element() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[1], &[2]).unwrap();
        assert_eq!(cm.count(1, 2), 1);
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn hand_matrix() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 0, 0, 0, 1, 1, 1, 1], &[0, 0, 0, 1, 0, 1, 1, 1]).unwrap();
        let s = cm.scores().unwrap();
        assert!((s.iou[0].unwrap() - 0.6).abs() < 1e-12);
        assert!((s.iou[1].unwrap() - 0.6).abs() < 1e-12);
        assert!((s.miou - 0.6).abs() < 1e-12);
        assert!((s.fiou - 0.6).abs() < 1e-12);
    }

    #[test]
    fn absent_class_excluded_and_missed_class_scores_zero() {
        let mut cm = ConfusionMatrix::new(4);
        // class 2 in truth, never predicted; class 3 absent everywhere
        cm.accumulate(&[0, 1, 2], &[0, 1, 1]).unwrap();
        let s = cm.scores().unwrap();
        assert_eq!(s.iou[2], Some(0.0));
        assert_eq!(s.iou[3], None);
        assert!((s.miou - (1.0 + 0.5 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ignore_skipped_and_errors_reported() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[IGNORE, 1], &[0, 1]).unwrap();
        assert_eq!(cm.total(), 1);
        assert!(cm.accumulate(&[0], &[5]).is_err());
        assert!(cm.accumulate(&[0, 1], &[0]).is_err());
        assert!(ConfusionMatrix::new(2).scores().is_err());
    }

    proptest! {
        #[test]
        fn additive_and_order_free(pairs in prop::collection::vec((0u16..4, 0u16..4), 1..200), cut in 0usize..200) {
            let truth: Vec<u16> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<u16> = pairs.iter().map(|p| p.1).collect();
            let cut = cut.min(truth.len());
            let mut whole = ConfusionMatrix::new(4);
            whole.accumulate(&truth, &pred).unwrap();
            let mut a = ConfusionMatrix::new(4);
            a.accumulate(&truth[..cut], &pred[..cut]).unwrap();
            let mut b = ConfusionMatrix::new(4);
            b.accumulate(&truth[cut..], &pred[cut..]).unwrap();
            let mut ab = a.clone();
            ab.merge(&b).unwrap();
            let mut ba = b.clone();
            ba.merge(&a).unwrap();
            prop_assert_eq!(&ab, &whole);
            prop_assert_eq!(&ba, &whole);
            let mut rev = ConfusionMatrix::new(4);
            let rt: Vec<u16> = truth.iter().rev().copied().collect();
            let rp: Vec<u16> = pred.iter().rev().copied().collect();
            rev.accumulate(&rt, &rp).unwrap();
            prop_assert_eq!(&rev, &whole);
            let s = whole.scores().unwrap();
            prop_assert!((0.0..=1.0).contains(&s.miou));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s.fiou));
        }
    }
}
