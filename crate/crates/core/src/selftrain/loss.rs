use crate::error::{Error, Result};
use crate::network::{Real, Tensor};
use crate::pointcloud::{LabelMap, IGNORE};

fn dims<T: Real>(logits: &Tensor<T>, labels: &LabelMap) -> Result<(usize, usize)> {
    let &[c, h, w] = logits.shape() else {
        return Err(Error::Shape(format!("logits must be (C, H, W), got {:?}", logits.shape())));
    };
    if (h, w) != (labels.height(), labels.width()) {
        return Err(Error::Shape(format!(
            "logits {h}x{w} vs labels {}x{}",
            labels.height(),
            labels.width()
        )));
    }
    Ok((c, h * w))
}

/// Per-pixel class probabilities `(C, H, W)`, computed in double precision.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Vec<f64> {
    let c = logits.shape()[0];
    let hw = logits.len() / c;
    let z = logits.data();
    let mut p = vec![0.0; c * hw];
    for i in 0..hw {
        let max = (0..c).map(|k| z[k * hw + i].as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in 0..c {
            let e = (z[k * hw + i].as_f64() - max).exp();
            p[k * hw + i] = e;
            sum += e;
        }
        for k in 0..c {
            p[k * hw + i] /= sum;
        }
    }
    p
}

/// Summed negative log-likelihood over labeled pixels and its gradient with
/// respect to the logits, multiplied by `scale`. Returns the number of
/// labeled pixels too.
pub fn cross_entropy_sum<T: Real>(logits: &Tensor<T>, labels: &LabelMap, scale: f64) -> Result<(f64, Tensor<T>, usize)> {
    let (c, hw) = dims(logits, labels)?;
    let p = softmax(logits);
    let mut grad = vec![T::zero(); c * hw];
    let mut total = 0.0;
    let mut count = 0;
    for (i, &l) in labels.as_slice().iter().enumerate() {
        if l == IGNORE {
            continue;
        }
        let l = l as usize;
        if l >= c {
            return Err(Error::InvalidInput(format!("label {l} outside {c} classes")));
        }
        total -= p[l * hw + i].max(f64::MIN_POSITIVE).ln();
        count += 1;
        for k in 0..c {
            let target = if k == l { 1.0 } else { 0.0 };
            grad[k * hw + i] = T::cast((p[k * hw + i] - target) * scale);
        }
    }
    Ok((total, Tensor::from_vec(logits.shape(), grad)?, count))
}

/// Mean cross-entropy over non-IGNORE pixels and its logit gradient. A map
/// without labeled pixels gives zero loss and zero gradient.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &LabelMap) -> Result<(f64, Tensor<T>)> {
    let n = labels.labeled_count();
    if n == 0 {
        log::warn!("cross-entropy over a map with no labeled pixels");
        dims(logits, labels)?;
        return Ok((0.0, Tensor::zeros(logits.shape())));
    }
    let (sum, grad, _) = cross_entropy_sum(logits, labels, 1.0 / n as f64)?;
    Ok((sum / n as f64, grad))
}
