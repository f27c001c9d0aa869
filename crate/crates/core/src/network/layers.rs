use super::{Real, Tensor};
use crate::error::{Error, Result};

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    let data = x.data().iter().map(|&v| if v > T::zero() { v } else { v * slope }).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Gradient through the leaky rectifier, given its pre-activation input.
pub fn leaky_relu_backward<T: Real>(pre: &Tensor<T>, upstream: &Tensor<T>, slope: T) -> Tensor<T> {
    let data = pre
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&a, &g)| if a > T::zero() { g } else { g * slope })
        .collect();
    Tensor::from_vec(pre.shape(), data).expect("same shape")
}

fn source_index(dst: usize, src_len: usize, dst_len: usize) -> usize {
    dst * src_len / dst_len
}

/// Nearest-neighbour resize of a `(C, h, w)` map to `(C, H, W)`.
pub fn upsample_nearest<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::Shape(format!("upsample expects (C, H, W), got {:?}", x.shape())));
    };
    let cols: Vec<usize> = (0..out_w).map(|j| source_index(j, w, out_w)).collect();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for i in 0..out_h {
            let src = &x.data()[(ch * h + source_index(i, h, out_h)) * w..][..w];
            out.extend(cols.iter().map(|&j| src[j]));
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Adjoint of [`upsample_nearest`]: sums each output gradient into its source.
pub fn upsample_nearest_backward<T: Real>(upstream: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let &[c, out_h, out_w] = upstream.shape() else {
        return Err(Error::Shape(format!("expected (C, H, W), got {:?}", upstream.shape())));
    };
    let cols: Vec<usize> = (0..out_w).map(|j| source_index(j, w, out_w)).collect();
    let mut g = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for i in 0..out_h {
            let dst = &mut g[(ch * h + source_index(i, h, out_h)) * w..][..w];
            let src = &upstream.data()[(ch * out_h + i) * out_w..][..out_w];
            for (&j, &v) in cols.iter().zip(src) {
                dst[j] += v;
            }
        }
    }
    Tensor::from_vec(&[c, h, w], g)
}

/// Stack `(C_i, H, W)` maps along the channel axis.
pub fn concat_channels<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
    let hw = &first.shape()[1..];
    let mut channels = 0;
    let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
    for p in parts {
        if &p.shape()[1..] != hw {
            return Err(Error::Shape(format!("{:?} vs {:?}", p.shape(), first.shape())));
        }
        channels += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(&[channels, hw[0], hw[1]], data)
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels<T: Real>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    if sizes.iter().sum::<usize>() != x.shape()[0] {
        return Err(Error::Shape(format!("split {sizes:?} of {:?}", x.shape())));
    }
    let mut offset = 0;
    sizes
        .iter()
        .map(|&c| {
            let part = x.data()[offset * h * w..(offset + c) * h * w].to_vec();
            offset += c;
            Tensor::from_vec(&[c, h, w], part)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_slopes_negative_side() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 3], &[-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.01).data(), &[-0.02, 0.0, 3.0]);
    }

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2], &[1.0, 2.0]).unwrap();
        let y = upsample_nearest(&x, 2, 4).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let g = upsample_nearest_backward(&Tensor::filled(&[1, 2, 4], 1.0), 1, 2).unwrap();
        assert_eq!(g.data(), &[4.0, 4.0]);
    }

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor::<f64>::from_f64(&[1, 1, 2], &[1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_f64(&[2, 1, 2], &[3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), &[3, 1, 2]);
        assert_eq!(split_channels(&c, &[1, 2]).unwrap(), vec![a, b]);
    }
}
