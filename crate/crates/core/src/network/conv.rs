//! Convolution with a learnable Hadamard modulator.
//!
//! The layer keeps two tensors of identical shape, the kernel `f_c` and the
//! modulator `f_r`, and convolves with their element-wise product. Gradients
//! reach both factors through the product rule. After training the product
//! can be folded into a single cached kernel so inference costs the same as a
//! plain convolution.

use super::scalar::{gemm, MatRef};
use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedConv<T> {
    kernel: Tensor<T>,
    modulator: Tensor<T>,
    bias: Option<Tensor<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
    folded: Option<Tensor<T>>,
}

/// Gradients of one convolution call.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub modulator: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl<T: Real> RegularizedConv<T> {
    /// New layer with the modulator at its neutral value (all ones).
    pub fn new(
        kernel: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let modulator = Tensor::filled(kernel.shape(), T::one());
        Self::with_modulator(kernel, modulator, bias, stride, padding)
    }

    pub fn with_modulator(
        kernel: Tensor<T>,
        modulator: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        if kernel.shape().len() != 4 {
            return Err(Error::Shape(format!("kernel must be 4-d, got {:?}", kernel.shape())));
        }
        if modulator.shape() != kernel.shape() {
            return Err(Error::Shape(format!(
                "modulator {:?} vs kernel {:?}",
                modulator.shape(),
                kernel.shape()
            )));
        }
        if let Some(b) = &bias {
            if b.shape() != [kernel.shape()[0]] {
                return Err(Error::Shape(format!("bias {:?} for {} outputs", b.shape(), kernel.shape()[0])));
            }
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        Ok(RegularizedConv {
            kernel,
            modulator,
            bias,
            stride,
            padding,
            folded: None,
        })
    }

    /// Inference-only layer whose effective kernel is given directly.
    pub fn prefolded(
        effective: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let mut layer = Self::new(effective, bias, stride, padding)?;
        layer.folded = Some(layer.kernel.clone());
        Ok(layer)
    }

    pub fn kernel(&self) -> &Tensor<T> {
        &self.kernel
    }

    pub fn modulator(&self) -> &Tensor<T> {
        &self.modulator
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        self.bias.as_ref()
    }

    pub fn stride(&self) -> (usize, usize) {
        self.stride
    }

    pub fn padding(&self) -> (usize, usize) {
        self.padding
    }

    pub fn is_folded(&self) -> bool {
        self.folded.is_some()
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    /// The kernel actually convolved with: the cache when folded, otherwise
    /// `f_r ⊙ f_c`.
    pub fn effective_kernel(&self) -> Tensor<T> {
        match &self.folded {
            Some(k) => k.clone(),
            None => self.kernel.hadamard(&self.modulator).expect("shapes checked at construction"),
        }
    }

    /// Cache the effective kernel; the modulator stops being a parameter.
    pub fn fold(&mut self) -> Result<()> {
        if self.folded.is_some() {
            return Err(Error::Folded("layer already folded".into()));
        }
        self.folded = Some(self.effective_kernel());
        Ok(())
    }

    pub fn folded(mut self) -> Result<Self> {
        self.fold()?;
        Ok(self)
    }

    /// Trainable tensors: kernel, modulator (unless folded), bias.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.kernel];
        if self.folded.is_none() {
            v.push(&self.modulator);
        }
        v.extend(self.bias.as_ref());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let folded = self.folded.is_some();
        let mut v = vec![&mut self.kernel];
        if !folded {
            v.push(&mut self.modulator);
        }
        v.extend(self.bias.as_mut());
        v
    }

    /// Flatten gradients in [`Self::params`] order.
    pub fn grads_in_param_order(g: ConvGrads<T>) -> Vec<Tensor<T>> {
        let mut v = vec![g.kernel, g.modulator];
        v.extend(g.bias);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<Geometry> {
        let [cin, h, w] = match x.shape() {
            &[c, h, w] => [c, h, w],
            s => return Err(Error::Shape(format!("conv input must be (C, H, W), got {s:?}"))),
        };
        let ks = self.kernel.shape();
        if ks[1] != cin {
            return Err(Error::Shape(format!("input has {cin} channels, kernel expects {}", ks[1])));
        }
        let (kh, kw) = (ks[2], ks[3]);
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::Shape(format!("input {h}x{w} smaller than kernel {kh}x{kw}")));
        }
        Ok(Geometry {
            cin,
            h,
            w,
            kh,
            kw,
            ho: (h + 2 * ph - kh) / sh + 1,
            wo: (w + 2 * pw - kw) / sw + 1,
        })
    }

    fn is_pointwise(&self, g: &Geometry) -> bool {
        g.kh == 1 && g.kw == 1 && self.stride == (1, 1) && self.padding == (0, 0)
    }

    fn im2col(&self, x: &[T], g: &Geometry) -> Vec<T> {
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let p = g.ho * g.wo;
        let mut cols = vec![T::zero(); g.cin * g.kh * g.kw * p];
        for c in 0..g.cin {
            let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = &mut cols[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                    for oy in 0..g.ho {
                        let iy = (oy * sh + ki) as isize - ph as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..][..g.w];
                        let dst = &mut row[oy * g.wo..][..g.wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * sw + kj) as isize - pw as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], g: &Geometry) -> Vec<T> {
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let p = g.ho * g.wo;
        let mut x = vec![T::zero(); g.cin * g.h * g.w];
        for c in 0..g.cin {
            let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = &cols[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                    for oy in 0..g.ho {
                        let iy = (oy * sh + ki) as isize - ph as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        let src = &row[oy * g.wo..][..g.wo];
                        for (ox, &s) in src.iter().enumerate() {
                            let ix = (ox * sw + kj) as isize - pw as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Cross-correlation of a `(C, H, W)` input with the effective kernel.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geometry(x)?;
        let eff = self.effective_kernel();
        let cout = self.out_channels();
        let k = g.cin * g.kh * g.kw;
        let p = g.ho * g.wo;
        let mut out = vec![T::zero(); cout * p];
        let owned;
        let cols: &[T] = if self.is_pointwise(&g) {
            x.data()
        } else {
            owned = self.im2col(x.data(), &g);
            &owned
        };
        gemm(MatRef::row_major(eff.data(), cout, k), MatRef::row_major(cols, k, p), T::zero(), &mut out);
        if let Some(b) = &self.bias {
            for (o, &bv) in b.data().iter().enumerate() {
                for v in &mut out[o * p..(o + 1) * p] {
                    *v += bv;
                }
            }
        }
        Tensor::from_vec(&[cout, g.ho, g.wo], out)
    }

    /// Gradients for input `x` given the upstream gradient of the output.
    pub fn backward(&self, x: &Tensor<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
        self.backward_impl(x, upstream, true)
    }

    /// Same as [`Self::backward`] but skips the input gradient when
    /// `want_input` is false.
    pub fn backward_impl(&self, x: &Tensor<T>, upstream: &Tensor<T>, want_input: bool) -> Result<ConvGrads<T>> {
        if self.folded.is_some() {
            return Err(Error::Folded("backward through a folded convolution".into()));
        }
        let g = self.geometry(x)?;
        let cout = self.out_channels();
        if upstream.shape() != [cout, g.ho, g.wo] {
            return Err(Error::Shape(format!(
                "upstream gradient {:?}, expected {:?}",
                upstream.shape(),
                [cout, g.ho, g.wo]
            )));
        }
        let k = g.cin * g.kh * g.kw;
        let p = g.ho * g.wo;
        let owned;
        let cols: &[T] = if self.is_pointwise(&g) {
            x.data()
        } else {
            owned = self.im2col(x.data(), &g);
            &owned
        };
        let gout = MatRef::row_major(upstream.data(), cout, p);

        // d/d(f_{c,r}) = gout * cols^T
        let mut g_eff = vec![T::zero(); cout * k];
        gemm(gout, MatRef::row_major(cols, k, p).t(), T::zero(), &mut g_eff);
        let g_eff = Tensor::from_vec(self.kernel.shape(), g_eff)?;
        let kernel = g_eff.hadamard(&self.modulator)?;
        let modulator = g_eff.hadamard(&self.kernel)?;

        let input = if want_input {
            let eff = self.effective_kernel();
            let mut g_cols = vec![T::zero(); k * p];
            gemm(MatRef::row_major(eff.data(), cout, k).t(), gout, T::zero(), &mut g_cols);
            let gx = if self.is_pointwise(&g) {
                g_cols
            } else {
                self.col2im(&g_cols, &g)
            };
            Some(Tensor::from_vec(x.shape(), gx)?)
        } else {
            None
        };

        let bias = self.bias.as_ref().map(|_| {
            let sums = (0..cout)
                .map(|o| upstream.data()[o * p..(o + 1) * p].iter().copied().sum())
                .collect();
            Tensor::from_vec(&[cout], sums).expect("bias shape")
        });

        Ok(ConvGrads {
            input,
            kernel,
            modulator,
            bias,
        })
    }
}
