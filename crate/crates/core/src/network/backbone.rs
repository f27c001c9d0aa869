//! Seven-stage fully-convolutional range-view segmenter.
//!
//! Each stage is a strided regularized 3x3 convolution with a leaky rectifier
//! plus a residual shortcut (identity, or a strided 1x1 projection when the
//! shape changes). Height is only reduced in the late stages. The outputs of
//! the last four stages are upsampled to input resolution, stacked along the
//! channel axis and mapped to class logits by a 1x1 regularized convolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::conv::RegularizedConv;
use super::layers::{concat_channels, leaky_relu, leaky_relu_backward, split_channels, upsample_nearest, upsample_nearest_backward};
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::pointcloud::{RangeImage, RV_CHANNELS};

pub const STAGE_COUNT: usize = 7;
/// Stages that must keep the input height.
pub const EARLY_STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    /// `(height, width)` stride.
    pub stride: (usize, usize),
}

/// Per-channel affine normalization applied to occupied pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: [f64; RV_CHANNELS],
    pub std: [f64; RV_CHANNELS],
}

impl Default for InputNorm {
    fn default() -> Self {
        InputNorm {
            mean: [0.0, 0.0, -1.0, 0.4, 15.0, 0.0],
            std: [15.0, 15.0, 1.0, 0.2, 12.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub stages: Vec<StageSpec>,
    pub head_taps: Vec<usize>,
    pub num_classes: usize,
    pub kernel_size: usize,
    pub leaky_slope: f64,
    pub input_norm: InputNorm,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk(32, 256, 5)
    }
}

impl BackboneConfig {
    /// Desk-scale layout: channels 16-32-32-64-64-64-64, width stride 2 at
    /// stages 2 and 4, height stride 2 at stage 6.
    pub fn desk(h: usize, w: usize, num_classes: usize) -> Self {
        let channels = [16, 32, 32, 64, 64, 64, 64];
        let strides = [(1, 1), (1, 2), (1, 1), (1, 2), (1, 1), (2, 1), (1, 1)];
        BackboneConfig {
            input_channels: RV_CHANNELS,
            input_height: h,
            input_width: w,
            stages: channels
                .iter()
                .zip(strides)
                .map(|(&channels, stride)| StageSpec { channels, stride })
                .collect(),
            head_taps: (STAGE_COUNT - 4..STAGE_COUNT).collect(),
            num_classes,
            kernel_size: 3,
            leaky_slope: 0.01,
            input_norm: InputNorm::default(),
        }
    }

    /// Same layout with every stage's channel count replaced.
    pub fn with_channels(mut self, channels: [usize; STAGE_COUNT]) -> Self {
        for (s, c) in self.stages.iter_mut().zip(channels) {
            s.channels = c;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != STAGE_COUNT {
            return Err(Error::Config(format!("backbone needs {STAGE_COUNT} stages, got {}", self.stages.len())));
        }
        let expected_taps: Vec<usize> = (STAGE_COUNT - 4..STAGE_COUNT).collect();
        if self.head_taps != expected_taps {
            return Err(Error::Config(format!("head taps must be {expected_taps:?}")));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.stride.0 == 0 || s.stride.1 == 0 {
                return Err(Error::Config(format!("stage {i} has zero channels or stride")));
            }
            if i < EARLY_STAGES && s.stride.0 != 1 {
                return Err(Error::Config(format!("stage {i} reduces height; only late stages may")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return Err(Error::Config("empty input shape".into()));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config("leaky slope must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let hash = Sha256::digest(&json);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Role of a parameter tensor, used for weight-decay selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Kernel,
    Modulator,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
struct Stage<T> {
    conv: RegularizedConv<T>,
    shortcut: Option<RegularizedConv<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    config: BackboneConfig,
    stages: Vec<Stage<T>>,
    head: RegularizedConv<T>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    stage_inputs: Vec<Tensor<T>>,
    stage_pre: Vec<Tensor<T>>,
    tap_shapes: Vec<(usize, usize, usize)>,
    head_input: Tensor<T>,
}

fn random_kernel<T: Real>(rng: &mut ChaCha8Rng, shape: [usize; 4], gain: f64) -> Tensor<T> {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
    let n = shape.iter().product();
    Tensor::from_vec(&shape, (0..n).map(|_| T::cast(normal.sample(rng))).collect()).expect("shape")
}

fn conv_param_layout<T: Real>(prefix: &str, conv: &RegularizedConv<T>) -> Vec<(String, ParamKind)> {
    let mut v = vec![(format!("{prefix}.kernel"), ParamKind::Kernel)];
    if !conv.is_folded() {
        v.push((format!("{prefix}.modulator"), ParamKind::Modulator));
    }
    if conv.bias().is_some() {
        v.push((format!("{prefix}.bias"), ParamKind::Bias));
    }
    v
}

/// Network input tensor `(6, h, w)` from a range image; occupied pixels are
/// normalized per channel, empty pixels stay zero.
pub fn encode_input<T: Real>(image: &RangeImage, norm: &InputNorm) -> Tensor<T> {
    let hw = image.height() * image.width();
    let ch = image.channels();
    let mask = &ch[(RV_CHANNELS - 1) * hw..];
    let mut data = Vec::with_capacity(RV_CHANNELS * hw);
    for c in 0..RV_CHANNELS {
        let (mean, std) = (norm.mean[c], norm.std[c]);
        data.extend(ch[c * hw..(c + 1) * hw].iter().zip(mask).map(|(&v, &m)| {
            if m != 0.0 {
                T::cast((v as f64 - mean) / std)
            } else {
                T::zero()
            }
        }));
    }
    Tensor::from_vec(&[RV_CHANNELS, image.height(), image.width()], data).expect("shape")
}

impl<T: Real> Backbone<T> {
    /// Fresh network: He-scaled Gaussian kernels, unit modulators, zero biases.
    pub fn init(config: &BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.kernel_size;
        let pad = k / 2;
        let mut cin = config.input_channels;
        let mut stages = Vec::with_capacity(STAGE_COUNT);
        for spec in &config.stages {
            let cout = spec.channels;
            let conv = RegularizedConv::new(
                random_kernel(&mut rng, [cout, cin, k, k], 2.0),
                Some(Tensor::zeros(&[cout])),
                spec.stride,
                (pad, pad),
            )?;
            let shortcut = if cin != cout || spec.stride != (1, 1) {
                Some(RegularizedConv::new(
                    random_kernel(&mut rng, [cout, cin, 1, 1], 1.0),
                    None,
                    spec.stride,
                    (0, 0),
                )?)
            } else {
                None
            };
            stages.push(Stage { conv, shortcut });
            cin = cout;
        }
        let head_in: usize = config.head_taps.iter().map(|&t| config.stages[t].channels).sum();
        let head = RegularizedConv::new(
            random_kernel(&mut rng, [config.num_classes, head_in, 1, 1], 1.0),
            Some(Tensor::zeros(&[config.num_classes])),
            (1, 1),
            (0, 0),
        )?;
        Ok(Backbone {
            config: config.clone(),
            stages,
            head,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn is_folded(&self) -> bool {
        self.head.is_folded()
    }

    /// Every convolution with its parameter-name prefix, in parameter order.
    pub fn convs(&self) -> Vec<(String, &RegularizedConv<T>)> {
        let mut v = Vec::new();
        for (i, s) in self.stages.iter().enumerate() {
            v.push((format!("stage{i}.conv"), &s.conv));
            if let Some(p) = &s.shortcut {
                v.push((format!("stage{i}.proj"), p));
            }
        }
        v.push(("head".to_string(), &self.head));
        v
    }

    pub fn convs_mut(&mut self) -> Vec<(String, &mut RegularizedConv<T>)> {
        let mut v = Vec::new();
        for (i, s) in self.stages.iter_mut().enumerate() {
            v.push((format!("stage{i}.conv"), &mut s.conv));
            if let Some(p) = s.shortcut.as_mut() {
                v.push((format!("stage{i}.proj"), p));
            }
        }
        v.push(("head".to_string(), &mut self.head));
        v
    }

    /// `(name, kind)` of every trainable tensor, in gradient order.
    pub fn param_layout(&self) -> Vec<(String, ParamKind)> {
        self.convs()
            .into_iter()
            .flat_map(|(name, conv)| conv_param_layout(&name, conv))
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.convs().into_iter().flat_map(|(_, c)| c.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = Vec::new();
        for s in self.stages.iter_mut() {
            v.extend(s.conv.params_mut());
            if let Some(p) = s.shortcut.as_mut() {
                v.extend(p.params_mut());
            }
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Fold every modulator into its kernel for inference.
    pub fn fold(&mut self) -> Result<()> {
        for (_, c) in self.convs_mut() {
            c.fold()?;
        }
        Ok(())
    }

    pub(crate) fn replace_conv(&mut self, name: &str, conv: RegularizedConv<T>) -> Result<()> {
        let slot = self
            .convs_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::UnknownName(format!("layer {name}")))?;
        if slot.kernel().shape() != conv.kernel().shape() || slot.bias().is_some() != conv.bias().is_some() {
            return Err(Error::Shape(format!("layer {name} does not match the configured architecture")));
        }
        *slot = conv;
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let want = [self.config.input_channels, self.config.input_height, self.config.input_width];
        if x.shape() != want {
            return Err(Error::Shape(format!("input {:?}, network expects {want:?}", x.shape())));
        }
        Ok(())
    }

    fn stage_forward(&self, i: usize, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let slope = T::cast(self.config.leaky_slope);
        let stage = &self.stages[i];
        let pre = stage.conv.forward(x)?;
        let mut out = leaky_relu(&pre, slope);
        match &stage.shortcut {
            Some(p) => out.add_assign(&p.forward(x)?),
            None => out.add_assign(x),
        }
        if !out.all_finite() {
            return Err(Error::NonFinite(format!("stage {i} activation")));
        }
        Ok((pre, out))
    }

    fn head_input(&self, taps: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (h, w) = (self.config.input_height, self.config.input_width);
        let up = taps
            .iter()
            .map(|t| upsample_nearest(t, h, w))
            .collect::<Result<Vec<_>>>()?;
        concat_channels(&up)
    }

    /// Logits `(C, h, w)` without keeping activations.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut taps = Vec::new();
        for i in 0..STAGE_COUNT {
            let (_, out) = self.stage_forward(i, &cur)?;
            cur = out;
            if self.config.head_taps.contains(&i) {
                taps.push(cur.clone());
            }
        }
        let logits = self.head.forward(&self.head_input(&taps.iter().collect::<Vec<_>>())?)?;
        if !logits.all_finite() {
            return Err(Error::NonFinite("head logits".into()));
        }
        Ok(logits)
    }

    /// Logits plus the tape needed by [`Self::backward`].
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(x)?;
        let mut stage_inputs = Vec::with_capacity(STAGE_COUNT);
        let mut stage_pre = Vec::with_capacity(STAGE_COUNT);
        let mut cur = x.clone();
        for i in 0..STAGE_COUNT {
            let (pre, out) = self.stage_forward(i, &cur)?;
            stage_inputs.push(std::mem::replace(&mut cur, out));
            stage_pre.push(pre);
        }
        // tap i's output is stage i+1's input, or `cur` for the last stage
        let tap_refs: Vec<&Tensor<T>> = self
            .config
            .head_taps
            .iter()
            .map(|&t| if t + 1 < STAGE_COUNT { &stage_inputs[t + 1] } else { &cur })
            .collect();
        let tap_shapes = tap_refs
            .iter()
            .map(|t| (t.shape()[0], t.shape()[1], t.shape()[2]))
            .collect();
        let head_input = self.head_input(&tap_refs)?;
        let logits = self.head.forward(&head_input)?;
        if !logits.all_finite() {
            return Err(Error::NonFinite("head logits".into()));
        }
        Ok((
            logits,
            Tape {
                stage_inputs,
                stage_pre,
                tap_shapes,
                head_input,
            },
        ))
    }

    /// Parameter gradients (in [`Self::params`] order) given dLoss/dLogits.
    pub fn backward(&self, tape: &Tape<T>, g_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let slope = T::cast(self.config.leaky_slope);
        let head = self.head.backward_impl(&tape.head_input, g_logits, true)?;
        let sizes: Vec<usize> = tape.tap_shapes.iter().map(|s| s.0).collect();
        let parts = split_channels(head.input.as_ref().expect("requested"), &sizes)?;

        let mut g_out: Vec<Option<Tensor<T>>> = vec![None; STAGE_COUNT];
        for ((&t, part), &(_, h, w)) in self.config.head_taps.iter().zip(&parts).zip(&tape.tap_shapes) {
            let g = upsample_nearest_backward(part, h, w)?;
            accumulate(&mut g_out[t], g);
        }

        let mut per_stage: Vec<Vec<Tensor<T>>> = vec![Vec::new(); STAGE_COUNT];
        for i in (0..STAGE_COUNT).rev() {
            let stage = &self.stages[i];
            let x = &tape.stage_inputs[i];
            let g = match g_out[i].take() {
                Some(g) => g,
                None => Tensor::zeros(tape.stage_pre[i].shape()),
            };
            let want_input = i > 0;
            let g_pre = leaky_relu_backward(&tape.stage_pre[i], &g, slope);
            let cg = stage.conv.backward_impl(x, &g_pre, want_input)?;
            let mut gx = cg.input.clone();
            let mut grads = RegularizedConv::grads_in_param_order(cg);
            match &stage.shortcut {
                Some(p) => {
                    let sg = p.backward_impl(x, &g, want_input)?;
                    if let (Some(acc), Some(sx)) = (gx.as_mut(), sg.input.as_ref()) {
                        acc.add_assign(sx);
                    }
                    grads.extend(RegularizedConv::grads_in_param_order(sg));
                }
                None => {
                    if let Some(acc) = gx.as_mut() {
                        acc.add_assign(&g);
                    }
                }
            }
            per_stage[i] = grads;
            if i > 0 {
                accumulate(&mut g_out[i - 1], gx.expect("requested"));
            }
        }

        let mut all: Vec<Tensor<T>> = per_stage.into_iter().flatten().collect();
        all.extend(RegularizedConv::grads_in_param_order(head));
        Ok(all)
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}
