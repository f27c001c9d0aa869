//! Dense tensors, the modulated convolution and the segmentation backbone,
//! with hand-written reverse-mode gradients.

mod backbone;
pub mod checkpoint;
mod conv;
pub mod layers;
mod scalar;
mod tensor;

pub use backbone::{encode_input, Backbone, BackboneConfig, InputNorm, ParamKind, StageSpec, Tape, EARLY_STAGES, STAGE_COUNT};
pub use conv::{ConvGrads, RegularizedConv};
pub use scalar::Real;
pub use tensor::Tensor;
