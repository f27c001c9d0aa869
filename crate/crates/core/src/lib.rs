//! Unsupervised domain adaptation for range-view LiDAR segmentation through
//! domain concatenation, modulated convolutions and entropy-filtered
//! self-training.
//!
//! - [`pointcloud`]: clouds, range-view projection, augmentation, file formats
//! - [`synth`]: seeded synthetic driving scenes in shifted domains
//! - [`concat`]: the intermediate-domain mixing operator
//! - [`network`]: tensors, modulated convolution, the 7-stage backbone
//! - [`selftrain`]: losses, pseudo-labels, entropy ranking, AdamW, the two-round procedure
//! - [`metrics`]: confusion matrices and IoU scores
//! - [`pipeline`]: run configuration and the commands behind the CLI

pub mod concat;
pub mod error;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod pointcloud;
pub mod selftrain;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use metrics::{ConfusionMatrix, Scores};
pub use network::{Backbone, BackboneConfig, Real, RegularizedConv, Tensor};
pub use pointcloud::{ClassId, LabelMap, Point, PointCloud, Projection, RangeImage, RvSample, IGNORE};
