//! Head pose estimation from 68-point 3D facial landmarks.
//!
//! The pipeline: [`preprocess`] normalizes raw landmarks and selects five
//! facial-region groups; [`model`] encodes each group with a
//! permutation-invariant deep-set layer, mixes the group embeddings with
//! multi-head self-attention and decodes (yaw, pitch, roll) in degrees;
//! [`hybrid`] adds a small CNN branch over a 64×64 face crop. Everything
//! runs on the [`tape`] reverse-mode autodiff engine over f64 [`tensor`]s,
//! trained by [`training`] and measured by [`evaluation`].

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod hybrid;
pub mod model;
pub mod preprocess;
pub mod synthetic;
pub mod tape;
pub mod template;
pub mod tensor;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ConfigSnapshot};
pub use data::{DatasetSplit, FaceImage, PoseAngles, RawLandmarkSet};
pub use error::{Error, Result};
pub use evaluation::{evaluate, MetricsReport};
pub use hybrid::{HybridConfig, HybridParams};
pub use model::{ForwardCtx, GadsConfig, GadsParams};
pub use preprocess::{GroupSpec, GroupedLandmarks, NormalizedLandmarks};
pub use tape::{ActivationKind, NodeId, Reduction, Tape};
pub use tensor::Tensor;
pub use training::{LossKind, ModelKind, ModelParams, TrainConfig, TrainSetup};
