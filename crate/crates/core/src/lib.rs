//! Motion-view disentanglement for streaming 3D human pose lifting.

pub mod disentangle;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod mat3;
pub mod netcore;
pub mod scalar;
pub mod streaming;
pub mod tensor;
pub mod trainer;
pub mod viewfeat;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases for the common generic types.
pub type Skeleton3D = geometry::Skeleton<f64>;
pub type Keypoints = geometry::Keypoints2D<f64>;
pub type Camera = geometry::CameraPose<f64>;
pub type Clip = geometry::MotionClip<f64>;
pub type Sample = geometry::MultiViewSample<f64>;
pub type Model64 = netcore::Model<f64>;
pub type Stream64 = streaming::StreamState<f64>;
pub type Mat = tensor::Matrix<f64>;
