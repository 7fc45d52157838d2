//! Cross-softmax assignment and cross-attention association for online
//! multi-object tracking.
//!
//! The numeric kernels are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix them to `f64`, which is what the tracker,
//! the harness and the CLI use.

pub mod assignment;
pub mod attention;
pub mod bbox;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod scalar;
pub mod tensor;
pub mod tracker;

pub use bbox::BBox;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = tensor::Matrix<f64>;
pub type Tensor3 = tensor::Tensor3<f64>;
pub type AffinityMatrix = assignment::AffinityMatrix<f64>;
pub type AssignmentResult = assignment::AssignmentResult<f64>;
pub type TokenMap = attention::TokenMap<f64>;
pub type TokenSet = attention::TokenSet<f64>;
pub type PipelineWeights = attention::PipelineWeights<f64>;
pub type Tracklet = tracker::Tracklet<f64>;
pub type Tracker = tracker::Tracker<f64>;

pub type MatrixF32 = tensor::Matrix<f32>;
pub type AffinityMatrixF32 = assignment::AffinityMatrix<f32>;
pub type PipelineWeightsF32 = attention::PipelineWeights<f32>;
