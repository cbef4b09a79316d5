//! Few-shot neural radiance field training with sparse geometric
//! consistency: a differentiable point-sampled NeRF with frequency-regularized
//! positional encoding, correspondence-driven geometry regularization, a
//! closed-form ray-consistency filter, and analytic synthetic scenes for
//! ground-truth evaluation.

pub mod checkpoint;
pub mod correspondence;
pub mod encoding;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod renderer;
pub mod scene;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, CameraPose, ClosestParams, Mat3, Ray, Vec3};
