//! Numerical core for RGB-thermal salient object detection: tensor kernels with hand-written
//! backward passes, attention-based fusion operators and a small two-stream network, the
//! cross-entropy and Laplacian edge losses, the PR/F-measure/MAE evaluation protocol, and
//! dataset tooling for challenge-attribute analysis.

pub mod benchmark;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod ops;
pub mod pnm;
pub mod reference;
pub mod selfcheck;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ConvParams, Dims, Rng, Tensor};
