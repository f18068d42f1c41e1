//! QP-adaptive convolution for learned in-loop filters.
//!
//! A small CPU engine ([`tensor`], [`conv`], [`activation`], [`ops`],
//! [`adam`]) trains restoration backbones ([`model`]) whose convolution
//! outputs are scaled per channel by `1 / (1 + θ·Qstep²)` ([`modulation`]).
//! A blockwise DCT quantizer ([`codec`]) produces the training data, the
//! [`wiener`] module checks the spectral form of the influence factor, and
//! [`metrics`] provides PSNR, BD-rate and QP sweeps.

pub mod activation;
pub mod adam;
pub mod checkpoint;
pub mod codec;
pub mod conv;
pub mod error;
mod gemm;
pub mod metrics;
pub mod model;
pub mod modulation;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod wiener;

pub use error::{Error, Result};
pub use model::{Arch, Mode, ModelSpec, Network};
pub use modulation::QpContext;
pub use tensor::{Scalar, Shape, Tensor};
