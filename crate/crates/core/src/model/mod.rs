//! Filter backbones and their trainable parameters.

mod network;
mod spec;

pub use network::{ConvGrad, Grads, Network, Tape};
pub use spec::{
    build_dcad, build_liu_dsc, build_tucodec_mini, build_vrcnn, count_params, Arch, Layer, LayerParams, Mode,
    ModelSpec, ParamCount, QP_MAP_SCALE,
};
