//! PSNR, Bjøntegaard delta rate and QP sweeps.

mod bd;
mod psnr;
mod sweep;

pub use bd::{bd_psnr, bd_rate, fit_cubic, RdPoint};
pub use psnr::{mse_u8, psnr, psnr_from_mse, psnr_image, Psnr};
pub use sweep::{
    evaluate_qp, parse_sweep_csv, read_sweep_csv, sweep_qp, write_sweep_csv, QpEval, SweepCurve, SweepModel,
    SweepPoint, SWEEP_HEADER,
};
