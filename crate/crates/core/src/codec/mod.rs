//! Desk-scale codec stand-in: 8×8 orthonormal DCT, uniform quantization with
//! the `2^((QP−4)/6)` step law, an entropy rate proxy, and the dataset
//! pipeline built on it.

mod dataset;
mod dct;
mod image;
mod noise;
mod quant;
mod synth;

pub use dataset::{prepare_dataset, DataSource, DatasetSpec, ImageSamples, SampleStore, Split};
pub use dct::{dct2, idct2, Dct};
pub use image::{read_pgm, write_pgm, GrayImage};
pub use noise::{noise_power_scan, NoiseScan, NoiseScanConfig};
pub use quant::{encode_decode, level_entropy_bits, quantize_coeff, Encoded, Quantized, QuantizerConfig};
pub use synth::{synthetic_image, synthetic_images};
