//! Seeded 1/f² Gaussian fields as stand-in natural images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dct::Dct;
use super::image::GrayImage;

const MEAN: f64 = 128.0;
const STD: f64 = 48.0;

/// Image `index` of the stream for `seed`, `size × size` pixels.
pub fn synthetic_image(seed: u64, index: u64, size: usize) -> GrayImage {
    let size = size.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let dct = Dct::new(size).expect("size >= 2");
    // Amplitude ∝ 1/f gives a power spectrum ∝ 1/f².
    let mut coeffs = vec![0.0; size * size];
    for v in 0..size {
        for u in 0..size {
            if u == 0 && v == 0 {
                continue;
            }
            let f = ((u * u + v * v) as f64).sqrt();
            let g: f64 = StandardNormal.sample(&mut rng);
            coeffs[v * size + u] = g / f;
        }
    }
    let field = dct.inverse(&coeffs).expect("square block");
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { STD / var.sqrt() } else { 0.0 };
    let data = field
        .iter()
        .map(|v| (MEAN + (v - mean) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage {
        width: size,
        height: size,
        data,
    }
}

pub fn synthetic_images(seed: u64, count: usize, size: usize) -> Vec<GrayImage> {
    (0..count as u64).map(|i| synthetic_image(seed, i, size)).collect()
}
