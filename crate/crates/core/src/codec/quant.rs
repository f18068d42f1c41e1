use std::collections::BTreeMap;

use super::dct::Dct;
use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::modulation::{qstep_from_qp, QP_MAX, QP_MIN};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantizerConfig {
    pub block_size: usize,
    pub qp: i32,
    /// Rounding offset in `[0, 0.5]`; 0.5 is round-half-up.
    pub offset: f64,
}

impl QuantizerConfig {
    pub fn new(qp: i32) -> Self {
        QuantizerConfig {
            block_size: 8,
            qp,
            offset: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size < 2 {
            return Err(Error::invalid("quantizer", format!("block size {} < 2", self.block_size)));
        }
        if !(QP_MIN..=QP_MAX).contains(&self.qp) {
            return Err(Error::QpOutOfRange(self.qp));
        }
        if !(0.0..=0.5).contains(&self.offset) {
            return Err(Error::invalid("quantizer", format!("offset {} outside [0, 0.5]", self.offset)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quantized {
    pub level: i64,
    /// `level · qstep`.
    pub value: f64,
}

/// `level = sign(c) · floor(|c| / qstep + offset)`.
pub fn quantize_coeff(c: f64, qstep: f64, offset: f64) -> Quantized {
    debug_assert!(qstep > 0.0);
    let mag = (c.abs() / qstep + offset).floor() as i64;
    let level = if c < 0.0 { -mag } else { mag };
    Quantized {
        level,
        value: level as f64 * qstep,
    }
}

/// Total bits for coding `levels` at their empirical zeroth-order entropy.
pub fn level_entropy_bits(levels: &[i64]) -> f64 {
    if levels.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &l in levels {
        *counts.entry(l).or_default() += 1;
    }
    let n = levels.len() as f64;
    let h: f64 = counts
        .values()
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.log2()
        })
        .sum();
    h * n
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub recon: GrayImage,
    /// DC and AC levels coded with separate alphabets.
    pub rate_bits: f64,
    pub dc_bits: f64,
    pub ac_bits: f64,
}

/// Blockwise DCT → quantize → inverse DCT → clip and round to 8 bits.
pub fn encode_decode(image: &GrayImage, cfg: &QuantizerConfig) -> Result<Encoded> {
    cfg.validate()?;
    if image.is_empty() {
        return Err(Error::invalid("encode_decode", "empty image"));
    }
    let bs = cfg.block_size;
    let dct = Dct::new(bs)?;
    let qstep = qstep_from_qp(cfg.qp)?;
    let padded = image.pad_to_multiple(bs);
    let mut recon = padded.clone();
    let mut dc = Vec::new();
    let mut ac = Vec::with_capacity(padded.data.len());
    let mut block = vec![0.0; bs * bs];
    for by in (0..padded.height).step_by(bs) {
        for bx in (0..padded.width).step_by(bs) {
            for y in 0..bs {
                for x in 0..bs {
                    block[y * bs + x] = padded.get(bx + x, by + y) as f64;
                }
            }
            let mut coeffs = dct.forward(&block)?;
            for (i, c) in coeffs.iter_mut().enumerate() {
                let q = quantize_coeff(*c, qstep, cfg.offset);
                if i == 0 {
                    dc.push(q.level);
                } else {
                    ac.push(q.level);
                }
                *c = q.value;
            }
            let pixels = dct.inverse(&coeffs)?;
            for y in 0..bs {
                for x in 0..bs {
                    recon.data[(by + y) * padded.width + bx + x] = pixels[y * bs + x].round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    let dc_bits = level_entropy_bits(&dc);
    let ac_bits = level_entropy_bits(&ac);
    Ok(Encoded {
        recon: recon.crop(image.width, image.height),
        rate_bits: dc_bits + ac_bits,
        dc_bits,
        ac_bits,
    })
}
