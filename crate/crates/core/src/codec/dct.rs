use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Orthonormal type-II DCT of a fixed square block size.
#[derive(Clone, Debug)]
pub struct Dct {
    n: usize,
    /// `basis[u * n + x] = α(u) cos(π (2x + 1) u / 2n)`.
    basis: Vec<f64>,
}

impl Dct {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("dct", format!("block size {n} < 2")));
        }
        let mut basis = vec![0.0; n * n];
        for u in 0..n {
            let alpha = if u == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for x in 0..n {
                basis[u * n + x] = alpha * (PI * (2 * x + 1) as f64 * u as f64 / (2 * n) as f64).cos();
            }
        }
        Ok(Dct { n, basis })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn check(&self, block: &[f64]) -> Result<()> {
        if block.len() != self.n * self.n {
            return Err(Error::shape("dct", format!("{0}x{0} block", self.n), block.len()));
        }
        Ok(())
    }

    /// `C · X · Cᵀ`.
    pub fn forward(&self, block: &[f64]) -> Result<Vec<f64>> {
        self.check(block)?;
        Ok(self.separable(block, false))
    }

    /// `Cᵀ · Y · C`.
    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check(coeffs)?;
        Ok(self.separable(coeffs, true))
    }

    fn separable(&self, src: &[f64], inverse: bool) -> Vec<f64> {
        let n = self.n;
        // m(i, j): forward uses C, inverse uses Cᵀ.
        let m = |i: usize, j: usize| if inverse { self.basis[j * n + i] } else { self.basis[i * n + j] };
        let mut tmp = vec![0.0; n * n];
        // rows: tmp = M · src
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += m(i, k) * src[k * n + j];
                }
                tmp[i * n + j] = acc;
            }
        }
        // columns: out = tmp · Mᵀ
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += tmp[i * n + k] * m(j, k);
                }
                out[i * n + j] = acc;
            }
        }
        out
    }
}

/// Forward DCT of a square block whose side is inferred from its length.
pub fn dct2(block: &[f64]) -> Result<Vec<f64>> {
    Dct::new(square_side(block.len())?)?.forward(block)
}

pub fn idct2(coeffs: &[f64]) -> Result<Vec<f64>> {
    Dct::new(square_side(coeffs.len())?)?.inverse(coeffs)
}

fn square_side(len: usize) -> Result<usize> {
    let n = (len as f64).sqrt().round() as usize;
    if n * n != len {
        return Err(Error::shape("dct", "square block", len));
    }
    Ok(n)
}
