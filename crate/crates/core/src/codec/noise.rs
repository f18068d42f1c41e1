//! Measures how quantization noise power scales with the quantization step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dct::Dct;
use super::quant::quantize_coeff;
use crate::error::{Error, Result};
use crate::modulation::qstep_from_qp;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseScanConfig {
    pub seed: u64,
    /// Transform coefficients quantized at each QP.
    pub coefficients: usize,
    pub block_size: usize,
    /// Test pixels are uniform in `[0, pixel_range]`.
    pub pixel_range: f64,
    pub offset: f64,
}

impl Default for NoiseScanConfig {
    fn default() -> Self {
        NoiseScanConfig {
            seed: 0,
            coefficients: 1 << 20,
            block_size: 8,
            pixel_range: 255.0,
            offset: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseScan {
    pub qps: Vec<i32>,
    pub qsteps: Vec<f64>,
    /// Mean squared reconstruction error per coefficient, per QP.
    pub variances: Vec<f64>,
    /// `[qp][bin]` error power of each transform frequency.
    pub bin_variances: Vec<Vec<f64>>,
    /// Least-squares slope of `ln variance` against `ln qstep`.
    pub slope: f64,
    pub bin_slopes: Vec<f64>,
    /// Correlation between coefficient and its error, per QP (0 for purely
    /// additive signal-independent noise).
    pub signal_correlation: Vec<f64>,
    pub coefficients: usize,
}

impl NoiseScan {
    /// Ratio of measured error power to the `Δ²/12` uniform model, per QP.
    pub fn uniform_model_ratio(&self) -> Vec<f64> {
        self.variances
            .iter()
            .zip(&self.qsteps)
            .map(|(v, s)| v / (s * s / 12.0))
            .collect()
    }
}

pub(crate) fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Quantizes the same random test signal at every QP and fits the power law.
pub fn noise_power_scan(qps: &[i32], cfg: &NoiseScanConfig) -> Result<NoiseScan> {
    if qps.len() < 3 {
        return Err(Error::invalid("noise_power_scan", format!("need at least 3 QPs, got {}", qps.len())));
    }
    if !(cfg.pixel_range > 0.0) {
        return Err(Error::Degenerate("test signal has zero variance".into()));
    }
    let qsteps = qps.iter().map(|&qp| qstep_from_qp(qp)).collect::<Result<Vec<_>>>()?;
    if qsteps.windows(2).any(|w| w[0] == w[1]) || qsteps.iter().all(|&s| s == qsteps[0]) {
        return Err(Error::invalid("noise_power_scan", "QP values must be distinct"));
    }
    let bs = cfg.block_size;
    let dct = Dct::new(bs)?;
    let bins = bs * bs;
    let blocks = cfg.coefficients.div_ceil(bins).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coeffs = Vec::with_capacity(blocks * bins);
    let mut block = vec![0.0; bins];
    for _ in 0..blocks {
        block.iter_mut().for_each(|v| *v = rng.random_range(0.0..=cfg.pixel_range));
        coeffs.extend(dct.forward(&block)?);
    }

    let mut variances = Vec::with_capacity(qps.len());
    let mut bin_variances = Vec::with_capacity(qps.len());
    let mut signal_correlation = Vec::with_capacity(qps.len());
    for &step in &qsteps {
        let mut per_bin = vec![0.0; bins];
        let (mut sc, mut ss, mut se, mut s_c, mut s_e) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &c) in coeffs.iter().enumerate() {
            let e = quantize_coeff(c, step, cfg.offset).value - c;
            per_bin[i % bins] += e * e;
            sc += c * e;
            ss += c * c;
            se += e * e;
            s_c += c;
            s_e += e;
        }
        let n = coeffs.len() as f64;
        per_bin.iter_mut().for_each(|v| *v /= blocks as f64);
        let var = se / n;
        if !(var > 0.0) || per_bin.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Degenerate(format!("zero quantization error at step {step}")));
        }
        let cov = sc / n - (s_c / n) * (s_e / n);
        let var_c = ss / n - (s_c / n).powi(2);
        let var_e = var - (s_e / n).powi(2);
        signal_correlation.push(cov / (var_c * var_e).sqrt());
        variances.push(var);
        bin_variances.push(per_bin);
    }

    let log_steps: Vec<f64> = qsteps.iter().map(|s| s.ln()).collect();
    let slope = fit_slope(&log_steps, &variances.iter().map(|v| v.ln()).collect::<Vec<_>>());
    let bin_slopes = (0..bins)
        .map(|b| {
            let y: Vec<f64> = bin_variances.iter().map(|v| v[b].ln()).collect();
            fit_slope(&log_steps, &y)
        })
        .collect();
    Ok(NoiseScan {
        qps: qps.to_vec(),
        qsteps,
        variances,
        bin_variances,
        slope,
        bin_slopes,
        signal_correlation,
        coefficients: coeffs.len(),
    })
}
