//! Spectral form of the influence factor.
//!
//! A filter `W` trained at one noise level, applied to a signal with power
//! `S` and additive noise power `N`, has the per-bin expected error
//! `|1 − V/W|²·S + |V|²·N` when `V` replaces `W`. The minimizing response is
//! `W′ = W / (1 + |W|²·N/S)`: the original filter scaled by a factor in
//! `(0, 1]`.

use std::io::Write;
use std::ops::Range;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralModel {
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
    pub response: Vec<Complex64>,
}

impl SpectralModel {
    pub fn new(signal: Vec<f64>, noise: Vec<f64>, response: Vec<Complex64>) -> Result<Self> {
        let m = SpectralModel {
            signal,
            noise,
            response,
        };
        m.validate()?;
        Ok(m)
    }

    /// Real-valued response.
    pub fn real(signal: Vec<f64>, noise: Vec<f64>, response: Vec<f64>) -> Result<Self> {
        Self::new(signal, noise, response.into_iter().map(|w| Complex64::new(w, 0.0)).collect())
    }

    pub fn bins(&self) -> usize {
        self.signal.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bins = self.signal.len();
        if bins == 0 {
            return Err(Error::invalid("spectral model", "no bins"));
        }
        if self.noise.len() != bins || self.response.len() != bins {
            return Err(Error::shape(
                "spectral model",
                format!("{bins} bins"),
                format!("{} noise, {} response", self.noise.len(), self.response.len()),
            ));
        }
        for (name, powers) in [("signal", &self.signal), ("noise", &self.noise)] {
            if let Some((i, p)) = powers.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p >= 0.0)) {
                return Err(Error::invalid("spectral model", format!("{name} power {p} at bin {i}")));
            }
        }
        if let Some(i) = self.response.iter().position(|w| !(w.re.is_finite() && w.im.is_finite())) {
            return Err(Error::invalid("spectral model", format!("non-finite response at bin {i}")));
        }
        Ok(())
    }

    pub fn with_noise(&self, noise: Vec<f64>) -> Result<Self> {
        Self::new(self.signal.clone(), noise, self.response.clone())
    }

    /// Independent uniform draws per bin: `S ∈ [0.1, 10]`, `N ∈ [0, 5]`,
    /// real `W ∈ [0.1, 2]`.
    pub fn random(seed: u64, bins: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let signal = (0..bins).map(|_| rng.random_range(0.1..10.0)).collect();
        let noise = (0..bins).map(|_| rng.random_range(0.0..5.0)).collect();
        let response = (0..bins)
            .map(|_| Complex64::new(rng.random_range(0.1..2.0), 0.0))
            .collect();
        SpectralModel {
            signal,
            noise,
            response,
        }
    }

    /// Slowly varying spectra: a power-law signal, a gently tilted noise
    /// floor and a low-pass response, each with seeded parameters.
    pub fn smooth(seed: u64, bins: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s0 = rng.random_range(5.0..20.0);
        let corner = rng.random_range(2.0..8.0);
        let n0 = rng.random_range(0.5..2.0);
        let tilt = rng.random_range(0.0..1.0);
        let w0 = rng.random_range(0.8..1.5);
        let cutoff = rng.random_range(0.5..1.5) * bins as f64;
        let mut signal = Vec::with_capacity(bins);
        let mut noise = Vec::with_capacity(bins);
        let mut response = Vec::with_capacity(bins);
        for i in 0..bins {
            let f = i as f64 + 0.5;
            signal.push(s0 / (1.0 + (f / corner).powi(2)));
            noise.push(n0 * (1.0 + tilt * f / bins as f64));
            response.push(Complex64::new(w0 / (1.0 + (f / cutoff).powi(2)), 0.0));
        }
        SpectralModel {
            signal,
            noise,
            response,
        }
    }
}

/// `1 / (1 + |W|²·N/S)`. Bins with `N = 0` get 1; bins with `S = 0` and
/// `N > 0` get 0.
pub fn bin_factor(s: f64, n: f64, w: Complex64) -> f64 {
    if n == 0.0 {
        1.0
    } else if s == 0.0 {
        0.0
    } else {
        1.0 / (1.0 + w.norm_sqr() / s * n)
    }
}

pub fn influence_factors(m: &SpectralModel) -> Vec<f64> {
    (0..m.bins())
        .map(|i| bin_factor(m.signal[i], m.noise[i], m.response[i]))
        .collect()
}

pub fn adapt_filter(m: &SpectralModel) -> Result<Vec<Complex64>> {
    m.validate()?;
    Ok(m.response
        .iter()
        .zip(influence_factors(m))
        .map(|(w, f)| w * f)
        .collect())
}

/// Expected squared error of one bin when `v` replaces `w`.
pub fn bin_mse(s: f64, n: f64, w: Complex64, v: Complex64) -> f64 {
    let signal_term = if s == 0.0 { 0.0 } else { (Complex64::new(1.0, 0.0) - v / w).norm_sqr() * s };
    signal_term + v.norm_sqr() * n
}

pub fn expected_mse(m: &SpectralModel, candidate: &[Complex64]) -> Result<f64> {
    m.validate()?;
    if candidate.len() != m.bins() {
        return Err(Error::shape("expected_mse", m.bins(), candidate.len()));
    }
    let mut total = 0.0;
    for i in 0..m.bins() {
        let (s, w) = (m.signal[i], m.response[i]);
        if s > 0.0 && w.norm_sqr() == 0.0 {
            return Err(Error::invalid(
                "expected_mse",
                format!("zero response at bin {i} with signal power {s}"),
            ));
        }
        total += bin_mse(s, m.noise[i], w, candidate[i]);
    }
    Ok(total)
}

/// Minimizes `g ↦ bin_mse(s, n, w, g·w)` over `g ∈ [0, 1]` by bisecting on
/// the sign of a central-difference slope.
pub fn numeric_bin_gain(s: f64, n: f64, w: Complex64) -> f64 {
    let f = |g: f64| bin_mse(s, n, w, w * g);
    let h = 1e-6;
    let slope = |g: f64| f(g + h) - f(g - h);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    if slope(lo) >= 0.0 {
        return lo;
    }
    if slope(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest `|W′ − g*·W|` over bins, where `g*` is the numerical minimizer.
pub fn numeric_deviation(m: &SpectralModel) -> Result<f64> {
    let adapted = adapt_filter(m)?;
    Ok((0..m.bins())
        .map(|i| {
            let g = numeric_bin_gain(m.signal[i], m.noise[i], m.response[i]);
            (adapted[i] - m.response[i] * g).norm()
        })
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationReport {
    pub trials: usize,
    pub violations: usize,
    pub optimum: f64,
    /// Smallest `mse(perturbed) − mse(optimum)` seen.
    pub min_margin: f64,
}

/// Scales each bin of `W′` by an independent `1 + δ`, `|δ| ≤ max_delta`.
pub fn perturbation_check(m: &SpectralModel, trials: usize, max_delta: f64, seed: u64) -> Result<PerturbationReport> {
    let adapted = adapt_filter(m)?;
    let optimum = expected_mse(m, &adapted)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut min_margin = f64::INFINITY;
    for _ in 0..trials {
        let v: Vec<Complex64> = adapted
            .iter()
            .map(|a| a * (1.0 + rng.random_range(-max_delta..=max_delta)))
            .collect();
        let margin = expected_mse(m, &v)? - optimum;
        if margin < 0.0 {
            violations += 1;
        }
        min_margin = min_margin.min(margin);
    }
    Ok(PerturbationReport {
        trials,
        violations,
        optimum,
        min_margin,
    })
}

/// `bands` contiguous ranges of near-equal width covering `bins`.
pub fn uniform_partition(bins: usize, bands: usize) -> Result<Vec<Range<usize>>> {
    if bands == 0 || bands > bins {
        return Err(Error::invalid(
            "uniform_partition",
            format!("cannot split {bins} bins into {bands} bands"),
        ));
    }
    Ok((0..bands)
        .map(|b| (b * bins / bands)..((b + 1) * bins / bands))
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubbandReport {
    pub bands: usize,
    /// Band-constant factor `1 / (1 + k·N̄)` per band.
    pub band_factors: Vec<f64>,
    /// Largest `|W′_band − W′| / |W′|` over bins.
    pub max_rel_deviation: f64,
}

/// Replaces `|W|²/S` and `N` by their band means and compares the resulting
/// band-constant factors with the exact per-bin ones.
pub fn subband_consistency(m: &SpectralModel, partition: &[Range<usize>]) -> Result<SubbandReport> {
    m.validate()?;
    let mut owner = vec![usize::MAX; m.bins()];
    for (b, band) in partition.iter().enumerate() {
        if band.is_empty() {
            return Err(Error::invalid("subband_consistency", format!("band {b} is empty")));
        }
        if band.end > m.bins() {
            return Err(Error::invalid("subband_consistency", format!("band {b} exceeds {} bins", m.bins())));
        }
        for i in band.clone() {
            if owner[i] != usize::MAX {
                return Err(Error::invalid("subband_consistency", format!("bin {i} in bands {} and {b}", owner[i])));
            }
            owner[i] = b;
        }
    }
    if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(Error::invalid("subband_consistency", format!("bin {i} not covered")));
    }
    let exact = influence_factors(m);
    let mut band_factors = Vec::with_capacity(partition.len());
    let mut max_rel_deviation: f64 = 0.0;
    for band in partition {
        let len = band.len() as f64;
        let n_mean = band.clone().map(|i| m.noise[i]).sum::<f64>() / len;
        let live: Vec<usize> = band.clone().filter(|&i| m.signal[i] > 0.0).collect();
        let factor = if n_mean == 0.0 {
            1.0
        } else if live.is_empty() {
            0.0
        } else {
            let k = live
                .iter()
                .map(|&i| m.response[i].norm_sqr() / m.signal[i])
                .sum::<f64>()
                / live.len() as f64;
            1.0 / (1.0 + k * n_mean)
        };
        for i in band.clone() {
            let dev = if exact[i] == 0.0 {
                if factor == 0.0 { 0.0 } else { f64::INFINITY }
            } else {
                (factor - exact[i]).abs() / exact[i]
            };
            max_rel_deviation = max_rel_deviation.max(dev);
        }
        band_factors.push(factor);
    }
    Ok(SubbandReport {
        bands: partition.len(),
        band_factors,
        max_rel_deviation,
    })
}

/// `(band count, max relative deviation)` for each uniform partition.
pub fn refinement_sweep(m: &SpectralModel, band_counts: &[usize]) -> Result<Vec<(usize, f64)>> {
    band_counts
        .iter()
        .map(|&b| {
            let report = subband_consistency(m, &uniform_partition(m.bins(), b)?)?;
            Ok((b, report.max_rel_deviation))
        })
        .collect()
}

fn fmt_complex(z: Complex64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else {
        format!("{}{:+}i", z.re, z.im)
    }
}

/// Writes `bin,S,N,W,W_adapted,factor`, one row per bin.
pub fn write_report_csv<W: Write>(mut out: W, m: &SpectralModel) -> Result<()> {
    let adapted = adapt_filter(m)?;
    let factors = influence_factors(m);
    writeln!(out, "bin,S,N,W,W_adapted,factor")?;
    for i in 0..m.bins() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            i,
            m.signal[i],
            m.noise[i],
            fmt_complex(m.response[i]),
            fmt_complex(adapted[i]),
            factors[i]
        )?;
    }
    Ok(())
}
