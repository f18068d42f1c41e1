#![allow(dead_code)]

pub mod gradcheck;

use qpadapt::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(shape, random_vec(rng, shape.len(), lo, hi)).unwrap()
}

/// `Σ a·b` in index order.
pub fn inner(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central difference `(f(x + h·e_i) − f(x − h·e_i)) / 2h` at each index in
/// `indices`, perturbing `x` in place and restoring it afterwards.
pub fn central_diff(x: &mut [f64], indices: &[usize], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Worst relative errors between analytic and numeric gradients.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradError {
    /// Over every entry, `|a − n| / max(|a|, |n|, 1e-3)`.
    pub overall: f64,
    /// Over entries with `max(|a|, |n|) > 1e-3`, `|a − n| / max(|a|, |n|)`.
    pub well_scaled: f64,
    pub checked: usize,
    /// Entries left out because the difference stencil crossed a kink.
    pub skipped: usize,
}

impl GradError {
    pub fn passes(&self) -> bool {
        self.overall < 1e-3 && self.well_scaled < 1e-5 && self.skipped * 20 <= self.checked + self.skipped
    }

    pub fn merge(self, other: GradError) -> GradError {
        GradError {
            overall: self.overall.max(other.overall),
            well_scaled: self.well_scaled.max(other.well_scaled),
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }
}

pub fn grad_error(analytic: &[f64], numeric: &[f64]) -> GradError {
    assert_eq!(analytic.len(), numeric.len());
    let mut e = GradError {
        checked: analytic.len(),
        ..GradError::default()
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        let diff = (a - n).abs();
        e.overall = e.overall.max(diff / scale.max(1e-3));
        if scale > 1e-3 {
            e.well_scaled = e.well_scaled.max(diff / scale);
        }
    }
    e
}

pub fn assert_grad(name: &str, analytic: &[f64], numeric: &[f64]) -> GradError {
    let e = grad_error(analytic, numeric);
    assert!(e.passes(), "{name}: {e:?}");
    e
}

/// Up to `count` distinct indices below `len`, all of them when `len ≤ count`.
pub fn sample_indices(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < count {
        picked.insert(rng.random_range(0..len));
    }
    picked.into_iter().collect()
}
