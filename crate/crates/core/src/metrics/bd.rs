use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdPoint {
    /// Bits.
    pub rate: f64,
    /// dB.
    pub psnr: f64,
}

impl RdPoint {
    pub fn new(rate: f64, psnr: f64) -> Self {
        RdPoint { rate, psnr }
    }
}

fn checked_curve(name: &str, points: &[RdPoint]) -> Result<Vec<RdPoint>> {
    if points.len() < 4 {
        return Err(Error::invalid("bd_rate", format!("{name} curve has {} points, need 4", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.rate.is_finite() && p.rate > 0.0 && p.psnr.is_finite())) {
        return Err(Error::invalid("bd_rate", format!("{name} curve has invalid point {p:?}")));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.psnr.total_cmp(&b.psnr));
    if sorted.windows(2).any(|w| w[1].rate <= w[0].rate) {
        log::warn!("{name} curve is not monotone; fitting sorted points");
    }
    Ok(sorted)
}

/// Least-squares cubic `y ≈ c0 + c1·t + c2·t² + c3·t³`.
pub fn fit_cubic(t: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    if t.len() != y.len() || t.len() < 4 {
        return Err(Error::invalid("fit_cubic", format!("{} abscissae, {} ordinates", t.len(), y.len())));
    }
    let mut a = [[0.0f64; 5]; 4];
    for (&ti, &yi) in t.iter().zip(y) {
        let pow = [1.0, ti, ti * ti, ti * ti * ti];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] += pow[r] * pow[c];
            }
            a[r][4] += pow[r] * yi;
        }
    }
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, pivot);
        let scale = a.iter().map(|row| row[col].abs()).fold(0.0, f64::max);
        if a[col][col].abs() <= 1e-12 * scale.max(1.0) {
            return Err(Error::Degenerate("cubic fit needs 4 distinct abscissae".into()));
        }
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..5 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Ok([a[0][4] / a[0][0], a[1][4] / a[1][1], a[2][4] / a[2][2], a[3][4] / a[3][3]])
}

/// Mean of `fit(test) − fit(anchor)` over the shared abscissa range, both fits
/// done on abscissae mapped so that the shared range becomes `[−1, 1]`.
fn mean_fit_gap(xa: &[f64], ya: &[f64], xt: &[f64], yt: &[f64]) -> Result<f64> {
    let range = |x: &[f64]| (x.iter().copied().fold(f64::INFINITY, f64::min), x.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (a_lo, a_hi) = range(xa);
    let (t_lo, t_hi) = range(xt);
    let lo = a_lo.max(t_lo);
    let hi = a_hi.min(t_hi);
    if !(hi > lo) {
        return Err(Error::invalid("bd_rate", format!("curves do not overlap ({a_lo}..{a_hi} vs {t_lo}..{t_hi})")));
    }
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let map = |x: &[f64]| x.iter().map(|v| (v - center) / half).collect::<Vec<f64>>();
    let pa = fit_cubic(&map(xa), ya)?;
    let pt = fit_cubic(&map(xt), yt)?;
    let d: Vec<f64> = (0..4).map(|i| pt[i] - pa[i]).collect();
    // ∫_{−1}^{1} t^k dt is 2, 0, 2/3, 0.
    Ok((2.0 * d[0] + d[2] * 2.0 / 3.0) / 2.0)
}

/// Average bitrate change of `test` relative to `anchor` at equal PSNR, in
/// percent (negative means `test` needs fewer bits).
pub fn bd_rate(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    let a = checked_curve("anchor", anchor)?;
    let t = checked_curve("test", test)?;
    let split = |c: &[RdPoint]| -> (Vec<f64>, Vec<f64>) { (c.iter().map(|p| p.psnr).collect(), c.iter().map(|p| p.rate.log10()).collect()) };
    let (xa, ya) = split(&a);
    let (xt, yt) = split(&t);
    let avg = mean_fit_gap(&xa, &ya, &xt, &yt)?;
    Ok(100.0 * (10f64.powf(avg) - 1.0))
}

/// Average PSNR change of `test` relative to `anchor` at equal rate, in dB.
pub fn bd_psnr(anchor: &[RdPoint], test: &[RdPoint]) -> Result<f64> {
    let a = checked_curve("anchor", anchor)?;
    let t = checked_curve("test", test)?;
    let split = |c: &[RdPoint]| -> (Vec<f64>, Vec<f64>) { (c.iter().map(|p| p.rate.log10()).collect(), c.iter().map(|p| p.psnr).collect()) };
    let (xa, ya) = split(&a);
    let (xt, yt) = split(&t);
    mean_fit_gap(&xa, &ya, &xt, &yt)
}
