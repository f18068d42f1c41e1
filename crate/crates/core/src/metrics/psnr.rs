use std::fmt;
use std::str::FromStr;

use crate::codec::GrayImage;
use crate::error::{Error, Result};

/// Peak signal-to-noise ratio in dB. Identical inputs give
/// [`Psnr::Lossless`], which carries no number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Lossless,
}

impl Psnr {
    pub fn db(&self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(*v),
            Psnr::Lossless => None,
        }
    }

    pub fn is_lossless(&self) -> bool {
        matches!(self, Psnr::Lossless)
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v}"),
            Psnr::Lossless => f.write_str("lossless"),
        }
    }
}

impl FromStr for Psnr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "lossless" {
            return Ok(Psnr::Lossless);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Psnr::Db(v)),
            _ => Err(Error::format("psnr", format!("cannot parse `{s}`"))),
        }
    }
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Result<Psnr> {
    if !(mse.is_finite() && mse >= 0.0) || !(peak.is_finite() && peak > 0.0) {
        return Err(Error::invalid("psnr", format!("mse {mse}, peak {peak}")));
    }
    Ok(if mse == 0.0 {
        Psnr::Lossless
    } else {
        Psnr::Db(10.0 * (peak * peak / mse).log10())
    })
}

pub fn mse_u8(reference: &[u8], test: &[u8]) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::shape("psnr", reference.len(), test.len()));
    }
    if reference.is_empty() {
        return Err(Error::invalid("psnr", "empty input"));
    }
    let sse: f64 = reference
        .iter()
        .zip(test)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sse / reference.len() as f64)
}

/// PSNR of two equally sized sample arrays.
pub fn psnr(reference: &[f64], test: &[f64], peak: f64) -> Result<Psnr> {
    if reference.len() != test.len() {
        return Err(Error::shape("psnr", reference.len(), test.len()));
    }
    if reference.is_empty() {
        return Err(Error::invalid("psnr", "empty input"));
    }
    let sse: f64 = reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum();
    psnr_from_mse(sse / reference.len() as f64, peak)
}

pub fn psnr_image(reference: &GrayImage, test: &GrayImage) -> Result<Psnr> {
    if (reference.width, reference.height) != (test.width, test.height) {
        return Err(Error::shape(
            "psnr",
            format!("{}x{}", reference.width, reference.height),
            format!("{}x{}", test.width, test.height),
        ));
    }
    psnr_from_mse(mse_u8(&reference.data, &test.data)?, 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_lossless() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), Psnr::Lossless);
        assert_eq!(Psnr::Lossless.db(), None);
    }

    #[test]
    fn reference_values() {
        assert_eq!(psnr_from_mse(255.0 * 255.0, 255.0).unwrap(), Psnr::Db(0.0));
        let v = psnr_from_mse(1.0, 255.0).unwrap().db().unwrap();
        assert!((v - 48.1308).abs() < 1e-4);
        let a = [0.0, 0.0];
        let b = [1.0, -1.0];
        assert_eq!(psnr(&a, &b, 255.0).unwrap().db(), Some(v));
    }

    #[test]
    fn text_round_trip() {
        for p in [Psnr::Lossless, Psnr::Db(37.123456789), Psnr::Db(-1.5)] {
            assert_eq!(p.to_string().parse::<Psnr>().unwrap(), p);
        }
        assert!("inf".parse::<Psnr>().is_err());
    }

    #[test]
    fn mismatched_inputs() {
        assert!(psnr(&[1.0], &[1.0, 2.0], 255.0).is_err());
        assert!(psnr(&[], &[], 255.0).is_err());
        assert!(psnr_image(&GrayImage::filled(2, 2, 0), &GrayImage::filled(2, 3, 0)).is_err());
    }
}
