use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::psnr::{psnr_from_mse, Psnr};
use crate::codec::{SampleStore, Split};
use crate::error::{Error, Result};
use crate::model::{Mode, Network};
use crate::modulation::QpContext;
use crate::tensor::Scalar;
use crate::train::pairs_to_tensors;

pub const SWEEP_HEADER: &str = "model,mode,qp,psnr_anchor,psnr_filtered,gain_db,rate_bits";

/// Patches evaluated per forward pass.
const EVAL_CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub qp: i32,
    pub psnr_anchor: Psnr,
    pub psnr_filtered: Psnr,
    pub rate_bits: f64,
}

impl SweepPoint {
    /// `None` when either side is lossless.
    pub fn gain_db(&self) -> Option<f64> {
        Some(self.psnr_filtered.db()? - self.psnr_anchor.db()?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCurve {
    pub model: String,
    pub mode: Mode,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    pub fn qps(&self) -> Vec<i32> {
        self.points.iter().map(|p| p.qp).collect()
    }

    pub fn point(&self, qp: i32) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.qp == qp)
    }

    pub fn gain(&self, qp: i32) -> Option<f64> {
        self.point(qp)?.gain_db()
    }

    /// Mean gain over all points; `None` if any point is lossless.
    pub fn mean_gain(&self) -> Option<f64> {
        let gains: Option<Vec<f64>> = self.points.iter().map(SweepPoint::gain_db).collect();
        let gains = gains?;
        if gains.is_empty() {
            return None;
        }
        Some(gains.iter().sum::<f64>() / gains.len() as f64)
    }
}

pub struct SweepModel<'a, T> {
    pub label: String,
    pub net: &'a Network<T>,
}

/// Squared errors of one model at one QP, on the `[0, 1]` sample scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpEval {
    pub anchor_sse: f64,
    pub filtered_sse: f64,
    pub pixels: usize,
}

impl QpEval {
    pub fn psnr_anchor(&self) -> Result<Psnr> {
        psnr_from_mse(self.anchor_sse / self.pixels as f64, 1.0)
    }

    pub fn psnr_filtered(&self) -> Result<Psnr> {
        psnr_from_mse(self.filtered_sse / self.pixels as f64, 1.0)
    }
}

/// Runs `net` on every patch of `split` coded at `qp`. Outputs are clipped
/// to `[0, 1]`.
pub fn evaluate_qp<T: Scalar>(net: &Network<T>, store: &SampleStore, split: Split, qp: i32) -> Result<QpEval> {
    let pairs = store.pairs(split, qp);
    if pairs.is_empty() {
        return Err(Error::invalid("sweep", format!("no {split} samples at QP {qp}")));
    }
    let ctx = QpContext::new(qp)?;
    let mut eval = QpEval {
        anchor_sse: 0.0,
        filtered_sse: 0.0,
        pixels: 0,
    };
    for chunk in pairs.chunks(EVAL_CHUNK) {
        let (input, target) = pairs_to_tensors::<T>(chunk, store.patch, None);
        let output = net.forward(&input, Some(&ctx))?;
        output.ensure_finite("sweep")?;
        for ((&x, &y), &t) in input.data().iter().zip(output.data()).zip(target.data()) {
            let t = t.as_f64();
            let a = x.as_f64() - t;
            let f = y.as_f64().clamp(0.0, 1.0) - t;
            eval.anchor_sse += a * a;
            eval.filtered_sse += f * f;
        }
        eval.pixels += target.len();
    }
    Ok(eval)
}

/// Per-QP PSNR of each model against the unfiltered reconstruction.
pub fn sweep_qp<T: Scalar>(models: &[SweepModel<'_, T>], store: &SampleStore, split: Split, qps: &[i32]) -> Result<Vec<SweepCurve>> {
    models
        .iter()
        .map(|m| {
            let points = qps
                .iter()
                .map(|&qp| {
                    let e = evaluate_qp(m.net, store, split, qp)?;
                    Ok(SweepPoint {
                        qp,
                        psnr_anchor: e.psnr_anchor()?,
                        psnr_filtered: e.psnr_filtered()?,
                        rate_bits: store.rate_bits(split, qp),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepCurve {
                model: m.label.clone(),
                mode: m.net.mode(),
                points,
            })
        })
        .collect()
}

fn gain_text(p: &SweepPoint) -> String {
    p.gain_db().map_or_else(|| "n/a".to_string(), |g| g.to_string())
}

pub fn write_sweep_csv(curves: &[SweepCurve]) -> Result<String> {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for c in curves {
        if c.model.contains([',', '\n', '\r']) || c.model.is_empty() {
            return Err(Error::invalid("sweep csv", format!("model label `{}` is not CSV-safe", c.model)));
        }
        for p in &c.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.model,
                c.mode,
                p.qp,
                p.psnr_anchor,
                p.psnr_filtered,
                gain_text(p),
                p.rate_bits
            );
        }
    }
    Ok(out)
}

/// Rows of one model are grouped into one curve, in order of first
/// appearance.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepCurve>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(SWEEP_HEADER) {
        return Err(Error::format("sweep csv", "missing header"));
    }
    let mut curves: Vec<SweepCurve> = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |why: &str| Error::format("sweep csv", format!("row {}: {why}", n + 1));
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let mode: Mode = f[1].parse().map_err(|_| bad("bad mode"))?;
        let point = SweepPoint {
            qp: f[2].parse().map_err(|_| bad("bad qp"))?,
            psnr_anchor: f[3].parse().map_err(|_| bad("bad psnr_anchor"))?,
            psnr_filtered: f[4].parse().map_err(|_| bad("bad psnr_filtered"))?,
            rate_bits: f[6].parse().map_err(|_| bad("bad rate_bits"))?,
        };
        if gain_text(&point) != f[5] {
            return Err(bad("gain_db disagrees with the PSNR columns"));
        }
        match curves.iter_mut().find(|c| c.model == f[0]) {
            Some(c) if c.mode != mode => return Err(bad("mode changes within one model")),
            Some(c) => c.points.push(point),
            None => curves.push(SweepCurve {
                model: f[0].to_string(),
                mode,
                points: vec![point],
            }),
        }
    }
    Ok(curves)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepCurve>> {
    parse_sweep_csv(&fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curves() -> Vec<SweepCurve> {
        vec![
            SweepCurve {
                model: "dcad-proposed".into(),
                mode: Mode::QpAdaptive,
                points: vec![
                    SweepPoint {
                        qp: 22,
                        psnr_anchor: Psnr::Db(40.1234567891),
                        psnr_filtered: Psnr::Db(40.5),
                        rate_bits: 123456.78,
                    },
                    SweepPoint {
                        qp: 37,
                        psnr_anchor: Psnr::Db(30.0),
                        psnr_filtered: Psnr::Lossless,
                        rate_bits: 1.0 / 3.0,
                    },
                ],
            },
            SweepCurve {
                model: "g".into(),
                mode: Mode::Vanilla,
                points: vec![SweepPoint {
                    qp: 22,
                    psnr_anchor: Psnr::Db(0.1 + 0.2),
                    psnr_filtered: Psnr::Db(1e-300),
                    rate_bits: 5.0,
                }],
            },
        ]
    }

    #[test]
    fn csv_round_trip() {
        let text = write_sweep_csv(&curves()).unwrap();
        assert_eq!(text.lines().count(), 1 + 3);
        assert_eq!(parse_sweep_csv(&text).unwrap(), curves());
    }

    #[test]
    fn gains() {
        let c = &curves()[0];
        assert_eq!(c.gain(22), Some(40.5 - 40.1234567891));
        assert_eq!(c.gain(37), None);
        assert_eq!(c.mean_gain(), None);
        assert_eq!(curves()[1].mean_gain(), Some(1e-300 - 0.30000000000000004));
    }

    #[test]
    fn rejects_inconsistent_rows() {
        let text = write_sweep_csv(&curves()).unwrap();
        let tampered = text.replace("40.5,", "40.6,");
        assert!(parse_sweep_csv(&tampered).is_err());
        assert!(parse_sweep_csv("model,qp\n").is_err());
        let mut bad = curves();
        bad[0].model = "a,b".into();
        assert!(write_sweep_csv(&bad).is_err());
    }
}
