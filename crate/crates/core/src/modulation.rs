//! QP-adaptive feature modulation.
//!
//! Every convolution output channel `c` is scaled by the influence factor
//! `1 / (1 + θ_c · q)`, where `q` is the squared quantization step
//! normalized to 1 at QP 32. The factor is broadcast over batch and spatial
//! positions. `θ` is trainable and kept nonnegative by truncation after each
//! optimizer step, so every factor lies in `(0, 1]` and `θ = 0` leaves the
//! layer unchanged.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const QP_MIN: i32 = 0;
pub const QP_MAX: i32 = 63;

fn check_qp(qp: i32) -> Result<()> {
    if (QP_MIN..=QP_MAX).contains(&qp) {
        Ok(())
    } else {
        Err(Error::QpOutOfRange(qp))
    }
}

/// `2^((qp − 4) / 6)`.
pub fn qstep_from_qp(qp: i32) -> Result<f64> {
    check_qp(qp)?;
    Ok(((qp - 4) as f64 / 6.0).exp2())
}

/// `2^((qp − 32) / 3)`: the squared step rescaled by the constant `2^(-28/3)`.
pub fn qsq_norm_from_qp(qp: i32) -> Result<f64> {
    check_qp(qp)?;
    Ok(((qp - 32) as f64 / 3.0).exp2())
}

/// Per-picture quantization context shared by every modulated layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpContext {
    pub qp: i32,
    pub qstep: f64,
    pub qsq_norm: f64,
}

impl QpContext {
    pub fn new(qp: i32) -> Result<Self> {
        Ok(QpContext {
            qp,
            qstep: qstep_from_qp(qp)?,
            qsq_norm: qsq_norm_from_qp(qp)?,
        })
    }

    /// Same QP with the normalized squared step multiplied by `scale`.
    pub fn rescaled(&self, scale: f64) -> Self {
        QpContext {
            qsq_norm: self.qsq_norm * scale,
            ..*self
        }
    }
}

/// Nonnegative `θ` for one layer, one entry per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulationParams<T> {
    pub theta: Vec<T>,
}

impl<T: Scalar> ModulationParams<T> {
    pub fn zeros(channels: usize) -> Self {
        ModulationParams {
            theta: vec![T::zero(); channels],
        }
    }

    pub fn new(theta: Vec<T>) -> Result<Self> {
        let p = ModulationParams { theta };
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        match self.theta.iter().position(|&t| !(t >= T::zero())) {
            Some(channel) => Err(Error::NegativeTheta {
                channel,
                value: self.theta[channel].as_f64(),
            }),
            None => Ok(()),
        }
    }

    /// Influence factor of each channel.
    pub fn factors(&self, ctx: &QpContext) -> Vec<T> {
        let q = T::from_f64(ctx.qsq_norm);
        self.theta.iter().map(|&t| T::one() / (T::one() + t * q)).collect()
    }

    /// Projects onto `θ ≥ 0`.
    pub fn clamp(&mut self) {
        for t in &mut self.theta {
            if !(*t >= T::zero()) {
                *t = T::zero();
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModulationParams<U> {
        ModulationParams {
            theta: self.theta.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

pub fn clamp_theta<T: Scalar>(theta: &ModulationParams<T>) -> ModulationParams<T> {
    let mut out = theta.clone();
    out.clamp();
    out
}

fn check_channels<T: Scalar>(x: &Tensor<T>, theta: &ModulationParams<T>) -> Result<()> {
    if x.shape().c != theta.len() {
        return Err(Error::shape(
            "modulation",
            format!("{} channels", theta.len()),
            x.shape(),
        ));
    }
    theta.validate()
}

/// `out[n,c,h,w] = x[n,c,h,w] / (1 + θ_c · q)`.
pub fn modulate_forward<T: Scalar>(x: &Tensor<T>, theta: &ModulationParams<T>, ctx: &QpContext) -> Result<Tensor<T>> {
    let mut out = x.clone();
    modulate_in_place(&mut out, theta, ctx)?;
    Ok(out)
}

pub(crate) fn modulate_in_place<T: Scalar>(x: &mut Tensor<T>, theta: &ModulationParams<T>, ctx: &QpContext) -> Result<()> {
    check_channels(x, theta)?;
    let q = T::from_f64(ctx.qsq_norm);
    let s = x.shape();
    for n in 0..s.n {
        for (c, &t) in theta.theta.iter().enumerate() {
            let denom = T::one() + t * q;
            for v in x.plane_mut(n, c) {
                *v = *v / denom;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModulationGrads<T> {
    pub input: Tensor<T>,
    pub theta: Vec<T>,
}

/// `∂/∂x = g / (1 + θq)`, `∂/∂θ_c = Σ g · (−x q / (1 + θ_c q)²)`.
pub fn modulate_backward<T: Scalar>(
    x: &Tensor<T>,
    theta: &ModulationParams<T>,
    ctx: &QpContext,
    grad_out: &Tensor<T>,
) -> Result<ModulationGrads<T>> {
    check_channels(x, theta)?;
    grad_out.expect_shape("modulation backward", x.shape())?;
    let q = T::from_f64(ctx.qsq_norm);
    let s = x.shape();
    let mut gx = Tensor::zeros(s);
    let mut gt = vec![T::zero(); theta.len()];
    for n in 0..s.n {
        for (c, &t) in theta.theta.iter().enumerate() {
            let denom = T::one() + t * q;
            let dtheta = -q / (denom * denom);
            let xs = x.plane(n, c);
            let gs = grad_out.plane(n, c);
            let mut acc = T::zero();
            for (&xv, &g) in xs.iter().zip(gs) {
                acc += g * xv;
            }
            gt[c] += acc * dtheta;
            for (o, &g) in gx.plane_mut(n, c).iter_mut().zip(gs) {
                *o = g / denom;
            }
        }
    }
    Ok(ModulationGrads { input: gx, theta: gt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![v]).unwrap()
    }

    #[test]
    fn qstep_values() {
        assert_eq!(qstep_from_qp(4).unwrap(), 1.0);
        assert_eq!(qstep_from_qp(22).unwrap(), 8.0);
        assert_eq!(qstep_from_qp(10).unwrap(), 2.0);
        assert!(matches!(qstep_from_qp(64), Err(Error::QpOutOfRange(64))));
        assert!(qstep_from_qp(-1).is_err());
    }

    #[test]
    fn normalized_square_values() {
        assert_eq!(qsq_norm_from_qp(32).unwrap(), 1.0);
        assert_eq!(qsq_norm_from_qp(35).unwrap(), 2.0);
        let q22 = qsq_norm_from_qp(22).unwrap();
        assert!((q22 - 0.099_212_565_748_012_4).abs() < 1e-15);
        let via_step = qstep_from_qp(22).unwrap().powi(2) / (28.0f64 / 3.0).exp2();
        assert!((q22 - via_step).abs() <= 1e-15 * q22);
    }

    #[test]
    fn rescale_is_constant_for_every_qp() {
        for qp in QP_MIN..=QP_MAX {
            let c = QpContext::new(qp).unwrap();
            let ratio = c.qstep * c.qstep / c.qsq_norm;
            assert!((ratio - (28.0f64 / 3.0).exp2()).abs() < 1e-12 * ratio, "qp {qp}");
        }
    }

    #[test]
    fn forward_examples() {
        let ctx32 = QpContext::new(32).unwrap();
        let ctx35 = QpContext::new(35).unwrap();
        let t1 = ModulationParams::new(vec![1.0]).unwrap();
        let th = ModulationParams::new(vec![0.5]).unwrap();
        assert_eq!(modulate_forward(&scalar(2.0), &t1, &ctx32).unwrap().data(), &[1.0]);
        assert_eq!(modulate_forward(&scalar(3.0), &th, &ctx35).unwrap().data(), &[1.5]);
    }

    #[test]
    fn zero_theta_is_identity() {
        let x = Tensor::from_fn(Shape::new(2, 3, 2, 2), |n, c, y, w| (n + 2 * c) as f64 * 0.37 - y as f64 + w as f64 / 3.0);
        let t = ModulationParams::zeros(3);
        for qp in [0, 22, 37, 63] {
            assert_eq!(modulate_forward(&x, &t, &QpContext::new(qp).unwrap()).unwrap(), x);
        }
    }

    #[test]
    fn backward_scalar_case() {
        let ctx = QpContext::new(32).unwrap();
        let g = modulate_backward(&scalar(2.0), &ModulationParams::new(vec![1.0]).unwrap(), &ctx, &scalar(1.0)).unwrap();
        assert_eq!(g.input.data(), &[0.5]);
        assert_eq!(g.theta, vec![-0.5]);
    }

    #[test]
    fn backward_zero_grad() {
        let ctx = QpContext::new(27).unwrap();
        let x = Tensor::filled(Shape::new(1, 2, 2, 2), 1.5);
        let t = ModulationParams::new(vec![0.3, 2.0]).unwrap();
        let g = modulate_backward(&x, &t, &ctx, &Tensor::zeros(x.shape())).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.theta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_theta() {
        let ctx = QpContext::new(27).unwrap();
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 1, 1));
        assert!(matches!(
            modulate_forward(&x, &ModulationParams { theta: vec![0.1, -0.2] }, &ctx),
            Err(Error::NegativeTheta { channel: 1, .. })
        ));
        assert!(matches!(
            modulate_forward(&x, &ModulationParams::zeros(3), &ctx),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn clamp_examples() {
        let c = clamp_theta(&ModulationParams { theta: vec![-0.1, 0.2] });
        assert_eq!(c.theta, vec![0.0, 0.2]);
        let ok = ModulationParams { theta: vec![0.0, 3.0] };
        assert_eq!(clamp_theta(&ok), ok);
    }
}
