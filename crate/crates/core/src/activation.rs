use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Default negative slope for leaky ReLU.
pub const LEAKY_ALPHA: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Identity,
}

impl ActivationKind {
    pub fn leaky() -> Self {
        ActivationKind::LeakyRelu(LEAKY_ALPHA)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::LeakyRelu(a) if !(a > 0.0 && a < 1.0) => {
                Err(Error::invalid("activation", format!("leaky slope {a} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// Slope used for inputs `<= 0`; the subgradient at exactly zero is this
    /// negative-side slope.
    fn negative_slope(&self) -> f64 {
        match *self {
            ActivationKind::Relu => 0.0,
            ActivationKind::LeakyRelu(a) => a,
            ActivationKind::Identity => 1.0,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Relu => f.write_str("relu"),
            ActivationKind::LeakyRelu(a) => write!(f, "leaky_relu({a})"),
            ActivationKind::Identity => f.write_str("identity"),
        }
    }
}

pub fn activation_forward<T: Scalar>(kind: ActivationKind, x: &Tensor<T>) -> Tensor<T> {
    match kind {
        ActivationKind::Identity => x.clone(),
        ActivationKind::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
        ActivationKind::LeakyRelu(a) => {
            let a = T::from_f64(a);
            x.map(|v| if v > T::zero() { v } else { v * a })
        }
    }
}

pub(crate) fn activation_forward_in_place<T: Scalar>(kind: ActivationKind, x: &mut Tensor<T>) {
    match kind {
        ActivationKind::Identity => {}
        ActivationKind::Relu => x.data_mut().iter_mut().for_each(|v| {
            if *v <= T::zero() {
                *v = T::zero()
            }
        }),
        ActivationKind::LeakyRelu(a) => {
            let a = T::from_f64(a);
            x.data_mut().iter_mut().for_each(|v| {
                if *v <= T::zero() {
                    *v = *v * a
                }
            })
        }
    }
}

/// Gradient w.r.t. the pre-activation input `x`.
pub fn activation_backward<T: Scalar>(kind: ActivationKind, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape("activation backward", x.shape())?;
    if kind == ActivationKind::Identity {
        return Ok(grad_out.clone());
    }
    let neg = T::from_f64(kind.negative_slope());
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { g * neg })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![v]).unwrap()
    }

    #[test]
    fn relu_values() {
        assert_eq!(activation_forward(ActivationKind::Relu, &scalar(-3.0)).data(), &[0.0]);
        assert_eq!(activation_forward(ActivationKind::Relu, &scalar(2.0)).data(), &[2.0]);
    }

    #[test]
    fn leaky_relu_value() {
        let y = activation_forward(ActivationKind::LeakyRelu(0.01), &scalar(-3.0));
        assert!((y.data()[0] + 0.03).abs() < 1e-15);
    }

    #[test]
    fn subgradient_at_zero_is_negative_side() {
        let g = scalar(1.0);
        assert_eq!(activation_backward(ActivationKind::Relu, &scalar(0.0), &g).unwrap().data(), &[0.0]);
        assert_eq!(
            activation_backward(ActivationKind::LeakyRelu(0.2), &scalar(0.0), &g).unwrap().data(),
            &[0.2]
        );
    }

    #[test]
    fn in_place_matches_allocating() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![-2.0, 0.0, 0.5, 3.0]).unwrap();
        for kind in [ActivationKind::Relu, ActivationKind::leaky(), ActivationKind::Identity] {
            let mut y = x.clone();
            activation_forward_in_place(kind, &mut y);
            assert_eq!(y, activation_forward(kind, &x));
        }
    }

    #[test]
    fn slope_must_be_in_unit_interval() {
        assert!(ActivationKind::LeakyRelu(0.0).validate().is_err());
        assert!(ActivationKind::LeakyRelu(1.0).validate().is_err());
        assert!(ActivationKind::leaky().validate().is_ok());
    }
}
