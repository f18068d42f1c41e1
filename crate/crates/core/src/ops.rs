//! Graph combinators and the training loss.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    concat_many(&[a, b])
}

pub fn concat_many<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat", "no inputs"))?
        .shape();
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape("concat", first.with_channels(s.c), s));
        }
    }
    let channels: usize = parts.iter().map(|p| p.shape().c).sum();
    let shape = first.with_channels(channels);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..shape.n {
        for p in parts {
            data.extend_from_slice(p.item(n));
        }
    }
    Tensor::from_vec(shape, data)
}

/// Inverse of [`concat_many`]: splits channels into consecutive groups.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = t.shape();
    if sizes.iter().sum::<usize>() != s.c {
        return Err(Error::shape("split", format!("{} channels", sizes.iter().sum::<usize>()), s));
    }
    let plane = s.plane();
    let mut outs: Vec<Vec<T>> = sizes.iter().map(|&c| Vec::with_capacity(s.n * c * plane)).collect();
    for n in 0..s.n {
        let item = t.item(n);
        let mut offset = 0;
        for (out, &c) in outs.iter_mut().zip(sizes) {
            out.extend_from_slice(&item[offset * plane..(offset + c) * plane]);
            offset += c;
        }
    }
    outs.into_iter()
        .zip(sizes)
        .map(|(d, &c)| Tensor::from_vec(s.with_channels(c), d))
        .collect()
}

pub fn residual_add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    b.expect_shape("residual add", a.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// The add node routes its output gradient unchanged to both operands.
pub fn residual_add_backward<T: Scalar>(grad_out: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad_out.clone(), grad_out.clone())
}

/// Mean squared error and its gradient `2(pred − target)/len`.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    target.expect_shape("mse loss", pred.shape())?;
    let count = pred.len();
    if count == 0 {
        return Err(Error::invalid("mse loss", "empty tensors"));
    }
    let scale = T::from_f64(2.0 / count as f64);
    let mut sum = 0.0f64;
    let mut grad = Vec::with_capacity(count);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        sum += d.as_f64() * d.as_f64();
        grad.push(d * scale);
    }
    let loss = sum / count as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite { op: "mse loss".into() });
    }
    Ok((loss, Tensor::from_vec(pred.shape(), grad)?))
}

/// Constant plane of `value` with the spatial layout of `like`.
pub fn constant_plane<T: Scalar>(like: Shape, value: T) -> Tensor<T> {
    Tensor::filled(like.with_channels(1), value)
}
