//! Stride-1 "same" convolution (cross-correlation) with zero padding, dense
//! or depthwise, and its exact backward pass.

use std::fmt;

use crate::error::{Error, Result};
use crate::gemm::{matmul_acc, transpose};
use crate::tensor::{Scalar, Tensor};
#[cfg(test)]
use crate::tensor::Shape;

/// Geometry of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Square kernel side; odd so that "same" padding is symmetric.
    pub kernel: usize,
    /// One filter per channel (`in_channels == out_channels`).
    pub depthwise: bool,
    pub bias: bool,
}

impl ConvSpec {
    pub const fn dense(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            depthwise: false,
            bias: true,
        }
    }

    pub const fn depthwise(channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels: channels,
            out_channels: channels,
            kernel,
            depthwise: true,
            bias: true,
        }
    }

    pub const fn without_bias(self) -> Self {
        ConvSpec { bias: false, ..self }
    }

    /// Input channels seen by each filter.
    pub const fn filter_depth(&self) -> usize {
        if self.depthwise {
            1
        } else {
            self.in_channels
        }
    }

    /// `(out, in_per_filter, kernel, kernel)`.
    pub const fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.filter_depth(), self.kernel, self.kernel]
    }

    pub const fn weight_count(&self) -> usize {
        self.out_channels * self.filter_depth() * self.kernel * self.kernel
    }

    pub const fn bias_count(&self) -> usize {
        if self.bias {
            self.out_channels
        } else {
            0
        }
    }

    pub const fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    pub const fn fan_in(&self) -> usize {
        self.filter_depth() * self.kernel * self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.kernel, 1 | 3 | 5) {
            return Err(Error::invalid("conv", format!("kernel {} is not 1, 3 or 5", self.kernel)));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("conv", "zero channels"));
        }
        if self.depthwise && self.in_channels != self.out_channels {
            return Err(Error::invalid(
                "conv",
                format!("depthwise layer maps {} to {} channels", self.in_channels, self.out_channels),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for ConvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{k}x{k} {}->{}",
            if self.depthwise { "dw " } else { "" },
            self.in_channels,
            self.out_channels,
            k = self.kernel
        )
    }
}

/// Weights and biases of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub spec: ConvSpec,
    /// Row-major `(out, in_per_filter, kernel, kernel)`.
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(spec: ConvSpec) -> Self {
        ConvParams {
            spec,
            weight: vec![T::zero(); spec.weight_count()],
            bias: spec.bias.then(|| vec![T::zero(); spec.out_channels]),
        }
    }

    pub fn new(spec: ConvSpec, weight: Vec<T>, bias: Option<Vec<T>>) -> Result<Self> {
        spec.validate()?;
        if weight.len() != spec.weight_count() {
            return Err(Error::shape(format!("conv {spec} weights"), spec.weight_count(), weight.len()));
        }
        match (&bias, spec.bias) {
            (Some(b), true) if b.len() == spec.out_channels => {}
            (None, false) => {}
            (b, _) => {
                return Err(Error::shape(
                    format!("conv {spec} bias"),
                    spec.bias_count(),
                    b.as_ref().map_or(0, Vec::len),
                ))
            }
        }
        Ok(ConvParams { spec, weight, bias })
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        ConvParams {
            spec: self.spec,
            weight: c(&self.weight),
            bias: self.bias.as_ref().map(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

fn check_input<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    if input.shape().c != spec.in_channels {
        return Err(Error::shape(
            format!("conv {spec}"),
            format!("{} input channels", spec.in_channels),
            input.shape(),
        ));
    }
    Ok(())
}

pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    let spec = &params.spec;
    check_input(input, spec)?;
    let s = input.shape();
    let mut out = Tensor::zeros(s.with_channels(spec.out_channels));
    if spec.depthwise {
        depthwise_forward(input, params, &mut out);
    } else {
        let k = spec.fan_in();
        let p = s.plane();
        let mut col = vec![T::zero(); k * p];
        for n in 0..s.n {
            im2col(input.item(n), spec.in_channels, s.h, s.w, spec.kernel, &mut col);
            matmul_acc(spec.out_channels, k, p, &params.weight, &col, out.item_mut(n));
        }
    }
    if let Some(bias) = &params.bias {
        for n in 0..s.n {
            for (o, &b) in bias.iter().enumerate() {
                for v in out.plane_mut(n, o) {
                    *v = *v + b;
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (gi, weight, bias) = conv2d_backward_impl(input, params, grad_out, true)?;
    Ok(ConvGrads {
        input: gi.expect("input gradient requested"),
        weight,
        bias,
    })
}

type BackwardParts<T> = (Option<Tensor<T>>, Vec<T>, Option<Vec<T>>);

/// Backward pass; the input gradient is skipped when `want_input` is false.
pub(crate) fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<BackwardParts<T>> {
    let spec = &params.spec;
    check_input(input, spec)?;
    let s = input.shape();
    grad_out.expect_shape(&format!("conv {spec} backward"), s.with_channels(spec.out_channels))?;

    let mut gw = vec![T::zero(); spec.weight_count()];
    let mut gi = want_input.then(|| Tensor::zeros(s));

    if spec.depthwise {
        depthwise_backward(input, params, grad_out, &mut gw, gi.as_mut());
    } else {
        let k = spec.fan_in();
        let p = s.plane();
        let out_c = spec.out_channels;
        let mut col = vec![T::zero(); k * p];
        let mut g_t = vec![T::zero(); p * out_c];
        // Weight gradient accumulated transposed, (k × out), over the batch.
        let mut gw_t = vec![T::zero(); k * out_c];
        let mut w_t = vec![T::zero(); k * out_c];
        transpose(out_c, k, &params.weight, &mut w_t);
        let mut gcol = vec![T::zero(); k * p];
        for n in 0..s.n {
            im2col(input.item(n), spec.in_channels, s.h, s.w, spec.kernel, &mut col);
            transpose(out_c, p, grad_out.item(n), &mut g_t);
            matmul_acc(k, p, out_c, &col, &g_t, &mut gw_t);
            if let Some(gi) = gi.as_mut() {
                gcol.fill(T::zero());
                matmul_acc(k, out_c, p, &w_t, grad_out.item(n), &mut gcol);
                col2im(&gcol, spec.in_channels, s.h, s.w, spec.kernel, gi.item_mut(n));
            }
        }
        transpose(k, out_c, &gw_t, &mut gw);
    }

    let gb = spec.bias.then(|| {
        (0..spec.out_channels)
            .map(|o| {
                let mut acc = T::zero();
                for n in 0..s.n {
                    for &g in grad_out.plane(n, o) {
                        acc += g;
                    }
                }
                acc
            })
            .collect()
    });
    Ok((gi, gw, gb))
}

/// Unfolds one image (`c × h × w`) into `(c·k·k) × (h·w)` rows ordered by
/// channel, then kernel row, then kernel column. Out-of-image taps are zero.
fn im2col<T: Scalar>(img: &[T], c: usize, h: usize, w: usize, k: usize, col: &mut [T]) {
    let pad = (k / 2) as isize;
    let p = h * w;
    for ci in 0..c {
        let plane = &img[ci * p..(ci + 1) * p];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                let dx = kx as isize - pad;
                let (x_lo, x_hi) = valid_range(w, dx);
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..x_lo].fill(T::zero());
                    dst[x_hi..].fill(T::zero());
                    if x_hi > x_lo {
                        let s_lo = (x_lo as isize + dx) as usize;
                        dst[x_lo..x_hi].copy_from_slice(&src[s_lo..s_lo + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds column rows back into the image.
fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, k: usize, img: &mut [T]) {
    let pad = (k / 2) as isize;
    let p = h * w;
    for ci in 0..c {
        let plane = &mut img[ci * p..(ci + 1) * p];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                let dx = kx as isize - pad;
                let (x_lo, x_hi) = valid_range(w, dx);
                for y in 0..h {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize || x_hi == x_lo {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let d_lo = (x_lo as isize + dx) as usize;
                    for (t, &v) in dst[d_lo..d_lo + (x_hi - x_lo)].iter_mut().zip(&src[x_lo..x_hi]) {
                        *t = *t + v;
                    }
                }
            }
        }
    }
}

/// Output columns `x` for which `x + dx` lies inside `[0, w)`.
#[inline]
fn valid_range(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).clamp(0, w as isize) as usize;
    let hi = (w as isize - dx).clamp(0, w as isize) as usize;
    (lo, hi.max(lo))
}

fn depthwise_forward<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>, out: &mut Tensor<T>) {
    let s = input.shape();
    let k = params.spec.kernel;
    let pad = (k / 2) as isize;
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let wk = &params.weight[c * k * k..(c + 1) * k * k];
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - pad;
                        for kx in 0..k {
                            let sx = x as isize + kx as isize - pad;
                            let v = if sy < 0 || sx < 0 || sy >= s.h as isize || sx >= s.w as isize {
                                T::zero()
                            } else {
                                src[sy as usize * s.w + sx as usize]
                            };
                            acc = acc + wk[ky * k + kx] * v;
                        }
                    }
                    dst[y * s.w + x] = acc;
                }
            }
        }
    }
}

fn depthwise_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_out: &Tensor<T>,
    gw: &mut [T],
    mut gi: Option<&mut Tensor<T>>,
) {
    let s = input.shape();
    let k = params.spec.kernel;
    let pad = (k / 2) as isize;
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let g = grad_out.plane(n, c);
            let wk = &params.weight[c * k * k..(c + 1) * k * k];
            let gwk = &mut gw[c * k * k..(c + 1) * k * k];
            for y in 0..s.h {
                for x in 0..s.w {
                    let go = g[y * s.w + x];
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= s.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = x as isize + kx as isize - pad;
                            if sx < 0 || sx >= s.w as isize {
                                continue;
                            }
                            let si = sy as usize * s.w + sx as usize;
                            gwk[ky * k + kx] += go * src[si];
                            if let Some(gi) = gi.as_deref_mut() {
                                let t = &mut gi.plane_mut(n, c)[si];
                                *t += go * wk[ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}
