use std::borrow::Cow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{Layer, Mode, ModelSpec, QP_MAP_SCALE};
use crate::activation::{activation_backward, activation_forward_in_place, ActivationKind};
use crate::conv::{conv2d_backward_impl, conv2d_forward, ConvParams};
use crate::error::{Error, Result};
use crate::modulation::{modulate_backward, modulate_in_place, ModulationParams, QpContext};
use crate::ops::{concat_many, constant_plane, residual_add, split_channels};
use crate::tensor::{Scalar, Tensor};

/// A backbone together with its trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: ModelSpec,
    convs: Vec<ConvParams<T>>,
    /// One entry per conv in qp-adaptive mode, empty otherwise.
    theta: Vec<ModulationParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad<T> {
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub convs: Vec<ConvGrad<T>>,
    pub theta: Vec<Vec<T>>,
    /// Gradient w.r.t. the image input (the qp-map plane is not included).
    pub input: Tensor<T>,
}

impl<T: Scalar> Grads<T> {
    /// Same order as [`Network::param_groups`].
    pub fn groups(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            if let Some(b) = &c.bias {
                out.push(b);
            }
        }
        out.extend(self.theta.iter().map(|t| t.as_slice()));
        out
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<NodeTape<T>>,
    ctx: Option<QpContext>,
    input_shape: crate::tensor::Shape,
}

#[derive(Debug)]
enum NodeTape<T> {
    Conv {
        input: Tensor<T>,
        unit: UnitTape<T>,
        pre_act: Tensor<T>,
        act: ActivationKind,
    },
    Parallel {
        input: Tensor<T>,
        units: Vec<UnitTape<T>>,
        sizes: Vec<usize>,
        pre_act: Tensor<T>,
        act: ActivationKind,
    },
    Residual {
        body: Vec<NodeTape<T>>,
        pre_act: Tensor<T>,
        act: ActivationKind,
    },
}

#[derive(Debug)]
struct UnitTape<T> {
    index: usize,
    /// Conv output before modulation; only kept when modulated.
    conv_out: Option<Tensor<T>>,
}

impl<T: Scalar> Network<T> {
    /// All weights, biases and θ zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let convs: Vec<_> = spec.conv_specs().into_iter().map(ConvParams::zeros).collect();
        let theta = if spec.is_modulated() {
            convs.iter().map(|c| ModulationParams::zeros(c.spec.out_channels)).collect()
        } else {
            Vec::new()
        };
        Ok(Network { spec, convs, theta })
    }

    /// He-normal weights, zero biases, zero θ. The last conv starts at zero so
    /// an untrained network with a global skip is the identity filter.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = net.convs.len() - 1;
        for (i, conv) in net.convs.iter_mut().enumerate() {
            if i == last && net.spec.global_residual {
                continue;
            }
            let std = (2.0 / conv.spec.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut conv.weight {
                *w = T::from_f64(normal.sample(&mut rng));
            }
        }
        Ok(net)
    }

    pub fn from_parts(spec: ModelSpec, convs: Vec<ConvParams<T>>, theta: Vec<ModulationParams<T>>) -> Result<Self> {
        spec.validate()?;
        let specs = spec.conv_specs();
        if convs.len() != specs.len() {
            return Err(Error::shape("network layers", specs.len(), convs.len()));
        }
        for (i, (c, s)) in convs.iter().zip(&specs).enumerate() {
            if c.spec != *s {
                return Err(Error::shape(format!("layer {i}"), s, c.spec));
            }
            ConvParams::new(c.spec, c.weight.clone(), c.bias.clone())?;
        }
        let expected_theta = if spec.is_modulated() { specs.len() } else { 0 };
        if theta.len() != expected_theta {
            return Err(Error::shape("network θ arrays", expected_theta, theta.len()));
        }
        for (i, (t, s)) in theta.iter().zip(&specs).enumerate() {
            if t.len() != s.out_channels {
                return Err(Error::shape(format!("layer {i} θ"), s.out_channels, t.len()));
            }
            t.validate()?;
        }
        Ok(Network { spec, convs, theta })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.spec.mode
    }

    pub fn convs(&self) -> &[ConvParams<T>] {
        &self.convs
    }

    pub fn convs_mut(&mut self) -> &mut [ConvParams<T>] {
        &mut self.convs
    }

    pub fn theta(&self) -> &[ModulationParams<T>] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [ModulationParams<T>] {
        &mut self.theta
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(ConvParams::param_count).sum::<usize>() + self.theta.iter().map(|t| t.len()).sum::<usize>()
    }

    /// Weight, bias (when present) per conv, then every θ array.
    pub fn param_groups(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            if let Some(b) = &c.bias {
                out.push(b);
            }
        }
        out.extend(self.theta.iter().map(|t| t.theta.as_slice()));
        out
    }

    pub fn param_groups_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            if let Some(b) = &mut c.bias {
                out.push(b);
            }
        }
        out.extend(self.theta.iter_mut().map(|t| t.theta.as_mut_slice()));
        out
    }

    pub fn clamp_theta(&mut self) {
        self.theta.iter_mut().for_each(ModulationParams::clamp);
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            convs: self.convs.iter().map(ConvParams::cast).collect(),
            theta: self.theta.iter().map(ModulationParams::cast).collect(),
        }
    }

    /// Converts to another mode where that is lossless: vanilla → qp-adaptive
    /// starts every θ at zero.
    pub fn into_mode(self, mode: Mode) -> Result<Self> {
        match (self.spec.mode, mode) {
            (a, b) if a == b => Ok(self),
            (Mode::Vanilla, Mode::QpAdaptive) => {
                let spec = self.spec.with_mode(mode);
                let theta = self.convs.iter().map(|c| ModulationParams::zeros(c.spec.out_channels)).collect();
                Ok(Network {
                    spec,
                    convs: self.convs,
                    theta,
                })
            }
            (from, to) => Err(Error::invalid(
                "mode conversion",
                format!("cannot load a {from} model as {to}"),
            )),
        }
    }

    fn resolve_ctx<'a>(&self, ctx: Option<&'a QpContext>) -> Result<Option<&'a QpContext>> {
        if !self.spec.mode.needs_qp() {
            return Ok(None);
        }
        ctx.map(Some).ok_or_else(|| Error::MissingQpContext {
            model: self.spec.name().to_string(),
            mode: self.spec.mode.to_string(),
        })
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        if input.shape().c != 1 {
            return Err(Error::shape(
                format!("{} input", self.spec.name()),
                "1 channel",
                input.shape(),
            ));
        }
        Ok(())
    }

    fn network_input<'a>(&self, input: &'a Tensor<T>, ctx: Option<&QpContext>) -> Result<Cow<'a, Tensor<T>>> {
        match (self.spec.mode, ctx) {
            (Mode::QpMap, Some(ctx)) => {
                let plane = constant_plane(input.shape(), T::from_f64(ctx.qp as f64 / QP_MAP_SCALE));
                Ok(Cow::Owned(concat_many(&[input, &plane])?))
            }
            _ => Ok(Cow::Borrowed(input)),
        }
    }

    /// Filters `(n, 1, h, w)` images. `ctx` is required outside vanilla mode.
    pub fn forward(&self, input: &Tensor<T>, ctx: Option<&QpContext>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let ctx = self.resolve_ctx(ctx)?;
        let x = self.network_input(input, ctx)?;
        let mut index = 0;
        let y = self.run_layers(&self.spec.layers, x, &mut index, ctx)?;
        let out = if self.spec.global_residual {
            residual_add(input, &y)?
        } else {
            y
        };
        out.ensure_finite(self.spec.name())?;
        Ok(out)
    }

    fn run_unit(&self, index: usize, x: &Tensor<T>, ctx: Option<&QpContext>) -> Result<Tensor<T>> {
        let mut y = conv2d_forward(x, &self.convs[index])
            .map_err(|e| layer_error(index, e))?;
        if let (Some(theta), Some(ctx)) = (self.theta.get(index), ctx) {
            modulate_in_place(&mut y, theta, ctx)?;
        }
        Ok(y)
    }

    fn run_layers(&self, layers: &[Layer], x: Cow<'_, Tensor<T>>, index: &mut usize, ctx: Option<&QpContext>) -> Result<Tensor<T>> {
        let mut x = x;
        for layer in layers {
            let y = match layer {
                Layer::Conv { act, .. } => {
                    let mut y = self.run_unit(*index, &x, ctx)?;
                    *index += 1;
                    activation_forward_in_place(*act, &mut y);
                    y
                }
                Layer::Parallel { branches, act } => {
                    let mut outs = Vec::with_capacity(branches.len());
                    for _ in branches {
                        outs.push(self.run_unit(*index, &x, ctx)?);
                        *index += 1;
                    }
                    let mut y = concat_many(&outs.iter().collect::<Vec<_>>())?;
                    activation_forward_in_place(*act, &mut y);
                    y
                }
                Layer::Residual { body, act } => {
                    let b = self.run_layers(body, Cow::Borrowed(&x), index, ctx)?;
                    let mut y = residual_add(&x, &b)?;
                    activation_forward_in_place(*act, &mut y);
                    y
                }
            };
            x = Cow::Owned(y);
        }
        Ok(x.into_owned())
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward_with_tape(&self, input: &Tensor<T>, ctx: Option<&QpContext>) -> Result<(Tensor<T>, Tape<T>)> {
        self.check_input(input)?;
        let ctx = self.resolve_ctx(ctx)?;
        let x = self.network_input(input, ctx)?.into_owned();
        let mut index = 0;
        let (y, nodes) = self.tape_layers(&self.spec.layers, x, &mut index, ctx)?;
        let out = if self.spec.global_residual {
            residual_add(input, &y)?
        } else {
            y
        };
        out.ensure_finite(self.spec.name())?;
        Ok((
            out,
            Tape {
                nodes,
                ctx: ctx.copied(),
                input_shape: input.shape(),
            },
        ))
    }

    fn tape_unit(&self, index: usize, x: &Tensor<T>, ctx: Option<&QpContext>) -> Result<(Tensor<T>, UnitTape<T>)> {
        let mut y = conv2d_forward(x, &self.convs[index]).map_err(|e| layer_error(index, e))?;
        let conv_out = match (self.theta.get(index), ctx) {
            (Some(theta), Some(ctx)) => {
                let raw = y.clone();
                modulate_in_place(&mut y, theta, ctx)?;
                Some(raw)
            }
            _ => None,
        };
        Ok((y, UnitTape { index, conv_out }))
    }

    fn tape_layers(
        &self,
        layers: &[Layer],
        mut x: Tensor<T>,
        index: &mut usize,
        ctx: Option<&QpContext>,
    ) -> Result<(Tensor<T>, Vec<NodeTape<T>>)> {
        let mut nodes = Vec::with_capacity(layers.len());
        for layer in layers {
            let (y, node) = match layer {
                Layer::Conv { act, .. } => {
                    let (pre, unit) = self.tape_unit(*index, &x, ctx)?;
                    *index += 1;
                    let mut y = pre.clone();
                    activation_forward_in_place(*act, &mut y);
                    (
                        y,
                        NodeTape::Conv {
                            input: x,
                            unit,
                            pre_act: pre,
                            act: *act,
                        },
                    )
                }
                Layer::Parallel { branches, act } => {
                    let mut outs = Vec::with_capacity(branches.len());
                    let mut units = Vec::with_capacity(branches.len());
                    for _ in branches {
                        let (o, u) = self.tape_unit(*index, &x, ctx)?;
                        *index += 1;
                        outs.push(o);
                        units.push(u);
                    }
                    let sizes = outs.iter().map(|o| o.shape().c).collect();
                    let pre = concat_many(&outs.iter().collect::<Vec<_>>())?;
                    let mut y = pre.clone();
                    activation_forward_in_place(*act, &mut y);
                    (
                        y,
                        NodeTape::Parallel {
                            input: x,
                            units,
                            sizes,
                            pre_act: pre,
                            act: *act,
                        },
                    )
                }
                Layer::Residual { body, act } => {
                    let (b, body_tape) = self.tape_layers(body, x.clone(), index, ctx)?;
                    let pre = residual_add(&x, &b)?;
                    let mut y = pre.clone();
                    activation_forward_in_place(*act, &mut y);
                    (
                        y,
                        NodeTape::Residual {
                            body: body_tape,
                            pre_act: pre,
                            act: *act,
                        },
                    )
                }
            };
            nodes.push(node);
            x = y;
        }
        Ok((x, nodes))
    }

    /// Gradients of a scalar loss given `grad_out = ∂L/∂output`.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &Tensor<T>) -> Result<Grads<T>> {
        grad_out.expect_shape("network backward", tape.input_shape)?;
        let mut grads = Grads {
            convs: self
                .convs
                .iter()
                .map(|c| ConvGrad {
                    weight: vec![T::zero(); c.weight.len()],
                    bias: c.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
                })
                .collect(),
            theta: self.theta.iter().map(|t| vec![T::zero(); t.len()]).collect(),
            input: Tensor::zeros(tape.input_shape),
        };
        let g_net_in = self.backward_layers(&tape.nodes, grad_out.clone(), tape.ctx.as_ref(), &mut grads)?;
        let g_img = if self.spec.mode == Mode::QpMap {
            split_channels(&g_net_in, &[1, 1])?.swap_remove(0)
        } else {
            g_net_in
        };
        grads.input = if self.spec.global_residual {
            residual_add(&g_img, grad_out)?
        } else {
            g_img
        };
        Ok(grads)
    }

    fn unit_backward(
        &self,
        unit: &UnitTape<T>,
        input: &Tensor<T>,
        grad: &Tensor<T>,
        ctx: Option<&QpContext>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let i = unit.index;
        let g_conv = match (&unit.conv_out, self.theta.get(i), ctx) {
            (Some(raw), Some(theta), Some(ctx)) => {
                let mg = modulate_backward(raw, theta, ctx, grad)?;
                for (acc, v) in grads.theta[i].iter_mut().zip(mg.theta) {
                    *acc += v;
                }
                Cow::Owned(mg.input)
            }
            _ => Cow::Borrowed(grad),
        };
        let (gi, gw, gb) = conv2d_backward_impl(input, &self.convs[i], &g_conv, true).map_err(|e| layer_error(i, e))?;
        let slot = &mut grads.convs[i];
        for (acc, v) in slot.weight.iter_mut().zip(gw) {
            *acc += v;
        }
        if let (Some(acc), Some(gb)) = (slot.bias.as_mut(), gb) {
            for (a, v) in acc.iter_mut().zip(gb) {
                *a += v;
            }
        }
        Ok(gi.expect("input gradient requested"))
    }

    fn backward_layers(
        &self,
        nodes: &[NodeTape<T>],
        mut grad: Tensor<T>,
        ctx: Option<&QpContext>,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        for node in nodes.iter().rev() {
            grad = match node {
                NodeTape::Conv {
                    input,
                    unit,
                    pre_act,
                    act,
                } => {
                    let g = activation_backward(*act, pre_act, &grad)?;
                    self.unit_backward(unit, input, &g, ctx, grads)?
                }
                NodeTape::Parallel {
                    input,
                    units,
                    sizes,
                    pre_act,
                    act,
                } => {
                    let g = activation_backward(*act, pre_act, &grad)?;
                    let parts = split_channels(&g, sizes)?;
                    let mut total: Option<Tensor<T>> = None;
                    for (unit, part) in units.iter().zip(&parts) {
                        let gi = self.unit_backward(unit, input, part, ctx, grads)?;
                        total = Some(match total {
                            None => gi,
                            Some(t) => residual_add(&t, &gi)?,
                        });
                    }
                    total.expect("parallel node has branches")
                }
                NodeTape::Residual { body, pre_act, act } => {
                    let g = activation_backward(*act, pre_act, &grad)?;
                    let g_body = self.backward_layers(body, g.clone(), ctx, grads)?;
                    residual_add(&g, &g_body)?
                }
            };
        }
        Ok(grad)
    }
}

fn layer_error(index: usize, e: Error) -> Error {
    match e {
        Error::ShapeMismatch { op, expected, got } => Error::ShapeMismatch {
            op: format!("layer {index} ({op})"),
            expected,
            got,
        },
        other => other,
    }
}
