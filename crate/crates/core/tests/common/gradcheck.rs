//! Finite-difference checks shared by the gradient tests and the acceptance
//! run. Each check returns the worst errors instead of asserting.

use qpadapt::activation::{activation_backward, activation_forward, ActivationKind};
use qpadapt::conv::{conv2d_backward, conv2d_forward, ConvParams, ConvSpec};
use qpadapt::modulation::{modulate_backward, modulate_forward, ModulationParams};
use qpadapt::ops::{concat_channels, mse_loss, residual_add, residual_add_backward, split_channels};
use qpadapt::{Arch, Mode, Network, QpContext, Shape, Tensor};
use rand::Rng;

use super::{central_diff, grad_error, inner, random_tensor, random_vec, rng, sample_indices, GradError};

/// Step for layers that are smooth in the perturbed variable.
pub const STEP: f64 = 1e-4;
/// Smaller step for whole networks, keeping ReLU kinks out of the stencil.
pub const NET_STEP: f64 = 1e-5;

fn with_data(shape: Shape, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

pub fn conv(seed: u64, spec: ConvSpec, shape: Shape) -> GradError {
    let mut r = rng(seed);
    let x = random_tensor(&mut r, shape, -1.0, 1.0);
    let weight = random_vec(&mut r, spec.weight_count(), -0.5, 0.5);
    let bias = spec.bias.then(|| random_vec(&mut r, spec.out_channels, -0.5, 0.5));
    let params = ConvParams::new(spec, weight, bias).unwrap();
    let out_shape = shape.with_channels(spec.out_channels);
    let g = random_tensor(&mut r, out_shape, -1.0, 1.0);
    let grads = conv2d_backward(&x, &params, &g).unwrap();

    // L = ⟨conv(x), g⟩
    let loss = |x: &Tensor<f64>, p: &ConvParams<f64>| inner(conv2d_forward(x, p).unwrap().data(), g.data());

    let mut xd = x.data().to_vec();
    let all: Vec<usize> = (0..xd.len()).collect();
    let n_in = central_diff(&mut xd, &all, STEP, |v| loss(&with_data(shape, v), &params));
    let mut e = grad_error(grads.input.data(), &n_in);

    let mut w = params.weight.clone();
    let all: Vec<usize> = (0..w.len()).collect();
    let n_w = central_diff(&mut w, &all, STEP, |v| {
        loss(&x, &ConvParams::new(spec, v.to_vec(), params.bias.clone()).unwrap())
    });
    e = e.merge(grad_error(&grads.weight, &n_w));

    if let Some(b) = &params.bias {
        let mut b = b.clone();
        let all: Vec<usize> = (0..b.len()).collect();
        let n_b = central_diff(&mut b, &all, STEP, |v| {
            loss(&x, &ConvParams::new(spec, params.weight.clone(), Some(v.to_vec())).unwrap())
        });
        e = e.merge(grad_error(grads.bias.as_ref().unwrap(), &n_b));
    }
    e
}

pub fn conv_suite(seed: u64) -> GradError {
    let cases = [
        (ConvSpec::dense(2, 4, 3), Shape::new(1, 2, 5, 5)),
        (ConvSpec::dense(3, 2, 1), Shape::new(2, 3, 4, 3)),
        (ConvSpec::dense(1, 3, 5).without_bias(), Shape::new(1, 1, 6, 7)),
        (ConvSpec::dense(2, 1, 5), Shape::new(1, 2, 3, 3)),
        (ConvSpec::depthwise(3, 3), Shape::new(2, 3, 5, 4)),
        (ConvSpec::depthwise(2, 5).without_bias(), Shape::new(1, 2, 4, 6)),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(i, &(spec, shape))| conv(seed + i as u64, spec, shape))
        .fold(GradError::default(), GradError::merge)
}

pub fn activation(seed: u64, kind: ActivationKind) -> GradError {
    let mut r = rng(seed);
    let shape = Shape::new(2, 3, 4, 4);
    // Keep samples at least 10·STEP away from the kink at 0.
    let data: Vec<f64> = (0..shape.len())
        .map(|_| {
            let m = r.random_range(0.01..2.0);
            if r.random_bool(0.5) { m } else { -m }
        })
        .collect();
    let x = with_data(shape, &data);
    let g = random_tensor(&mut r, shape, -1.0, 1.0);
    let analytic = activation_backward(kind, &x, &g).unwrap();
    let mut xd = data.clone();
    let all: Vec<usize> = (0..xd.len()).collect();
    let numeric = central_diff(&mut xd, &all, STEP, |v| inner(activation_forward(kind, &with_data(shape, v)).data(), g.data()));
    grad_error(analytic.data(), &numeric)
}

pub fn concat(seed: u64) -> GradError {
    let mut r = rng(seed);
    let (sa, sb) = (Shape::new(2, 2, 3, 3), Shape::new(2, 3, 3, 3));
    let a = random_tensor(&mut r, sa, -1.0, 1.0);
    let b = random_tensor(&mut r, sb, -1.0, 1.0);
    let g = random_tensor(&mut r, Shape::new(2, 5, 3, 3), -1.0, 1.0);
    let parts = split_channels(&g, &[2, 3]).unwrap();
    let mut ad = a.data().to_vec();
    let all: Vec<usize> = (0..ad.len()).collect();
    let na = central_diff(&mut ad, &all, STEP, |v| inner(concat_channels(&with_data(sa, v), &b).unwrap().data(), g.data()));
    let mut bd = b.data().to_vec();
    let all: Vec<usize> = (0..bd.len()).collect();
    let nb = central_diff(&mut bd, &all, STEP, |v| inner(concat_channels(&a, &with_data(sb, v)).unwrap().data(), g.data()));
    grad_error(parts[0].data(), &na).merge(grad_error(parts[1].data(), &nb))
}

pub fn residual(seed: u64) -> GradError {
    let mut r = rng(seed);
    let s = Shape::new(1, 2, 4, 4);
    let a = random_tensor(&mut r, s, -1.0, 1.0);
    let b = random_tensor(&mut r, s, -1.0, 1.0);
    let g = random_tensor(&mut r, s, -1.0, 1.0);
    let (ga, gb) = residual_add_backward(&g);
    let mut ad = a.data().to_vec();
    let all: Vec<usize> = (0..ad.len()).collect();
    let na = central_diff(&mut ad, &all, STEP, |v| inner(residual_add(&with_data(s, v), &b).unwrap().data(), g.data()));
    let mut bd = b.data().to_vec();
    let nb = central_diff(&mut bd, &all, STEP, |v| inner(residual_add(&a, &with_data(s, v)).unwrap().data(), g.data()));
    grad_error(ga.data(), &na).merge(grad_error(gb.data(), &nb))
}

pub fn modulation(seed: u64, qp: i32) -> GradError {
    let mut r = rng(seed);
    let s = Shape::new(2, 4, 3, 5);
    let x = random_tensor(&mut r, s, -2.0, 2.0);
    let theta = ModulationParams::new(random_vec(&mut r, 4, 0.0, 2.0)).unwrap();
    let ctx = QpContext::new(qp).unwrap();
    let g = random_tensor(&mut r, s, -1.0, 1.0);
    let grads = modulate_backward(&x, &theta, &ctx, &g).unwrap();
    let mut xd = x.data().to_vec();
    let all: Vec<usize> = (0..xd.len()).collect();
    let nx = central_diff(&mut xd, &all, STEP, |v| inner(modulate_forward(&with_data(s, v), &theta, &ctx).unwrap().data(), g.data()));
    let mut t = theta.theta.clone();
    let nt = central_diff(&mut t, &[0, 1, 2, 3], STEP, |v| {
        // The stencil may step below zero; the formula is smooth there.
        let p = ModulationParams { theta: v.to_vec() };
        inner(modulate_forward(&x, &p, &ctx).unwrap().data(), g.data())
    });
    grad_error(grads.input.data(), &nx).merge(grad_error(&grads.theta, &nt))
}

pub fn mse(seed: u64) -> GradError {
    let mut r = rng(seed);
    let s = Shape::new(2, 1, 4, 3);
    let p = random_tensor(&mut r, s, -1.0, 1.0);
    let t = random_tensor(&mut r, s, -1.0, 1.0);
    let (_, grad) = mse_loss(&p, &t).unwrap();
    let mut pd = p.data().to_vec();
    let all: Vec<usize> = (0..pd.len()).collect();
    let n = central_diff(&mut pd, &all, STEP, |v| mse_loss(&with_data(s, v), &t).unwrap().0);
    grad_error(grad.data(), &n)
}

/// Every parameter family of `arch` in `mode`, plus the input gradient, on a
/// small image. Groups larger than `per_group` are sampled.
pub fn network(seed: u64, arch: Arch, mode: Mode, side: usize, per_group: usize) -> GradError {
    let mut r = rng(seed);
    let mut net = Network::<f64>::init(arch.build(mode).unwrap(), seed).unwrap();
    // Random everywhere, including the zero-initialized output layer, biases
    // and θ, so every path carries gradient.
    for group in net.param_groups_mut() {
        let scale = (1.0 / group.len() as f64).sqrt().max(0.05);
        for v in group.iter_mut() {
            if *v == 0.0 {
                *v = r.random_range(-scale..scale);
            }
        }
    }
    for t in net.theta_mut() {
        for v in t.theta.iter_mut() {
            *v = r.random_range(0.05..1.0);
        }
    }
    let shape = Shape::new(2, 1, side, side);
    let x = random_tensor(&mut r, shape, 0.0, 1.0);
    let target = random_tensor(&mut r, shape, 0.0, 1.0);
    let ctx = QpContext::new(32 + (seed % 6) as i32).unwrap();
    let ctx = mode.needs_qp().then_some(&ctx);

    let (out, tape) = net.forward_with_tape(&x, ctx).unwrap();
    let (_, g) = mse_loss(&out, &target).unwrap();
    let grads = net.backward(&tape, &g).unwrap();

    let loss = |n: &Network<f64>, x: &Tensor<f64>| mse_loss(&n.forward(x, ctx).unwrap(), &target).unwrap().0;

    let mut e = GradError::default();
    let mut xd = x.data().to_vec();
    for i in sample_indices(&mut r, xd.len(), per_group) {
        let orig = xd[i];
        let numeric = kink_aware_diff(|d| {
            xd[i] = orig + d;
            let v = loss(&net, &with_data(shape, &xd));
            xd[i] = orig;
            v
        });
        e = e.merge(entry_error(grads.input.data()[i], numeric));
    }

    let analytic: Vec<Vec<f64>> = grads.groups().iter().map(|g| g.to_vec()).collect();
    for (gi, a) in analytic.iter().enumerate() {
        for i in sample_indices(&mut r, a.len(), per_group) {
            let orig = net.param_groups()[gi][i];
            let numeric = kink_aware_diff(|d| {
                net.param_groups_mut()[gi][i] = orig + d;
                let v = loss(&net, &x);
                net.param_groups_mut()[gi][i] = orig;
                v
            });
            e = e.merge(entry_error(a[i], numeric));
        }
    }
    e
}

/// Central difference at `NET_STEP` and `NET_STEP / 4`. When the two
/// disagree the stencil straddles a ReLU kink and the entry is dropped.
fn kink_aware_diff(mut f: impl FnMut(f64) -> f64) -> Option<f64> {
    let mut slope = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    let coarse = slope(NET_STEP);
    let fine = slope(NET_STEP / 4.0);
    let scale = coarse.abs().max(fine.abs()).max(1e-3);
    ((coarse - fine).abs() / scale < 1e-6).then_some(coarse)
}

fn entry_error(analytic: f64, numeric: Option<f64>) -> GradError {
    match numeric {
        Some(n) => grad_error(&[analytic], &[n]),
        None => GradError { skipped: 1, ..GradError::default() },
    }
}

pub fn small_archs() -> [Arch; 4] {
    [Arch::Dcad, Arch::Vrcnn, Arch::LiuDsc { width: 6 }, Arch::TucodecMini { blocks: 2 }]
}
