mod common;

use common::{inner, random_tensor, random_vec, rng};
use proptest::prelude::*;
use qpadapt::adam::{Adam, AdamConfig};
use qpadapt::codec::{dct2, encode_decode, idct2, synthetic_image, QuantizerConfig};
use qpadapt::conv::{conv2d_forward, ConvParams, ConvSpec};
use qpadapt::metrics::{bd_rate, psnr, RdPoint};
use qpadapt::modulation::{modulate_backward, modulate_forward, ModulationParams};
use qpadapt::ops::{concat_channels, mse_loss, residual_add, residual_add_backward, split_channels};
use qpadapt::wiener::{adapt_filter, bin_factor, expected_mse, influence_factors, SpectralModel};
use qpadapt::{Arch, Mode, Network, QpContext, Shape, Tensor};
use num_complex::Complex64;
use rand::Rng;

/// Nested-loop cross-correlation with zero padding. Accumulates bias-free
/// products in ascending (input channel, ky, kx) order, then adds the bias.
fn conv_oracle(x: &Tensor<f64>, p: &ConvParams<f64>) -> Tensor<f64> {
    let s = x.shape();
    let spec = p.spec;
    let k = spec.kernel as isize;
    let r = k / 2;
    let depth = spec.filter_depth();
    let mut out = Tensor::zeros(s.with_channels(spec.out_channels));
    for n in 0..s.n {
        for o in 0..spec.out_channels {
            for y in 0..s.h as isize {
                for xx in 0..s.w as isize {
                    let mut acc = 0.0;
                    for d in 0..depth {
                        let ic = if spec.depthwise { o } else { d };
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = (y + ky - r, xx + kx - r);
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let w = p.weight[((o * depth + d) * spec.kernel + ky as usize) * spec.kernel + kx as usize];
                                acc += w * x.get(n, ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    if let Some(b) = &p.bias {
                        acc += b[o];
                    }
                    out.set(n, o, y as usize, xx as usize, acc);
                }
            }
        }
    }
    out
}

fn conv_case() -> impl Strategy<Value = (ConvSpec, Shape, u64)> {
    (1usize..5, 1usize..6, prop::sample::select(vec![1usize, 3, 5]), any::<bool>(), any::<bool>(), 1usize..3, 1usize..12, 1usize..12, any::<u64>())
        .prop_map(|(cin, cout, k, depthwise, bias, n, h, w, seed)| {
            let mut spec = if depthwise { ConvSpec::depthwise(cin, k) } else { ConvSpec::dense(cin, cout, k) };
            if !bias {
                spec = spec.without_bias();
            }
            (spec, Shape::new(n, cin, h, w), seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn conv_matches_nested_loops((spec, shape, seed) in conv_case()) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, shape, -1.0, 1.0);
        let p = ConvParams::new(
            spec,
            random_vec(&mut r, spec.weight_count(), -1.0, 1.0),
            spec.bias.then(|| random_vec(&mut r, spec.out_channels, -1.0, 1.0)),
        ).unwrap();
        let got = conv2d_forward(&x, &p).unwrap();
        let want = conv_oracle(&x, &p);
        prop_assert_eq!(got.data(), want.data());
    }
}

proptest! {
    #[test]
    fn concat_split_adjoint(ca in 1usize..4, cb in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, Shape::new(2, ca, h, w), -1.0, 1.0);
        let b = random_tensor(&mut r, Shape::new(2, cb, h, w), -1.0, 1.0);
        let g = random_tensor(&mut r, Shape::new(2, ca + cb, h, w), -1.0, 1.0);
        let lhs = inner(concat_channels(&a, &b).unwrap().data(), g.data());
        let parts = split_channels(&g, &[ca, cb]).unwrap();
        let rhs = inner(a.data(), parts[0].data()) + inner(b.data(), parts[1].data());
        prop_assert!((lhs - rhs).abs() < 1e-10);
        // Split after concat is exact.
        let back = split_channels(&concat_channels(&a, &b).unwrap(), &[ca, cb]).unwrap();
        prop_assert_eq!(&back[0], &a);
        prop_assert_eq!(&back[1], &b);
    }

    #[test]
    fn residual_adjoint(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = Shape::new(1, c, h, w);
        let a = random_tensor(&mut r, s, -1.0, 1.0);
        let b = random_tensor(&mut r, s, -1.0, 1.0);
        let g = random_tensor(&mut r, s, -1.0, 1.0);
        let lhs = inner(residual_add(&a, &b).unwrap().data(), g.data());
        let (ga, gb) = residual_add_backward(&g);
        let rhs = inner(a.data(), ga.data()) + inner(b.data(), gb.data());
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn modulation_shrinks_with_qp(x in 1e-3f64..10.0, theta in 1e-3f64..5.0, qp in 0i32..63) {
        let t = Tensor::filled(Shape::new(1, 2, 1, 1), x);
        let p = ModulationParams::new(vec![theta, 0.0]).unwrap();
        let lo = modulate_forward(&t, &p, &QpContext::new(qp).unwrap()).unwrap();
        let hi = modulate_forward(&t, &p, &QpContext::new(qp + 1).unwrap()).unwrap();
        prop_assert!(hi.data()[0].abs() < lo.data()[0].abs());
        prop_assert_eq!(hi.data()[1], x);
        prop_assert_eq!(lo.data()[1], x);
    }

    #[test]
    fn influence_factor_bounds(theta in prop::collection::vec(0.0f64..1e6, 1..8), qp in 0i32..=63) {
        let p = ModulationParams::new(theta).unwrap();
        for f in p.factors(&QpContext::new(qp).unwrap()) {
            prop_assert!(f > 0.0 && f <= 1.0);
        }
    }

    #[test]
    fn power_of_two_rescale_is_exact(exp in -8i32..8, qp in 0i32..=63, seed in any::<u64>()) {
        let mut r = rng(seed);
        let c = 2f64.powi(exp);
        let x = random_tensor(&mut r, Shape::new(2, 3, 3, 2), -2.0, 2.0);
        let theta = random_vec(&mut r, 3, 0.0, 3.0);
        let ctx = QpContext::new(qp).unwrap();
        let a = modulate_forward(&x, &ModulationParams::new(theta.clone()).unwrap(), &ctx).unwrap();
        let scaled = ModulationParams::new(theta.iter().map(|t| t / c).collect()).unwrap();
        let b = modulate_forward(&x, &scaled, &ctx.rescaled(c)).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn power_of_two_rescale_network(exp in -4i32..4, qp in prop::sample::select(vec![22, 27, 32, 37]), seed in 0u64..1000) {
        let c = 2f64.powi(exp);
        let mut net = Network::<f64>::init(Arch::Vrcnn.build(Mode::QpAdaptive).unwrap(), seed).unwrap();
        let mut r = rng(seed);
        for t in net.theta_mut() {
            t.theta.iter_mut().for_each(|v| *v = r.random_range(0.0..2.0));
        }
        let mut scaled = net.clone();
        for t in scaled.theta_mut() {
            t.theta.iter_mut().for_each(|v| *v /= c);
        }
        let x = random_tensor(&mut r, Shape::new(1, 1, 8, 8), 0.0, 1.0);
        let ctx = QpContext::new(qp).unwrap();
        let a = net.forward(&x, Some(&ctx)).unwrap();
        let b = scaled.forward(&x, Some(&ctx.rescaled(c))).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn theta_stays_nonnegative_under_adam(seed in any::<u64>(), lr in 1e-3f64..1.0) {
        let mut r = rng(seed);
        let s = Shape::new(2, 4, 3, 3);
        let ctx = QpContext::new(37).unwrap();
        let mut theta = ModulationParams::new(random_vec(&mut r, 4, 0.0, 0.01)).unwrap();
        let mut adam = Adam::<f64>::new(AdamConfig::with_lr(lr), [4]);
        for _ in 0..100 {
            let x = random_tensor(&mut r, s, -1.0, 1.0);
            let target = random_tensor(&mut r, s, -3.0, 3.0);
            let (_, g) = mse_loss(&modulate_forward(&x, &theta, &ctx).unwrap(), &target).unwrap();
            let grads = modulate_backward(&x, &theta, &ctx, &g).unwrap();
            adam.step(vec![&mut theta.theta], vec![&grads.theta]).unwrap();
            theta.clamp();
            prop_assert!(theta.theta.iter().all(|&t| t >= 0.0));
        }
    }

    #[test]
    fn dct_round_trip_and_energy(block in prop::collection::vec(-255.0f64..255.0, 64)) {
        let c = dct2(&block).unwrap();
        let back = idct2(&c).unwrap();
        for (a, b) in block.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        let e0: f64 = block.iter().map(|v| v * v).sum();
        let e1: f64 = c.iter().map(|v| v * v).sum();
        prop_assert!((e0 - e1).abs() <= 1e-10 * e0.max(1.0));
    }

    #[test]
    fn requantization_is_near_fixed_point(seed in 0u64..1000, qp in prop::sample::select(vec![22, 27, 32, 37])) {
        let img = synthetic_image(seed, 0, 64);
        let cfg = QuantizerConfig::new(qp);
        let once = encode_decode(&img, &cfg).unwrap().recon;
        let twice = encode_decode(&once, &cfg).unwrap().recon;
        let mse = |a: &qpadapt::codec::GrayImage, b: &qpadapt::codec::GrayImage| {
            qpadapt::metrics::mse_u8(&a.data, &b.data).unwrap()
        };
        let (m1, m2) = (mse(&img, &once), mse(&img, &twice));
        prop_assert!((m2 - m1).abs() < 0.05 * m1.max(1e-9), "{m1} {m2}");
    }

    #[test]
    fn wiener_zero_noise_identity(seed in any::<u64>(), bins in 1usize..64) {
        let m = SpectralModel::random(seed, bins);
        let m = m.with_noise(vec![0.0; bins]).unwrap();
        prop_assert_eq!(adapt_filter(&m).unwrap(), m.response.clone());
        prop_assert_eq!(expected_mse(&m, &m.response).unwrap(), 0.0);
    }

    #[test]
    fn wiener_monotone_attenuation(s in 1e-3f64..10.0, n in 0.0f64..5.0, dn in 1e-6f64..5.0, re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let w = Complex64::new(re, im);
        let (f0, f1) = (bin_factor(s, n, w), bin_factor(s, n + dn, w));
        prop_assert!((f1 * w).norm() <= (f0 * w).norm());
        prop_assert!(f0 > 0.0 && f0 <= 1.0);
        prop_assert!(f1 > 0.0 && f1 <= 1.0);
    }

    #[test]
    fn wiener_factor_range(seed in any::<u64>()) {
        let m = SpectralModel::random(seed, 32);
        for f in influence_factors(&m) {
            prop_assert!(f > 0.0 && f <= 1.0);
        }
    }

    #[test]
    fn psnr_falls_with_noise(seed in any::<u64>(), base in 1e-3f64..0.05) {
        let mut r = rng(seed);
        let reference = random_vec(&mut r, 256, 0.0, 1.0);
        let unit = random_vec(&mut r, 256, -1.0, 1.0);
        let noisy = |scale: f64| -> Vec<f64> { reference.iter().zip(&unit).map(|(x, u)| x + scale * u).collect() };
        let mut last = f64::INFINITY;
        for step in 1..6 {
            let p = psnr(&reference, &noisy(base * step as f64), 1.0).unwrap().db().unwrap();
            prop_assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn bd_rate_scaling_and_sign(scale in 0.5f64..1.5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut rate: f64 = r.random_range(1e3..1e4);
        let mut q = r.random_range(28.0..32.0);
        let anchor: Vec<RdPoint> = (0..4).map(|_| {
            rate *= r.random_range(1.3..2.0);
            q += r.random_range(1.0..3.0);
            RdPoint::new(rate, q)
        }).collect();
        let test: Vec<RdPoint> = anchor.iter().map(|p| RdPoint::new(p.rate * scale, p.psnr)).collect();
        prop_assert_eq!(bd_rate(&anchor, &anchor).unwrap(), 0.0);
        let d = bd_rate(&anchor, &test).unwrap();
        prop_assert!((d - 100.0 * (scale - 1.0)).abs() < 1e-6, "{d}");
        if (scale - 1.0).abs() > 1e-6 {
            let back = bd_rate(&test, &anchor).unwrap();
            prop_assert!((d < 0.0) == (back > 0.0));
        }
    }
}

#[test]
fn parameter_count_laws() {
    for arch in [Arch::Dcad, Arch::Vrcnn, Arch::LiuDsc { width: 32 }, Arch::TucodecMini { blocks: 6 }] {
        let count = |mode| Network::<f32>::zeros(arch.build(mode).unwrap()).unwrap().param_count();
        let spec = arch.build(Mode::Vanilla).unwrap();
        let first = spec.conv_specs()[0];
        assert_eq!(count(Mode::QpAdaptive) - count(Mode::Vanilla), spec.modulated_channels());
        assert_eq!(count(Mode::QpMap) - count(Mode::Vanilla), first.kernel * first.kernel * first.out_channels);
    }
}

#[test]
fn output_shape_matches_input() {
    for arch in [Arch::Dcad, Arch::Vrcnn, Arch::LiuDsc { width: 8 }, Arch::TucodecMini { blocks: 2 }] {
        for mode in Mode::ALL {
            let net = Network::<f32>::init(arch.build(mode).unwrap(), 3).unwrap();
            let x = Tensor::filled(Shape::new(2, 1, 7, 5), 0.5f32);
            let ctx = QpContext::new(27).unwrap();
            let y = net.forward(&x, Some(&ctx)).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
    }
}
