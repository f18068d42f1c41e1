mod common;

use common::gradcheck;
use qpadapt::activation::ActivationKind;
use qpadapt::Mode;

fn check(name: &str, e: common::GradError) {
    assert!(e.checked > 0, "{name}: nothing checked");
    assert!(e.passes(), "{name}: {e:?}");
}

#[test]
fn conv_layers() {
    check("conv", gradcheck::conv_suite(1));
}

#[test]
fn activations() {
    for (i, kind) in [ActivationKind::Relu, ActivationKind::leaky(), ActivationKind::Identity].into_iter().enumerate() {
        check(&kind.to_string(), gradcheck::activation(10 + i as u64, kind));
    }
}

#[test]
fn concat_split() {
    check("concat", gradcheck::concat(3));
}

#[test]
fn residual() {
    check("residual", gradcheck::residual(4));
}

#[test]
fn modulation() {
    for qp in [22, 32, 37, 51] {
        check(&format!("modulation qp {qp}"), gradcheck::modulation(5, qp));
    }
}

#[test]
fn mse() {
    check("mse", gradcheck::mse(6));
}

#[test]
fn networks() {
    for arch in gradcheck::small_archs() {
        for mode in Mode::ALL {
            let e = gradcheck::network(20, arch, mode, 6, 12);
            check(&format!("{} {mode}", arch.name()), e);
        }
    }
}
