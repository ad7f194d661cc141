//! Finite-difference checks of every differentiable kernel.

use octsynth::seed;
use octsynth::tensor::gradcheck::{self, numeric_grad, random, rel_err, OpCheck, FD_STEP};
use octsynth::tensor::{ops, Tensor};
use rand::Rng;

const TOL: f64 = 1e-4;
const INSTANCES: u64 = 10;

fn assert_ok(c: OpCheck) {
    assert_eq!(c.instances, INSTANCES);
    assert!(c.worst < TOL, "{}: worst relative error {}", c.op, c.worst);
}

#[test]
fn conv2d_gradients() {
    assert_ok(gradcheck::check_conv2d(INSTANCES));
}

#[test]
fn linear_gradients() {
    assert_ok(gradcheck::check_linear(INSTANCES));
}

#[test]
fn group_norm_gradients() {
    assert_ok(gradcheck::check_group_norm(INSTANCES));
}

#[test]
fn elementwise_and_resampling_gradients() {
    assert_ok(gradcheck::check_silu(INSTANCES));
    assert_ok(gradcheck::check_avgpool2(INSTANCES));
    assert_ok(gradcheck::check_upsample2(INSTANCES));
    assert_ok(gradcheck::check_concat(INSTANCES));
    assert_ok(gradcheck::check_channel_bias(INSTANCES));
}

#[test]
fn loss_gradients() {
    assert_ok(gradcheck::check_cross_entropy(INSTANCES));
    assert_ok(gradcheck::check_mse(INSTANCES));
}

#[test]
fn tape_matches_finite_differences() {
    assert_ok(gradcheck::check_tape(INSTANCES));
}

#[test]
fn conv2d_sum_gradient_reference_shape() {
    let mut rng = seed::rng(1);
    let x = random(&[2, 3, 5, 5], &mut rng);
    let k = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    let y = ops::conv2d(&x, &k, &b, 1, 1).unwrap();
    let ones = Tensor::full(y.shape(), 1.0);
    let g = ops::conv2d_backward(&x, &k, &ones, 1, 1).unwrap();
    let sum = |t: &Tensor<f64>| t.sum();
    assert!(rel_err(&g.input, &numeric_grad(&x, |x| sum(&ops::conv2d(x, &k, &b, 1, 1).unwrap()))) < TOL);
    assert!(rel_err(&g.kernel, &numeric_grad(&k, |k| sum(&ops::conv2d(&x, k, &b, 1, 1).unwrap()))) < TOL);
    assert!(rel_err(&g.bias, &numeric_grad(&b, |b| sum(&ops::conv2d(&x, &k, b, 1, 1).unwrap()))) < TOL);
}

#[test]
fn silu_gradient_pointwise() {
    let mut rng = seed::rng(2);
    let x = Tensor::from_fn(&[100], |_| rng.random_range(-8.0..8.0));
    let g = ops::silu_backward(&x, &Tensor::full(&[100], 1.0)).unwrap();
    let h = FD_STEP;
    for (i, &v) in x.data().iter().enumerate() {
        let f = |z: f64| z / (1.0 + (-z).exp());
        let fd = (f(v + h) - f(v - h)) / (2.0 * h);
        let rel = (g.data()[i] - fd).abs() / fd.abs().max(1e-3);
        assert!(rel < 1e-6, "x={v} rel={rel}");
    }
}

#[test]
fn nan_is_reported_as_failure() {
    let a = Tensor::full(&[2], f64::NAN);
    let b = Tensor::full(&[2], 1.0);
    assert!(!(rel_err(&a, &b) < TOL));
}
