//! Central finite-difference checks of the analytic gradients.
//!
//! [`check_ops`] exercises every differentiable kernel plus a small network
//! recorded on a [`Tape`] that touches every tape operation, and reports the
//! worst relative error seen per operation.

use rand::Rng;

use super::{ops, ParamStore, Tape, Tensor, Var};
use crate::seed;

pub const FD_STEP: f64 = 1e-5;

pub fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute norm when both vanish.
pub fn rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let norm = |t: &[f64]| t.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a.data()).max(norm(b.data()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Weighted sum `<w, y>`; a random projection turns any output into a scalar.
pub fn project(y: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: u64,
    /// Largest relative error over instances and differentiated arguments.
    pub worst: f64,
}

fn run(op: &'static str, instances: u64, base: u64, f: impl Fn(&mut seed::Rng, u64) -> Vec<f64>) -> OpCheck {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = seed::rng(seed::derive_seed(base, i));
        for e in f(&mut rng, i) {
            // NaN must not hide behind max().
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        }
    }
    OpCheck { op, instances, worst }
}

fn unwrap<T>(r: crate::Result<T>) -> T {
    r.expect("gradient check shapes are valid by construction")
}

pub fn check_conv2d(instances: u64) -> OpCheck {
    run("conv2d", instances, 100, |rng, i| {
        let (n, c, f) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5));
        let k = [1, 3][i as usize % 2];
        let stride = if i % 3 == 2 { 2 } else { 1 };
        let pad = (i / 2 % 2) as usize;
        // Padded extents minus the kernel must be a multiple of the stride.
        let mut extent = || k + stride * rng.random_range(2..5) - 2 * pad;
        let (h, w) = (extent(), extent());
        let x = random(&[n, c, h, w], rng);
        let kern = random(&[f, c, k, k], rng);
        let b = random(&[f], rng);
        let conv = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| unwrap(ops::conv2d(x, k, b, stride, pad));
        let proj = random(conv(&x, &kern, &b).shape(), rng);
        let g = unwrap(ops::conv2d_backward(&x, &kern, &proj, stride, pad));
        vec![
            rel_err(&g.input, &numeric_grad(&x, |x| project(&conv(x, &kern, &b), &proj))),
            rel_err(&g.kernel, &numeric_grad(&kern, |k| project(&conv(&x, k, &b), &proj))),
            rel_err(&g.bias, &numeric_grad(&b, |b| project(&conv(&x, &kern, b), &proj))),
        ]
    })
}

pub fn check_linear(instances: u64) -> OpCheck {
    run("linear", instances, 200, |rng, _| {
        let (n, d, e) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
        let x = random(&[n, d], rng);
        let w = random(&[d, e], rng);
        let b = random(&[e], rng);
        let proj = random(&[n, e], rng);
        let lin = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| unwrap(ops::linear(x, w, b));
        let (dx, dw, db) = unwrap(ops::linear_backward(&x, &w, &proj));
        vec![
            rel_err(&dx, &numeric_grad(&x, |x| project(&lin(x, &w, &b), &proj))),
            rel_err(&dw, &numeric_grad(&w, |w| project(&lin(&x, w, &b), &proj))),
            rel_err(&db, &numeric_grad(&b, |b| project(&lin(&x, &w, b), &proj))),
        ]
    })
}

pub fn check_group_norm(instances: u64) -> OpCheck {
    run("group_norm", instances, 300, |rng, i| {
        let groups = [1, 2, 4][i as usize % 3];
        let c = groups * rng.random_range(1..3);
        let x = random(&[rng.random_range(1..3), c, 3, rng.random_range(2..4)], rng);
        let gamma = random(&[c], rng);
        let beta = random(&[c], rng);
        let gn = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| unwrap(ops::group_norm(x, g, b, groups, 1e-5));
        let (y, stats) = gn(&x, &gamma, &beta);
        let proj = random(y.shape(), rng);
        let (dx, dg, db) = unwrap(ops::group_norm_backward(&x, &gamma, &stats, &proj));
        vec![
            rel_err(&dx, &numeric_grad(&x, |x| project(&gn(x, &gamma, &beta).0, &proj))),
            rel_err(&dg, &numeric_grad(&gamma, |g| project(&gn(&x, g, &beta).0, &proj))),
            rel_err(&db, &numeric_grad(&beta, |b| project(&gn(&x, &gamma, b).0, &proj))),
        ]
    })
}

pub fn check_silu(instances: u64) -> OpCheck {
    run("silu", instances, 350, |rng, _| {
        let x = Tensor::from_fn(&[rng.random_range(1..40)], |_| rng.random_range(-8.0..8.0));
        let proj = random(x.shape(), rng);
        let g = unwrap(ops::silu_backward(&x, &proj));
        vec![rel_err(&g, &numeric_grad(&x, |x| project(&ops::silu(x), &proj)))]
    })
}

pub fn check_avgpool2(instances: u64) -> OpCheck {
    run("avgpool2", instances, 400, |rng, _| {
        let x = random(&[rng.random_range(1..3), 2, 2 * rng.random_range(1..4), 2 * rng.random_range(1..4)], rng);
        let proj = random(unwrap(ops::avgpool2(&x)).shape(), rng);
        let g = unwrap(ops::avgpool2_backward(&proj));
        vec![rel_err(&g, &numeric_grad(&x, |x| project(&unwrap(ops::avgpool2(x)), &proj)))]
    })
}

pub fn check_upsample2(instances: u64) -> OpCheck {
    run("upsample2", instances, 450, |rng, _| {
        let x = random(&[rng.random_range(1..3), 2, rng.random_range(1..4), rng.random_range(1..4)], rng);
        let proj = random(unwrap(ops::upsample2_nearest(&x)).shape(), rng);
        let g = unwrap(ops::upsample2_backward(&proj));
        vec![rel_err(&g, &numeric_grad(&x, |x| project(&unwrap(ops::upsample2_nearest(x)), &proj)))]
    })
}

pub fn check_concat(instances: u64) -> OpCheck {
    run("concat", instances, 480, |rng, _| {
        let (n, h, w) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let a = random(&[n, rng.random_range(1..4), h, w], rng);
        let b = random(&[n, rng.random_range(1..4), h, w], rng);
        let cat = |a: &Tensor<f64>, b: &Tensor<f64>| unwrap(ops::concat_channels(a, b));
        let proj = random(cat(&a, &b).shape(), rng);
        let (ga, gb) = unwrap(ops::split_channels(&proj, a.shape()[1]));
        vec![
            rel_err(&ga, &numeric_grad(&a, |a| project(&cat(a, &b), &proj))),
            rel_err(&gb, &numeric_grad(&b, |b| project(&cat(&a, b), &proj))),
        ]
    })
}

pub fn check_channel_bias(instances: u64) -> OpCheck {
    run("add_channel_bias", instances, 490, |rng, _| {
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..4));
        let x = random(&[n, c, rng.random_range(1..4), rng.random_range(1..4)], rng);
        let bias = random(&[n, c], rng);
        let add = |x: &Tensor<f64>, b: &Tensor<f64>| unwrap(ops::add_channel_bias(x, b));
        let proj = random(x.shape(), rng);
        vec![
            rel_err(&unwrap(ops::channel_bias_backward(&proj)), &numeric_grad(&bias, |b| project(&add(&x, b), &proj))),
            rel_err(&proj, &numeric_grad(&x, |x| project(&add(x, &bias), &proj))),
        ]
    })
}

pub fn check_cross_entropy(instances: u64) -> OpCheck {
    run("softmax_cross_entropy", instances, 500, |rng, _| {
        let (n, c, h, w) = (rng.random_range(1..3), 4, rng.random_range(1..4), rng.random_range(1..4));
        let logits = Tensor::from_fn(&[n, c, h, w], |_| rng.random_range(-3.0..3.0));
        let target: Vec<u8> = (0..n * h * w).map(|_| rng.random_range(0..c as u8)).collect();
        let (_, g) = unwrap(ops::softmax_cross_entropy(&logits, &target));
        let fd = numeric_grad(&logits, |l| unwrap(ops::softmax_cross_entropy(l, &target)).0);
        vec![rel_err(&g, &fd)]
    })
}

pub fn check_mse(instances: u64) -> OpCheck {
    run("mse_loss", instances, 600, |rng, _| {
        let shape = [rng.random_range(1..3), 1, rng.random_range(1..4), 3];
        let p = random(&shape, rng);
        let t = random(&shape, rng);
        let (_, g) = unwrap(ops::mse_loss(&p, &t));
        vec![rel_err(&g, &numeric_grad(&p, |p| unwrap(ops::mse_loss(p, &t)).0))]
    })
}

/// A small network exercising every tape op at once.
fn toy_net(params: &ParamStore<f64>, x: &Tensor<f64>, emb: &Tensor<f64>) -> (Tape<f64>, Var, Var) {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let ev = tape.input(emb.clone());
    let p = |tape: &mut Tape<f64>, n: &str| unwrap(tape.param(params, n));
    let (w1, b1) = (p(&mut tape, "c1.w"), p(&mut tape, "c1.b"));
    let h = unwrap(tape.conv2d(xv, w1, b1, 1, 1));
    let (g, be) = (p(&mut tape, "gn.g"), p(&mut tape, "gn.b"));
    let h = unwrap(tape.group_norm(h, g, be, 2));
    let (lw, lb) = (p(&mut tape, "lin.w"), p(&mut tape, "lin.b"));
    let t = unwrap(tape.linear(ev, lw, lb));
    let h = unwrap(tape.add_channel_bias(h, t));
    let h = tape.silu(h);
    let d = unwrap(tape.avgpool2(h));
    let u = unwrap(tape.upsample2(d));
    let cat = unwrap(tape.concat(u, h));
    let (w2, b2) = (p(&mut tape, "c2.w"), p(&mut tape, "c2.b"));
    let y = unwrap(tape.conv2d(cat, w2, b2, 1, 0));
    let y = unwrap(tape.add(y, xv));
    (tape, y, xv)
}

/// Whole-tape check: input and every parameter of [`toy_net`].
pub fn check_tape(instances: u64) -> OpCheck {
    run("tape", instances, 700, |rng, _| {
        let mut params = ParamStore::new();
        for (name, shape) in [
            ("c1.w", &[4, 1, 3, 3][..]),
            ("c1.b", &[4]),
            ("gn.g", &[4]),
            ("gn.b", &[4]),
            ("lin.w", &[3, 4]),
            ("lin.b", &[4]),
            ("c2.w", &[1, 8, 1, 1]),
            ("c2.b", &[1]),
        ] {
            params.insert(name, random(shape, rng));
        }
        let x = random(&[2, 1, 4, 4], rng);
        let emb = random(&[2, 3], rng);
        let (tape, y, xv) = toy_net(&params, &x, &emb);
        let proj = random(tape.value(y).shape(), rng);
        let back = unwrap(tape.backward(y, proj.clone()));
        let fx = numeric_grad(&x, |x| {
            let (t, y, _) = toy_net(&params, x, &emb);
            project(t.value(y), &proj)
        });
        let mut errs = vec![rel_err(back.wrt(xv).expect("input reached"), &fx)];
        for (name, value) in params.iter() {
            let fd = numeric_grad(value, |v| {
                let mut p2 = params.clone();
                *p2.get_mut(name).expect("known name") = v.clone();
                let (t, y, _) = toy_net(&p2, &x, &emb);
                project(t.value(y), &proj)
            });
            errs.push(rel_err(back.params.get(name).expect("param reached"), &fd));
        }
        errs
    })
}

/// Every check above with `instances` random instances each.
pub fn check_ops(instances: u64) -> Vec<OpCheck> {
    vec![
        check_conv2d(instances),
        check_linear(instances),
        check_group_norm(instances),
        check_silu(instances),
        check_avgpool2(instances),
        check_upsample2(instances),
        check_concat(instances),
        check_channel_bias(instances),
        check_cross_entropy(instances),
        check_mse(instances),
        check_tape(instances),
    ]
}
