//! Central finite-difference checks of every differentiable op, first and
//! second order, at 64-bit precision. Each check panics on failure.

use psyn_core::tensor::{
    apply_activation, backward, batch_norm, dropout, lerp, lerp_per_sample, Activation, Mode,
    RunningStats, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<f64> {
    let n: usize = shape.iter().product();
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Values bounded away from zero so kinks (relu, abs) stay out of reach of
/// the finite-difference stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<f64> {
    random(rng, shape)
        .into_iter()
        .map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt())
        .max(1e-12);
    diff / scale
}

type Scalar<'a> = dyn Fn(&[Tensor<f64>]) -> Tensor<f64> + 'a;

/// Numeric gradient of `f` w.r.t. input `which`.
fn numeric(f: &Scalar<'_>, inputs: &[Vec<f64>], shapes: &[Vec<usize>], which: usize) -> Vec<f64> {
    let eval = |vals: &[Vec<f64>]| {
        let ts: Vec<Tensor<f64>> = vals
            .iter()
            .zip(shapes)
            .map(|(v, s)| Tensor::from_f64(v, s).unwrap())
            .collect();
        f(&ts).item().unwrap()
    };
    (0..inputs[which].len())
        .map(|i| {
            let mut plus = inputs.to_vec();
            plus[which][i] += H;
            let mut minus = inputs.to_vec();
            minus[which][i] -= H;
            (eval(&plus) - eval(&minus)) / (2.0 * H)
        })
        .collect()
}

fn analytic(f: &Scalar<'_>, inputs: &[Vec<f64>], shapes: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let ts: Vec<Tensor<f64>> = inputs
        .iter()
        .zip(shapes)
        .map(|(v, s)| Tensor::variable(v.clone(), s).unwrap())
        .collect();
    let loss = f(&ts);
    let refs: Vec<&Tensor<f64>> = ts.iter().collect();
    backward(&loss, &refs, false)
        .unwrap()
        .iter()
        .map(|g| g.to_vec())
        .collect()
}

/// `‖∇ f‖²` as a differentiable function of the inputs.
fn grad_norm_sq(f: &Scalar<'_>, ts: &[Tensor<f64>]) -> Tensor<f64> {
    let ts: Vec<Tensor<f64>> = ts
        .iter()
        .map(|t| if t.requires_grad() { t.clone() } else { t.requires_grad_() })
        .collect();
    let loss = f(&ts);
    let refs: Vec<&Tensor<f64>> = ts.iter().collect();
    let grads = backward(&loss, &refs, true).unwrap();
    let mut total = Tensor::scalar(0.0);
    for g in grads {
        total = total.add(&g.square().unwrap().sum()).unwrap();
    }
    total
}

/// Checks first-order gradients and the gradient of the squared gradient norm.
fn check(name: &str, f: &Scalar<'_>, inputs: Vec<Vec<f64>>, shapes: Vec<Vec<usize>>, second_order: bool) {
    let a = analytic(f, &inputs, &shapes);
    for which in 0..inputs.len() {
        let n = numeric(f, &inputs, &shapes, which);
        let e = rel_err(&a[which], &n);
        assert!(e < 1e-4, "{name}: input {which} relative error {e:e}");
    }
    if second_order {
        let g2 = move |ts: &[Tensor<f64>]| grad_norm_sq(f, ts);
        let a = analytic(&g2, &inputs, &shapes);
        for which in 0..inputs.len() {
            let n = numeric(&g2, &inputs, &shapes, which);
            let e = rel_err(&a[which], &n);
            assert!(e < 1e-4, "{name} (second order): input {which} relative error {e:e}");
        }
    }
}

fn weights(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_f64(&random(&mut rng, shape), shape).unwrap()
}

/// `sum(w ⊙ y)` with fixed random `w`, so every output element matters.
fn project(y: Tensor<f64>) -> Tensor<f64> {
    let w = weights(99, y.shape());
    y.mul(&w).unwrap().sum()
}

pub fn elementwise_binary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = vec![2, 3];
    let a = random(&mut rng, &s);
    let b: Vec<f64> = away_from_zero(&mut rng, &s).iter().map(|v| v + v.signum()).collect();
    let shapes = vec![s.clone(), s.clone()];
    check("add", &|t| project(t[0].add(&t[1]).unwrap()), vec![a.clone(), b.clone()], shapes.clone(), true);
    check("sub", &|t| project(t[0].sub(&t[1]).unwrap()), vec![a.clone(), b.clone()], shapes.clone(), true);
    check("mul", &|t| project(t[0].mul(&t[1]).unwrap()), vec![a.clone(), b.clone()], shapes.clone(), true);
    check("div", &|t| project(t[0].div(&t[1]).unwrap()), vec![a, b], shapes, true);
}

pub fn elementwise_unary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = vec![3, 4];
    let x = away_from_zero(&mut rng, &s);
    let pos: Vec<f64> = x.iter().map(|v| v.abs() + 0.5).collect();
    let one = |v: Vec<f64>| vec![v];
    let sh = vec![s.clone()];
    check("scale", &|t| project(t[0].scale(-1.7)), one(x.clone()), sh.clone(), true);
    check("add_scalar", &|t| project(t[0].add_scalar(0.3).square().unwrap()), one(x.clone()), sh.clone(), true);
    check("relu", &|t| project(t[0].relu().square().unwrap()), one(x.clone()), sh.clone(), true);
    check("leaky_relu", &|t| project(t[0].leaky_relu(0.2).square().unwrap()), one(x.clone()), sh.clone(), true);
    check("abs", &|t| project(t[0].abs().square().unwrap()), one(x.clone()), sh.clone(), true);
    check("tanh", &|t| project(t[0].tanh()), one(x.clone()), sh.clone(), true);
    check("sigmoid", &|t| project(t[0].sigmoid()), one(x.clone()), sh.clone(), true);
    check("sqrt", &|t| project(t[0].sqrt()), one(pos), sh.clone(), true);
    for kind in [Activation::Relu, Activation::LeakyRelu(0.2), Activation::Tanh, Activation::Sigmoid] {
        check("apply_activation", &move |t| project(apply_activation(kind, &t[0]).square().unwrap()), one(x.clone()), sh.clone(), true);
    }
}

pub fn reductions_and_shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = vec![2, 3, 2];
    let x = random(&mut rng, &s);
    let sh = vec![s.clone()];
    check("sum", &|t| t[0].square().unwrap().sum(), vec![x.clone()], sh.clone(), true);
    check("mean", &|t| t[0].mul(&t[0]).unwrap().mean(), vec![x.clone()], sh.clone(), true);
    check("reshape", &|t| project(t[0].reshape(&[6, 2]).unwrap().square().unwrap()), vec![x.clone()], sh.clone(), true);
    check("sum_to", &|t| project(t[0].sum_to(&[1, 3, 1]).unwrap().square().unwrap()), vec![x.clone()], sh.clone(), true);
    check("narrow", &|t| project(t[0].narrow(1, 1, 2).unwrap().square().unwrap()), vec![x.clone()], sh.clone(), true);

    let small = random(&mut rng, &[1, 3, 1]);
    check("expand", &|t| project(t[0].expand(&[2, 3, 2]).unwrap().square().unwrap()), vec![small], vec![vec![1, 3, 1]], true);

    let other = random(&mut rng, &[2, 1, 2]);
    check(
        "cat",
        &|t| project(Tensor::cat(&[&t[0], &t[1]], 1).unwrap().square().unwrap()),
        vec![x, other],
        vec![s, vec![2, 1, 2]],
        true,
    );
}

pub fn convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (stride, pad, k) in [(1, 0, 2), (2, 1, 4), (1, 1, 3)] {
        let xs = vec![2, 2, 5, 5];
        let ks = vec![3, 2, k, k];
        let x = random(&mut rng, &xs);
        let kv = random(&mut rng, &ks);
        check(
            "conv2d",
            &move |t| project(t[0].conv2d(&t[1], stride, pad).unwrap().square().unwrap()),
            vec![x, kv],
            vec![xs, ks],
            true,
        );

        let ys = vec![2, 3, 3, 3];
        let ks = vec![3, 2, k, k];
        let y = random(&mut rng, &ys);
        let kv = random(&mut rng, &ks);
        check(
            "conv_transpose2d",
            &move |t| project(t[0].conv_transpose2d(&t[1], stride, pad).unwrap().square().unwrap()),
            vec![y, kv],
            vec![ys, ks],
            true,
        );
    }
}

pub fn batch_norm_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs = vec![3, 2, 2, 2];
    let x = random(&mut rng, &xs);
    let gamma = vec![1.3, -0.7];
    let beta = vec![0.1, 0.4];
    let shapes = vec![xs.clone(), vec![2], vec![2]];
    let train = |t: &[Tensor<f64>]| {
        let mut stats = RunningStats::new(2);
        project(batch_norm(&t[0], &t[1], &t[2], 1e-5, Mode::Train, &mut stats).unwrap())
    };
    check("batch_norm train", &train, vec![x.clone(), gamma.clone(), beta.clone()], shapes.clone(), true);
    let eval = |t: &[Tensor<f64>]| {
        let mut stats = RunningStats::new(2);
        stats.mean = vec![0.2, -0.1];
        stats.var = vec![0.5, 1.5];
        project(batch_norm(&t[0], &t[1], &t[2], 1e-5, Mode::Eval, &mut stats).unwrap().square().unwrap())
    };
    check("batch_norm eval", &eval, vec![x, gamma, beta], shapes, true);
}

pub fn dropout_and_lerp() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = vec![4, 3];
    let a = random(&mut rng, &s);
    let b = random(&mut rng, &s);
    let drop = |t: &[Tensor<f64>]| {
        // same stream every evaluation, so the mask is fixed
        let mut r = ChaCha8Rng::seed_from_u64(11);
        project(dropout(&t[0], 0.5, Mode::Train, &mut r).unwrap().square().unwrap())
    };
    check("dropout", &drop, vec![a.clone()], vec![s.clone()], true);
    check(
        "lerp",
        &|t| project(lerp(&t[0], &t[1], 0.3).unwrap().square().unwrap()),
        vec![a.clone(), b.clone()],
        vec![s.clone(), s.clone()],
        true,
    );
    check(
        "lerp_per_sample",
        &|t| project(lerp_per_sample(&t[0], &t[1], &[0.1, 0.5, 0.9, 0.0]).unwrap().square().unwrap()),
        vec![a, b],
        vec![s.clone(), s],
        true,
    );
}

pub fn conv_double_backprop_wrt_kernel() {
    // f(x) = sum(conv2d(x, K)²); check d/dK ‖∂f/∂x‖² against finite differences
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs = vec![1, 2, 6, 6];
    let ks = vec![3, 2, 4, 4];
    let x = Tensor::<f64>::from_f64(&random(&mut rng, &xs), &xs).unwrap();
    let k0 = random(&mut rng, &ks);
    let penalty = |k: &Tensor<f64>| {
        let xv = x.requires_grad_();
        let f = xv.conv2d(k, 2, 1).unwrap().square().unwrap().sum();
        let gx = backward(&f, &[&xv], true).unwrap().remove(0);
        gx.square().unwrap().sum()
    };
    let k = Tensor::variable(k0.clone(), &ks).unwrap();
    let a = backward(&penalty(&k), &[&k], false).unwrap().remove(0).to_vec();
    let n: Vec<f64> = (0..k0.len())
        .map(|i| {
            let mut p = k0.clone();
            p[i] += H;
            let mut m = k0.clone();
            m[i] -= H;
            let fp = penalty(&Tensor::from_f64(&p, &ks).unwrap()).item().unwrap();
            let fm = penalty(&Tensor::from_f64(&m, &ks).unwrap()).item().unwrap();
            (fp - fm) / (2.0 * H)
        })
        .collect();
    let e = rel_err(&a, &n);
    assert!(e < 1e-3, "double backprop relative error {e:e}");
}

pub fn adjoint_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (stride, pad, k) in [(1, 0, 2), (2, 1, 4), (1, 2, 3), (2, 0, 3)] {
        let a_shape = [2, 3, 5, 5];
        let a = Tensor::<f64>::from_f64(&random(&mut rng, &a_shape), &a_shape).unwrap();
        let kshape = [4, 3, k, k];
        let kernel = Tensor::from_f64(&random(&mut rng, &kshape), &kshape).unwrap();
        let ca = a.conv2d(&kernel, stride, pad).unwrap();
        let b = Tensor::from_f64(&random(&mut rng, ca.shape()), ca.shape()).unwrap();
        let tb = b.conv_transpose2d_to(&kernel, stride, pad, 5, 5).unwrap();
        assert_eq!(tb.shape(), a.shape());
        let lhs: f64 = ca.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-10, "stride {stride} pad {pad}: {lhs} vs {rhs}");
    }
}

#[allow(dead_code)]
pub const SUITE: &[(&str, fn())] = &[
    ("elementwise_binary_ops", elementwise_binary_ops),
    ("elementwise_unary_ops", elementwise_unary_ops),
    ("reductions_and_shape_ops", reductions_and_shape_ops),
    ("convolutions", convolutions),
    ("batch_norm_both_modes", batch_norm_both_modes),
    ("dropout_and_lerp", dropout_and_lerp),
    ("conv_double_backprop_wrt_kernel", conv_double_backprop_wrt_kernel),
    ("adjoint_identity", adjoint_identity),
];
