//! Analytic gradients against central differences, 64-bit, h = 1e-5.

mod common;

use common::{randn, rng};
use cvit_tensor::gradcheck::{check_gradients, GradCheck};
use cvit_tensor::{Graph, Result, Tensor, Var};

const TOL: f64 = 1e-4;

fn assert_grads<F>(name: &str, inputs: &[Tensor<f64>], f: F)
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let report = check_gradients(inputs, f, GradCheck::default()).unwrap();
    assert!(
        report.max_rel_error < TOL,
        "{name}: max rel err {:.3e} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

/// Weighted sum so every output coordinate has a distinct upstream grad.
fn probe<'g>(g: &'g Graph<f64>, y: Var<'g, f64>, seed: u64) -> Result<Var<'g, f64>> {
    let mut r = rng(seed);
    let w = g.constant(randn(&mut r, &y.shape()));
    y.mul(w)?.sum()
}

/// Inputs kept away from the kinks of abs/relu and the clamp edges.
fn away_from_zero(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut r = rng(seed);
    let mut t = randn(&mut r, shape);
    t.data_mut().iter_mut().for_each(|v| {
        if v.abs() < 0.05 {
            *v += 0.1_f64.copysign(*v);
        }
    });
    t
}

#[test]
fn binary_ops_with_broadcasting() {
    let mut r = rng(1);
    let a = randn(&mut r, &[2, 3, 4]);
    let b_full = randn(&mut r, &[2, 3, 4]);
    let b_tail = randn(&mut r, &[4]);
    let s = Tensor::from_f64(Vec::<usize>::new(), &[1.7]).unwrap();
    for b in [&b_full, &b_tail, &s] {
        let args = [a.clone(), b.clone()];
        assert_grads("add", &args, |g, v| probe(g, v[0].add(v[1])?, 2));
        assert_grads("sub", &args, |g, v| probe(g, v[0].sub(v[1])?, 3));
        assert_grads("sub rev", &args, |g, v| probe(g, v[1].sub(v[0])?, 3));
        assert_grads("mul", &args, |g, v| probe(g, v[0].mul(v[1])?, 4));
    }
    let denom = b_tail.data().iter().map(|v| v.abs() + 0.5).collect::<Vec<_>>();
    let denom = Tensor::new([4], denom).unwrap();
    assert_grads("div", &[a.clone(), denom.clone()], |g, v| probe(g, v[0].div(v[1])?, 5));
    let positive = Tensor::new([2, 3, 4], a.data().iter().map(|v| v.abs() + 0.5).collect()).unwrap();
    assert_grads("div rev", &[positive], |g, v| {
        let num = g.constant(Tensor::full([4], 0.3));
        probe(g, num.div(v[0])?, 6)
    });
}

#[test]
fn unary_ops() {
    let x = away_from_zero(10, &[3, 5]);
    assert_grads("abs", std::slice::from_ref(&x), |g, v| probe(g, v[0].abs()?, 1));
    assert_grads("relu", std::slice::from_ref(&x), |g, v| probe(g, v[0].relu()?, 2));
    assert_grads("gelu", std::slice::from_ref(&x), |g, v| probe(g, v[0].gelu()?, 3));
    assert_grads("sigmoid", std::slice::from_ref(&x), |g, v| probe(g, v[0].sigmoid()?, 4));
    assert_grads("affine", std::slice::from_ref(&x), |g, v| probe(g, v[0].affine(-2.5, 0.3)?, 5));
    assert_grads("square", std::slice::from_ref(&x), |g, v| probe(g, v[0].square()?, 6));
    assert_grads("clamp", std::slice::from_ref(&x), |g, v| probe(g, v[0].clamp(-0.5, 0.52)?, 7));
    let pos = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.abs() + 0.1).collect()).unwrap();
    assert_grads("log2", &[pos], |g, v| probe(g, v[0].log2()?, 8));
    assert_grads("mean", std::slice::from_ref(&x), |_g, v| v[0].square()?.mean());
}

#[test]
fn structural_ops() {
    let mut r = rng(20);
    let a = randn(&mut r, &[1, 2, 3, 3]);
    let b = randn(&mut r, &[1, 3, 3, 3]);
    assert_grads("concat", &[a.clone(), b.clone()], |g, v| probe(g, Var::concat(&[v[0], v[1]], 1)?, 1));
    let c = randn(&mut r, &[2, 3, 4]);
    assert_grads("reshape", std::slice::from_ref(&c), |g, v| probe(g, v[0].reshape(&[6, 4])?, 2));
    assert_grads("permute", std::slice::from_ref(&c), |g, v| probe(g, v[0].permute(&[2, 0, 1])?, 3));
    assert_grads("transpose", std::slice::from_ref(&c), |g, v| probe(g, v[0].transpose(1, 2)?, 4));
    assert_grads("upsample", std::slice::from_ref(&a), |g, v| probe(g, v[0].upsample_bilinear2x()?, 5));
    let p = randn(&mut r, &[2, 3, 4, 6]);
    assert_grads("avg_pool2d", &[p], |g, v| probe(g, v[0].avg_pool2d(2)?, 6));
}

#[test]
fn matmul_and_linear() {
    let mut r = rng(30);
    let a = randn(&mut r, &[2, 3, 4, 5]);
    let b = randn(&mut r, &[2, 3, 5, 2]);
    let shared = randn(&mut r, &[5, 2]);
    assert_grads("bmm", &[a.clone(), b], |g, v| probe(g, v[0].matmul(v[1])?, 1));
    assert_grads("matmul shared", &[a.clone(), shared.clone()], |g, v| probe(g, v[0].matmul(v[1])?, 2));
    let bias = randn(&mut r, &[2]);
    assert_grads("linear", &[a, shared, bias], |g, v| probe(g, v[0].linear(v[1], Some(v[2]))?, 3));
}

#[test]
fn convolutions() {
    let mut r = rng(40);
    let x = randn(&mut r, &[2, 2, 5, 5]);
    let w = randn(&mut r, &[3, 2, 3, 3]);
    let b = randn(&mut r, &[3]);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        assert_grads("conv2d", &[x.clone(), w.clone(), b.clone()], |g, v| {
            probe(g, v[0].conv2d(v[1], Some(v[2]), stride, pad)?, 1)
        });
    }
    let w1 = randn(&mut r, &[3, 2, 1, 1]);
    assert_grads("conv2d 1x1", &[x.clone(), w1, b.clone()], |g, v| probe(g, v[0].conv2d(v[1], Some(v[2]), 1, 0)?, 2));
    let wt = randn(&mut r, &[2, 3, 4, 4]);
    assert_grads("conv_transpose2d", &[x, wt, b], |g, v| {
        probe(g, v[0].conv_transpose2d(v[1], Some(v[2]), 2, 1)?, 3)
    });
}

#[test]
fn normalization_and_softmax() {
    let mut r = rng(50);
    let x = randn(&mut r, &[2, 3, 6]);
    let gamma = randn(&mut r, &[6]);
    let beta = randn(&mut r, &[6]);
    assert_grads("layer_norm", &[x.clone(), gamma, beta], |g, v| probe(g, v[0].layer_norm(v[1], v[2], 1e-6)?, 1));
    assert_grads("softmax", &[x], |g, v| probe(g, v[0].softmax()?, 2));
    let img = randn(&mut r, &[2, 3, 3, 3]);
    let cg = randn(&mut r, &[3]);
    let cb = randn(&mut r, &[3]);
    assert_grads("batch_norm2d", &[img, cg, cb], |g, v| probe(g, v[0].batch_norm2d(v[1], v[2], 1e-5)?, 3));
}
