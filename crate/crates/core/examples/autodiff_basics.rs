//! Record a small computation on a graph, backpropagate, and confirm the
//! analytic gradient against central differences.

use cvit_tensor::gradcheck::{check_gradients, GradCheck};
use cvit_tensor::{Graph, Tensor};

fn main() -> cvit_tensor::Result<()> {
    let g = Graph::<f64>::new();
    let w = g.param(Tensor::from_f64([2, 3], &[0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?);
    let x = g.constant(Tensor::from_f64([3, 1], &[1.0, 2.0, -1.0])?);
    // loss = sum(sigmoid(W x)^2)
    let loss = w.matmul(x)?.sigmoid()?.square()?.sum()?;
    g.backward(loss)?;
    println!("loss = {:.6}", loss.value().item()?);
    println!("dloss/dW = {:?}", w.grad().expect("param").data());

    let inputs = [Tensor::from_f64([2, 3], &[0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?];
    let report = check_gradients(
        &inputs,
        |g, v| {
            let x = g.constant(Tensor::from_f64([3, 1], &[1.0, 2.0, -1.0])?);
            v[0].matmul(x)?.sigmoid()?.square()?.sum()
        },
        GradCheck::default(),
    )?;
    println!("{} coordinates checked, max relative error {:.2e}", report.checked, report.max_rel_error);

    // the inference graph records nothing and keeps no gradients
    let g = Graph::<f32>::inference();
    let y = g.param(Tensor::from_f64([2], &[1.0, 2.0])?).relu()?;
    println!("inference value {:?}", y.value().data());
    Ok(())
}
