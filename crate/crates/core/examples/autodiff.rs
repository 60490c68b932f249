//! Builds a tiny graph by hand and reads gradients off one reverse sweep.

use wdro::ndgrad::{Graph, Tensor};

fn main() -> wdro::Result<()> {
    // loss = -log softmax(W x + b)[1]
    let mut g = Graph::new();
    let w = g.leaf(&[3, 2]);
    let x = g.leaf(&[2]);
    let b = g.leaf(&[3]);
    let z = g.affine(w, x, b)?;
    let h = g.tanh(z);
    let ls = g.log_softmax(h);
    let pick = g.pick(ls, 1)?;
    let loss = g.scale(pick, -1.0);

    let wt = Tensor::matrix(3, 2, vec![0.5, -1.0, 0.2, 0.3, -0.7, 0.9])?;
    let xt = Tensor::vector(vec![0.4, 0.6]);
    let bt = Tensor::vector(vec![0.0, 0.1, -0.1]);
    let ev = g.evaluate(&[&wt, &xt, &bt])?;
    let adj = ev.backward(loss)?;

    println!("loss      = {:.6}", ev.scalar(loss)?);
    println!("dloss/dx  = {:?}", adj.of(x).tensor.data());
    println!("dloss/dW  = {:?}", adj.of(w).tensor.data());
    Ok(())
}
