//! Reverse-mode gradients on the tape, then the finite-difference check over
//! every differentiable op.
//!
//! `cargo run --release --example autodiff_tape`

use vmpf::autodiff::{op_suite, Tape, Tensor};

fn main() -> vmpf::Result<()> {
    let tape = Tape::new();
    let w = tape.var(Tensor::matrix(2, 2, vec![0.5, -1.0, 0.25, 2.0]));
    let x = tape.constant(Tensor::matrix(2, 1, vec![1.0, -0.5]));
    // log Σ exp(tanh(W x))
    let y = w.matmul(x).tanh().logsumexp();
    let g = tape.grad(y, &[w])?;
    println!("y = {:.6}", y.item());
    println!("dy/dW = {:?}", g[0].data());
    for (op, err) in op_suite() {
        println!("{op:<20} max relative error {err:.1e}");
    }
    Ok(())
}
