use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tensor, Var};
use crate::params::{BoundParams, ParamSet};

fn fan_in_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data)
}

/// Registers `Linear(hidden -> output) ∘ LeakyReLU ∘ Linear(input -> hidden)` under `prefix`.
pub(crate) fn init_mlp(
    p: &mut ParamSet,
    prefix: &str,
    dims: (usize, usize, usize),
    rng: &mut ChaCha8Rng,
    trainable: bool,
) {
    let (i, h, o) = dims;
    p.insert(&format!("{prefix}.w1"), fan_in_uniform(i, h, rng), trainable);
    p.insert(&format!("{prefix}.b1"), Tensor::zeros(&[h]), trainable);
    p.insert(&format!("{prefix}.w2"), fan_in_uniform(h, o, rng), trainable);
    p.insert(&format!("{prefix}.b2"), Tensor::zeros(&[o]), trainable);
}

/// Applies the network to each row of `x` (`[n x input]`).
pub(crate) fn mlp<'t>(p: &BoundParams<'t>, prefix: &str, x: Var<'t>) -> Var<'t> {
    let n = x.value().rows();
    let w1 = p.get(&format!("{prefix}.w1"));
    let b1 = p.get(&format!("{prefix}.b1"));
    let w2 = p.get(&format!("{prefix}.w2"));
    let b2 = p.get(&format!("{prefix}.b2"));
    let h = (x.matmul(w1) + b1.repeat_rows(n)).leaky_relu();
    h.matmul(w2) + b2.repeat_rows(n)
}
