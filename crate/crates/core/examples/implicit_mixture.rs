//! Reparameterized draws from a Gaussian mixture: the gradient of the sample
//! mean with respect to the mixture log-weights, against its closed form.
//!
//! `cargo run --release --example implicit_mixture -- [samples]`

use vmpf::autodiff::{Tape, Tensor};
use vmpf::distributions::{mixture_implicit_rsample, DiagGaussian, TailCounter};
use vmpf::rng::RngStream;

fn main() -> vmpf::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200_000);
    let w = [0.2, 0.5, 0.3];
    let mu = [-2.0, 0.5, 3.0];
    let tape = Tape::new();
    let lw = tape.var(Tensor::vector(w.iter().map(|v: &f64| v.ln()).collect()));
    let comps = DiagGaussian::new(
        tape.var(Tensor::matrix(3, 1, mu.to_vec())),
        tape.var(Tensor::matrix(3, 1, vec![-0.5, 0.0, -0.3])),
    );
    let tail = TailCounter::default();
    let (x, _) = mixture_implicit_rsample(lw, &comps, &mut RngStream::new(3), 1, n, &tail)?;
    let mean = x.sum() * tape.scalar(1.0 / n as f64);
    let g = tape.grad(mean, &[lw, comps.mean])?;
    let ex: f64 = w.iter().zip(&mu).map(|(a, b)| a * b).sum();
    println!(
        "sample mean {:.4}  (exact {ex:.4}), tail events {}",
        mean.item(),
        tail.get()
    );
    for k in 0..3 {
        println!(
            "d mean / d log w{k}: {:+.4}  exact {:+.4}   d mean / d mu{k}: {:+.4}  exact {:+.4}",
            g[0].data()[k],
            w[k] * (mu[k] - ex),
            g[1].data()[k],
            w[k]
        );
    }
    Ok(())
}
