//! Compares the mean unbiased VMPF gradient with common-random-number finite
//! differences of `log p̂` on a one-dimensional LGSSM.
//!
//! `cargo run --release --example gradient_check -- [samples]`

use std::time::Instant;

use vmpf::harness::verify::{paired_fd, perturbed_proposal};
use vmpf::models::{generate, CMode, Lgssm, Ssm};
use vmpf::objectives::{Objective, ObjectiveKind};
use vmpf::rng::RngStream;

fn main() -> vmpf::Result<()> {
    let samples: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);
    let m = Lgssm::new(1, 1, 0.42, CMode::Sparse, &RngStream::new(6))?;
    let data = generate(&m, &m.init_params(2, &RngStream::new(6)), 2, 6)?;
    let params = perturbed_proposal(&m, 2, 6)?;
    // The biased estimator drops the ancestor score term, so it should disagree.
    for (kind, n) in [
        (ObjectiveKind::VmpfUg, 2),
        (ObjectiveKind::VmpfUg, 3),
        (ObjectiveKind::VmpfBg, 2),
    ] {
        let start = Instant::now();
        let rows = paired_fd(&Objective::new(kind, n, &m), &params, &data, samples, 1e-2, 8)?;
        println!("{kind} N={n} ({:.1} s)", start.elapsed().as_secs_f64());
        for c in rows {
            println!(
                "  {:<18} grad {:+.5} ± {:.5}   fd {:+.5} ± {:.5}   z {:.2}",
                c.name,
                c.grad,
                c.grad_se,
                c.fd,
                c.fd_se,
                c.z_combined()
            );
        }
    }
    Ok(())
}
