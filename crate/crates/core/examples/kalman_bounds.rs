//! Every objective's bound against the exact LGSSM log-likelihood, as the
//! particle count grows.
//!
//! `cargo run --release --example kalman_bounds -- [dense]`

use vmpf::harness::verify::perturbed_proposal;
use vmpf::models::{generate, kalman_loglik, CMode, Lgssm, Ssm};
use vmpf::objectives::{bound_estimate, Objective, ObjectiveKind};
use vmpf::rng::RngStream;

fn main() -> vmpf::Result<()> {
    let mode = if std::env::args().nth(1).is_some_and(|s| s == "dense") {
        CMode::Dense
    } else {
        CMode::Sparse
    };
    let m = Lgssm::new(3, 3, 0.42, mode, &RngStream::new(9))?;
    let data = generate(&m, &m.init_params(10, &RngStream::new(9)), 10, 9)?;
    let params = perturbed_proposal(&m, 10, 9)?;
    println!("{mode:?} C, log p(y) = {:.3}", kalman_loglik(&m, &data)?);
    for n in [1, 2, 4, 8, 16] {
        print!("N={n:<3}");
        for kind in ObjectiveKind::ALL {
            let (mean, se) = bound_estimate(&Objective::new(kind, n, &m), &params, &data, 500, RngStream::new(13))?;
            print!("  {kind} {mean:.2}±{se:.2}");
        }
        println!();
    }
    Ok(())
}
