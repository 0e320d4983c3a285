//! Times VSMC and VMPF-BG gradients on a deep Markov model and fits
//! `c N² + d N + e` to each.
//!
//! `cargo run --release --example complexity_bench -- [reps]`

use vmpf::harness::bench::{fit_for, run_bench};
use vmpf::models::{generate, Dmm, Ssm};
use vmpf::objectives::ObjectiveKind;
use vmpf::rng::RngStream;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> vmpf::Result<()> {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let dmm = Dmm::new(8, 20, 32, 7);
    let data = generate(&dmm, &dmm.true_params(), 30, 1)?;
    let params = dmm.init_params(30, &RngStream::new(1));
    let kinds = [ObjectiveKind::Vsmc, ObjectiveKind::VmpfBg];
    let rows = run_bench(&dmm, &params, &data, &kinds, &[8, 16, 32, 64, 128, 256, 512], reps, 1)?;
    for r in &rows {
        println!(
            "{:<8} N={:<4} {:.4} ms/step",
            r.objective.to_string(),
            r.n,
            r.ms_per_step
        );
    }
    for kind in kinds {
        let f = fit_for(&rows, kind)?;
        println!(
            "{kind}: c = {:.3e} (t = {:.1}), N² share at 512 = {:.2}",
            f.c,
            f.t_c(),
            f.quadratic_share(512.0)
        );
    }
    Ok(())
}
