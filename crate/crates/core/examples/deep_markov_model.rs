//! Fits a small deep Markov model (MLP transition and emission) together with
//! an amortized proposal.
//!
//! `cargo run --release --example deep_markov_model -- [iters]`

use vmpf::models::{generate, Dmm, Ssm};
use vmpf::objectives::{bound_estimate, train, Objective, ObjectiveKind, TrainOptions};
use vmpf::rng::RngStream;

fn main() -> vmpf::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let (t, seed) = (30, 1);
    let dmm = Dmm::new(8, 20, 32, 7);
    let data = generate(&dmm, &dmm.true_params(), t, seed)?;
    let opts = TrainOptions::new(vec![(0.001, iters)]);
    for kind in [ObjectiveKind::Iwvi, ObjectiveKind::Vsmc, ObjectiveKind::VmpfBg] {
        let obj = Objective::new(kind, 4, &dmm).with_theta(true);
        let mut params = dmm.init_params(t, &RngStream::new(seed));
        let rec = train(&obj, &mut params, &data, &opts, seed)?;
        let (mean, se) = bound_estimate(&obj, &params, &data, 200, RngStream::new(seed + 1))?;
        let first = rec.rows.first().map_or(f64::NAN, |r| r.objective);
        println!("{kind:>8}: start {first:.1}, final bound {mean:.2} ± {se:.2}");
    }
    Ok(())
}
