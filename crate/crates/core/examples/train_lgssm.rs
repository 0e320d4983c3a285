//! Trains IWVI, VSMC and VMPF-BG proposals on a sparse-C LGSSM and prints
//! the final bounds next to the exact log-likelihood.
//!
//! `cargo run --release --example train_lgssm -- [iters_per_phase] [dx] [beta_fixed]`

use vmpf::models::{generate, kalman_loglik, CMode, Lgssm, Ssm};
use vmpf::objectives::{bound_estimate, train, Objective, ObjectiveKind, TrainOptions};
use vmpf::rng::RngStream;

fn main() -> vmpf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iters: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let dx: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let beta_fixed = args.get(2).is_some_and(|s| s == "true");
    let seed = 1;

    let model = Lgssm::new(dx, dx, 0.42, CMode::Sparse, &RngStream::new(seed))?.with_beta_fixed(beta_fixed);
    let data = generate(&model, &model.init_params(10, &RngStream::new(seed)), 10, seed)?;
    println!("log p(y) = {:.2}", kalman_loglik(&model, &data)?);

    let opts = TrainOptions::new(vec![(0.01, iters), (0.001, iters)]);
    for kind in [ObjectiveKind::Iwvi, ObjectiveKind::Vsmc, ObjectiveKind::VmpfBg] {
        let obj = Objective::new(kind, 4, &model);
        let mut params = model.init_params(10, &RngStream::new(seed));
        let rec = train(&obj, &mut params, &data, &opts, seed)?;
        let (mean, se) = bound_estimate(&obj, &params, &data, 1000, RngStream::new(seed + 1))?;
        let ms = rec.rows.last().map_or(0.0, |r| r.wall_ms);
        println!("{kind:>8}: {mean:.2} ± {se:.2}  ({ms:.0} ms)");
    }
    Ok(())
}
