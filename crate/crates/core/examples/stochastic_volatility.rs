//! Learns a multivariate stochastic volatility model and its proposal jointly
//! on synthetic returns.
//!
//! `cargo run --release --example stochastic_volatility -- [iters] [d]`

use vmpf::models::{generate, BMode, Ssm, StochVol};
use vmpf::objectives::{bound_estimate, train, Objective, ObjectiveKind, TrainOptions};
use vmpf::rng::RngStream;

fn main() -> vmpf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iters: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(1500);
    let d: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let (t, seed) = (120, 1);
    let sv = StochVol::new(d, BMode::Triangular);
    let data = generate(&sv, &sv.true_params(t), t, seed)?;
    let mut opts = TrainOptions::new(vec![(0.01, iters), (0.001, iters / 2)]);
    opts.clip = Some(100.0);
    for kind in [ObjectiveKind::Iwvi, ObjectiveKind::Vsmc, ObjectiveKind::VmpfBg] {
        let obj = Objective::new(kind, 4, &sv).with_theta(true);
        let mut params = sv.init_params(t, &RngStream::new(seed));
        let rec = train(&obj, &mut params, &data, &opts, seed)?;
        let (head, tail) = rec.head_tail_means(0.1).unwrap_or_default();
        let (mean, se) = bound_estimate(&obj, &params, &data, 200, RngStream::new(seed + 1))?;
        println!("{kind:>8}: first 10% {head:.1}, last 10% {tail:.1}, final bound {mean:.2} ± {se:.2}");
    }
    Ok(())
}
