//! Mean gradient variance of VMPF-UG against VMPF-BG along a short VMPF-BG
//! training run on an LGSSM.
//!
//! `cargo run --release --example gradient_variance -- [dx] [sparse|dense]`

use vmpf::models::{generate, CMode, Lgssm, Ssm};
use vmpf::objectives::{grad_variance_probe, train, Objective, ObjectiveKind, TrainOptions};
use vmpf::rng::RngStream;

fn main() -> vmpf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dx: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(10);
    let mode = if args.get(1).is_some_and(|s| s == "dense") {
        CMode::Dense
    } else {
        CMode::Sparse
    };
    let m = Lgssm::new(dx, dx, 0.42, mode, &RngStream::new(1))?;
    let mut params = m.init_params(10, &RngStream::new(1));
    let data = generate(&m, &params, 10, 1)?;
    let bg = Objective::new(ObjectiveKind::VmpfBg, 4, &m);
    let ug = Objective::new(ObjectiveKind::VmpfUg, 4, &m);
    println!("{:>6} {:>12} {:>12}", "iter", "bg var", "ug var");
    let mut done = 0;
    for chunk in [0, 50, 150, 300, 500, 1000] {
        if chunk > 0 {
            train(
                &bg,
                &mut params,
                &data,
                &TrainOptions::new(vec![(0.01, chunk)]),
                done as u64,
            )?;
            done += chunk;
        }
        let vb = grad_variance_probe(&bg, &params, &data, 200, RngStream::new(5))?;
        let vu = grad_variance_probe(&ug, &params, &data, 200, RngStream::new(5))?;
        println!("{done:>6} {vb:>12.4e} {vu:>12.4e}");
    }
    Ok(())
}
