//! Checks that each marginal particle filter run is a TMC run
//! with the mixture proposal, on every model family.
//!
//! `cargo run --release --example mpf_tmc_identity -- [seeds]`

use vmpf::harness::verify::{identity_families, identity_gap};

fn main() -> vmpf::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    for (name, model, params, data) in identity_families(6, 5)? {
        let gap = identity_gap(model.as_ref(), &params, &data, 4, seeds)?;
        println!("{name:<14} worst gap over {seeds} runs: {gap:.2e}");
    }
    Ok(())
}
