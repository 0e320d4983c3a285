//! Builds SMC and MPF out of the coupling combinators and runs them next to
//! the direct filters on the same random streams.
//!
//! `cargo run --release --example coupling_derivation`

use vmpf::autodiff::Tape;
use vmpf::coupling::{derive_mpf, derive_smc};
use vmpf::filters::{run_mpf, run_smc, FilterConfig};
use vmpf::harness::verify::perturbed_proposal;
use vmpf::models::{generate, CMode, Lgssm, Ssm};
use vmpf::rng::RngStream;

fn main() -> vmpf::Result<()> {
    let m = Lgssm::new(1, 1, 0.42, CMode::Sparse, &RngStream::new(4))?;
    let data = generate(&m, &m.init_params(3, &RngStream::new(4)), 3, 4)?;
    let params = perturbed_proposal(&m, 3, 4)?;
    let tape = Tape::new();
    let p = params.bind(&tape);
    let cfg = FilterConfig::new(2);
    println!("{}", derive_mpf(&m, &p, &data, 2).description());
    for seed in 0..5 {
        let s = RngStream::new(seed);
        let smc = run_smc(&m, &p, &data, &cfg, true, &mut s.clone())?
            .log_evidence()
            .item();
        let dsmc = derive_smc(&m, &p, &data, 2).sample(&mut s.clone())?;
        let mpf = run_mpf(&m, &p, &data, &cfg, &mut s.clone())?.log_evidence().item();
        let dmpf = derive_mpf(&m, &p, &data, 2).sample(&mut s.clone())?;
        println!(
            "seed {seed}: smc {smc:.12} derived {:.12} | mpf {mpf:.12} derived {:.12} ({} atoms)",
            dsmc.log_r.item(),
            dmpf.log_r.item(),
            dmpf.coupling.len()
        );
    }
    Ok(())
}
