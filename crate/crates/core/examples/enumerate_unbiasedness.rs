//! Exact `E[p̂]` for every particle estimator on the two-state reference HMM,
//! by summing over all resampling and permutation choices.
//!
//! `cargo run --release --example enumerate_unbiasedness`

use vmpf::harness::verify::{enumerated_evidence, hmm_data, Estimator};
use vmpf::models::{hmm_forward, Hmm};

fn main() -> vmpf::Result<()> {
    let h = Hmm::reference();
    for ys in [vec![0, 0], vec![0, 1, 1]] {
        let exact = hmm_forward(&h, &ys).exp();
        println!("y = {ys:?}   forward p(y) = {exact:.12}");
        let data = hmm_data(&ys);
        for n in [2, 3] {
            for which in [
                Estimator::Smc,
                Estimator::Mpf,
                Estimator::Ipf(1),
                Estimator::Ipf(2),
                Estimator::Tmc,
            ] {
                let e = enumerated_evidence(which, &h, &data, n)?;
                println!(
                    "  N={n} {:<10} E[p̂] = {e:.12}  error {:.1e}",
                    which.to_string(),
                    (e - exact).abs()
                );
            }
        }
    }
    Ok(())
}
