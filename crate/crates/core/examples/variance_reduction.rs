//! Paired runs of SMC and MPF on a dense-C LGSSM: the spread of `log p̂` and a
//! Pitman–Morgan test for a smaller MPF variance.
//!
//! `cargo run --release --example variance_reduction -- [runs]`

use vmpf::harness::verify::{log_evidence, perturbed_proposal, pitman_morgan, Estimator};
use vmpf::models::{generate, kalman_loglik, CMode, Lgssm, Ssm};
use vmpf::rng::RngStream;

fn main() -> vmpf::Result<()> {
    let runs: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let m = Lgssm::new(5, 5, 0.42, CMode::Dense, &RngStream::new(2))?;
    let data = generate(&m, &m.init_params(10, &RngStream::new(2)), 10, 2)?;
    let params = perturbed_proposal(&m, 10, 2)?;
    println!("log p(y) = {:.3}", kalman_loglik(&m, &data)?);
    let (mut mpf, mut smc) = (Vec::new(), Vec::new());
    for r in 0..runs {
        let s = RngStream::new(7).replicate(r);
        mpf.push(log_evidence(Estimator::Mpf, &m, &params, &data, 4, &mut s.clone())?);
        smc.push(log_evidence(Estimator::Smc, &m, &params, &data, 4, &mut s.clone())?);
    }
    let stats = |x: &[f64]| {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        (
            mean,
            x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64,
        )
    };
    let ((mm, vm), (ms, vs)) = (stats(&mpf), stats(&smc));
    let (t, p) = pitman_morgan(&mpf, &smc)?;
    println!(
        "mpf: mean {mm:.3} var {vm:.4}\nsmc: mean {ms:.3} var {vs:.4}\nPitman–Morgan t = {t:.2}, one-sided p = {p:.2e}"
    );
    Ok(())
}
