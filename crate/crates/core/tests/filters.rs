use vmpf::autodiff::{Tape, Tensor};
use vmpf::coupling::{derive_mpf, derive_smc};
use vmpf::filters::{mpf_tmc_identity_check, posterior_draw, run_ipf, run_mpf, run_smc, run_tmc, FilterConfig};
use vmpf::models::{hmm_forward, kalman_filter, kalman_loglik, Dataset, Hmm, Lgssm, Ssm};
use vmpf::rng::{enumerate, expectation, RngStream, ENUMERATION_CAP};

fn hmm_data(ys: &[usize]) -> Dataset {
    Dataset::from_obs("hmm", ys.iter().map(|&y| vec![y as f64]).collect())
}

fn scalar_lgssm(a: f64) -> Lgssm {
    Lgssm::with_matrices(
        Tensor::matrix(1, 1, vec![a]),
        Tensor::matrix(1, 1, vec![1.0]),
        vec![1.0],
        vec![1.0],
    )
    .unwrap()
}

#[derive(Clone, Copy, Debug)]
enum Which {
    Smc,
    Mpf,
    Ipf(usize),
    Tmc,
    DerivedSmc,
    DerivedMpf,
}

fn enumerated_evidence(h: &Hmm, data: &Dataset, n: usize, which: Which) -> f64 {
    let params = h.init_params(data.len(), &RngStream::new(0));
    let out = enumerate(ENUMERATION_CAP, |src| {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let cfg = FilterConfig::new(n);
        let lz = match which {
            Which::Smc => run_smc(h, &p, data, &cfg, true, src)?.log_evidence().item(),
            Which::Mpf => run_mpf(h, &p, data, &cfg, src)?.log_evidence().item(),
            Which::Ipf(l) => run_ipf(h, &p, data, n, l, src)?.log_evidence().item(),
            Which::Tmc => run_tmc(h, &p, data, n, src)?.log_evidence().item(),
            Which::DerivedSmc => derive_smc(h, &p, data, n).sample(src)?.log_r.item(),
            Which::DerivedMpf => derive_mpf(h, &p, data, n).sample(src)?.log_r.item(),
        };
        Ok(lz.exp())
    })
    .unwrap();
    let total: f64 = out.iter().map(|(q, _)| q).sum();
    assert!((total - 1.0).abs() < 1e-12, "enumeration mass {total}");
    expectation(&out)
}

#[test]
fn every_filter_is_exactly_unbiased_on_the_reference_hmm() {
    let h = Hmm::reference();
    let data = hmm_data(&[0, 0]);
    let z = hmm_forward(&h, &[0, 0]).exp();
    assert!((z - 0.3525).abs() < 1e-15);
    for n in [2, 3] {
        let mut cases = vec![Which::Smc, Which::Mpf, Which::Tmc, Which::Ipf(1), Which::Ipf(2)];
        if n == 3 {
            cases.push(Which::Ipf(3));
        }
        for which in cases {
            let e = enumerated_evidence(&h, &data, n, which);
            assert!((e - z).abs() <= 1e-12, "{which:?} N={n}: {e} vs {z}");
        }
    }
}

#[test]
fn three_step_hmm_unbiasedness() {
    let h = Hmm::reference();
    let ys = [0, 1, 1];
    let data = hmm_data(&ys);
    let z = hmm_forward(&h, &ys).exp();
    for which in [Which::Smc, Which::Mpf, Which::Tmc, Which::Ipf(1), Which::Ipf(2)] {
        let e = enumerated_evidence(&h, &data, 2, which);
        assert!((e - z).abs() <= 1e-12, "{which:?}: {e} vs {z}");
    }
}

#[test]
fn derived_filters_are_unbiased_by_enumeration() {
    let h = Hmm::reference();
    let data = hmm_data(&[0, 0]);
    for which in [Which::DerivedSmc, Which::DerivedMpf] {
        let e = enumerated_evidence(&h, &data, 2, which);
        assert!((e - 0.3525).abs() <= 1e-12, "{which:?}: {e}");
    }
}

#[test]
fn derived_filters_match_direct_runs_under_shared_streams() {
    let m = scalar_lgssm(0.8);
    let params = m.init_params(3, &RngStream::new(0));
    let data = Dataset::from_obs("lgssm", vec![vec![0.3], vec![-1.1], vec![0.7]]);
    for seed in 0..20u64 {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let cfg = FilterConfig::new(2);
        let s = RngStream::new(seed);
        let direct = run_smc(&m, &p, &data, &cfg, true, &mut s.clone()).unwrap();
        let derived = derive_smc(&m, &p, &data, 2).sample(&mut s.clone()).unwrap();
        let gap = (direct.log_evidence().item() - derived.log_r.item()).abs();
        assert!(gap < 1e-10, "smc seed {seed}: {gap}");
        let direct = run_mpf(&m, &p, &data, &cfg, &mut s.clone()).unwrap();
        let derived = derive_mpf(&m, &p, &data, 2).sample(&mut s.clone()).unwrap();
        let gap = (direct.log_evidence().item() - derived.log_r.item()).abs();
        assert!(gap < 1e-10, "mpf seed {seed}: {gap}");
        assert_eq!(derived.coupling.len(), 2);
        assert!(derived.coupling.log_mass().abs() < 1e-12);
    }
}

#[test]
fn single_particle_filters_coincide_bitwise() {
    let m = Lgssm::new(3, 3, 0.42, vmpf::models::CMode::Sparse, &RngStream::new(1)).unwrap();
    let params = m.init_params(6, &RngStream::new(0));
    let data = vmpf::models::generate(&m, &params, 6, 9).unwrap();
    for seed in 0..10u64 {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let s = RngStream::new(seed);
        let cfg = FilterConfig::new(1);
        let a = run_smc(&m, &p, &data, &cfg, true, &mut s.clone()).unwrap();
        let b = run_smc(&m, &p, &data, &cfg, false, &mut s.clone()).unwrap();
        let c = run_mpf(&m, &p, &data, &cfg, &mut s.clone()).unwrap();
        let d = run_mpf(&m, &p, &data, &FilterConfig::unbiased(1), &mut s.clone()).unwrap();
        let v = a.log_evidence().item();
        for other in [&b, &c, &d] {
            assert_eq!(v.to_bits(), other.log_evidence().item().to_bits());
        }
    }
}

#[test]
fn ipf_with_full_matching_is_tmc() {
    let m = scalar_lgssm(0.6);
    let params = m.init_params(4, &RngStream::new(0));
    let data = Dataset::from_obs("lgssm", vec![vec![0.3], vec![-1.1], vec![0.7], vec![2.0]]);
    for seed in 0..10u64 {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let s = RngStream::new(seed);
        let a = run_ipf(&m, &p, &data, 4, 4, &mut s.clone()).unwrap();
        let b = run_tmc(&m, &p, &data, 4, &mut s.clone()).unwrap();
        for (u, z) in a.log_weights.iter().zip(&b.log_weights) {
            for (x, y) in u.value().data().iter().zip(z.value().data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

/// Brute force: average of the N^T full-path importance ratios.
#[test]
fn tmc_matches_explicit_exponential_sum() {
    let m = scalar_lgssm(0.7);
    let params = m.init_params(3, &RngStream::new(0));
    let data = Dataset::from_obs("lgssm", vec![vec![0.5], vec![-0.2], vec![1.3]]);
    let n = 3;
    let tape = Tape::new();
    let p = params.bind(&tape);
    let run = run_tmc(&m, &p, &data, n, &mut RngStream::new(5)).unwrap();
    let xs: Vec<Vec<f64>> = run.particles.iter().map(|x| x.value().data().to_vec()).collect();
    let lnorm =
        |x: f64, mu: f64, var: f64| -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mu).powi(2) / (2.0 * var);
    // independent proposals are N(0, 1) at the default parameters
    let mut terms = Vec::new();
    for i1 in 0..n {
        for i2 in 0..n {
            for i3 in 0..n {
                let (a, b, c) = (xs[0][i1], xs[1][i2], xs[2][i3]);
                let lp = lnorm(a, 0.0, 1.0)
                    + lnorm(0.5, a, 1.0)
                    + lnorm(b, 0.7 * a, 1.0)
                    + lnorm(-0.2, b, 1.0)
                    + lnorm(c, 0.7 * b, 1.0)
                    + lnorm(1.3, c, 1.0);
                let lq = lnorm(a, 0.0, 1.0) + lnorm(b, 0.0, 1.0) + lnorm(c, 0.0, 1.0);
                terms.push((lp - lq).exp());
            }
        }
    }
    let brute = (terms.iter().sum::<f64>() / terms.len() as f64).ln();
    assert!((brute - run.log_evidence().item()).abs() < 1e-10);
}

#[test]
fn mpf_is_tmc_with_the_mixture_proposal() {
    let m = Lgssm::new(2, 2, 0.42, vmpf::models::CMode::Dense, &RngStream::new(3)).unwrap();
    let params = m.init_params(5, &RngStream::new(0));
    let data = vmpf::models::generate(&m, &params, 5, 4).unwrap();
    for seed in 0..20u64 {
        let tape = Tape::new();
        let p = params.bind(&tape);
        let run = run_mpf(&m, &p, &data, &FilterConfig::new(4), &mut RngStream::new(seed)).unwrap();
        let gap = mpf_tmc_identity_check(&m, &p, &data, &run).unwrap();
        assert!(gap < 1e-9, "seed {seed}: {gap}");
    }
}

#[test]
fn smc_evidence_is_unbiased_against_kalman() {
    let m = scalar_lgssm(0.9);
    let params = m.init_params(5, &RngStream::new(0));
    let data = Dataset::from_obs("lgssm", vec![vec![0.4], vec![-0.3], vec![1.2], vec![0.1], vec![-0.8]]);
    let exact = kalman_loglik(&m, &data).unwrap().exp();
    let runs = 20_000;
    let zs: Vec<f64> = (0..runs)
        .map(|r| {
            let tape = Tape::new();
            let p = params.bind(&tape);
            let mut s = RngStream::new(11).replicate(r);
            run_smc(&m, &p, &data, &FilterConfig::new(4), true, &mut s)
                .unwrap()
                .log_evidence()
                .item()
                .exp()
        })
        .collect();
    let mean = zs.iter().sum::<f64>() / runs as f64;
    let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (runs as f64 - 1.0);
    let se = (var / runs as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn posterior_draws() {
    let m = scalar_lgssm(0.5);
    let params = m.init_params(3, &RngStream::new(0));
    let data = Dataset::from_obs("lgssm", vec![vec![0.4], vec![1.5], vec![-0.2]]);
    let tape = Tape::new();
    let p = params.bind(&tape);
    let run = run_smc(&m, &p, &data, &FilterConfig::new(1), true, &mut RngStream::new(2)).unwrap();
    let traj = posterior_draw(&run, &mut RngStream::new(3)).unwrap();
    assert_eq!(traj.shape(), &[3, 1]);
    for t in 0..3 {
        assert_eq!(traj.get(t, 0), run.particles[t].value().get(0, 0));
    }
    // weighted filtering mean against the Kalman mean
    let kf = kalman_filter(&m, &data).unwrap();
    let target = kf[2].mean[0];
    let reps = 4000;
    let est: Vec<f64> = (0..reps)
        .map(|r| {
            let tape = Tape::new();
            let p = params.bind(&tape);
            let run = run_mpf(
                &m,
                &p,
                &data,
                &FilterConfig::new(8),
                &mut RngStream::new(40).replicate(r),
            )
            .unwrap();
            let lw = run.log_weights[2].value();
            let top = lw.max();
            let w: Vec<f64> = lw.data().iter().map(|l| (l - top).exp()).collect();
            let s: f64 = w.iter().sum();
            let x = run.particles[2].value();
            w.iter().zip(x.data()).map(|(w, x)| w * x).sum::<f64>() / s
        })
        .collect();
    let mean = est.iter().sum::<f64>() / reps as f64;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
    // self-normalized estimates carry O(1/N) bias; compare with a generous band
    assert!(
        (mean - target).abs() < 4.0 * sd / (reps as f64).sqrt() + 0.02,
        "{mean} vs {target}"
    );
}
