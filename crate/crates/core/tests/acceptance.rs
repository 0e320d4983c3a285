//! One PASS/FAIL line per acceptance criterion. Lines go straight to stdout so
//! they show up even when the harness captures output. The criteria run one
//! at a time because several of them time things.

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use vmpf::autodiff::{op_suite, Tape, Tensor};
use vmpf::distributions::DiagGaussian;
use vmpf::harness::bench::{fit_for, run_bench};
use vmpf::harness::verify::{
    bound_excess, collapse_gaps, enumerated_evidence, grid_families, hmm_data, identity_families, identity_gap,
    log_evidence, paired_fd, perturbed_proposal, pitman_morgan, ratio_mean, Estimator, PairedCoord,
};
use vmpf::harness::{cmd_evaluate, cmd_generate, cmd_train, initial_params, read_results, ExperimentConfig};
use vmpf::models::{generate, kalman_loglik, CMode, Dataset, Hmm, Lgssm, Ssm};
use vmpf::objectives::{bound_estimate, load_params, Objective, ObjectiveKind, TrainRecord};
use vmpf::params::ParamSet;
use vmpf::rng::RngStream;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

struct Criterion {
    k: usize,
    parts: Vec<(bool, String)>,
}

impl Criterion {
    fn new(k: usize) -> Self {
        Self { k, parts: Vec::new() }
    }

    fn check(&mut self, pass: bool, detail: impl Into<String>) {
        let detail = detail.into();
        say(&format!("    [{}] {}", if pass { "ok" } else { "no" }, detail));
        self.parts.push((pass, detail));
    }

    fn note(&self, detail: impl AsRef<str>) {
        say(&format!("    (info) {}", detail.as_ref()));
    }

    fn finish(self, summary: &str) {
        let failed: Vec<&str> = self.parts.iter().filter(|p| !p.0).map(|p| p.1.as_str()).collect();
        let pass = failed.is_empty();
        say(&format!(
            "criterion {:>2}: {} {} ({}/{} checks)",
            self.k,
            if pass { "PASS" } else { "FAIL" },
            summary,
            self.parts.len() - failed.len(),
            self.parts.len()
        ));
        assert!(pass, "criterion {} failed: {failed:?}", self.k);
    }
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn small_case(d: usize, t: usize, seed: u64) -> (Lgssm, ParamSet, Dataset) {
    let m = Lgssm::new(d, d, 0.42, CMode::Sparse, &RngStream::new(seed)).unwrap();
    let data = generate(&m, &m.init_params(t, &RngStream::new(seed)), t, seed).unwrap();
    let p = perturbed_proposal(&m, t, seed).unwrap();
    (m, p, data)
}

/// One trained objective on one config, with its held-out bound.
struct Trained {
    config: &'static str,
    kind: ObjectiveKind,
    cfg: ExperimentConfig,
    mean: f64,
    se: f64,
    kalman: Option<f64>,
    train_secs: f64,
    record: TrainRecord,
    params: ParamSet,
}

fn train_and_evaluate(file: &'static str, kind: ObjectiveKind) -> Trained {
    let mut cfg = ExperimentConfig::load(&configs().join(file)).unwrap();
    cfg.objective = kind;
    cfg.n_sweep.clear();
    cfg.out = scratch(file.trim_end_matches(".toml"));
    cmd_generate(&cfg).unwrap();
    let start = Instant::now();
    let outcome = cmd_train(&cfg).unwrap();
    let train_secs = start.elapsed().as_secs_f64();
    // a bound above log p(y) makes evaluate return an error after the row is written
    let row = match cmd_evaluate(&cfg, &outcome.params_path, cfg.eval_samples) {
        Ok(mut rows) => rows.remove(0),
        Err(_) => read_results(&cfg.results_path())
            .unwrap()
            .into_iter()
            .rev()
            .find(|r| r.objective == kind.name())
            .unwrap(),
    };
    let model = cfg.model.build(cfg.seed).unwrap();
    let mut params = initial_params(&cfg, model.as_ref()).unwrap();
    params
        .overwrite_from(&load_params(&outcome.params_path).unwrap())
        .unwrap();
    say(&format!(
        "    (trained) {file} {kind}: bound {:.3} ± {:.3}, log p(y) {}, {:.1} s",
        row.mean,
        row.se,
        row.kalman.map_or("n/a".to_string(), |k| format!("{k:.3}")),
        train_secs
    ));
    Trained {
        config: file,
        kind,
        cfg,
        mean: row.mean,
        se: row.se,
        kalman: row.kalman,
        train_secs,
        record: outcome.record,
        params,
    }
}

const FILTER_KINDS: [ObjectiveKind; 3] = [ObjectiveKind::Iwvi, ObjectiveKind::Vsmc, ObjectiveKind::VmpfBg];

struct Runs {
    beta_fixed: Vec<Trained>,
    sparse: Vec<Trained>,
    dense: Vec<Trained>,
}

impl Runs {
    fn all(&self) -> impl Iterator<Item = &Trained> {
        self.beta_fixed.iter().chain(&self.sparse).chain(&self.dense)
    }
}

fn find(runs: &[Trained], kind: ObjectiveKind) -> &Trained {
    runs.iter().find(|r| r.kind == kind).unwrap()
}

/// LGSSM training runs shared by criteria 3, 4, 5 and 9.
fn lgssm_runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let all = |file: &'static str| FILTER_KINDS.iter().map(|&k| train_and_evaluate(file, k)).collect();
        Runs {
            beta_fixed: all("lgssm_sparse_beta_fixed.toml"),
            sparse: all("lgssm_sparse.toml"),
            dense: all("lgssm_dense.toml"),
        }
    })
}

#[test]
fn criterion_01_enumeration() {
    let _g = serial();
    let mut c = Criterion::new(1);
    let start = Instant::now();
    // hand forward recursion for y = (0, 0)
    let pi = [0.5, 0.5];
    let a = [[0.9, 0.1], [0.1, 0.9]];
    let e0 = [0.8, 0.3];
    let mut exact = 0.0f64;
    for s1 in 0..2 {
        for s2 in 0..2 {
            exact += pi[s1] * e0[s1] * a[s1][s2] * e0[s2];
        }
    }
    c.check((exact - 0.3525).abs() <= 1e-12, format!("hand forward p(y) = {exact}"));
    let h = Hmm::reference();
    let data = hmm_data(&[0, 0]);
    let mut worst = 0.0f64;
    for n in [2, 3] {
        for which in [
            Estimator::Smc,
            Estimator::Mpf,
            Estimator::Ipf(1),
            Estimator::Ipf(2),
            Estimator::Tmc,
        ] {
            let e = enumerated_evidence(which, &h, &data, n).unwrap();
            let err = (e - exact).abs();
            worst = worst.max(err);
            c.check(
                err <= 1e-12,
                format!("{which} N={n}: E[p̂] = {e:.15}, |err| = {err:.2e} (tol 1e-12)"),
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    c.check(secs < 1.0, format!("runtime {secs:.3} s (limit 1 s)"));
    c.finish(&format!(
        "enumerated E[p̂] = 0.3525, worst error {worst:.1e}, {secs:.3} s"
    ));
}

#[test]
fn criterion_02_monte_carlo_unbiasedness() {
    let _g = serial();
    let mut c = Criterion::new(2);
    let (m, p, data) = small_case(1, 5, 3);
    let lz = kalman_loglik(&m, &data).unwrap();
    c.note(format!("LGSSM d=1 T=5 N=4, log p(y) = {lz:.6}, perturbed proposal"));
    for which in [Estimator::Smc, Estimator::Mpf, Estimator::Tmc] {
        let start = Instant::now();
        let (mean, se) = ratio_mean(which, &m, &p, &data, 4, lz, 100_000, 11).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let z = (mean - 1.0).abs() / se;
        c.check(
            z <= 3.0,
            format!("{which}: mean p̂/p(y) = {mean:.5} ± {se:.5}, |z| = {z:.2} (tol 3)"),
        );
        c.check(secs < 30.0, format!("{which}: 1e5 runs in {secs:.2} s (limit 30 s)"));
    }
    c.finish("mean of 1e5 p̂ within 3 se of Kalman p(y)");
}

#[test]
fn criterion_03_bound_chain() {
    let _g = serial();
    let mut c = Criterion::new(3);
    let mut worst = f64::NEG_INFINITY;
    for (mode, seed) in [(CMode::Sparse, 9), (CMode::Dense, 9)] {
        let m = Lgssm::new(3, 3, 0.42, mode, &RngStream::new(seed)).unwrap();
        let data = generate(&m, &m.init_params(10, &RngStream::new(seed)), 10, seed).unwrap();
        let p = perturbed_proposal(&m, 10, seed).unwrap();
        for (k, z) in bound_excess(&m, &p, &data, 4, 2000, 13).unwrap() {
            worst = worst.max(z);
            c.check(
                z <= 3.0,
                format!("d=3 {mode:?} C untrained, {k}: (L - log p)/se = {z:.2}"),
            );
        }
    }
    let (m, p, data) = small_case(1, 5, 3);
    for (k, z) in bound_excess(&m, &p, &data, 4, 2000, 13).unwrap() {
        worst = worst.max(z);
        c.check(z <= 3.0, format!("d=1 T=5 untrained, {k}: (L - log p)/se = {z:.2}"));
    }
    for r in lgssm_runs().all() {
        let k = r.kalman.unwrap();
        let z = (r.mean - k) / r.se;
        worst = worst.max(z);
        c.check(
            r.mean <= k + 3.0 * r.se,
            format!(
                "{} trained {}: {:.3} ± {:.3} vs log p(y) {:.3}, z = {z:.2}",
                r.config, r.kind, r.mean, r.se, k
            ),
        );
    }
    c.finish(&format!("every bound ≤ log p(y) + 3 se, largest z = {worst:.2}"));
}

#[test]
fn criterion_04_reference_numbers() {
    let _g = serial();
    let mut c = Criterion::new(4);
    let runs = &lgssm_runs().beta_fixed;
    let k = runs[0].kalman.unwrap();
    c.note(format!("dataset seed {} log p(y) = {k:.3}", runs[0].cfg.seed));
    let targets = [
        (ObjectiveKind::Iwvi, -456.20),
        (ObjectiveKind::Vsmc, -453.32),
        (ObjectiveKind::VmpfBg, -451.85),
    ];
    for (kind, target) in targets {
        let r = find(runs, kind);
        let off = r.mean - target;
        c.check(
            off.abs() <= 1.0,
            format!(
                "{kind}: {:.3} ± {:.3}, target {target:.2}, off by {off:+.3} (tol ±1.0)",
                r.mean, r.se
            ),
        );
        c.check(
            r.train_secs < 600.0,
            format!("{kind}: training took {:.1} s (limit 600 s)", r.train_secs),
        );
    }
    let (iw, vs, mp) = (
        find(runs, ObjectiveKind::Iwvi).mean,
        find(runs, ObjectiveKind::Vsmc).mean,
        find(runs, ObjectiveKind::VmpfBg).mean,
    );
    c.check(
        iw > mp && mp > vs,
        format!("ordering IWVI > VMPF-BG > VSMC: {iw:.3}, {mp:.3}, {vs:.3}"),
    );
    c.note(format!(
        "gaps: VSMC - IWVI = {:.2} (target 2.88), VMPF - VSMC = {:.2} (target 1.47), log p(y) - VMPF = {:.2}",
        vs - iw,
        mp - vs,
        k - mp
    ));
    // spread of log p(y) across datasets drawn from the same generator
    let cfg = &runs[0].cfg;
    let model = cfg.model.build(cfg.seed).unwrap();
    let gen = cfg.model.generating_params(model.as_ref(), cfg.t, cfg.seed);
    let lz: Vec<f64> = (0..200)
        .map(|s| {
            kalman_loglik(
                model.as_lgssm().unwrap(),
                &generate(model.as_ref(), &gen, cfg.t, 1000 + s).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let mean = lz.iter().sum::<f64>() / lz.len() as f64;
    let sd = (lz.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (lz.len() - 1) as f64).sqrt();
    c.note(format!(
        "log p(y) over 200 datasets from this generator: mean {mean:.2}, sd {sd:.2}"
    ));
    c.finish("beta-fixed sparse dx=dy=25 bounds against the reference values");
}

#[test]
fn criterion_05_orderings() {
    let _g = serial();
    let mut c = Criterion::new(5);
    let runs = lgssm_runs();
    let s = |k| find(&runs.sparse, k);
    let (iw, vs, mp) = (s(ObjectiveKind::Iwvi), s(ObjectiveKind::Vsmc), s(ObjectiveKind::VmpfBg));
    c.check(
        iw.mean > vs.mean && iw.mean > mp.mean,
        format!(
            "sparse: IWVI {:.3} highest (VSMC {:.3}, VMPF-BG {:.3})",
            iw.mean, vs.mean, mp.mean
        ),
    );
    c.check(
        mp.mean > vs.mean,
        format!("sparse: VMPF-BG {:.3} > VSMC {:.3}", mp.mean, vs.mean),
    );
    let d = |k| find(&runs.dense, k);
    let iw = d(ObjectiveKind::Iwvi);
    for other in [d(ObjectiveKind::Vsmc), d(ObjectiveKind::VmpfBg)] {
        let gap = other.mean - iw.mean;
        let se = iw.se.hypot(other.se);
        c.check(
            gap > 1.0 && gap > 3.0 * se,
            format!(
                "dense: IWVI {:.3} below {} {:.3} by {gap:.2} nats = {:.1} se (need > 1 nat and > 3 se)",
                iw.mean,
                other.kind,
                other.mean,
                gap / se
            ),
        );
    }
    c.finish("IWVI best with sparse C, markedly worst with dense C");
}

#[test]
fn criterion_06_gradients() {
    let _g = serial();
    let mut c = Criterion::new(6);
    let ops = op_suite();
    let worst_op = ops
        .iter()
        .cloned()
        .fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    for (op, err) in &ops {
        if *err > 1e-5 {
            c.check(false, format!("op {op}: finite-difference error {err:.2e}"));
        }
    }
    c.check(
        worst_op.1 < 1e-5,
        format!(
            "{} ops, worst finite-difference error {:.2e} ({}) (tol 1e-5)",
            ops.len(),
            worst_op.1,
            worst_op.0
        ),
    );

    let (m, p, data) = small_case(1, 2, 6);
    let start = Instant::now();
    let rows = paired_fd(
        &Objective::new(ObjectiveKind::VmpfUg, 2, &m),
        &p,
        &data,
        1_000_000,
        1e-2,
        8,
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    for r in &rows {
        let z = r.z_combined();
        c.check(
            z <= 3.0,
            format!(
                "vmpf-ug N=2 {}: grad {:.5} ± {:.5}, paired fd {:.5} ± {:.5}, z = {z:.2}",
                r.name, r.grad, r.grad_se, r.fd, r.fd_se
            ),
        );
    }
    let worst = rows.iter().map(PairedCoord::z_combined).fold(0.0, f64::max);
    c.note(format!("1e6 paired samples in {secs:.0} s"));

    let mut gap = 0.0f64;
    let (m1, p1, d1) = small_case(1, 4, 2);
    gap = gap.max(collapse_gaps(&m1, &p1, &d1, 10).unwrap().0);
    for (_, model, params, data) in identity_families(4, 3).unwrap().into_iter().filter(|f| f.0 != "hmm") {
        gap = gap.max(collapse_gaps(model.as_ref(), &params, &data, 10).unwrap().0);
    }
    c.check(
        gap <= 1e-10,
        format!("N=1 biased vs unbiased gradients, max gap {gap:.2e} (tol 1e-10)"),
    );
    c.finish(&format!(
        "ops exact, vmpf-ug within {worst:.2} combined se, N=1 collapse"
    ));
}

#[test]
fn criterion_07_identity() {
    let _g = serial();
    let mut c = Criterion::new(7);
    let mut worst = 0.0f64;
    for (name, m, p, d) in identity_families(6, 5).unwrap() {
        let gap = identity_gap(m.as_ref(), &p, &d, 4, 20).unwrap();
        worst = worst.max(gap);
        c.check(
            gap < 1e-9,
            format!("{name}: max |MPF - TMC-with-mixture| over 20 seeds = {gap:.2e} (tol 1e-9)"),
        );
    }
    c.finish(&format!("MPF≡TMC identity, worst {worst:.1e}"));
}

#[test]
fn criterion_08_derivation() {
    let _g = serial();
    let mut c = Criterion::new(8);
    let (m, p, data) = small_case(1, 3, 4);
    let mut worst = 0.0f64;
    for (direct, derived) in [
        (Estimator::Smc, Estimator::DerivedSmc),
        (Estimator::Mpf, Estimator::DerivedMpf),
    ] {
        let mut w = 0.0f64;
        for seed in 0..50 {
            let s = RngStream::new(seed);
            let a = log_evidence(direct, &m, &p, &data, 2, &mut s.clone()).unwrap();
            let b = log_evidence(derived, &m, &p, &data, 2, &mut s.clone()).unwrap();
            w = w.max((a - b).abs());
        }
        worst = worst.max(w);
        c.check(
            w <= 1e-10,
            format!("{derived} vs {direct}, 50 shared streams: max gap {w:.2e} (tol 1e-10)"),
        );
    }
    c.finish(&format!(
        "combinator-derived filters equal direct ones, worst {worst:.1e}"
    ));
}

#[test]
fn criterion_09_variance_reduction() {
    let _g = serial();
    let mut c = Criterion::new(9);
    let r = find(&lgssm_runs().dense, ObjectiveKind::Vsmc);
    let model = r.cfg.model.build(r.cfg.seed).unwrap();
    let data = Dataset::read(&r.cfg.data_path()).unwrap();
    let base = RngStream::new(r.cfg.seed ^ 0x7a11);
    let (mut mpf, mut smc) = (Vec::new(), Vec::new());
    for k in 0..10_000u64 {
        let s = base.replicate(k);
        mpf.push(
            log_evidence(
                Estimator::Mpf,
                model.as_ref(),
                &r.params,
                &data,
                r.cfg.n,
                &mut s.clone(),
            )
            .unwrap(),
        );
        smc.push(
            log_evidence(
                Estimator::Smc,
                model.as_ref(),
                &r.params,
                &data,
                r.cfg.n,
                &mut s.clone(),
            )
            .unwrap(),
        );
    }
    let var = |x: &[f64]| {
        let m = x.iter().sum::<f64>() / x.len() as f64;
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
    };
    let (vm, vs) = (var(&mpf), var(&smc));
    let (t, pval) = pitman_morgan(&mpf, &smc).unwrap();
    c.note(format!(
        "dense C dx=10, VSMC-trained proposal, N={}, 1e4 paired streams",
        r.cfg.n
    ));
    c.check(
        vm <= vs,
        format!("Var[log p̂] MPF {vm:.4} vs SMC {vs:.4} (ratio {:.3})", vm / vs),
    );
    c.check(
        pval < 0.01,
        format!("Pitman–Morgan t = {t:.2}, one-sided p = {pval:.2e} (α = 0.01)"),
    );
    c.finish("MPF log-evidence variance below SMC's");
}

#[test]
fn criterion_10_complexity() {
    let _g = serial();
    let mut c = Criterion::new(10);
    let mut cfg = ExperimentConfig::load(&configs().join("dmm.toml")).unwrap();
    cfg.out = scratch("dmm_bench");
    let model = cfg.model.build(cfg.seed).unwrap();
    let params = initial_params(&cfg, model.as_ref()).unwrap();
    let gen = cfg.model.generating_params(model.as_ref(), cfg.t, cfg.seed);
    let data = generate(model.as_ref(), &gen, cfg.t, cfg.seed).unwrap();
    let ns = [8, 16, 32, 64, 128, 256, 512];
    let kinds = [ObjectiveKind::Vsmc, ObjectiveKind::VmpfBg];
    let rows = run_bench(model.as_ref(), &params, &data, &kinds, &ns, 9, cfg.seed).unwrap();
    let smc = fit_for(&rows, ObjectiveKind::Vsmc).unwrap();
    let mpf = fit_for(&rows, ObjectiveKind::VmpfBg).unwrap();
    let df = (ns.len() - 3) as f64;
    let t_crit = StudentsT::new(0.0, 1.0, df).unwrap().inverse_cdf(0.99);
    c.check(
        mpf.t_c() > t_crit,
        format!(
            "MPF N² coefficient {:.3e} ms, t = {:.1} (one-sided 1% critical {t_crit:.2})",
            mpf.c,
            mpf.t_c()
        ),
    );
    let share = smc.quadratic_share(512.0);
    c.check(
        share < 0.1,
        format!(
            "SMC N² term carries {:.1}% of fitted time at N=512 (limit 10%), t = {:.1}",
            100.0 * share,
            smc.t_c()
        ),
    );
    c.note(format!(
        "MPF N² term share at N=512: {:.1}%; SMC N² coefficient is {:.2}% of MPF's",
        100.0 * mpf.quadratic_share(512.0),
        100.0 * smc.c / mpf.c
    ));
    for n in [8, 16] {
        let get = |k| rows.iter().find(|r| r.n == n && r.objective == k).unwrap().ms_per_step;
        let (s, m) = (get(ObjectiveKind::Vsmc), get(ObjectiveKind::VmpfBg));
        c.check(
            m / s < 1.5,
            format!("N={n}: MPF/SMC time ratio {:.2} ({m:.4} / {s:.4} ms per step)", m / s),
        );
    }
    for r in &rows {
        c.note(format!("{} N={}: {:.4} ms per step", r.objective, r.n, r.ms_per_step));
    }
    c.finish("quadratic MPF cost, linear SMC cost, parity at small N");
}

#[test]
fn criterion_11_sv_and_dmm() {
    let _g = serial();
    let mut c = Criterion::new(11);
    for file in ["sv.toml", "dmm.toml"] {
        for kind in FILTER_KINDS {
            let r = train_and_evaluate(file, kind);
            c.check(
                r.mean.is_finite() && r.se.is_finite(),
                format!("{file} {kind}: bound {:.3} ± {:.3} finite", r.mean, r.se),
            );
            let (head, tail) = r.record.head_tail_means(0.1).unwrap();
            c.check(
                tail >= head,
                format!("{file} {kind}: first 10% mean {head:.2}, last 10% mean {tail:.2}"),
            );
        }
    }

    // Gaussian building block against an independent density
    let tape = Tape::new();
    let mut rng = RngStream::new(17).rng();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ls: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..1.5)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-6.0..6.0)).collect();
        let g = DiagGaussian::new(
            tape.constant(Tensor::vector(mu.clone())),
            tape.constant(Tensor::vector(ls.clone())),
        );
        let ours = g.logpdf(tape.constant(Tensor::vector(x.clone()))).item();
        let oracle: f64 = (0..4)
            .map(|i| Normal::new(mu[i], ls[i].exp()).unwrap().ln_pdf(x[i]))
            .sum();
        worst = worst.max((ours - oracle).abs());
    }
    c.check(
        worst < 1e-12,
        format!("diagonal Gaussian log-density vs statrs Normal, max gap {worst:.1e}"),
    );

    // one-dimensional SV and DMM: grid forward recursion as the exact evidence
    for (name, m, p, d, lz) in grid_families(3, 21).unwrap() {
        for which in [Estimator::Smc, Estimator::Mpf] {
            let (mean, se) = ratio_mean(which, m.as_ref(), &p, &d, 4, lz, 20_000, 12).unwrap();
            let z = (mean - 1.0).abs() / se;
            c.check(
                z <= 3.0,
                format!("{name} d=1 {which}: mean p̂/p(y) = {mean:.4} ± {se:.4}, |z| = {z:.2}"),
            );
        }
        for kind in FILTER_KINDS {
            let (mean, se) =
                bound_estimate(&Objective::new(kind, 4, m.as_ref()), &p, &d, 2000, RngStream::new(5)).unwrap();
            let z = (mean - lz) / se;
            c.check(
                z <= 3.0,
                format!("{name} d=1 {kind}: bound {mean:.4} ± {se:.4} vs grid log p(y) {lz:.4}"),
            );
        }
    }
    c.finish("finite, improving bounds on SV and DMM; Gaussian parts match oracles");
}
