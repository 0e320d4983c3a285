//! Particle filters: SMC (and its no-resampling special case IWVI), the
//! marginal particle filter, independent particle filters and tensor Monte Carlo.
//!
//! All weights live in log space. Every filter draws with the same keys:
//! `(t, i, Ancestor)` for the component of particle `i` and `(t, i, Noise)` for
//! its noise, so runs sharing an [`RngStream`](crate::rng::RngStream) are paired.

use crate::autodiff::{Tensor, Var};
use crate::distributions::{mixture_implicit_rsample, unnormalized_probs, Density, TailCounter};
use crate::error::{Error, Result};
use crate::models::{Dataset, Ssm};
use crate::params::BoundParams;
use crate::rng::{ChoiceSource, DrawKey, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Smc,
    /// Importance sampling over whole trajectories: SMC with ancestor `i -> i`.
    Iwvi,
    Mpf,
    Ipf,
    Tmc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// Values only; the tape is still built but nobody differentiates it.
    None,
    /// Ancestor choices carry no gradient, particles are reparameterized given them.
    Biased,
    /// MPF only: particles are exact mixture draws with implicit gradients.
    Unbiased,
}

#[derive(Clone, Copy, Debug)]
pub struct FilterConfig {
    pub n: usize,
    pub grad_mode: GradMode,
}

impl FilterConfig {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            grad_mode: GradMode::Biased,
        }
    }

    pub fn unbiased(n: usize) -> Self {
        Self {
            n,
            grad_mode: GradMode::Unbiased,
        }
    }
}

/// Everything a filter produced, still attached to its tape.
pub struct ParticleRun<'t> {
    pub kind: FilterKind,
    pub n: usize,
    /// `[N x dx]` particles per step.
    pub particles: Vec<Var<'t>>,
    /// `[N]` log-weights per step: `log w` (SMC), cumulative `log W` (IWVI),
    /// `log v` (MPF), `log u` (IPF) or `log z` (TMC).
    pub log_weights: Vec<Var<'t>>,
    /// For step `t >= 2` (stored at `t - 2`), the previous particle each new
    /// particle extends. Empty for IPF and TMC and for unbiased MPF it holds
    /// the mixture component the draw came from.
    pub ancestors: Vec<Vec<usize>>,
    /// `log p̂(y_{1:t})` for each prefix.
    pub log_evidence_path: Vec<Var<'t>>,
    /// Mixture draws whose implicit gradient was dropped for tail underflow.
    pub tail_events: usize,
}

impl<'t> ParticleRun<'t> {
    pub fn log_evidence(&self) -> Var<'t> {
        *self.log_evidence_path.last().expect("at least one step")
    }

    pub fn steps(&self) -> usize {
        self.particles.len()
    }
}

fn check_inputs(model: &dyn Ssm, data: &Dataset, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("need at least one particle".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("dataset has no observations".into()));
    }
    if data.obs_dim() != model.obs_dim() {
        return Err(Error::InvalidModel(format!(
            "dataset has dy={}, model expects {}",
            data.obs_dim(),
            model.obs_dim()
        )));
    }
    Ok(())
}

fn not_degenerate(lw: Var<'_>, t: usize) -> Result<()> {
    let v = lw.value();
    if v.data().iter().all(|&l| l == f64::NEG_INFINITY) || v.data().iter().any(|l| l.is_nan()) {
        return Err(Error::Degenerate { t });
    }
    Ok(())
}

/// Step 1 shared by every filter: `x^i ~ r_1`, weight `f g / r`.
fn initial_step<'t>(
    model: &dyn Ssm,
    p: &BoundParams<'t>,
    data: &Dataset,
    r: Density<'t>,
    n: usize,
    src: &mut dyn ChoiceSource,
) -> Result<(Var<'t>, Var<'t>)> {
    let y = data.y(1);
    let idx = vec![0; n];
    let x = r.sample_indexed(src, 1, &idx)?;
    let lf = model.transition(p, 1, None).logpdf_indexed(x, &idx);
    let lg = model.obs_logpdf(p, 1, x, y);
    let lr = r.logpdf_indexed(x, &idx);
    let lw = (lf + lg) - lr;
    not_degenerate(lw, 1)?;
    Ok((x, lw))
}

fn draw_ancestors(src: &mut dyn ChoiceSource, t: usize, n: usize, log_weights: &Tensor) -> Result<Vec<usize>> {
    let probs = unnormalized_probs(log_weights.data(), t - 1)?;
    src.categoricals(t, Purpose::Ancestor, n, &probs)
}

/// Algorithm 1 with multinomial resampling at every step. With
/// `resample = false` ancestors are the identity and the weights accumulate,
/// which is the IWVI estimator.
pub fn run_smc<'t>(
    model: &dyn Ssm,
    p: &BoundParams<'t>,
    data: &Dataset,
    cfg: &FilterConfig,
    resample: bool,
    src: &mut dyn ChoiceSource,
) -> Result<ParticleRun<'t>> {
    let n = cfg.n;
    check_inputs(model, data, n)?;
    if cfg.grad_mode == GradMode::Unbiased {
        return Err(Error::Config(
            "unbiased gradients exist only for the marginal particle filter".into(),
        ));
    }
    let ln_n = (n as f64).ln();
    let r1 = model.proposal(p, 1, None, data.y(1));
    let (mut x, mut lw) = initial_step(model, p, data, r1, n, src)?;
    let mut ev = lw.logsumexp() - ln_n;
    let mut run = ParticleRun {
        kind: if resample { FilterKind::Smc } else { FilterKind::Iwvi },
        n,
        particles: vec![x],
        log_weights: vec![lw],
        ancestors: Vec::new(),
        log_evidence_path: vec![ev],
        tail_events: 0,
    };
    let identity: Vec<usize> = (0..n).collect();
    for t in 2..=data.len() {
        let y = data.y(t);
        let anc = if resample {
            draw_ancestors(src, t, n, &lw.value())?
        } else {
            identity.clone()
        };
        let r = model.proposal(p, t, Some(x), y);
        let x_new = r.sample_indexed(src, t, &anc)?;
        let lf = model.transition(p, t, Some(x)).logpdf_indexed(x_new, &anc);
        let lg = model.obs_logpdf(p, t, x_new, y);
        let lr = r.logpdf_indexed(x_new, &anc);
        let inc = (lf + lg) - lr;
        if resample {
            lw = inc;
            not_degenerate(lw, t)?;
            ev = ev + (lw.logsumexp() - ln_n);
        } else {
            lw = lw + inc;
            not_degenerate(lw, t)?;
            ev = lw.logsumexp() - ln_n;
        }
        x = x_new;
        run.particles.push(x);
        run.log_weights.push(lw);
        run.ancestors.push(anc);
        run.log_evidence_path.push(ev);
    }
    Ok(run)
}

/// `lse_j(a_j + M_ij)` for every row `i` of `M` (`[n x m]`), with `a` of length `m`.
fn row_mix<'t>(m: Var<'t>, a: Var<'t>) -> Var<'t> {
    let n = m.value().rows();
    (m + a.repeat_rows(n)).logsumexp_axis(1)
}

/// Algorithm 2. The weight is
/// `log v^i = lse_j(log v̄^j + log f_ij) + log g_i - lse_j(log v̄^j + log r_ij)`
/// with `log v̄ = log v - lse(log v)`.
pub fn run_mpf<'t>(
    model: &dyn Ssm,
    p: &BoundParams<'t>,
    data: &Dataset,
    cfg: &FilterConfig,
    src: &mut dyn ChoiceSource,
) -> Result<ParticleRun<'t>> {
    let n = cfg.n;
    check_inputs(model, data, n)?;
    if cfg.grad_mode == GradMode::Unbiased && !model.is_gaussian() {
        return Err(Error::InvalidModel(format!(
            "unbiased gradients need Gaussian proposals; `{}` is discrete",
            model.kind()
        )));
    }
    let ln_n = (n as f64).ln();
    let tail = TailCounter::default();
    let r1 = model.proposal(p, 1, None, data.y(1));
    let (mut x, mut lv) = initial_step(model, p, data, r1, n, src)?;
    let mut ev = lv.logsumexp() - ln_n;
    let mut run = ParticleRun {
        kind: FilterKind::Mpf,
        n,
        particles: vec![x],
        log_weights: vec![lv],
        ancestors: Vec::new(),
        log_evidence_path: vec![ev],
        tail_events: 0,
    };
    for t in 2..=data.len() {
        let y = data.y(t);
        let lvbar = lv - lv.logsumexp();
        let r = model.proposal(p, t, Some(x), y);
        let (x_new, comp) = match cfg.grad_mode {
            GradMode::Unbiased => {
                let g = r.as_gaussian().expect("checked above");
                mixture_implicit_rsample(lvbar, g, src, t, n, &tail)?
            }
            GradMode::Biased | GradMode::None => {
                let anc = draw_ancestors(src, t, n, &lvbar.value())?;
                (r.sample_indexed(src, t, &anc)?, anc)
            }
        };
        let lf = model.transition(p, t, Some(x)).logpdf_pairwise(x_new);
        let lr = r.logpdf_pairwise(x_new);
        let lg = model.obs_logpdf(p, t, x_new, y);
        lv = (row_mix(lf, lvbar) + lg) - row_mix(lr, lvbar);
        not_degenerate(lv, t)?;
        ev = ev + (lv.logsumexp() - ln_n);
        x = x_new;
        run.particles.push(x);
        run.log_weights.push(lv);
        run.ancestors.push(comp);
        run.log_evidence_path.push(ev);
    }
    run.tail_events = tail.get();
    Ok(run)
}

/// `L` column-distinct permutations of `0..n`: `k[l][i] = ρ[(i + s_l) mod n]`
/// with `ρ` a uniform permutation and `s_1..s_L` distinct uniform shifts.
pub fn ipf_permutations(src: &mut dyn ChoiceSource, t: usize, n: usize, l: usize) -> Result<Vec<Vec<usize>>> {
    assert!((1..=n).contains(&l), "need 1 <= L <= N, got L={l}, N={n}");
    let mut pool: Vec<bool> = vec![true; n];
    let draw = |src: &mut dyn ChoiceSource, key: usize, pool: &mut Vec<bool>| -> Result<usize> {
        let w: Vec<f64> = pool.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let k = src.categorical(DrawKey::new(t, key, Purpose::Permutation), &w)?;
        pool[k] = false;
        Ok(k)
    };
    let mut rho = Vec::with_capacity(n);
    for i in 0..n {
        rho.push(draw(src, i, &mut pool)?);
    }
    pool.iter_mut().for_each(|b| *b = true);
    let mut shifts = Vec::with_capacity(l);
    for s in 0..l {
        shifts.push(draw(src, n + s, &mut pool)?);
    }
    Ok(shifts
        .iter()
        .map(|s| (0..n).map(|i| rho[(i + s) % n]).collect())
        .collect())
}

/// Supplement Algorithm 3 with `l` matchings per step and proposals that ignore
/// the past. Estimate: `lse(log u_T) - ln N`.
pub fn run_ipf<'t>(
    model: &dyn Ssm,
    p: &BoundParams<'t>,
    data: &Dataset,
    n: usize,
    l: usize,
    src: &mut dyn ChoiceSource,
) -> Result<ParticleRun<'t>> {
    check_inputs(model, data, n)?;
    if l == 0 || l > n {
        return Err(Error::Config(format!("IPF needs 1 <= L <= N, got L={l}, N={n}")));
    }
    let ln_n = (n as f64).ln();
    let ln_l = (l as f64).ln();
    let r1 = model.independent_proposal(p, 1, data.y(1));
    let (mut x, mut lu) = initial_step(model, p, data, r1, n, src)?;
    let mut run = ParticleRun {
        kind: FilterKind::Ipf,
        n,
        particles: vec![x],
        log_weights: vec![lu],
        ancestors: Vec::new(),
        log_evidence_path: vec![lu.logsumexp() - ln_n],
        tail_events: 0,
    };
    let zeros = vec![0; n];
    for t in 2..=data.len() {
        let y = data.y(t);
        let perms = ipf_permutations(src, t, n, l)?;
        let r = model.independent_proposal(p, t, y);
        let x_new = r.sample_indexed(src, t, &zeros)?;
        let lr = r.logpdf_indexed(x_new, &zeros);
        let lg = model.obs_logpdf(p, t, x_new, y);
        let lf = model.transition(p, t, Some(x)).logpdf_pairwise(x_new);
        // per row the matched previous indices in ascending order, so that
        // L = N sums exactly the terms TMC sums, in the same order
        let mut f_idx = Vec::with_capacity(n * l);
        let mut u_idx = Vec::with_capacity(n * l);
        for i in 0..n {
            let mut ks: Vec<usize> = perms.iter().map(|perm| perm[i]).collect();
            ks.sort_unstable();
            for k in ks {
                f_idx.push(i * n + k);
                u_idx.push(k);
            }
        }
        let terms = lf.take(f_idx, &[n, l]) + lu.take(u_idx, &[n, l]);
        lu = ((terms.logsumexp_axis(1) + lg) - ln_l) - lr;
        not_degenerate(lu, t)?;
        x = x_new;
        run.particles.push(x);
        run.log_weights.push(lu);
        run.log_evidence_path.push(lu.logsumexp() - ln_n);
    }
    Ok(run)
}

/// Supplement Algorithm 4 (factorized proposals):
/// `log z^i = lse_j(log z^j + log f_ij) + log g_i - ln N - log r_i`.
pub fn run_tmc<'t>(
    model: &dyn Ssm,
    p: &BoundParams<'t>,
    data: &Dataset,
    n: usize,
    src: &mut dyn ChoiceSource,
) -> Result<ParticleRun<'t>> {
    check_inputs(model, data, n)?;
    let ln_n = (n as f64).ln();
    let r1 = model.independent_proposal(p, 1, data.y(1));
    let (mut x, mut lz) = initial_step(model, p, data, r1, n, src)?;
    let mut run = ParticleRun {
        kind: FilterKind::Tmc,
        n,
        particles: vec![x],
        log_weights: vec![lz],
        ancestors: Vec::new(),
        log_evidence_path: vec![lz.logsumexp() - ln_n],
        tail_events: 0,
    };
    let zeros = vec![0; n];
    for t in 2..=data.len() {
        let y = data.y(t);
        let r = model.independent_proposal(p, t, y);
        let x_new = r.sample_indexed(src, t, &zeros)?;
        let lr = r.logpdf_indexed(x_new, &zeros);
        let lg = model.obs_logpdf(p, t, x_new, y);
        let lf = model.transition(p, t, Some(x)).logpdf_pairwise(x_new);
        lz = ((row_mix(lf, lz) + lg) - ln_n) - lr;
        not_degenerate(lz, t)?;
        x = x_new;
        run.particles.push(x);
        run.log_weights.push(lz);
        run.log_evidence_path.push(lz.logsumexp() - ln_n);
    }
    Ok(run)
}

/// Checks that an MPF run is TMC with the mixture proposal `Σ_j v̄^j r(x | x^j)`.
///
/// Defines `log z_t^i = log v_t^i + Σ_{τ<t} (lse(log v_τ) - ln N)` and returns the
/// largest absolute gap between it and the TMC recursion
/// `lse_j(log z_{t-1}^j + log f_ij) + log g_i - ln N - lse_j(log v̄_{t-1}^j + log r_ij)`.
pub fn mpf_tmc_identity_check(
    model: &dyn Ssm,
    p: &BoundParams<'_>,
    data: &Dataset,
    run: &ParticleRun<'_>,
) -> Result<f64> {
    if run.kind != FilterKind::Mpf {
        return Err(Error::Config(
            "identity check needs a marginal particle filter run".into(),
        ));
    }
    let tape = p.tape();
    let n = run.n;
    let ln_n = (n as f64).ln();
    let lse = |v: &[f64]| {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            m
        } else {
            m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
        }
    };
    let lv: Vec<Vec<f64>> = run.log_weights.iter().map(|w| w.value().data().to_vec()).collect();
    let mut offset = 0.0;
    let mut lz_prev = lv[0].clone();
    let mut worst: f64 = 0.0;
    for t in 2..=run.steps() {
        offset += lse(&lv[t - 2]) - ln_n;
        let lz_def: Vec<f64> = lv[t - 1].iter().map(|v| v + offset).collect();
        let x_prev = tape.constant((*run.particles[t - 2].value()).clone());
        let x = tape.constant((*run.particles[t - 1].value()).clone());
        let y = data.y(t);
        let lf = model.transition(p, t, Some(x_prev)).logpdf_pairwise(x).value();
        let lr = model.proposal(p, t, Some(x_prev), y).logpdf_pairwise(x).value();
        let lg = model.obs_logpdf(p, t, x, y).value();
        let top = lse(&lv[t - 2]);
        let lvbar: Vec<f64> = lv[t - 2].iter().map(|v| v - top).collect();
        for i in 0..n {
            let num: Vec<f64> = (0..n).map(|j| lz_prev[j] + lf.get(i, j)).collect();
            let den: Vec<f64> = (0..n).map(|j| lvbar[j] + lr.get(i, j)).collect();
            let line6 = lse(&num) + lg.data()[i] - ln_n - lse(&den);
            let gap = (line6 - lz_def[i]).abs();
            if !(gap <= worst) {
                worst = if gap.is_nan() { f64::INFINITY } else { gap };
            }
        }
        lz_prev = lz_def;
    }
    Ok(worst)
}

/// One draw from the final coupling: SMC and IWVI return the whole ancestral
/// trajectory `[T x dx]`, the marginal filters return `x_T` as `[1 x dx]`.
pub fn posterior_draw(run: &ParticleRun<'_>, src: &mut dyn ChoiceSource) -> Result<Tensor> {
    let t_max = run.steps();
    let lw = run.log_weights[t_max - 1].value();
    let probs = unnormalized_probs(lw.data(), t_max)?;
    let mut i = src.categorical(DrawKey::new(t_max, 0, Purpose::Posterior), &probs)?;
    match run.kind {
        FilterKind::Smc | FilterKind::Iwvi => {
            let dx = run.particles[0].value().cols();
            let mut rows = vec![Vec::new(); t_max];
            for t in (1..=t_max).rev() {
                rows[t - 1] = run.particles[t - 1].value().row(i).to_vec();
                if t >= 2 {
                    i = run.ancestors[t - 2][i];
                }
            }
            Ok(Tensor::matrix(t_max, dx, rows.concat()))
        }
        _ => {
            let xt = run.particles[t_max - 1].value();
            Ok(Tensor::matrix(1, xt.cols(), xt.row(i).to_vec()))
        }
    }
}
