//! Executable estimator-coupling pairs.
//!
//! A pair is a randomized procedure returning `(ω, log R(ω), a(·|ω))` where the
//! coupling `a` is a finite set of weighted atoms. The operations here
//! (replicate, extend/change target, marginalize) compose into SMC and MPF;
//! [`derive_smc`] and [`derive_mpf`] build those filters literally out of them.
//!
//! Draw keys follow the filters: the copy index assigned by [`replicate`] plays
//! the particle index, so a derived filter and the direct implementation see the
//! same random numbers.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::autodiff::Var;
use crate::distributions::Density;
use crate::error::{Error, Result};
use crate::models::{Dataset, Ssm};
use crate::params::BoundParams;
use crate::rng::{ChoiceSource, DrawKey, Purpose};

/// Finite atomic measure `Σ_k exp(lw_k) δ_{x_k}`. Atom values are `[k x dx]`
/// matrices: one row per time step covered by the target.
#[derive(Clone)]
pub struct WeightedAtoms<'t> {
    pub atoms: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> WeightedAtoms<'t> {
    pub fn single(x: Var<'t>) -> Self {
        let zero = x.tape().scalar(0.0);
        Self { atoms: vec![(x, zero)] }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|(_, w)| w.item()).collect()
    }

    /// `lse(log weights)`, zero for a normalized measure.
    pub fn log_mass(&self) -> f64 {
        let lw = self.log_weights();
        let m = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + lw.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }
}

/// A choice between the atoms of an inner coupling followed by a proposal
/// draw, kept so that [`marginalize`] can sum the choice out.
#[derive(Clone)]
pub struct Selection<'t> {
    pub label: String,
    pub base_log_r: Var<'t>,
    pub base: WeightedAtoms<'t>,
    pub chosen: usize,
    pub new_draw: Var<'t>,
    pub ratio: TargetRatio<'t>,
}

#[derive(Clone)]
pub enum TraceEntry<'t> {
    Draw { label: String, value: Var<'t> },
    Select(Selection<'t>),
}

#[derive(Clone)]
pub struct DrawResult<'t> {
    /// Internal state, in draw order.
    pub omega: Vec<TraceEntry<'t>>,
    pub log_r: Var<'t>,
    pub coupling: WeightedAtoms<'t>,
}

type ProposalFn<'t> = Rc<dyn Fn(Var<'t>) -> Density<'t> + 't>;
type RatioFn<'t> = Rc<dyn Fn(Var<'t>, Var<'t>) -> Var<'t> + 't>;

/// Target change `γ -> γ'` with proposal `r(x' | x)`.
///
/// `log_ratio(x, x')` returns `log γ'(x, x') / γ(x)`; both closures receive the
/// last row of the old atom as `[1 x dx]`.
#[derive(Clone)]
pub struct TargetRatio<'t> {
    pub step: usize,
    pub proposal: ProposalFn<'t>,
    pub log_ratio: RatioFn<'t>,
    /// Keep only `x'` in the new atom (ChangeTarget) instead of `(x, x')`.
    pub drop_old: bool,
}

impl<'t> TargetRatio<'t> {
    fn new_atom(&self, old: Var<'t>, new: Var<'t>) -> Var<'t> {
        if self.drop_old {
            new
        } else {
            old.tape().concat_rows(&[old, new])
        }
    }
}

fn last_row(x: Var<'_>) -> Var<'_> {
    let r = x.value().rows();
    if r == 1 {
        x
    } else {
        x.gather_rows(&[r - 1])
    }
}

/// Per-execution state: the random source, the copy index of the current
/// replicate and the memoized draws of shared pairs.
pub struct Exec<'s, 't> {
    src: &'s mut dyn ChoiceSource,
    slot: usize,
    memo: HashMap<usize, DrawResult<'t>>,
}

/// Rewrites particle 0 of every key to the current copy index.
struct Slotted<'a> {
    src: &'a mut dyn ChoiceSource,
    slot: usize,
}

impl ChoiceSource for Slotted<'_> {
    fn categorical(&mut self, mut key: DrawKey, weights: &[f64]) -> Result<usize> {
        key.particle += self.slot;
        self.src.categorical(key, weights)
    }

    fn normals(&mut self, mut key: DrawKey, n: usize) -> Result<Vec<f64>> {
        key.particle += self.slot;
        self.src.normals(key, n)
    }
}

impl<'t> Exec<'_, 't> {
    fn slotted(&mut self) -> Slotted<'_> {
        Slotted {
            src: &mut *self.src,
            slot: self.slot,
        }
    }
}

type Sampler<'t> = Rc<dyn for<'s> Fn(&mut Exec<'s, 't>) -> Result<DrawResult<'t>> + 't>;

#[derive(Clone)]
pub struct CouplingPair<'t> {
    sampler: Sampler<'t>,
    description: String,
}

impl fmt::Debug for CouplingPair<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.description)
    }
}

static NEXT_SHARED_ID: AtomicUsize = AtomicUsize::new(0);

impl<'t> CouplingPair<'t> {
    pub fn new(
        description: impl Into<String>,
        sampler: impl for<'s> Fn(&mut Exec<'s, 't>) -> Result<DrawResult<'t>> + 't,
    ) -> Self {
        Self {
            sampler: Rc::new(sampler),
            description: description.into(),
        }
    }

    /// One independent execution.
    pub fn sample(&self, src: &mut dyn ChoiceSource) -> Result<DrawResult<'t>> {
        let mut exec = Exec {
            src,
            slot: 0,
            memo: HashMap::new(),
        };
        (self.sampler)(&mut exec)
    }

    pub fn run(&self, exec: &mut Exec<'_, 't>) -> Result<DrawResult<'t>> {
        (self.sampler)(exec)
    }

    /// Derivation trace.
    pub fn description(&self) -> &str {
        &self.description
    }

    /// The same pair drawn at most once per execution: every consumer sees the
    /// same ω. This is the shared part of [`replicate`].
    pub fn shared(self) -> Self {
        let id = NEXT_SHARED_ID.fetch_add(1, Ordering::Relaxed);
        let inner = self.sampler.clone();
        let description = self.description.clone();
        Self::new(description, move |exec: &mut Exec<'_, 't>| {
            if let Some(d) = exec.memo.get(&id) {
                return Ok(d.clone());
            }
            let d = inner(exec)?;
            exec.memo.insert(id, d.clone());
            Ok(d)
        })
    }
}

/// `x̂ ~ r`, `log R = log γ(x̂) - log r(x̂)`, coupling `δ_x̂`. `proposal` must have
/// a single component; the draw uses key `(step, copy, Noise)`.
pub fn basic_pair<'t>(
    step: usize,
    log_gamma: impl Fn(Var<'t>) -> Var<'t> + 't,
    proposal: impl Fn() -> Density<'t> + 't,
) -> CouplingPair<'t> {
    CouplingPair::new(format!("basic(t={step})"), move |exec: &mut Exec<'_, 't>| {
        let r = proposal();
        let x = r.sample_indexed(&mut exec.slotted(), step, &[0])?;
        let lr = r.logpdf_indexed(x, &[0]).sum();
        if lr.item() == f64::NEG_INFINITY {
            return Err(Error::InvalidModel(format!(
                "proposal has zero density at its own sample (t={step})"
            )));
        }
        let log_r = log_gamma(x) - lr;
        Ok(DrawResult {
            omega: vec![TraceEntry::Draw {
                label: format!("x{step}"),
                value: x,
            }],
            log_r,
            coupling: WeightedAtoms::single(x),
        })
    })
}

/// `n` copies with copy index `i` for copy `i`: `log R = lse_i(log R_i) - ln n`,
/// coupling `Σ_i R_i a_i / Σ_i R_i`. Anything the inner pair draws through a
/// [`CouplingPair::shared`] pair is common to all copies.
pub fn replicate<'t>(p: CouplingPair<'t>, n: usize) -> CouplingPair<'t> {
    assert!(n >= 1, "replicate needs n >= 1");
    let description = format!("replicate({}, {n})", p.description);
    CouplingPair::new(description, move |exec: &mut Exec<'_, 't>| {
        let outer = exec.slot;
        let mut draws = Vec::with_capacity(n);
        for i in 0..n {
            exec.slot = i;
            let d = p.run(exec);
            exec.slot = outer;
            draws.push(d?);
        }
        let tape = draws[0].log_r.tape();
        let log_rs: Vec<Var<'t>> = draws.iter().map(|d| d.log_r.reshape(&[1])).collect();
        let all = tape.concat_rows(&log_rs);
        let total = all.logsumexp();
        let log_r = total - (n as f64).ln();
        let mut atoms = Vec::new();
        let mut omega = Vec::new();
        for d in draws {
            let shift = d.log_r - total;
            for (x, w) in d.coupling.atoms {
                atoms.push((x, w + shift));
            }
            omega.extend(d.omega);
        }
        Ok(DrawResult {
            omega,
            log_r,
            coupling: WeightedAtoms { atoms },
        })
    })
}

fn select_and_extend<'t>(d0: DrawResult<'t>, tr: &TargetRatio<'t>, exec: &mut Exec<'_, 't>) -> Result<DrawResult<'t>> {
    let lw = d0.coupling.log_weights();
    let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::Degenerate { t: tr.step - 1 });
    }
    let probs: Vec<f64> = lw.iter().map(|l| (l - top).exp()).collect();
    let k = exec
        .slotted()
        .categorical(DrawKey::new(tr.step, 0, Purpose::Ancestor), &probs)?;
    let old = d0.coupling.atoms[k].0;
    let prev = last_row(old);
    let r = (tr.proposal)(prev);
    let x_new = r.sample_indexed(&mut exec.slotted(), tr.step, &[0])?;
    let lr = r.logpdf_indexed(x_new, &[0]).sum();
    let ratio = (tr.log_ratio)(prev, x_new);
    if lr.item() == f64::NEG_INFINITY && ratio.item() != f64::NEG_INFINITY {
        return Err(Error::InvalidModel(format!(
            "target has mass where the proposal has none (t={})",
            tr.step
        )));
    }
    let log_r = d0.log_r + (ratio - lr);
    let coupling = WeightedAtoms::single(tr.new_atom(old, x_new));
    let mut omega = d0.omega.clone();
    omega.push(TraceEntry::Select(Selection {
        label: format!("x̂{}", tr.step - 1),
        base_log_r: d0.log_r,
        base: d0.coupling,
        chosen: k,
        new_draw: x_new,
        ratio: tr.clone(),
    }));
    Ok(DrawResult { omega, log_r, coupling })
}

/// Draw from `p`, pick an atom `x̂` by its weight, draw `x̂' ~ r(· | x̂)`:
/// `log R = log R_0 + log γ'(x̂, x̂')/γ(x̂) - log r(x̂' | x̂)`.
/// The new coupling is `δ_(x̂, x̂')`, or `δ_x̂'` when `tr.drop_old`.
pub fn extend_target<'t>(p: CouplingPair<'t>, tr: TargetRatio<'t>) -> CouplingPair<'t> {
    let op = if tr.drop_old { "change_target" } else { "extend_target" };
    let description = format!("{op}({}, t={})", p.description, tr.step);
    CouplingPair::new(description, move |exec: &mut Exec<'_, 't>| {
        let d0 = p.run(exec)?;
        select_and_extend(d0, &tr, exec)
    })
}

/// [`extend_target`] that keeps only the new variable.
pub fn change_target<'t>(p: CouplingPair<'t>, mut tr: TargetRatio<'t>) -> CouplingPair<'t> {
    tr.drop_old = true;
    extend_target(p, tr)
}

/// Sums out the atom choice of the last trace entry accepted by `selector`.
///
/// With `x̂` ranging over the inner atoms `x_j` with normalized weights `w̄_j`,
/// `Q(x̂ = j | rest) ∝ w̄_j r(x' | x_j)` and
/// `log R = log R_0 + lse_j(log w̄_j + log γ'/γ(x_j, x')) - lse_j(log w̄_j + log r(x' | x_j))`.
/// The coupling is the conditional-R-weighted mixture of the per-choice couplings.
pub fn marginalize<'t>(p: CouplingPair<'t>, selector: impl Fn(&TraceEntry<'t>) -> bool + 't) -> CouplingPair<'t> {
    let description = format!("marginalize({})", p.description);
    CouplingPair::new(description, move |exec: &mut Exec<'_, 't>| {
        let d = p.run(exec)?;
        let pos = d
            .omega
            .iter()
            .rposition(&selector)
            .ok_or_else(|| Error::Config("marginalize: selector matched no choice".into()))?;
        let sel = match &d.omega[pos] {
            TraceEntry::Select(s) => s.clone(),
            TraceEntry::Draw { label, .. } => {
                return Err(Error::Config(format!(
                    "marginalize: `{label}` is a continuous draw, only finite choices can be summed out"
                )))
            }
        };
        let tape = d.log_r.tape();
        let m = sel.base.len();
        let mut num = Vec::with_capacity(m);
        let mut den = Vec::with_capacity(m);
        let mut choice_atoms = Vec::with_capacity(m);
        for (x, lw) in &sel.base.atoms {
            let prev = last_row(*x);
            let r = (sel.ratio.proposal)(prev);
            let lr = r.logpdf_indexed(sel.new_draw, &[0]).sum();
            let ratio = (sel.ratio.log_ratio)(prev, sel.new_draw);
            num.push((*lw + ratio).reshape(&[1]));
            den.push((*lw + lr).reshape(&[1]));
            choice_atoms.push(sel.ratio.new_atom(*x, sel.new_draw));
        }
        let num_v = tape.concat_rows(&num);
        let den_v = tape.concat_rows(&den);
        let lse_num = num_v.logsumexp();
        let log_r = sel.base_log_r + (lse_num - den_v.logsumexp());
        // weight of choice j in the coupling: Q(j | rest) R_0(j) / R
        let mut atoms: Vec<(Var<'t>, Var<'t>)> = Vec::new();
        for (j, x) in choice_atoms.into_iter().enumerate() {
            let w = num[j].sum() - lse_num;
            if sel.ratio.drop_old {
                if let Some(first) = atoms.first_mut() {
                    let both = tape.concat_rows(&[first.1.reshape(&[1]), w.reshape(&[1])]);
                    first.1 = both.logsumexp();
                    continue;
                }
            }
            atoms.push((x, w));
        }
        let mut omega = d.omega.clone();
        omega.remove(pos);
        Ok(DrawResult {
            omega,
            log_r,
            coupling: WeightedAtoms { atoms },
        })
    })
}

fn ssm_ratio<'t>(
    model: &'t dyn Ssm,
    p: &'t BoundParams<'t>,
    data: &'t Dataset,
    t: usize,
    drop_old: bool,
) -> TargetRatio<'t> {
    let y = data.y(t);
    TargetRatio {
        step: t,
        proposal: Rc::new(move |prev| model.proposal(p, t, Some(prev), y)),
        log_ratio: Rc::new(move |prev, x| {
            let lf = model.transition(p, t, Some(prev)).logpdf_indexed(x, &[0]).sum();
            lf + model.obs_logpdf(p, t, x, y).sum()
        }),
        drop_old,
    }
}

fn first_step<'t>(model: &'t dyn Ssm, p: &'t BoundParams<'t>, data: &'t Dataset) -> CouplingPair<'t> {
    let y = data.y(1);
    basic_pair(
        1,
        move |x| {
            let lf = model.transition(p, 1, None).logpdf_indexed(x, &[0]).sum();
            lf + model.obs_logpdf(p, 1, x, y).sum()
        },
        move || model.proposal(p, 1, None, y),
    )
}

/// SMC as `replicate(extend_target(shared(previous), r_t), N)` folded over time,
/// starting from `replicate(basic, N)`. Couplings are whole trajectories.
pub fn derive_smc<'t>(model: &'t dyn Ssm, p: &'t BoundParams<'t>, data: &'t Dataset, n: usize) -> CouplingPair<'t> {
    let mut pair = replicate(first_step(model, p, data), n);
    for t in 2..=data.len() {
        pair = replicate(extend_target(pair.shared(), ssm_ratio(model, p, data, t, false)), n);
    }
    pair
}

/// MPF as `replicate(marginalize(change_target(shared(previous), r_t), x̂_{t-1}), N)`.
/// Couplings are atoms over `x_t` only.
pub fn derive_mpf<'t>(model: &'t dyn Ssm, p: &'t BoundParams<'t>, data: &'t Dataset, n: usize) -> CouplingPair<'t> {
    let mut pair = replicate(first_step(model, p, data), n);
    for t in 2..=data.len() {
        let label = format!("x̂{}", t - 1);
        let changed = change_target(pair.shared(), ssm_ratio(model, p, data, t, true));
        let marg = marginalize(changed, move |e| matches!(e, TraceEntry::Select(s) if s.label == label));
        pair = replicate(marg, n);
    }
    pair
}
