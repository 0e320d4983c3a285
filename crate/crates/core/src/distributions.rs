//! Densities and samplers: batched diagonal Gaussians, Gaussian products,
//! mixtures with implicit reparameterization, Bernoulli and discrete tables.

use std::cell::Cell;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::rc::Rc;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{ChoiceSource, DrawKey, Purpose};

/// ½ ln 2π.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Conditional densities below this are treated as unresolvable tail samples.
pub const TAIL_PDF_FLOOR: f64 = 1e-300;

/// Counts samples whose implicit gradient was zeroed because the conditional
/// density underflowed.
pub type TailCounter = Rc<Cell<usize>>;

#[inline]
fn row_logpdf(x: &[f64], mu: &[f64], ls: &[f64], inv: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..x.len() {
        let z = (x[k] - mu[k]) * inv[k];
        acc += -HALF_LN_2PI - ls[k] - 0.5 * z * z;
    }
    acc
}

#[derive(Clone, Copy)]
enum Pairs<'a> {
    /// row i of x against component idx[i]
    Indexed(&'a [usize]),
    /// every row of x against every component, output [n x m]
    All,
}

/// Batched diagonal Gaussian. `mean` and `log_std` share a shape: `[d]` for a
/// single distribution or `[m x d]` for `m` components.
#[derive(Clone, Copy, Debug)]
pub struct DiagGaussian<'t> {
    pub mean: Var<'t>,
    pub log_std: Var<'t>,
}

impl<'t> DiagGaussian<'t> {
    pub fn new(mean: Var<'t>, log_std: Var<'t>) -> Self {
        assert_eq!(mean.shape(), log_std.shape(), "mean and log-std shapes differ");
        Self { mean, log_std }
    }

    pub fn standard(tape: &'t Tape, d: usize) -> Self {
        Self::new(tape.constant(Tensor::zeros(&[d])), tape.constant(Tensor::zeros(&[d])))
    }

    pub fn tape(&self) -> &'t Tape {
        self.mean.tape()
    }

    pub fn components(&self) -> usize {
        self.mean.value().rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.value().cols()
    }

    fn pair_logpdf(&self, x: Var<'t>, pairs: Pairs<'_>) -> Var<'t> {
        let xv = x.value();
        let mv = self.mean.value();
        let lv = self.log_std.value();
        let d = mv.cols();
        assert_eq!(xv.cols(), d, "point dimension {} vs {}", xv.cols(), d);
        let m = mv.rows();
        let n = xv.rows();
        let inv: Vec<f64> = lv.data().iter().map(|l| (-l).exp()).collect();
        let comp = |j: usize| {
            (
                &mv.data()[j * d..(j + 1) * d],
                &lv.data()[j * d..(j + 1) * d],
                &inv[j * d..(j + 1) * d],
            )
        };
        let (value, pairs_owned): (Tensor, Option<Vec<usize>>) = match pairs {
            Pairs::Indexed(idx) => {
                assert_eq!(idx.len(), n, "one component index per row");
                let out = idx
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| {
                        assert!(j < m, "component {j} out of {m}");
                        let (mu, ls, iv) = comp(j);
                        row_logpdf(xv.row(i), mu, ls, iv)
                    })
                    .collect::<Vec<_>>();
                let t = if xv.rank() < 2 && mv.rank() < 2 {
                    Tensor::scalar(out[0])
                } else {
                    Tensor::vector(out)
                };
                (t, Some(idx.to_vec()))
            }
            Pairs::All => {
                let mut out = Vec::with_capacity(n * m);
                for i in 0..n {
                    let xi = xv.row(i);
                    for j in 0..m {
                        let (mu, ls, iv) = comp(j);
                        out.push(row_logpdf(xi, mu, ls, iv));
                    }
                }
                (Tensor::matrix(n, m, out), None)
            }
        };
        let (xs, ms, ls_shape) = (xv.shape().to_vec(), mv.shape().to_vec(), lv.shape().to_vec());
        let rule = move |g: &Tensor| {
            let mut gx = vec![0.0; n * d];
            let mut gm = vec![0.0; m * d];
            let mut gl = vec![0.0; m * d];
            let mut visit = |i: usize, j: usize, gij: f64| {
                if gij == 0.0 {
                    return;
                }
                for k in 0..d {
                    let z = (xv.data()[i * d + k] - mv.data()[j * d + k]) * inv[j * d + k];
                    let s = gij * z * inv[j * d + k];
                    gx[i * d + k] -= s;
                    gm[j * d + k] += s;
                    gl[j * d + k] += gij * (z * z - 1.0);
                }
            };
            match &pairs_owned {
                Some(idx) => {
                    for (i, &j) in idx.iter().enumerate() {
                        visit(i, j, g.data()[i]);
                    }
                }
                None => {
                    for i in 0..n {
                        for j in 0..m {
                            visit(i, j, g.data()[i * m + j]);
                        }
                    }
                }
            }
            vec![Tensor::new(&xs, gx), Tensor::new(&ms, gm), Tensor::new(&ls_shape, gl)]
        };
        self.tape()
            .custom_vjp(value, &[x, self.mean, self.log_std], Box::new(rule))
    }

    /// Log-density. A `[d]` point against a single Gaussian gives a scalar;
    /// `[n x d]` points give `[n]`, row `i` scored under component `i` (or
    /// under the only component).
    pub fn logpdf(&self, x: Var<'t>) -> Var<'t> {
        let n = x.value().rows();
        let idx: Vec<usize> = if self.components() == 1 {
            vec![0; n]
        } else {
            (0..n).collect()
        };
        self.pair_logpdf(x, Pairs::Indexed(&idx))
    }

    /// `[n]` log-densities of row `i` of `x` under component `idx[i]`.
    pub fn logpdf_indexed(&self, x: Var<'t>, idx: &[usize]) -> Var<'t> {
        self.pair_logpdf(x, Pairs::Indexed(idx))
    }

    /// `[n x m]` log-densities of every row of `x` under every component.
    pub fn logpdf_pairwise(&self, x: Var<'t>) -> Var<'t> {
        self.pair_logpdf(x, Pairs::All)
    }

    /// `mean + exp(log_std) * eps` with `eps` held fixed.
    pub fn rsample(&self, eps: Tensor) -> Var<'t> {
        let e = self.tape().constant(eps);
        self.mean + self.log_std.exp() * e
    }

    /// Draws row `i` from component `idx[i]` with noise keyed by `(step, i)`.
    pub fn rsample_indexed(&self, src: &mut dyn ChoiceSource, step: usize, idx: &[usize]) -> Result<Var<'t>> {
        let eps = draw_eps(src, step, idx.len(), self.dim())?;
        let mean = self.mean.gather_rows(idx);
        let ls = self.log_std.gather_rows(idx);
        let e = self.tape().constant(eps);
        Ok(mean + ls.exp() * e)
    }

    /// Precision-weighted product with `other`, returning the normalized
    /// product and the per-component log normalizer `Σ log N(μa; μb, va + vb)`.
    pub fn fuse(&self, other: &DiagGaussian<'t>) -> (DiagGaussian<'t>, Var<'t>) {
        gauss_product_fuse(self, other)
    }
}

/// Standard normal noise, row `i` keyed by `(step, i, Noise)`.
pub fn draw_eps(src: &mut dyn ChoiceSource, step: usize, n: usize, d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        data.extend(src.normals(DrawKey::new(step, i, Purpose::Noise), d)?);
    }
    Ok(Tensor::matrix(n, d, data))
}

/// Product of two diagonal Gaussians of the same shape.
pub fn gauss_product_fuse<'t>(a: &DiagGaussian<'t>, b: &DiagGaussian<'t>) -> (DiagGaussian<'t>, Var<'t>) {
    let va = (a.log_std * 2.0).exp();
    let vb = (b.log_std * 2.0).exp();
    let s = va + vb;
    let mean = (a.mean * vb + b.mean * va) / s;
    let log_std = a.log_std + b.log_std - s.ln() * 0.5;
    let diff = a.mean - b.mean;
    let terms = -(s.ln() * 0.5) - diff.square() / (s * 2.0) - HALF_LN_2PI;
    (DiagGaussian::new(mean, log_std), terms.sum_last())
}

/// `log Σ_j exp(lw_j) N(x; μ_j, σ_j)` for a `[d]` point or each row of `[n x d]`.
///
/// `lw` should be normalized in log space.
pub fn mixture_logpdf<'t>(x: Var<'t>, lw: Var<'t>, comps: &DiagGaussian<'t>) -> Var<'t> {
    let single = x.value().rank() < 2;
    let xm = if single { x.reshape(&[1, comps.dim()]) } else { x };
    let n = xm.value().rows();
    let table = comps.logpdf_pairwise(xm) + lw.repeat_rows(n);
    let out = table.logsumexp_axis(1);
    if single {
        out.reshape(&[])
    } else {
        out
    }
}

#[inline]
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Exact draws from `Σ_j w_j N(μ_j, σ_j²)` whose gradient flows to the mixture
/// log-weights and component parameters through the distributional transform.
///
/// Sample `i` picks its component with key `(step, i, Ancestor)` and its noise
/// with `(step, i, Noise)`. Returns `([n x d] samples, component of each)`.
pub fn mixture_implicit_rsample<'t>(
    lw: Var<'t>,
    comps: &DiagGaussian<'t>,
    src: &mut dyn ChoiceSource,
    step: usize,
    n: usize,
    tail: &TailCounter,
) -> Result<(Var<'t>, Vec<usize>)> {
    let lwv = lw.value();
    let mv = comps.mean.value();
    let lsv = comps.log_std.value();
    let m = mv.rows();
    let d = mv.cols();
    assert_eq!(lwv.len(), m, "one log-weight per component");
    let top = lwv.max();
    let probs: Vec<f64> = lwv.data().iter().map(|l| (l - top).exp()).collect();
    let mut chosen = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n * d);
    for i in 0..n {
        let j = src.categorical(DrawKey::new(step, i, Purpose::Ancestor), &probs)?;
        let eps = src.normals(DrawKey::new(step, i, Purpose::Noise), d)?;
        for k in 0..d {
            xs.push(mv.data()[j * d + k] + lsv.data()[j * d + k].exp() * eps[k]);
        }
        chosen.push(j);
    }
    let value = Tensor::matrix(n, d, xs);
    let xv = value.clone();
    let lw_shape = lwv.shape().to_vec();
    let comp_shape = mv.shape().to_vec();
    let tail = tail.clone();
    let rule = move |g: &Tensor| {
        let (glw, gmu, gls) = implicit_mixture_vjp(&xv, g, lwv.data(), mv.data(), lsv.data(), m, d, &tail);
        vec![
            Tensor::new(&lw_shape, glw),
            Tensor::new(&comp_shape, gmu),
            Tensor::new(&comp_shape, gls),
        ]
    };
    let out = comps
        .tape()
        .custom_vjp(value, &[lw, comps.mean, comps.log_std], Box::new(rule));
    Ok((out, chosen))
}

/// Vector-Jacobian product of the mixture distributional transform.
///
/// For each sample the map θ -> x is defined implicitly by F_e(x_e | x_{<e}; θ) = u_e.
/// With L the lower-triangular Jacobian ∂F/∂x, the cotangent is -λᵀ ∂F/∂θ where Lᵀλ = g.
#[allow(clippy::too_many_arguments)]
fn implicit_mixture_vjp(
    x: &Tensor,
    g: &Tensor,
    lw: &[f64],
    mu: &[f64],
    ls: &[f64],
    m: usize,
    d: usize,
    tail: &TailCounter,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = x.rows();
    let mut glw = vec![0.0; m];
    let mut gmu = vec![0.0; m * d];
    let mut gls = vec![0.0; m * d];
    let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
    // per-sample scratch, indexed [e * m + j]
    let mut z = vec![0.0; m * d];
    let mut phi = vec![0.0; m * d];
    let mut cdf = vec![0.0; m * d];
    let mut w = vec![0.0; m * d];
    let mut f = vec![0.0; d];
    let mut p = vec![0.0; d];
    let mut s = vec![0.0; m];
    let mut lam = vec![0.0; d];
    let mut acc = vec![0.0; m];
    for i in 0..n {
        let gi = g.row(i);
        if gi.iter().all(|&v| v == 0.0) {
            continue;
        }
        let xi = x.row(i);
        acc.copy_from_slice(lw);
        let mut underflow = false;
        for e in 0..d {
            let top = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut norm = 0.0;
            for j in 0..m {
                let v = if top == f64::NEG_INFINITY {
                    0.0
                } else {
                    (acc[j] - top).exp()
                };
                w[e * m + j] = v;
                norm += v;
            }
            let mut fe = 0.0;
            let mut log_terms = Vec::with_capacity(m);
            for j in 0..m {
                let wj = w[e * m + j] / norm;
                w[e * m + j] = wj;
                let zz = (xi[e] - mu[j * d + e]) * (-ls[j * d + e]).exp();
                z[e * m + j] = zz;
                phi[e * m + j] = inv_sqrt_2pi * (-0.5 * zz * zz).exp();
                cdf[e * m + j] = std_normal_cdf(zz);
                fe += wj * cdf[e * m + j];
                let lnj = -HALF_LN_2PI - ls[j * d + e] - 0.5 * zz * zz;
                log_terms.push(acc[j] + lnj);
                acc[j] += lnj;
            }
            f[e] = fe;
            // conditional density at x_e, in log space to detect underflow
            let lt = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lp = if lt == f64::NEG_INFINITY {
                lt
            } else {
                lt + log_terms.iter().map(|v| (v - lt).exp()).sum::<f64>().ln() - (top + norm.ln())
            };
            if !(lp >= TAIL_PDF_FLOOR.ln()) {
                underflow = true;
                break;
            }
            p[e] = lp.exp();
        }
        if underflow {
            tail.set(tail.get() + 1);
            continue;
        }
        // back substitution with Lᵀ, carrying S_j = Σ_{e'>e} λ_e' w_j (Φ_je' - F_e')
        s.iter_mut().for_each(|v| *v = 0.0);
        for e in (0..d).rev() {
            let mut rhs = gi[e];
            for j in 0..m {
                let dl = -(xi[e] - mu[j * d + e]) * (-2.0 * ls[j * d + e]).exp();
                rhs -= dl * s[j];
            }
            let le = rhs / p[e];
            lam[e] = le;
            for j in 0..m {
                let k = j * d + e;
                let inv = (-ls[k]).exp();
                let wj = w[e * m + j];
                let zz = z[e * m + j];
                let ph = phi[e * m + j];
                // direct dependence of F_e on (μ_je, log σ_je)
                gmu[k] += le * wj * ph * inv;
                gls[k] += le * wj * zz * ph;
                // dependence of later F_e' through the weights
                gmu[k] -= zz * inv * s[j];
                gls[k] -= (zz * zz - 1.0) * s[j];
                let delta = wj * (cdf[e * m + j] - f[e]);
                glw[j] -= le * delta;
                s[j] += le * delta;
            }
        }
    }
    (glw, gmu, gls)
}

/// `Σ_k y_k l_k - softplus(l_k)` per row of `logits`; `y` entries must be 0 or 1.
pub fn bernoulli_logpmf<'t>(y: &[f64], logits: Var<'t>) -> Var<'t> {
    assert!(
        y.iter().all(|&v| v == 0.0 || v == 1.0),
        "bernoulli observations must be binary"
    );
    let lv = logits.value();
    assert_eq!(lv.cols(), y.len(), "logit width vs observation length");
    let tape = logits.tape();
    let yv = if lv.rank() < 2 {
        tape.constant(Tensor::vector(y.to_vec()))
    } else {
        tape.constant(Tensor::vector(y.to_vec())).repeat_rows(lv.rows())
    };
    (yv * logits - logits.softplus()).sum_last()
}

/// A per-component conditional law over the latent state.
#[derive(Clone, Copy, Debug)]
pub enum Density<'t> {
    Gaussian(DiagGaussian<'t>),
    /// Row `j` holds log-probabilities of the `k` states under component `j`.
    /// States are carried as a single real column holding the state index.
    Discrete {
        log_probs: Var<'t>,
    },
}

impl<'t> Density<'t> {
    pub fn components(&self) -> usize {
        match self {
            Density::Gaussian(g) => g.components(),
            Density::Discrete { log_probs } => log_probs.value().rows(),
        }
    }

    pub fn as_gaussian(&self) -> Option<&DiagGaussian<'t>> {
        match self {
            Density::Gaussian(g) => Some(g),
            Density::Discrete { .. } => None,
        }
    }

    /// Row `i` drawn from component `idx[i]`.
    pub fn sample_indexed(&self, src: &mut dyn ChoiceSource, step: usize, idx: &[usize]) -> Result<Var<'t>> {
        match self {
            Density::Gaussian(g) => g.rsample_indexed(src, step, idx),
            Density::Discrete { log_probs } => {
                let lp = log_probs.value();
                let mut states = Vec::with_capacity(idx.len());
                for (i, &j) in idx.iter().enumerate() {
                    let probs: Vec<f64> = lp.row(j).iter().map(|l| l.exp()).collect();
                    let s = src.categorical(DrawKey::new(step, i, Purpose::Noise), &probs)?;
                    states.push(s as f64);
                }
                let n = states.len();
                Ok(log_probs.tape().constant(Tensor::matrix(n, 1, states)))
            }
        }
    }

    pub fn logpdf_indexed(&self, x: Var<'t>, idx: &[usize]) -> Var<'t> {
        match self {
            Density::Gaussian(g) => g.logpdf_indexed(x, idx),
            Density::Discrete { log_probs } => {
                let k = log_probs.value().cols();
                let xv = x.value();
                let flat = idx
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| j * k + state_of(xv.data()[i]))
                    .collect();
                log_probs.take(flat, &[idx.len()])
            }
        }
    }

    pub fn logpdf_pairwise(&self, x: Var<'t>) -> Var<'t> {
        match self {
            Density::Gaussian(g) => g.logpdf_pairwise(x),
            Density::Discrete { log_probs } => {
                let lp = log_probs.value();
                let (m, k) = (lp.rows(), lp.cols());
                let xv = x.value();
                let n = xv.rows();
                let mut flat = Vec::with_capacity(n * m);
                for i in 0..n {
                    let s = state_of(xv.data()[i]);
                    for j in 0..m {
                        flat.push(j * k + s);
                    }
                }
                log_probs.take(flat, &[n, m])
            }
        }
    }
}

pub(crate) fn state_of(v: f64) -> usize {
    debug_assert!(v >= 0.0 && v.fract() == 0.0, "state index {v}");
    v as usize
}

/// Degeneracy-aware normalized weights `exp(lw - max)`; errors when every entry is -inf.
pub fn unnormalized_probs(lw: &[f64], t: usize) -> Result<Vec<f64>> {
    let top = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY || top.is_nan() {
        return Err(Error::Degenerate { t });
    }
    Ok(lw.iter().map(|l| (l - top).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;

    #[test]
    fn gaussian_logpdf_values() {
        let tape = Tape::new();
        let g = DiagGaussian::standard(&tape, 1);
        let x = tape.constant(Tensor::vector(vec![0.0]));
        assert!((g.logpdf(x).item() + 0.918939).abs() < 1e-6);
        let g2 = DiagGaussian::standard(&tape, 2);
        let x2 = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!((g2.logpdf(x2).item() + 2.0 * HALF_LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn fuse_closed_form() {
        let tape = Tape::new();
        let a = DiagGaussian::standard(&tape, 1);
        let b = DiagGaussian::new(
            tape.constant(Tensor::vector(vec![2.0])),
            tape.constant(Tensor::vector(vec![0.0])),
        );
        let (h, ln) = a.fuse(&b);
        assert!((h.mean.item() - 1.0).abs() < 1e-15);
        assert!(((h.log_std.item() * 2.0).exp() - 0.5).abs() < 1e-15);
        assert!((ln.item() + 2.265512123484645).abs() < 1e-12);
    }

    #[test]
    fn mixture_two_components() {
        let tape = Tape::new();
        let comps = DiagGaussian::new(
            tape.constant(Tensor::matrix(2, 1, vec![0.0, 2.0])),
            tape.constant(Tensor::zeros(&[2, 1])),
        );
        let lw = tape.constant(Tensor::vector(vec![0.5f64.ln(); 2]));
        let x = tape.constant(Tensor::vector(vec![1.0]));
        assert!((mixture_logpdf(x, lw, &comps).item() + 1.418939).abs() < 1e-6);
    }

    #[test]
    fn pairwise_matches_indexed_bitwise() {
        let tape = Tape::new();
        let g = DiagGaussian::new(
            tape.var(Tensor::matrix(2, 2, vec![0.1, -0.3, 1.2, 0.4])),
            tape.var(Tensor::matrix(2, 2, vec![0.2, -0.1, 0.0, 0.3])),
        );
        let x = tape.var(Tensor::matrix(2, 2, vec![0.5, 0.5, -1.0, 2.0]));
        let pw = g.logpdf_pairwise(x).value();
        let ix = g.logpdf_indexed(x, &[1, 0]).value();
        assert_eq!(pw.get(0, 1).to_bits(), ix.data()[0].to_bits());
        assert_eq!(pw.get(1, 0).to_bits(), ix.data()[1].to_bits());
    }

    #[test]
    fn logpdf_gradients() {
        let err = finite_diff_check(
            |_t, v| {
                let g = DiagGaussian::new(v[1], v[2]);
                g.logpdf_pairwise(v[0]).sum() + g.logpdf_indexed(v[0], &[1, 1, 0]).sum()
            },
            &[
                Tensor::matrix(3, 2, vec![0.5, 0.5, -1.0, 2.0, 0.3, 0.1]),
                Tensor::matrix(2, 2, vec![0.1, -0.3, 1.2, 0.4]),
                Tensor::matrix(2, 2, vec![0.2, -0.1, 0.0, 0.3]),
            ],
            1e-5,
        );
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn bernoulli_values() {
        let tape = Tape::new();
        let l = tape.constant(Tensor::vector(vec![0.0]));
        assert!((bernoulli_logpmf(&[1.0], l).item() + 2f64.ln()).abs() < 1e-15);
        assert!((bernoulli_logpmf(&[0.0], l).item() + 2f64.ln()).abs() < 1e-15);
        let big = tape.constant(Tensor::vector(vec![40.0]));
        let v = bernoulli_logpmf(&[1.0], big).item();
        assert!(v <= 0.0 && v > -1e-15);
    }
}
