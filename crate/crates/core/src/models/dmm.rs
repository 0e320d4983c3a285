use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::nn::{init_mlp, mlp};
use super::Ssm;
use crate::autodiff::{sigmoid, Tensor, Var};
use crate::distributions::{bernoulli_logpmf, Density, DiagGaussian};
use crate::params::{BoundParams, ParamSet};
use crate::rng::{DrawKey, Purpose, RngStream};

/// Deep Markov model with Bernoulli emissions:
/// `x_t = μ_θ(x_{t-1}) + diag(exp(σ_θ(x_{t-1}) / 2)) v_t`, `x_0 = 0`,
/// `y_t ~ Bernoulli(sigmoid(η_θ(x_t)))`.
///
/// `(μ_θ, σ_θ)` share one hidden layer whose output is split in half.
/// The proposal multiplies `N(μ^x(x_{t-1}), exp(σ^x(x_{t-1})))` with
/// `N(μ^y(y_t), exp(σ^y(y_t)))`.
#[derive(Clone, Debug)]
pub struct Dmm {
    pub dx: usize,
    pub dy: usize,
    pub dh: usize,
    /// Seed of the generating network weights.
    pub model_seed: u64,
}

impl Dmm {
    pub fn new(dx: usize, dy: usize, dh: usize, model_seed: u64) -> Self {
        Self { dx, dy, dh, model_seed }
    }

    fn theta(&self, p: &mut ParamSet, rng: &mut ChaCha8Rng) {
        init_mlp(p, "theta.trans", (self.dx, self.dh, 2 * self.dx), rng, true);
        init_mlp(p, "theta.emit", (self.dx, self.dh, self.dy), rng, true);
    }

    fn phi(&self, p: &mut ParamSet, rng: &mut ChaCha8Rng) {
        init_mlp(p, "phi.qx", (self.dx, self.dh, 2 * self.dx), rng, true);
        init_mlp(p, "phi.qy", (self.dy, self.dh, 2 * self.dx), rng, true);
    }

    /// Generating network weights (seeded by `model_seed`) with a fresh proposal.
    pub fn true_params(&self) -> ParamSet {
        let mut r = RngStream::new(self.model_seed).for_key(DrawKey::new(0, 0, Purpose::Model));
        let mut p = ParamSet::new();
        self.theta(&mut p, &mut r);
        self.phi(&mut p, &mut r);
        p
    }

    fn split<'t>(&self, out: Var<'t>) -> DiagGaussian<'t> {
        let mean = out.slice_cols(0, self.dx);
        let log_var = out.slice_cols(self.dx, 2 * self.dx);
        DiagGaussian::new(mean, log_var * 0.5)
    }

    fn prev_or_origin<'t>(&self, p: &BoundParams<'t>, prev: Option<Var<'t>>) -> Var<'t> {
        prev.unwrap_or_else(|| p.tape().constant(Tensor::zeros(&[1, self.dx])))
    }

    fn y_gauss<'t>(&self, p: &BoundParams<'t>, y: &[f64], n: usize) -> DiagGaussian<'t> {
        let yv = p.tape().constant(Tensor::matrix(1, self.dy, y.to_vec()));
        let g = self.split(mlp(p, "phi.qy", yv));
        if n == 1 {
            g
        } else {
            DiagGaussian::new(g.mean.repeat_rows(n), g.log_std.repeat_rows(n))
        }
    }
}

impl Ssm for Dmm {
    fn kind(&self) -> &'static str {
        "dmm"
    }

    fn latent_dim(&self) -> usize {
        self.dx
    }

    fn obs_dim(&self) -> usize {
        self.dy
    }

    fn init_params(&self, _t_max: usize, rng: &RngStream) -> ParamSet {
        let mut r = rng.for_key(DrawKey::new(0, 0, Purpose::Init));
        let mut p = ParamSet::new();
        self.theta(&mut p, &mut r);
        self.phi(&mut p, &mut r);
        p
    }

    fn transition<'t>(&self, p: &BoundParams<'t>, _t: usize, prev: Option<Var<'t>>) -> Density<'t> {
        let x = self.prev_or_origin(p, prev);
        Density::Gaussian(self.split(mlp(p, "theta.trans", x)))
    }

    fn obs_logpdf<'t>(&self, p: &BoundParams<'t>, _t: usize, x: Var<'t>, y: &[f64]) -> Var<'t> {
        bernoulli_logpmf(y, mlp(p, "theta.emit", x))
    }

    fn proposal<'t>(&self, p: &BoundParams<'t>, _t: usize, prev: Option<Var<'t>>, y: &[f64]) -> Density<'t> {
        let x = self.prev_or_origin(p, prev);
        let n = x.value().rows();
        let gx = self.split(mlp(p, "phi.qx", x));
        let (fused, _) = gx.fuse(&self.y_gauss(p, y, n));
        Density::Gaussian(fused)
    }

    fn independent_proposal<'t>(&self, p: &BoundParams<'t>, _t: usize, y: &[f64]) -> Density<'t> {
        Density::Gaussian(self.y_gauss(p, y, 1))
    }

    fn sample_obs(&self, p: &BoundParams<'_>, _t: usize, x: Var<'_>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let logits = mlp(p, "theta.emit", x).value();
        logits
            .data()
            .iter()
            .map(|&l| if rng.random::<f64>() < sigmoid(l) { 1.0 } else { 0.0 })
            .collect()
    }
}
