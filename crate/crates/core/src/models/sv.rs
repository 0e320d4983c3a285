use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Ssm;
use crate::autodiff::{Tensor, Var};
use crate::distributions::{Density, DiagGaussian, HALF_LN_2PI};
use crate::params::{BoundParams, ParamSet};
use crate::rng::{DrawKey, Purpose, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BMode {
    Diagonal,
    Triangular,
}

/// Multivariate stochastic volatility:
/// `x_t = μ + Φ (x_{t-1} - μ) + v_t`, `y_t = diag(exp(x_t / 2)) B e_t`, `x_1 ~ N(μ, Q)`.
///
/// `Φ = sigmoid(phi_logit)`, `Q = diag(exp(log_q))`, `B` has diagonal
/// `exp(b_log_diag)` and (triangular mode) free strictly-lower entries.
/// Proposal: `f(x_t | x_{t-1}) N(x_t; μ_t, Σ_t)` renormalized.
#[derive(Clone, Debug)]
pub struct StochVol {
    pub d: usize,
    pub b_mode: BMode,
    /// Generating values of θ.
    pub truth: SvTheta,
    /// Standard deviation of the perturbation applied to `truth` for initialization.
    pub init_noise: f64,
}

#[derive(Clone, Debug)]
pub struct SvTheta {
    pub mu: Vec<f64>,
    pub phi: Vec<f64>,
    pub q: Vec<f64>,
    pub b: Tensor,
}

impl StochVol {
    pub fn new(d: usize, b_mode: BMode) -> Self {
        let mut b = Tensor::identity(d);
        if b_mode == BMode::Triangular {
            for i in 0..d {
                for j in 0..i {
                    b.data_mut()[i * d + j] = 0.3;
                }
            }
        }
        Self {
            d,
            b_mode,
            truth: SvTheta {
                mu: vec![-1.0; d],
                phi: vec![0.9; d],
                q: vec![0.2; d],
                b,
            },
            init_noise: 0.1,
        }
    }

    fn theta_params(&self, p: &mut ParamSet, th: &SvTheta) {
        let d = self.d;
        p.insert("theta.mu", Tensor::vector(th.mu.clone()), true);
        let logit = th.phi.iter().map(|f| (f / (1.0 - f)).ln()).collect();
        p.insert("theta.phi_logit", Tensor::vector(logit), true);
        p.insert(
            "theta.log_q",
            Tensor::vector(th.q.iter().map(|q| q.ln()).collect()),
            true,
        );
        let diag = (0..d).map(|i| th.b.get(i, i).ln()).collect();
        p.insert("theta.b_log_diag", Tensor::vector(diag), true);
        if self.b_mode == BMode::Triangular {
            let mut low = Tensor::zeros(&[d, d]);
            for i in 0..d {
                for j in 0..i {
                    low.data_mut()[i * d + j] = th.b.get(i, j);
                }
            }
            p.insert("theta.b_lower", low, true);
        }
    }

    /// Parameters at the generating θ, with default proposal parameters.
    pub fn true_params(&self, t_max: usize) -> ParamSet {
        let mut p = ParamSet::new();
        self.theta_params(&mut p, &self.truth);
        self.phi_params(&mut p, t_max);
        p
    }

    fn phi_params(&self, p: &mut ParamSet, t_max: usize) {
        p.insert("phi.mu", Tensor::zeros(&[t_max, self.d]), true);
        p.insert("phi.log_sigma", Tensor::filled(&[t_max, self.d], 1.0), true);
    }

    fn strict_lower_mask(&self) -> Tensor {
        let d = self.d;
        let mut m = Tensor::zeros(&[d, d]);
        for i in 0..d {
            for j in 0..i {
                m.data_mut()[i * d + j] = 1.0;
            }
        }
        m
    }

    fn b_matrix<'t>(&self, p: &BoundParams<'t>) -> Var<'t> {
        let diag = p.get("theta.b_log_diag").exp().diag_embed();
        match self.b_mode {
            BMode::Diagonal => diag,
            BMode::Triangular => {
                let mask = p.tape().constant(self.strict_lower_mask());
                diag + p.get("theta.b_lower") * mask
            }
        }
    }

    fn phi_proposal<'t>(p: &BoundParams<'t>, t: usize, n: Option<usize>) -> DiagGaussian<'t> {
        let mu = p.get("phi.mu").row(t - 1);
        let ls = p.get("phi.log_sigma").row(t - 1);
        match n {
            None => DiagGaussian::new(mu, ls),
            Some(n) => DiagGaussian::new(mu.repeat_rows(n), ls.repeat_rows(n)),
        }
    }

    fn transition_gauss<'t>(&self, p: &BoundParams<'t>, prev: Option<Var<'t>>) -> DiagGaussian<'t> {
        let mu = p.get("theta.mu");
        let ls = p.get("theta.log_q") * 0.5;
        match prev {
            None => DiagGaussian::new(mu, ls),
            Some(x) => {
                let n = x.value().rows();
                let mu_n = mu.repeat_rows(n);
                let phi = p.get("theta.phi_logit").sigmoid().repeat_rows(n);
                DiagGaussian::new(mu_n + phi * (x - mu_n), ls.repeat_rows(n))
            }
        }
    }
}

impl Ssm for StochVol {
    fn kind(&self) -> &'static str {
        "sv"
    }

    fn latent_dim(&self) -> usize {
        self.d
    }

    fn obs_dim(&self) -> usize {
        self.d
    }

    fn init_params(&self, t_max: usize, rng: &RngStream) -> ParamSet {
        let mut r = rng.for_key(DrawKey::new(0, 0, Purpose::Init));
        let noise = Normal::new(0.0, self.init_noise).expect("finite noise scale");
        let mut th = self.truth.clone();
        for v in &mut th.mu {
            *v += noise.sample(&mut r);
        }
        for v in &mut th.phi {
            *v = (*v + noise.sample(&mut r)).clamp(0.05, 0.95);
        }
        for v in &mut th.q {
            *v *= noise.sample(&mut r).exp();
        }
        for v in th.b.data_mut() {
            if *v != 0.0 {
                *v *= noise.sample(&mut r).exp();
            }
        }
        let mut p = ParamSet::new();
        self.theta_params(&mut p, &th);
        self.phi_params(&mut p, t_max);
        p
    }

    fn transition<'t>(&self, p: &BoundParams<'t>, _t: usize, prev: Option<Var<'t>>) -> Density<'t> {
        Density::Gaussian(self.transition_gauss(p, prev))
    }

    fn obs_logpdf<'t>(&self, p: &BoundParams<'t>, _t: usize, x: Var<'t>, y: &[f64]) -> Var<'t> {
        let tape = p.tape();
        let n = x.value().rows();
        let d = self.d;
        let yv = tape.constant(Tensor::vector(y.to_vec())).repeat_rows(n);
        let w = yv * (x * -0.5).exp();
        let b_log_diag = p.get("theta.b_log_diag");
        let z = match self.b_mode {
            BMode::Diagonal => w * (-b_log_diag).exp().repeat_rows(n),
            BMode::Triangular => w.solve_lower_rows(self.b_matrix(p)),
        };
        let log_det = (x * 0.5).sum_last() + b_log_diag.sum();
        -(log_det + z.square().sum_last() * 0.5) - d as f64 * HALF_LN_2PI
    }

    fn proposal<'t>(&self, p: &BoundParams<'t>, t: usize, prev: Option<Var<'t>>, _y: &[f64]) -> Density<'t> {
        let n = prev.map(|x| x.value().rows());
        let f = self.transition_gauss(p, prev);
        let (fused, _) = f.fuse(&Self::phi_proposal(p, t, n));
        Density::Gaussian(fused)
    }

    fn independent_proposal<'t>(&self, p: &BoundParams<'t>, t: usize, _y: &[f64]) -> Density<'t> {
        Density::Gaussian(Self::phi_proposal(p, t, None))
    }

    fn sample_obs(&self, p: &BoundParams<'_>, _t: usize, x: Var<'_>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let b = self.b_matrix(p).value();
        let e: Vec<f64> = (0..self.d).map(|_| StandardNormal.sample(rng)).collect();
        let be = b.matmul(&Tensor::matrix(self.d, 1, e));
        x.value()
            .data()
            .iter()
            .zip(be.data())
            .map(|(xi, v)| (xi / 2.0).exp() * v)
            .collect()
    }
}
