use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Ssm};
use crate::autodiff::{Tensor, Var};
use crate::distributions::{Density, DiagGaussian};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::rng::{DrawKey, Purpose, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CMode {
    Sparse,
    Dense,
}

/// `x_t = A x_{t-1} + v_t`, `y_t = C x_t + e_t`, `x_1 ~ N(0, I)`, diagonal `Q` and `R`.
///
/// Proposal: `N(μ_t + β_t ⊙ (A x_{t-1}), diag(σ_t²))`, with `μ_1`, `σ_1` alone at `t = 1`.
#[derive(Clone, Debug)]
pub struct Lgssm {
    pub a: Tensor,
    pub c: Tensor,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    /// Keep `β_t = 1` out of training.
    pub beta_fixed: bool,
    at: Tensor,
    ct: Tensor,
}

impl Lgssm {
    /// `A_ij = α^{|i-j|+1}`, `Q = R = I`; sparse `C` is the diagonal embedding,
    /// dense `C` has standard normal entries drawn from `rng`.
    pub fn new(dx: usize, dy: usize, alpha: f64, mode: CMode, rng: &RngStream) -> Result<Self> {
        if dx == 0 || dy == 0 {
            return Err(Error::InvalidModel("dimensions must be positive".into()));
        }
        let mut a = Tensor::zeros(&[dx, dx]);
        for i in 0..dx {
            for j in 0..dx {
                a.data_mut()[i * dx + j] = alpha.powi(i.abs_diff(j) as i32 + 1);
            }
        }
        let c = match mode {
            CMode::Sparse => {
                if dy > dx {
                    return Err(Error::InvalidModel(format!(
                        "sparse C needs dy <= dx, got dy={dy}, dx={dx}"
                    )));
                }
                let mut c = Tensor::zeros(&[dy, dx]);
                for i in 0..dy {
                    c.data_mut()[i * dx + i] = 1.0;
                }
                c
            }
            CMode::Dense => {
                let mut r = rng.for_key(DrawKey::new(0, 0, Purpose::Model));
                let data = (0..dy * dx).map(|_| StandardNormal.sample(&mut r)).collect();
                Tensor::matrix(dy, dx, data)
            }
        };
        Self::with_matrices(a, c, vec![1.0; dx], vec![1.0; dy])
    }

    pub fn with_matrices(a: Tensor, c: Tensor, q_diag: Vec<f64>, r_diag: Vec<f64>) -> Result<Self> {
        let dx = a.rows();
        if a.rank() != 2 || a.cols() != dx || c.rank() != 2 || c.cols() != dx {
            return Err(Error::InvalidModel("A must be dx x dx and C dy x dx".into()));
        }
        if q_diag.len() != dx || r_diag.len() != c.rows() {
            return Err(Error::InvalidModel("noise diagonals have the wrong length".into()));
        }
        if q_diag.iter().chain(&r_diag).any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidModel("noise variances must be positive".into()));
        }
        Ok(Self {
            at: a.transpose(),
            ct: c.transpose(),
            a,
            c,
            q_diag,
            r_diag,
            beta_fixed: false,
        })
    }

    pub fn with_beta_fixed(mut self, fixed: bool) -> Self {
        self.beta_fixed = fixed;
        self
    }

    pub fn dx(&self) -> usize {
        self.a.rows()
    }

    pub fn dy(&self) -> usize {
        self.c.rows()
    }

    fn const_rows<'t>(p: &BoundParams<'t>, v: &[f64], n: usize) -> Var<'t> {
        let mut data = Vec::with_capacity(n * v.len());
        for _ in 0..n {
            data.extend_from_slice(v);
        }
        p.tape().constant(Tensor::matrix(n, v.len(), data))
    }

    fn log_std(v: &[f64]) -> Vec<f64> {
        v.iter().map(|q| 0.5 * q.ln()).collect()
    }

    /// Proposal parameters equal to the exact conditional `p(x_t | x_{t-1}, y_{t:T})`,
    /// obtained from a backward information filter.
    ///
    /// Exists only when that conditional has diagonal covariance and a
    /// diagonal dependence on `A x_{t-1}`, which always holds for `dx = 1`.
    pub fn optimal_proposal(&self, data: &Dataset) -> Result<ParamSet> {
        let dx = self.dx();
        let t_max = data.len();
        let a = to_na(&self.a);
        let c = to_na(&self.c);
        let qi = DMatrix::from_diagonal(&DVector::from_iterator(dx, self.q_diag.iter().map(|v| 1.0 / v)));
        let ri = DMatrix::from_diagonal(&DVector::from_iterator(self.dy(), self.r_diag.iter().map(|v| 1.0 / v)));
        let ctri = c.transpose() * &ri;
        let mut j = DMatrix::zeros(dx, dx);
        let mut h = DVector::zeros(dx);
        let mut mu = vec![0.0; t_max * dx];
        let mut beta = vec![0.0; t_max * dx];
        let mut ls = vec![0.0; t_max * dx];
        for t in (1..=t_max).rev() {
            let y = DVector::from_column_slice(data.y(t));
            let prior_prec = if t == 1 { DMatrix::identity(dx, dx) } else { qi.clone() };
            let k = &ctri * &c + &j;
            let kv = &ctri * y + &h;
            let prec = &prior_prec + &k;
            let cov = prec.clone().try_inverse().ok_or(Error::NotPositiveDefinite { t })?;
            let gain = &cov * &prior_prec;
            let m = &cov * &kv;
            for r in 0..dx {
                for s in 0..dx {
                    if r != s && (cov[(r, s)].abs() > 1e-12 || gain[(r, s)].abs() > 1e-12) {
                        return Err(Error::InvalidModel(
                            "optimal proposal is not diagonal for this model".into(),
                        ));
                    }
                }
                mu[(t - 1) * dx + r] = m[r];
                beta[(t - 1) * dx + r] = if t == 1 { 0.0 } else { gain[(r, r)] };
                ls[(t - 1) * dx + r] = 0.5 * cov[(r, r)].ln();
            }
            // message p(y_{t:T} | x_{t-1}) in information form
            let qia = &qi * &a;
            j = a.transpose() * &qia - qia.transpose() * &cov * &qia;
            h = qia.transpose() * &cov * &kv;
        }
        let mut p = ParamSet::new();
        p.insert("phi.mu", Tensor::matrix(t_max, dx, mu), true);
        p.insert("phi.beta", Tensor::matrix(t_max, dx, beta), !self.beta_fixed);
        p.insert("phi.log_sigma", Tensor::matrix(t_max, dx, ls), true);
        Ok(p)
    }
}

pub(crate) fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

impl Ssm for Lgssm {
    fn kind(&self) -> &'static str {
        "lgssm"
    }

    fn latent_dim(&self) -> usize {
        self.dx()
    }

    fn obs_dim(&self) -> usize {
        self.dy()
    }

    fn init_params(&self, t_max: usize, _rng: &RngStream) -> ParamSet {
        let dx = self.dx();
        let mut p = ParamSet::new();
        p.insert("phi.mu", Tensor::zeros(&[t_max, dx]), true);
        p.insert("phi.beta", Tensor::filled(&[t_max, dx], 1.0), !self.beta_fixed);
        p.insert("phi.log_sigma", Tensor::zeros(&[t_max, dx]), true);
        p
    }

    fn transition<'t>(&self, p: &BoundParams<'t>, t: usize, prev: Option<Var<'t>>) -> Density<'t> {
        let tape = p.tape();
        match prev {
            None => {
                debug_assert_eq!(t, 1);
                Density::Gaussian(DiagGaussian::standard(tape, self.dx()))
            }
            Some(x) => {
                let n = x.value().rows();
                let mean = x.matmul(tape.constant(self.at.clone()));
                let ls = Self::const_rows(p, &Self::log_std(&self.q_diag), n);
                Density::Gaussian(DiagGaussian::new(mean, ls))
            }
        }
    }

    fn obs_logpdf<'t>(&self, p: &BoundParams<'t>, _t: usize, x: Var<'t>, y: &[f64]) -> Var<'t> {
        let n = x.value().rows();
        let mean = x.matmul(p.tape().constant(self.ct.clone()));
        let ls = Self::const_rows(p, &Self::log_std(&self.r_diag), n);
        let yv = Self::const_rows(p, y, n);
        let idx: Vec<usize> = (0..n).collect();
        DiagGaussian::new(mean, ls).logpdf_indexed(yv, &idx)
    }

    fn proposal<'t>(&self, p: &BoundParams<'t>, t: usize, prev: Option<Var<'t>>, _y: &[f64]) -> Density<'t> {
        let mu = p.get("phi.mu").row(t - 1);
        let ls = p.get("phi.log_sigma").row(t - 1);
        match prev {
            None => Density::Gaussian(DiagGaussian::new(mu, ls)),
            Some(x) => {
                let n = x.value().rows();
                let beta = p.get("phi.beta").row(t - 1);
                let ax = x.matmul(p.tape().constant(self.at.clone()));
                let mean = mu.repeat_rows(n) + beta.repeat_rows(n) * ax;
                Density::Gaussian(DiagGaussian::new(mean, ls.repeat_rows(n)))
            }
        }
    }

    fn independent_proposal<'t>(&self, p: &BoundParams<'t>, t: usize, _y: &[f64]) -> Density<'t> {
        let mu = p.get("phi.mu").row(t - 1);
        let ls = p.get("phi.log_sigma").row(t - 1);
        Density::Gaussian(DiagGaussian::new(mu, ls))
    }

    fn sample_obs(&self, _p: &BoundParams<'_>, _t: usize, x: Var<'_>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let xv = x.value();
        let cx = self.c.matmul(&xv.transpose().reshaped(&[self.dx(), 1]));
        cx.data()
            .iter()
            .zip(&self.r_diag)
            .map(|(m, r)| {
                let e: f64 = StandardNormal.sample(rng);
                m + r.sqrt() * e
            })
            .collect()
    }

    fn as_lgssm(&self) -> Option<&Lgssm> {
        Some(self)
    }
}
