//! State space models, their proposals, synthetic data and exact oracles.

mod dataset;
mod dmm;
mod hmm;
mod kalman;
mod lgssm;
mod nn;
mod sv;

pub use dataset::Dataset;
pub use dmm::Dmm;
pub use hmm::{hmm_forward, Hmm};
pub use kalman::{kalman_filter, kalman_loglik, KalmanStep};
pub use lgssm::{CMode, Lgssm};
pub use sv::{BMode, StochVol};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::distributions::Density;
use crate::error::Result;
use crate::params::{BoundParams, ParamSet};
use crate::rng::{ChoiceSource, RngStream};

/// A state space model `f(x_1) Π f(x_t | x_{t-1}) Π g(y_t | x_t)` together
/// with its proposal family.
///
/// Time indices are 1-based. For `t >= 2`, `prev` holds the previous
/// particles as an `[n x dx]` matrix and the returned densities have one
/// component per row of `prev`; at `t = 1` they have a single component.
pub trait Ssm: Send + Sync {
    fn kind(&self) -> &'static str;
    fn latent_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;

    /// Model and proposal parameters at their default initial values.
    fn init_params(&self, t_max: usize, rng: &RngStream) -> ParamSet;

    fn transition<'t>(&self, p: &BoundParams<'t>, t: usize, prev: Option<Var<'t>>) -> Density<'t>;

    /// `[n]` observation log-densities, one per row of `x`.
    fn obs_logpdf<'t>(&self, p: &BoundParams<'t>, t: usize, x: Var<'t>, y: &[f64]) -> Var<'t>;

    fn proposal<'t>(&self, p: &BoundParams<'t>, t: usize, prev: Option<Var<'t>>, y: &[f64]) -> Density<'t>;

    /// Proposal that ignores the previous state, for IPF and TMC.
    fn independent_proposal<'t>(&self, p: &BoundParams<'t>, t: usize, y: &[f64]) -> Density<'t>;

    /// One observation drawn given a single latent row `x`.
    fn sample_obs(&self, p: &BoundParams<'_>, t: usize, x: Var<'_>, rng: &mut ChaCha8Rng) -> Vec<f64>;

    /// Whether every density is a diagonal Gaussian.
    fn is_gaussian(&self) -> bool {
        true
    }

    fn as_lgssm(&self) -> Option<&Lgssm> {
        None
    }

    fn as_hmm(&self) -> Option<&Hmm> {
        None
    }
}

/// Ancestral sampling of `t_max` steps with parameters `params`.
pub fn generate(model: &dyn Ssm, params: &ParamSet, t_max: usize, seed: u64) -> Result<Dataset> {
    let stream = RngStream::new(seed).replicate(u64::MAX);
    let mut src = stream;
    let mut obs_rng = stream.replicate(1).rng();
    let tape = Tape::new();
    let bp = params.bind(&tape);
    let mut prev: Option<Var> = None;
    let mut latent = Vec::with_capacity(t_max);
    let mut obs = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let f = model.transition(&bp, t, prev);
        let x = f.sample_indexed(&mut src as &mut dyn ChoiceSource, t, &[0])?;
        obs.push(model.sample_obs(&bp, t, x, &mut obs_rng));
        latent.push(x.value().data().to_vec());
        prev = Some(x);
    }
    Ok(Dataset::new(model.kind(), obs, latent, seed))
}
