use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Ssm;
use crate::autodiff::{Tensor, Var};
use crate::distributions::{state_of, Density};
use crate::params::{BoundParams, ParamSet};
use crate::rng::{categorical_sample, RngStream};

/// Discrete hidden Markov model. States are carried as a one-column real
/// matrix of state indices; observations are one-element symbol vectors.
///
/// The proposal uses its own tables (`phi.q1` for the first step and the
/// independent proposal, `phi.q` for transitions), stored as logits.
#[derive(Clone, Debug)]
pub struct Hmm {
    pub init: Vec<f64>,
    pub trans: Tensor,
    pub emit: Tensor,
    pub proposal_init: Vec<f64>,
    pub proposal_trans: Tensor,
}

fn ln_table(t: &Tensor) -> Tensor {
    t.map(f64::ln)
}

impl Hmm {
    pub fn new(init: Vec<f64>, trans: Tensor, emit: Tensor) -> Self {
        let k = init.len();
        assert_eq!(trans.shape(), &[k, k], "transition table must be k x k");
        assert_eq!(emit.rows(), k, "emission table needs one row per state");
        let rows_ok = |t: &Tensor| (0..t.rows()).all(|i| (t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(
            (init.iter().sum::<f64>() - 1.0).abs() < 1e-12 && rows_ok(&trans) && rows_ok(&emit),
            "probability tables must be normalized"
        );
        let proposal_init = vec![1.0 / k as f64; k];
        let proposal_trans = Tensor::filled(&[k, k], 1.0 / k as f64);
        Self {
            init,
            trans,
            emit,
            proposal_init,
            proposal_trans,
        }
    }

    pub fn with_proposal(mut self, init: Vec<f64>, trans: Tensor) -> Self {
        self.proposal_init = init;
        self.proposal_trans = trans;
        self
    }

    /// Two states, two symbols: `π₀ = [.5, .5]`, sticky transitions with
    /// 0.9 on the diagonal, `p(symbol 0 | s) = [.8, .3]`. Proposal tables
    /// deliberately differ from the model.
    pub fn reference() -> Self {
        Hmm::new(
            vec![0.5, 0.5],
            Tensor::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]),
            Tensor::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7]]),
        )
        .with_proposal(vec![0.6, 0.4], Tensor::from_rows(&[vec![0.7, 0.3], vec![0.2, 0.8]]))
    }

    pub fn states(&self) -> usize {
        self.init.len()
    }

    fn log_softmax_rows<'t>(l: Var<'t>) -> Var<'t> {
        let k = l.value().cols();
        l - l.logsumexp_axis(1).repeat_cols(k)
    }

    fn pick<'t>(table: Var<'t>, prev: Var<'t>) -> Var<'t> {
        let rows: Vec<usize> = prev.value().data().iter().map(|&s| state_of(s)).collect();
        table.gather_rows(&rows)
    }
}

/// Exact `log p(y)` by the forward algorithm in log space.
pub fn hmm_forward(h: &Hmm, ys: &[usize]) -> f64 {
    let k = h.states();
    let lse = |v: &[f64]| {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            m
        } else {
            m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        }
    };
    let mut alpha: Vec<f64> = (0..k).map(|s| h.init[s].ln() + h.emit.get(s, ys[0]).ln()).collect();
    for &y in &ys[1..] {
        alpha = (0..k)
            .map(|s| {
                let terms: Vec<f64> = (0..k).map(|r| alpha[r] + h.trans.get(r, s).ln()).collect();
                lse(&terms) + h.emit.get(s, y).ln()
            })
            .collect();
    }
    lse(&alpha)
}

impl Ssm for Hmm {
    fn kind(&self) -> &'static str {
        "hmm"
    }

    fn latent_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn init_params(&self, _t_max: usize, _rng: &RngStream) -> ParamSet {
        let k = self.states();
        let mut p = ParamSet::new();
        let init = self.proposal_init.iter().map(|v| v.ln()).collect();
        p.insert("phi.q1", Tensor::matrix(1, k, init), false);
        p.insert("phi.q", ln_table(&self.proposal_trans), false);
        p
    }

    fn is_gaussian(&self) -> bool {
        false
    }

    fn transition<'t>(&self, p: &BoundParams<'t>, _t: usize, prev: Option<Var<'t>>) -> Density<'t> {
        let tape = p.tape();
        let k = self.states();
        let log_probs = match prev {
            None => tape.constant(Tensor::matrix(1, k, self.init.iter().map(|v| v.ln()).collect())),
            Some(x) => Self::pick(tape.constant(ln_table(&self.trans)), x),
        };
        Density::Discrete { log_probs }
    }

    fn obs_logpdf<'t>(&self, p: &BoundParams<'t>, _t: usize, x: Var<'t>, y: &[f64]) -> Var<'t> {
        let sym = state_of(y[0]);
        let m = self.emit.cols();
        let table = p.tape().constant(ln_table(&self.emit));
        let idx = x
            .value()
            .data()
            .iter()
            .map(|&s| state_of(s) * m + sym)
            .collect::<Vec<_>>();
        let n = idx.len();
        table.take(idx, &[n])
    }

    fn proposal<'t>(&self, p: &BoundParams<'t>, _t: usize, prev: Option<Var<'t>>, _y: &[f64]) -> Density<'t> {
        let log_probs = match prev {
            None => Self::log_softmax_rows(p.get("phi.q1")),
            Some(x) => Self::pick(Self::log_softmax_rows(p.get("phi.q")), x),
        };
        Density::Discrete { log_probs }
    }

    fn independent_proposal<'t>(&self, p: &BoundParams<'t>, _t: usize, _y: &[f64]) -> Density<'t> {
        Density::Discrete {
            log_probs: Self::log_softmax_rows(p.get("phi.q1")),
        }
    }

    fn sample_obs(&self, _p: &BoundParams<'_>, _t: usize, x: Var<'_>, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let s = state_of(x.item());
        let sym = categorical_sample(self.emit.row(s), rng.random()).expect("normalized emission row");
        vec![sym as f64]
    }

    fn as_hmm(&self) -> Option<&Hmm> {
        Some(self)
    }
}
