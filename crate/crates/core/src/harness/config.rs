use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{BMode, CMode, Dmm, Hmm, Lgssm, Ssm, StochVol};
use crate::objectives::{ObjectiveKind, TrainOptions};
use crate::params::ParamSet;
use crate::rng::RngStream;

fn default_alpha() -> f64 {
    0.42
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Lgssm {
        dx: usize,
        dy: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
        c_mode: CMode,
        #[serde(default)]
        beta_fixed: bool,
    },
    Sv {
        d: usize,
        b_mode: BMode,
    },
    Dmm {
        dx: usize,
        dy: usize,
        dh: usize,
        #[serde(default)]
        model_seed: u64,
    },
    /// The two-state reference HMM.
    Hmm,
}

impl ModelSpec {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Ssm>> {
        Ok(match *self {
            ModelSpec::Lgssm {
                dx,
                dy,
                alpha,
                c_mode,
                beta_fixed,
            } => Box::new(Lgssm::new(dx, dy, alpha, c_mode, &RngStream::new(seed))?.with_beta_fixed(beta_fixed)),
            ModelSpec::Sv { d, b_mode } => Box::new(StochVol::new(d, b_mode)),
            ModelSpec::Dmm { dx, dy, dh, model_seed } => Box::new(Dmm::new(dx, dy, dh, model_seed)),
            ModelSpec::Hmm => Box::new(Hmm::reference()),
        })
    }

    /// Parameters the synthetic data is drawn from.
    pub fn generating_params(&self, model: &dyn Ssm, t_max: usize, seed: u64) -> ParamSet {
        match self {
            ModelSpec::Sv { d, b_mode } => StochVol::new(*d, *b_mode).true_params(t_max),
            ModelSpec::Dmm { dx, dy, dh, model_seed } => Dmm::new(*dx, *dy, *dh, *model_seed).true_params(),
            _ => model.init_params(t_max, &RngStream::new(seed)),
        }
    }
}

/// One experiment, read from TOML. Unknown keys are rejected.
///
/// ```toml
/// objective = "vmpf-bg"
/// n = 4
/// t = 10
/// seed = 1
/// schedule = [[0.01, 10000], [0.001, 10000]]
///
/// [model]
/// kind = "lgssm"
/// dx = 25
/// dy = 25
/// c_mode = "sparse"
/// beta_fixed = true
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveKind,
    pub n: usize,
    pub t: usize,
    #[serde(default)]
    pub seed: u64,
    /// `(learning rate, iterations)` phases.
    #[serde(default)]
    pub schedule: Vec<(f64, usize)>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default)]
    pub probe_every: usize,
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
    /// Train `theta.*` jointly with the proposal.
    #[serde(default)]
    pub learn_theta: bool,
    /// Parameters file to start from instead of the default initialization.
    #[serde(default)]
    pub warm_start: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub wall_clock: bool,
    /// Particle counts for `evaluate`; empty means just `n`.
    #[serde(default)]
    pub n_sweep: Vec<usize>,
    pub model: ModelSpec,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_eval_samples() -> usize {
    1000
}

fn default_probe_samples() -> usize {
    16
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::Config("n and t must be positive".into()));
        }
        if self.n_sweep.contains(&0) {
            return Err(Error::Config("n_sweep entries must be positive".into()));
        }
        if self.schedule.iter().any(|(lr, _)| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.eval_samples < 2 || self.probe_samples < 2 {
            return Err(Error::Config(
                "eval_samples and probe_samples must be at least 2".into(),
            ));
        }
        if self.objective.is_unbiased()
            && !matches!(
                self.model,
                ModelSpec::Lgssm { .. } | ModelSpec::Sv { .. } | ModelSpec::Dmm { .. }
            )
        {
            return Err(Error::Config("vmpf-ug needs Gaussian proposals".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form, with
    /// the output directory left out so moving results does not change it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            schedule: self.schedule.clone(),
            clip: self.clip,
            probe_every: self.probe_every,
            probe_samples: self.probe_samples,
            abort_grad_norm: 1e6,
            wall_clock: self.wall_clock,
        }
    }

    pub fn data_path(&self) -> PathBuf {
        self.out.join("data.csv")
    }

    pub fn params_path(&self) -> PathBuf {
        self.out.join(format!("params_{}_n{}.json", self.objective, self.n))
    }

    pub fn train_path(&self) -> PathBuf {
        self.out.join(format!("train_{}_n{}.csv", self.objective, self.n))
    }

    pub fn results_path(&self) -> PathBuf {
        self.out.join("results.csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
objective = "vsmc"
n = 4
t = 10
schedule = [[0.01, 5], [0.001, 5]]

[model]
kind = "lgssm"
dx = 3
dy = 3
c_mode = "sparse"
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(c.eval_samples, 1000);
        assert_eq!(c.schedule, vec![(0.01, 5), (0.001, 5)]);
        assert!(matches!(c.model, ModelSpec::Lgssm { alpha, .. } if alpha == 0.42));
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        let typo = BASE.replace("n = 4", "n = 4\nlearning_rate = 0.1");
        assert!(ExperimentConfig::from_toml(&typo).is_err());
        let model_typo = BASE.replace("dy = 3", "dy = 3\nbeta_fix = true");
        assert!(ExperimentConfig::from_toml(&model_typo).is_err());
    }

    #[test]
    fn hash_ignores_out_but_not_hyperparameters() {
        let a = ExperimentConfig::from_toml(BASE).unwrap();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.n = 8;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
