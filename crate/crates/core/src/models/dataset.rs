use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observations `y_{1:T}` plus provenance. The latent path is kept in memory
/// when the data was generated here but is not serialized.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: String,
    pub obs: Vec<Vec<f64>>,
    pub latent: Vec<Vec<f64>>,
    pub seed: u64,
    pub meta: BTreeMap<String, String>,
    /// Observation matrix of a dense-C linear Gaussian model, for provenance.
    pub c: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    kind: String,
    t: usize,
    dy: usize,
    seed: u64,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    #[serde(default)]
    c: Option<Vec<Vec<f64>>>,
}

impl Dataset {
    pub fn new(kind: &str, obs: Vec<Vec<f64>>, latent: Vec<Vec<f64>>, seed: u64) -> Self {
        let ds = Self {
            kind: kind.to_string(),
            obs,
            latent,
            seed,
            meta: BTreeMap::new(),
            c: None,
        };
        ds.check();
        ds
    }

    pub fn from_obs(kind: &str, obs: Vec<Vec<f64>>) -> Self {
        Self::new(kind, obs, Vec::new(), 0)
    }

    fn check(&self) {
        if let Some(first) = self.obs.first() {
            assert!(
                self.obs.iter().all(|y| y.len() == first.len()),
                "observations must share a dimension"
            );
        }
    }

    /// Number of time steps.
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.first().map_or(0, Vec::len)
    }

    /// Observation at 1-based step `t`.
    pub fn y(&self, t: usize) -> &[f64] {
        &self.obs[t - 1]
    }

    /// Path of the metadata sidecar belonging to `csv`.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        let mut s = csv.as_os_str().to_owned();
        s.push(".meta.toml");
        PathBuf::from(s)
    }

    pub fn write(&self, csv_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::io(csv_path, std::io::Error::other(e)))?;
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.obs_dim()).map(|k| format!("y{k}")));
        let csv_err = |e: csv::Error| Error::Csv(e.to_string());
        w.write_record(&header).map_err(csv_err)?;
        for (t, y) in self.obs.iter().enumerate() {
            let mut row = vec![(t + 1).to_string()];
            row.extend(y.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(csv_path, e))?;
        let side = Sidecar {
            kind: self.kind.clone(),
            t: self.len(),
            dy: self.obs_dim(),
            seed: self.seed,
            meta: self.meta.clone(),
            c: self.c.clone(),
        };
        let text = toml::to_string(&side).map_err(|e| Error::Config(e.to_string()))?;
        let sp = Self::sidecar_path(csv_path);
        fs::write(&sp, text).map_err(|e| Error::io(&sp, e))
    }

    pub fn read(csv_path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(csv_path).map_err(|e| Error::io(csv_path, std::io::Error::other(e)))?;
        let header = r.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::Csv(format!("{}: first column must be `t`", csv_path.display())));
        }
        let mut obs = Vec::new();
        for (k, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            let t: usize = rec[0]
                .parse()
                .map_err(|_| Error::Csv(format!("bad time index on row {}", k + 1)))?;
            if t != k + 1 {
                return Err(Error::Csv(format!("expected t={} got t={t}", k + 1)));
            }
            let y = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Csv(format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            if y.len() + 1 != header.len() {
                return Err(Error::Csv(format!("row {t} has {} values", y.len())));
            }
            obs.push(y);
        }
        let sp = Self::sidecar_path(csv_path);
        let text = fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let side: Sidecar = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if side.t != obs.len() || side.dy != obs.first().map_or(0, Vec::len) {
            return Err(Error::Csv("sidecar dimensions disagree with the csv".into()));
        }
        let mut ds = Dataset::new(&side.kind, obs, Vec::new(), side.seed);
        ds.meta = side.meta;
        ds.c = side.c;
        Ok(ds)
    }
}
