use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One evaluated bound. `kalman` is the exact log-likelihood when the model has one.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultsRow {
    pub config_hash: String,
    pub objective: String,
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub kalman: Option<f64>,
    pub wall_ms: f64,
    pub seed: u64,
}

pub const RESULTS_HEADER: [&str; 8] = [
    "config_hash",
    "objective",
    "n",
    "mean",
    "se",
    "kalman",
    "wall_ms",
    "seed",
];

impl ResultsRow {
    fn fields(&self) -> [String; 8] {
        [
            self.config_hash.clone(),
            self.objective.clone(),
            self.n.to_string(),
            self.mean.to_string(),
            self.se.to_string(),
            self.kalman.map(|k| k.to_string()).unwrap_or_default(),
            self.wall_ms.to_string(),
            self.seed.to_string(),
        ]
    }
}

/// Appends rows, writing the header first if the file is new or empty.
/// Each row goes out in a single `write` so concurrent appenders do not interleave.
pub fn append_results(path: &Path, rows: &[ResultsRow]) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let fresh = f.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().from_writer(&mut buf);
        let err = |e: csv::Error| Error::Csv(e.to_string());
        if fresh {
            w.write_record(RESULTS_HEADER).map_err(err)?;
        }
        for r in rows {
            w.write_record(r.fields()).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let header = r.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != RESULTS_HEADER {
        return Err(Error::Csv(format!("{}: not a results table", path.display())));
    }
    let bad = |what: &str, v: &str| Error::Csv(format!("bad {what} `{v}`"));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let f = |k: usize, what: &str| rec[k].parse::<f64>().map_err(|_| bad(what, &rec[k]));
        rows.push(ResultsRow {
            config_hash: rec[0].to_string(),
            objective: rec[1].to_string(),
            n: rec[2].parse().map_err(|_| bad("n", &rec[2]))?,
            mean: f(3, "mean")?,
            se: f(4, "se")?,
            kalman: if rec[5].is_empty() { None } else { Some(f(5, "kalman")?) },
            wall_ms: f(6, "wall_ms")?,
            seed: rec[7].parse().map_err(|_| bad("seed", &rec[7]))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let row = |n| ResultsRow {
            config_hash: "abc".into(),
            objective: "vsmc".into(),
            n,
            mean: -1.5,
            se: 0.25,
            kalman: if n == 2 { Some(-1.0) } else { None },
            wall_ms: 3.0,
            seed: 7,
        };
        append_results(&p, &[row(2)]).unwrap();
        append_results(&p, &[row(4), row(8)]).unwrap();
        let back = read_results(&p).unwrap();
        assert_eq!(back, vec![row(2), row(4), row(8)]);
    }
}
