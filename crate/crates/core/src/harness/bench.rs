use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{Dataset, Ssm};
use crate::objectives::{gradient, Objective, ObjectiveKind};
use crate::params::ParamSet;
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub objective: ObjectiveKind,
    pub n: usize,
    /// Fastest repeat of one objective-plus-gradient evaluation, divided by `T`.
    pub ms_per_step: f64,
    pub reps: usize,
}

/// Least-squares `c N² + d N + e` with the standard error of `c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadFit {
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub se_c: f64,
}

impl QuadFit {
    /// `c / se(c)`.
    pub fn t_c(&self) -> f64 {
        self.c / self.se_c
    }

    /// Share of the fitted time at `n` carried by the quadratic term.
    pub fn quadratic_share(&self, n: f64) -> f64 {
        (self.c * n * n).abs() / ((self.c * n * n).abs() + (self.d * n).abs())
    }

    /// `N` at which the quadratic term overtakes the linear one.
    pub fn crossover(&self) -> Option<f64> {
        (self.c > 0.0 && self.d > 0.0).then(|| self.d / self.c)
    }
}

pub fn fit_quadratic(ns: &[f64], ys: &[f64]) -> Result<QuadFit> {
    let m = ns.len();
    if m < 4 || ys.len() != m {
        return Err(Error::Config("quadratic fit needs at least four points".into()));
    }
    let x = DMatrix::from_fn(m, 3, |i, j| match j {
        0 => ns[i] * ns[i],
        1 => ns[i],
        _ => 1.0,
    });
    let y = DVector::from_column_slice(ys);
    let xtx = x.transpose() * &x;
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Config("degenerate design for quadratic fit".into()))?;
    let beta = &inv * x.transpose() * &y;
    let resid = &y - &x * &beta;
    let sigma2 = resid.norm_squared() / (m - 3) as f64;
    Ok(QuadFit {
        c: beta[0],
        d: beta[1],
        e: beta[2],
        se_c: (sigma2 * inv[(0, 0)]).sqrt(),
    })
}

/// Times gradient evaluations for each objective and `N`. Repeats go
/// round-robin over every cell so slow phases of the machine hit all cells
/// alike, and each cell keeps its fastest repeat. Every timed call follows an
/// untimed call of the same cell; otherwise a small cell that runs right after
/// a large one pays for the allocator cleaning up after it.
pub fn run_bench(
    model: &dyn Ssm,
    params: &ParamSet,
    data: &Dataset,
    kinds: &[ObjectiveKind],
    ns: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let base = RngStream::new(seed);
    let cells: Vec<(usize, ObjectiveKind)> = ns.iter().flat_map(|&n| kinds.iter().map(move |&k| (n, k))).collect();
    let mut best = vec![f64::INFINITY; cells.len()];
    for r in 0..reps {
        for (c, &(n, kind)) in cells.iter().enumerate() {
            let obj = Objective::new(kind, n, model);
            gradient(&obj, params, data, base.replicate(0))?;
            let start = Instant::now();
            gradient(&obj, params, data, base.replicate(r as u64 + 1))?;
            best[c] = best[c].min(start.elapsed().as_secs_f64() * 1e3 / data.len() as f64);
        }
    }
    Ok(cells
        .into_iter()
        .zip(best)
        .map(|((n, objective), ms_per_step)| BenchRow {
            objective,
            n,
            ms_per_step,
            reps,
        })
        .collect())
}

pub fn fit_for(rows: &[BenchRow], kind: ObjectiveKind) -> Result<QuadFit> {
    let (ns, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.objective == kind)
        .map(|r| (r.n as f64, r.ms_per_step))
        .unzip();
    fit_quadratic(&ns, &ys)
}

pub fn write_bench(path: &Path, rows: &[BenchRow], config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let err = |e: csv::Error| Error::Csv(e.to_string());
    w.write_record(["config_hash", "objective", "n", "ms_per_step", "reps"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            config_hash.to_string(),
            r.objective.to_string(),
            r.n.to_string(),
            r.ms_per_step.to_string(),
            r.reps.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_quadratic() {
        let ns = [8.0, 16.0, 32.0, 64.0, 128.0];
        let ys: Vec<f64> = ns.iter().map(|n| 0.002 * n * n + 0.5 * n + 3.0).collect();
        let f = fit_quadratic(&ns, &ys).unwrap();
        assert!((f.c - 0.002).abs() < 1e-10 && (f.d - 0.5).abs() < 1e-8 && (f.e - 3.0).abs() < 1e-6);
        assert!((f.crossover().unwrap() - 250.0).abs() < 1e-4);
    }
}
