//! Experiment plumbing behind the `vmpf` binary: config files, datasets,
//! training runs, bound tables, oracle suites, timing and plots.

pub mod bench;
pub mod config;
pub mod plot;
pub mod results;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::{ExperimentConfig, ModelSpec};
pub use results::{append_results, read_results, ResultsRow};

use crate::error::{Error, Result};
use crate::models::{generate, kalman_loglik, Dataset, Ssm};
use crate::objectives::{
    bound_estimate, gradient, load_params, save_params, train, Objective, ObjectiveKind, TrainRecord, TrainRow,
};
use crate::params::ParamSet;
use crate::rng::RngStream;
use bench::{fit_for, run_bench, write_bench, BenchRow, QuadFit};
use plot::{downsample, PlotSpec, Series};

/// Evaluation streams are kept apart from training streams of the same seed.
const EVAL_SALT: u64 = 0x5eed_e7a1;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `data.csv` and its metadata sidecar under the output directory.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    ensure_dir(&cfg.out)?;
    let model = cfg.model.build(cfg.seed)?;
    let gen_params = cfg.model.generating_params(model.as_ref(), cfg.t, cfg.seed);
    let mut data = generate(model.as_ref(), &gen_params, cfg.t, cfg.seed)?;
    if let (
        ModelSpec::Lgssm {
            c_mode: crate::models::CMode::Dense,
            ..
        },
        Some(m),
    ) = (&cfg.model, model.as_lgssm())
    {
        data.c = Some((0..m.c.rows()).map(|i| m.c.row(i).to_vec()).collect());
    }
    data.meta.insert("config_hash".into(), cfg.hash());
    data.meta.insert("model".into(), model.kind().into());
    let path = cfg.data_path();
    data.write(&path)?;
    Ok(path)
}

fn load_data(cfg: &ExperimentConfig, model: &dyn Ssm) -> Result<Dataset> {
    let path = cfg.data_path();
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} does not exist; run `generate` first",
            path.display()
        )));
    }
    let data = Dataset::read(&path)?;
    if data.obs_dim() != model.obs_dim() || data.len() != cfg.t {
        return Err(Error::Config(format!(
            "dataset is {}x{}, config expects {}x{}",
            data.len(),
            data.obs_dim(),
            cfg.t,
            model.obs_dim()
        )));
    }
    Ok(data)
}

/// Starting parameters: the model's initialization when θ is learned,
/// otherwise the generating θ with a fresh proposal.
pub fn initial_params(cfg: &ExperimentConfig, model: &dyn Ssm) -> Result<ParamSet> {
    let mut p = if cfg.learn_theta {
        model.init_params(cfg.t, &RngStream::new(cfg.seed))
    } else {
        let mut p = cfg.model.generating_params(model, cfg.t, cfg.seed);
        p.overwrite_from(&phi_only(&model.init_params(cfg.t, &RngStream::new(cfg.seed))))?;
        p
    };
    if let Some(ws) = &cfg.warm_start {
        p.overwrite_from(&load_params(ws)?)?;
    }
    Ok(p)
}

fn phi_only(p: &ParamSet) -> ParamSet {
    let mut out = ParamSet::new();
    for e in p.entries().iter().filter(|e| e.name.starts_with("phi.")) {
        out.insert(&e.name, p.get(&e.name).expect("entry exists"), e.trainable);
    }
    out
}

pub struct TrainOutcome {
    pub params_path: PathBuf,
    pub record_path: PathBuf,
    pub record: TrainRecord,
}

/// Trains and writes the learned parameters plus the per-iteration CSV.
/// An empty schedule records a single evaluation at the starting parameters.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let model = cfg.model.build(cfg.seed)?;
    let data = load_data(cfg, model.as_ref())?;
    let mut params = initial_params(cfg, model.as_ref())?;
    let obj = Objective::new(cfg.objective, cfg.n, model.as_ref()).with_theta(cfg.learn_theta);
    let opts = cfg.train_options();
    let record = if opts.total_iterations() == 0 {
        let g = gradient(&obj, &params, &data, RngStream::new(cfg.seed).replicate(0))?;
        TrainRecord {
            rows: vec![TrainRow {
                iter: 0,
                objective: g.value,
                grad_norm: g.norm(),
                grad_var: None,
                wall_ms: 0.0,
            }],
            tail_events: g.tail_events,
        }
    } else {
        train(&obj, &mut params, &data, &opts, cfg.seed)?
    };
    ensure_dir(&cfg.out)?;
    let params_path = cfg.params_path();
    save_params(&params, &params_path)?;
    let record_path = cfg.train_path();
    record.write_csv_tagged(&record_path, Some(&cfg.hash()))?;
    Ok(TrainOutcome {
        params_path,
        record_path,
        record,
    })
}

/// Appends one bound row per particle count (`n_sweep`, or just `n`).
/// Rows are written before the oracle check so a violation is on record.
pub fn cmd_evaluate(cfg: &ExperimentConfig, params_path: &Path, n_samples: usize) -> Result<Vec<ResultsRow>> {
    let model = cfg.model.build(cfg.seed)?;
    let data = load_data(cfg, model.as_ref())?;
    let mut params = initial_params(cfg, model.as_ref())?;
    params.overwrite_from(&load_params(params_path)?)?;
    let kalman = match model.as_lgssm() {
        Some(m) => Some(kalman_loglik(m, &data)?),
        None => None,
    };
    let ns = if cfg.n_sweep.is_empty() {
        vec![cfg.n]
    } else {
        cfg.n_sweep.clone()
    };
    let hash = cfg.hash();
    let mut rows = Vec::new();
    for n in ns {
        let obj = Objective::new(cfg.objective, n, model.as_ref());
        let start = Instant::now();
        let (mean, se) = bound_estimate(&obj, &params, &data, n_samples, RngStream::new(cfg.seed ^ EVAL_SALT))?;
        rows.push(ResultsRow {
            config_hash: hash.clone(),
            objective: cfg.objective.to_string(),
            n,
            mean,
            se,
            kalman,
            wall_ms: if cfg.wall_clock {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
            seed: cfg.seed,
        });
    }
    ensure_dir(&cfg.out)?;
    append_results(&cfg.results_path(), &rows)?;
    for r in &rows {
        if let Some(k) = r.kalman {
            if r.mean > k + 3.0 * r.se {
                return Err(Error::Config(format!(
                    "{} N={} bound {:.4} exceeds log p(y) {:.4} by more than 3 se ({:.4})",
                    r.objective, r.n, r.mean, k, r.se
                )));
            }
        }
    }
    Ok(rows)
}

/// Runs one oracle suite and writes `verify_<suite>.json`.
pub fn cmd_verify(suite: &str, out: &Path) -> Result<verify::Report> {
    let report = verify::run_suite(suite)?;
    ensure_dir(out)?;
    write_text(&out.join(format!("verify_{suite}.json")), &report.to_json())?;
    Ok(report)
}

pub struct BenchSummary {
    pub rows: Vec<BenchRow>,
    pub smc: QuadFit,
    pub mpf: QuadFit,
}

/// Times VSMC against VMPF-BG gradients and fits `c N² + d N + e` to each.
pub fn cmd_bench(cfg: &ExperimentConfig, ns: &[usize], reps: usize) -> Result<BenchSummary> {
    let model = cfg.model.build(cfg.seed)?;
    let params = initial_params(cfg, model.as_ref())?;
    let gen = cfg.model.generating_params(model.as_ref(), cfg.t, cfg.seed);
    let data = generate(model.as_ref(), &gen, cfg.t, cfg.seed)?;
    let kinds = [ObjectiveKind::Vsmc, ObjectiveKind::VmpfBg];
    let rows = run_bench(model.as_ref(), &params, &data, &kinds, ns, reps, cfg.seed)?;
    ensure_dir(&cfg.out)?;
    write_bench(&cfg.out.join("bench.csv"), &rows, &cfg.hash())?;
    Ok(BenchSummary {
        smc: fit_for(&rows, ObjectiveKind::Vsmc)?,
        mpf: fit_for(&rows, ObjectiveKind::VmpfBg)?,
        rows,
    })
}

fn train_files(out: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    if !out.exists() {
        return Ok(files);
    }
    for entry in fs::read_dir(out).map_err(|e| Error::io(out, e))? {
        let path = entry.map_err(|e| Error::io(out, e))?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if let Some(stem) = name.strip_prefix("train_").and_then(|s| s.strip_suffix(".csv")) {
            files.push((stem.to_string(), path.clone()));
        }
    }
    files.sort();
    Ok(files)
}

/// Draws `bounds.svg`, `variance.svg` and `bound_vs_n.svg` from whatever
/// CSVs the output directory holds. Missing inputs give empty axes.
pub fn cmd_plot(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    ensure_dir(&cfg.out)?;
    let model = cfg.model.build(cfg.seed)?;
    let reference = match (model.as_lgssm(), cfg.data_path().exists()) {
        (Some(m), true) => Some(kalman_loglik(m, &Dataset::read(&cfg.data_path())?)?),
        _ => None,
    };
    let hlines: Vec<(String, f64)> = reference.map(|k| ("log p(y)".to_string(), k)).into_iter().collect();
    let mut bounds = PlotSpec {
        title: "bound vs iteration".into(),
        xlabel: "iteration".into(),
        ylabel: "log p̂(y)".into(),
        hlines: hlines.clone(),
        ..Default::default()
    };
    let mut variance = PlotSpec {
        title: "gradient variance".into(),
        xlabel: "iteration".into(),
        ylabel: "mean gradient variance".into(),
        log_y: true,
        ..Default::default()
    };
    for (label, path) in train_files(&cfg.out)? {
        let rec = TrainRecord::read_csv(&path)?;
        let pts: Vec<(f64, f64)> = rec.rows.iter().map(|r| (r.iter as f64, r.objective)).collect();
        bounds.series.push(Series {
            label: label.clone(),
            points: downsample(&pts, 400),
        });
        variance.series.push(Series {
            label,
            points: rec
                .rows
                .iter()
                .filter_map(|r| r.grad_var.map(|v| (r.iter as f64, v)))
                .collect(),
        });
    }
    let mut vs_n = PlotSpec {
        title: "final bound vs N".into(),
        xlabel: "N".into(),
        ylabel: "E[log p̂(y)]".into(),
        hlines,
        ..Default::default()
    };
    if cfg.results_path().exists() {
        let rows = read_results(&cfg.results_path())?;
        let mut kinds: Vec<String> = rows.iter().map(|r| r.objective.clone()).collect();
        kinds.sort();
        kinds.dedup();
        for k in kinds {
            let mut pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.objective == k)
                .map(|r| (r.n as f64, r.mean))
                .collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            vs_n.series.push(Series { label: k, points: pts });
        }
    }
    let mut written = Vec::new();
    for (name, spec) in [
        ("bounds.svg", bounds),
        ("variance.svg", variance),
        ("bound_vs_n.svg", vs_n),
    ] {
        let path = cfg.out.join(name);
        write_text(&path, &spec.render())?;
        written.push(path);
    }
    Ok(written)
}
