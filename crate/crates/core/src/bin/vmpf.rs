use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vmpf::harness::{self, verify, ExperimentConfig};

// With the system allocator every large tape tensor is mmapped and handed back
// on free, so each big evaluation page-faults its memory in again.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "vmpf", version, about = "Variational marginal particle filter experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a synthetic dataset.
    Generate,
    /// Train the configured objective.
    Train {
        /// Start from a saved parameters file.
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Estimate the bound at trained parameters and append to results.csv.
    Evaluate {
        /// Parameters file; defaults to the one `train` writes.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Run an oracle suite: unbiasedness, identity, gradients, collapse, bounds or all.
    Verify { suite: String },
    /// Time VSMC against VMPF-BG over particle counts.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512")]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Render SVG plots from the CSVs in the output directory.
    Plot,
}

fn load(cli: &Cli) -> vmpf::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| vmpf::Error::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> vmpf::Result<bool> {
    match &cli.cmd {
        Cmd::Generate => {
            let cfg = load(cli)?;
            println!("{}", harness::cmd_generate(&cfg)?.display());
        }
        Cmd::Train { warm_start } => {
            let mut cfg = load(cli)?;
            if warm_start.is_some() {
                cfg.warm_start = warm_start.clone();
            }
            let out = harness::cmd_train(&cfg)?;
            if let Some(last) = out.record.rows.last() {
                println!("final objective {:.4} (iteration {})", last.objective, last.iter);
            }
            if out.record.tail_events > 0 {
                println!("implicit-gradient tail events: {}", out.record.tail_events);
            }
            println!("{}\n{}", out.params_path.display(), out.record_path.display());
        }
        Cmd::Evaluate { params, samples } => {
            let cfg = load(cli)?;
            let path = params.clone().unwrap_or_else(|| cfg.params_path());
            let rows = harness::cmd_evaluate(&cfg, &path, samples.unwrap_or(cfg.eval_samples))?;
            for r in rows {
                let k = r.kalman.map(|k| format!("  log p(y) {k:.4}")).unwrap_or_default();
                println!("{} N={}: {:.4} ± {:.4}{k}", r.objective, r.n, r.mean, r.se);
            }
        }
        Cmd::Verify { suite } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let names: Vec<&str> = if suite == "all" {
                verify::SUITES.to_vec()
            } else {
                vec![suite.as_str()]
            };
            let mut ok = true;
            for name in names {
                let report = harness::cmd_verify(name, &out)?;
                for c in &report.checks {
                    println!("[{name}] {c}");
                }
                ok &= report.passed();
            }
            return Ok(ok);
        }
        Cmd::Bench { ns, reps } => {
            let cfg = load(cli)?;
            let s = harness::cmd_bench(&cfg, ns, *reps)?;
            for r in &s.rows {
                println!("{:>8} N={:<4} {:.4} ms/step", r.objective, r.n, r.ms_per_step);
            }
            for (label, f) in [("vsmc", s.smc), ("vmpf-bg", s.mpf)] {
                let cross = f
                    .crossover()
                    .map(|c| format!("{c:.0}"))
                    .unwrap_or_else(|| "none".into());
                println!(
                    "{label}: c={:.3e} (t={:.1}) d={:.3e} e={:.3e}  quadratic share at N=512 {:.3}  crossover N {cross}",
                    f.c,
                    f.t_c(),
                    f.d,
                    f.e,
                    f.quadratic_share(512.0)
                );
            }
        }
        Cmd::Plot => {
            let cfg = load(cli)?;
            for p in harness::cmd_plot(&cfg)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
