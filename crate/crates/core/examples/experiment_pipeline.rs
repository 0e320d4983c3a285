//! The command-line workflow from code: generate, train, evaluate and plot one
//! config in a scratch directory.
//!
//! `cargo run --release --example experiment_pipeline -- [config.toml] [iters]`

use std::path::PathBuf;

use vmpf::harness::{cmd_evaluate, cmd_generate, cmd_plot, cmd_train, ExperimentConfig};

fn main() -> vmpf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let path = args
        .first()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/lgssm_sparse.toml"));
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let mut cfg = ExperimentConfig::load(&path)?;
    cfg.schedule = vec![(0.01, iters), (0.001, iters)];
    cfg.out = std::env::temp_dir().join(format!("vmpf-pipeline-{}", cfg.hash()));
    println!("config hash {}  output {}", cfg.hash(), cfg.out.display());
    println!("data      {}", cmd_generate(&cfg)?.display());
    let run = cmd_train(&cfg)?;
    println!("params    {}", run.params_path.display());
    for row in cmd_evaluate(&cfg, &run.params_path, 300)? {
        let k = row.kalman.map_or(String::new(), |k| format!("  log p(y) {k:.3}"));
        println!(
            "{} N={:<3} bound {:.3} ± {:.3}{k}",
            row.objective, row.n, row.mean, row.se
        );
    }
    for svg in cmd_plot(&cfg)? {
        println!("plot      {}", svg.display());
    }
    Ok(())
}
