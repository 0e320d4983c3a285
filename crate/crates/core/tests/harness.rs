use std::fs;
use std::path::Path;
use std::process::Command;

use vmpf::harness::{cmd_evaluate, cmd_generate, cmd_plot, cmd_train, read_results, ExperimentConfig};
use vmpf::models::Dataset;
use vmpf::objectives::TrainRecord;

fn config(dir: &Path, body: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(body).unwrap();
    c.out = dir.to_path_buf();
    c
}

const SMALL: &str = r#"
objective = "vsmc"
n = 4
t = 6
seed = 3
schedule = [[0.01, 40]]
eval_samples = 50
wall_clock = false

[model]
kind = "lgssm"
dx = 3
dy = 3
c_mode = "dense"
"#;

#[test]
fn generate_is_idempotent_per_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = cmd_generate(&config(a.path(), SMALL)).unwrap();
    let pb = cmd_generate(&config(b.path(), SMALL)).unwrap();
    assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap());
    let side = |p: &Path| fs::read(Dataset::sidecar_path(p)).unwrap();
    assert_eq!(side(&pa), side(&pb));
    let d = Dataset::read(&pa).unwrap();
    let c = d.c.expect("dense C recorded");
    assert_eq!((c.len(), c[0].len()), (3, 3));
}

#[test]
fn sparse_25d_dataset_shape() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL
        .replace("t = 6", "t = 10")
        .replace("dx = 3", "dx = 25")
        .replace("dy = 3", "dy = 25")
        .replace("\"dense\"", "\"sparse\"");
    let d = Dataset::read(&cmd_generate(&config(dir.path(), &body)).unwrap()).unwrap();
    assert_eq!(d.len(), 10);
    assert!(d.obs.iter().all(|y| y.len() == 25));
    assert!(d.c.is_none());
}

#[test]
fn train_requires_data() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_train(&config(dir.path(), SMALL)).err().unwrap();
    assert!(err.to_string().contains("generate"), "{err}");
}

#[test]
fn empty_schedule_records_one_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &SMALL.replace("schedule = [[0.01, 40]]", "schedule = []"));
    cmd_generate(&cfg).unwrap();
    let out = cmd_train(&cfg).unwrap();
    let rec = TrainRecord::read_csv(&out.record_path).unwrap();
    assert_eq!(rec.rows.len(), 1);
    assert_eq!(rec.rows[0].iter, 0);
}

#[test]
fn pipeline_is_deterministic_and_tagged() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), SMALL);
        cmd_generate(&cfg).unwrap();
        let out = cmd_train(&cfg).unwrap();
        cmd_evaluate(&cfg, &out.params_path, 50).unwrap();
        let files = [
            cfg.data_path(),
            out.record_path.clone(),
            cfg.results_path(),
            out.params_path.clone(),
        ];
        let bytes: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
        (bytes, cfg.hash())
    };
    let (a, hash) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    for csv in [&a[1], &a[2]] {
        let text = String::from_utf8(csv.clone()).unwrap();
        for line in text.lines().skip(1) {
            assert!(line.contains(&hash), "untagged row {line}");
        }
    }
}

#[test]
fn evaluate_sweeps_and_fills_kalman_only_for_lgssm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &SMALL.replace("eval_samples = 50", "eval_samples = 50\nn_sweep = [2, 4, 8, 16]"),
    );
    cmd_generate(&cfg).unwrap();
    let out = cmd_train(&cfg).unwrap();
    let rows = cmd_evaluate(&cfg, &out.params_path, 50).unwrap();
    assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![2, 4, 8, 16]);
    assert!(rows
        .iter()
        .all(|r| r.kalman.is_some() && r.mean <= r.kalman.unwrap() + 3.0 * r.se));

    let sv_dir = tempfile::tempdir().unwrap();
    let sv = config(
        sv_dir.path(),
        "objective = \"vmpf-bg\"\nn = 3\nt = 8\nschedule = [[0.01, 5]]\n[model]\nkind = \"sv\"\nd = 2\nb_mode = \"diagonal\"\n",
    );
    cmd_generate(&sv).unwrap();
    let out = cmd_train(&sv).unwrap();
    let rows = cmd_evaluate(&sv, &out.params_path, 10).unwrap();
    assert!(rows[0].kalman.is_none() && rows[0].mean.is_finite());
    assert_eq!(read_results(&sv.results_path()).unwrap().len(), 1);
}

#[test]
fn plots_render_with_and_without_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    for p in cmd_plot(&cfg).unwrap() {
        let svg = fs::read_to_string(p).unwrap();
        assert!(svg.starts_with("<svg") && !svg.contains("<polyline"));
    }
    cmd_generate(&cfg).unwrap();
    let out = cmd_train(&cfg).unwrap();
    cmd_evaluate(&cfg, &out.params_path, 50).unwrap();
    let paths = cmd_plot(&cfg).unwrap();
    let bounds = fs::read_to_string(&paths[0]).unwrap();
    assert!(bounds.contains("stroke-dasharray") && bounds.contains("log p(y)"));
    assert!(bounds.contains("<polyline"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_vmpf");
    let dir = tempfile::tempdir().unwrap();
    let ok = Command::new(bin)
        .args(["verify", "identity", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).lines().all(|l| l.contains("PASS")));
    assert!(dir.path().join("verify_identity.json").exists());

    let bad = Command::new(bin).args(["verify", "nonsense"]).output().unwrap();
    assert!(!bad.status.success());

    let cfg_path = dir.path().join("typo.toml");
    fs::write(&cfg_path, SMALL.replace("n = 4", "n = 4\nparticles = 8")).unwrap();
    let typo = Command::new(bin)
        .arg("generate")
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(!typo.status.success());
    assert!(String::from_utf8_lossy(&typo.stderr).contains("particles"));
}
