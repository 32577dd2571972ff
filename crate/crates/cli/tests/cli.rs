use std::path::Path;
use std::process::{Command, Output};

use mampc_cli::artifacts::{read_metrics, Dataset, ModelFile};
use mampc_core::ClosedLoopLog;

fn mampc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mampc")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("input.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SHORT: &str = "run.steps = 60\n";

#[test]
fn tank_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), SHORT);

    let o = mampc(&["simulate", "--config", &cfg, "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = Dataset::read(&out.join("dataset.csv")).unwrap();
    assert!(data.u.iter().all(|v| *v == 37.5 || *v == 62.5));
    assert!(data.u.iter().any(|v| *v == 37.5) && data.u.iter().any(|v| *v == 62.5));
    assert!(out.join("config.toml").exists());

    let o = mampc(&["identify", "--config", &cfg, "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = ModelFile::read(&out.join("model.csv")).unwrap();
    assert_eq!(model.model.states(), 4);

    for c in ["mpc", "mampc"] {
        let o = mampc(&["run", "--config", &cfg, "--out", path(&out), "--controller", c]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let table = read_metrics(&out.join("metrics.csv")).unwrap();
    let labels: Vec<&str> = table[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels, ["mpc", "mampc_ns1"]);

    let log = ClosedLoopLog::read_csv(std::io::BufReader::new(std::fs::File::open(out.join("mampc_ns1/log.csv")).unwrap())).unwrap();
    assert_eq!(log.len(), 60);
    let tags: Vec<String> = log.rows.iter().map(|r| r.tag.to_string()).collect();
    assert!(tags[..15].iter().all(|t| t == "mpc"));
    assert!(tags[15..].iter().all(|t| t == "mampc"));
    for f in ["inputs.svg", "outputs.svg", "config.toml"] {
        assert!(out.join("mampc_ns1").join(f).exists(), "{f}");
    }

    let o = mampc(&[
        "compare",
        out.join("mpc/log.csv").to_str().unwrap(),
        out.join("mampc_ns1/log.csv").to_str().unwrap(),
        "--drop",
        "5",
        "--threshold",
        "0.5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("mpc") && text.contains("mampc_ns1") && text.contains("drop 5"));
}

#[test]
fn same_seed_gives_identical_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ident.samples = 200\nrun.seed = 7\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(mampc(&["simulate", "--config", &cfg, "--out", path(&a)]).status.success());
    assert!(mampc(&["simulate", "--config", &cfg, "--out", path(&b)]).status.success());
    assert_eq!(std::fs::read(a.join("dataset.csv")).unwrap(), std::fs::read(b.join("dataset.csv")).unwrap());
    assert_eq!(std::fs::read(a.join("config.toml")).unwrap(), std::fs::read(b.join("config.toml")).unwrap());

    let other = write_config(dir.path(), "ident.samples = 200\nrun.seed = 8\n");
    let c = dir.path().join("c");
    assert!(mampc(&["simulate", "--config", &other, "--out", path(&c)]).status.success());
    assert_ne!(std::fs::read(a.join("dataset.csv")).unwrap(), std::fs::read(c.join("dataset.csv")).unwrap());
}

#[test]
fn config_problems_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for bad in ["horizon.typo = 3\n", "ident.samples = 0\n", "horizon.n_c = 50\n", "plant.kind = 3\n"] {
        let cfg = write_config(dir.path(), bad);
        let o = mampc(&["simulate", "--config", &cfg, "--out", path(&out)]);
        assert_eq!(o.status.code(), Some(1), "{bad}: {}", stderr(&o));
        assert!(stderr(&o).contains("configuration error"), "{}", stderr(&o));
    }
    let o = mampc(&["simulate", "--config", path(&dir.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = mampc(&["identify", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no dataset"), "{}", stderr(&o));
    let o = mampc(&["run", "--out", path(dir.path()), "--controller", "mpc"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no model"), "{}", stderr(&o));
}

#[test]
fn controller_failure_exits_with_two_and_keeps_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "ident.samples = 400\nrun.steps = 40\n");
    assert!(mampc(&["simulate", "--config", &cfg, "--out", path(&out)]).status.success());
    assert!(mampc(&["identify", "--config", &cfg, "--out", path(&out)]).status.success());
    // output floor far above anything the valves can reach
    let tight = write_config(dir.path(), "ident.samples = 400\nrun.steps = 40\nhorizon.y_min = [500.0, 500.0]\nhorizon.y_max = [600.0, 600.0]\n");
    let o = mampc(&["run", "--config", &tight, "--out", path(&out), "--controller", "mpc"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("step 0"), "{}", stderr(&o));
    assert!(out.join("mpc/log.csv").exists());
}

#[test]
fn config_command_prints_resolved_defaults() {
    let o = mampc(&["config", "--plant", "sofc"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("plant.kind = \"sofc\""));
    assert!(text.contains("horizon.n_p = 10"));
}
