use std::path::Path;
use std::process::{Command, Output};

fn optbench(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optbench"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OPTBENCH_OUT")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned() + &String::from_utf8_lossy(&o.stderr)
}

const TINY: &str = r#"{"problem": {"dataset": {"synthetic": {"per_class": 4}}}, "epochs": 1, "batch_size": 8}"#;

#[test]
fn help_lists_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = optbench(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let t = text(&o);
    for cmd in ["train", "grid-search", "multistart", "profiles", "report", "verify"] {
        assert!(t.contains(cmd), "{cmd} missing from help:\n{t}");
    }
    assert!(t.contains("OPTBENCH_OUT"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();
    for args in [
        vec!["train"],
        vec!["train", "--config", c, "--bogus"],
        vec!["train", "--config", c, "--set", "no-equals-sign"],
        vec!["train", "--config", c, "--set", "optimizer.eta=-1"],
        vec!["train", "--config", c, "--set", "optimizer.gamma=1"],
        vec!["train", "--config", c, "--set", "optimizer.name=bogus"],
        vec!["frobnicate"],
    ] {
        let o = optbench(&args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", text(&o));
    }
}

#[test]
fn parse_errors_report_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"epochs\": 3,\n  oops\n}").unwrap();
    let o = optbench(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("line 3"), "{}", text(&o));
}

#[test]
fn train_writes_record_index_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");
    let args = ["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "7"];
    let o = optbench(&args, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let runs: Vec<_> = std::fs::read_dir(out.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let index = std::fs::read_to_string(out.join("index.csv")).unwrap();
    assert_eq!(index.lines().count(), 2);
    assert!(index.lines().nth(1).unwrap().contains(",7,"));

    // rerunning the same config leaves the index unchanged
    let first = std::fs::read(out.join("runs").join(runs[0].as_ref().unwrap().file_name())).unwrap();
    assert_eq!(optbench(&args, dir.path()).status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(out.join("index.csv")).unwrap(), index);
    let second = std::fs::read(out.join("runs").join(runs[0].as_ref().unwrap().file_name())).unwrap();
    assert_eq!(first, second);
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["runs"].as_object().unwrap().len(), 1);
}

#[test]
fn output_directory_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, TINY).unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_optbench"))
        .args(["train", "--config", cfg.to_str().unwrap()])
        .current_dir(dir.path())
        .env("OPTBENCH_OUT", &target)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(target.join("index.csv").exists());
}

#[test]
fn diverging_run_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let diverge = r#"{"problem": {"dataset": {"synthetic": {"per_class": 4}}}, "epochs": 5, "batch_size": 8,
                      "optimizer": {"name": "sgd", "eta": 1e6, "beta": 0.9}}"#;
    std::fs::write(&cfg, diverge).unwrap();
    let o = optbench(&["train", "--config", cfg.to_str().unwrap(), "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("FAILED"));
}

#[test]
fn profiles_from_saved_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    for (name, solver) in [("a.json", "adam"), ("b.json", "rmsprop")] {
        let cfg = dir.path().join(name);
        let body = TINY.replacen('{', &format!("{{\"optimizer\": {{\"name\": \"{solver}\"}}, "), 1);
        std::fs::write(&cfg, body).unwrap();
        let r = optbench(&["train", "--config", cfg.to_str().unwrap(), "--out", o], dir.path());
        assert_eq!(r.status.code(), Some(0), "{}", text(&r));
    }
    let r = optbench(&["profiles", "--out", o, "--points", "5"], dir.path());
    assert_eq!(r.status.code(), Some(0), "{}", text(&r));
    let csv = std::fs::read_to_string(out.join("profiles.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("solver,tau,sigma"));
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
    // one problem: the better solver is at sigma 1 from tau = 1e-4 on
    assert!(csv.lines().skip(1).any(|l| l.ends_with(",0.0001,1")));
}

#[test]
fn verify_runs_the_oracles() {
    let dir = tempfile::tempdir().unwrap();
    let o = optbench(&["verify", "--problems", "20", "--instances", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let t = text(&o);
    assert_eq!(t.lines().filter(|l| l.starts_with("PASS")).count(), 10);
}

#[test]
fn multistart_rejects_duplicate_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ms.json");
    std::fs::write(&cfg, format!(r#"{{"run": {TINY}, "seeds": [1, 2, 1]}}"#)).unwrap();
    let o = optbench(&["multistart", "--config", cfg.to_str().unwrap(), "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("duplicate seed 1"));
}
