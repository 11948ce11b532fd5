//! Acceptance criteria. Each test prints one PASS/FAIL line to stderr
//! (uncaptured) and then asserts. The heavy tests share a lock so wall-clock
//! limits are measured without competing tests.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use optbench::bench::config::{DatasetSpec, RunConfig};
use optbench::bench::findings::qualitative_findings_check;
use optbench::bench::profile::{default_tau_grid, success_rate_profile, thresholds, Outcome};
use optbench::bench::protocol::{grid_search, multistart, preset_grid, run_all};
use optbench::bench::{run_training, OptimizerSpec, ProblemSpec};
use optbench::data::{encode_cifar, read_cifar_binary, read_ppm_directory, CifarVariant, SyntheticSpec};
use optbench::optim::{make_preset, Algorithm, Preset};
use optbench::verify::{gradient_suite, oracle_suite};
use optbench::{Error, InitializerKind, Rng};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n} [{verdict}] {name}: {detail}");
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn config(algorithm: Algorithm, preset: Preset, epochs: usize) -> RunConfig {
    RunConfig {
        optimizer: OptimizerSpec::preset(algorithm, preset),
        epochs: Some(epochs),
        ..RunConfig::default()
    }
}

/// Baseline-mini on a 64-image synthetic set.
fn small_problem() -> ProblemSpec {
    ProblemSpec {
        dataset: DatasetSpec {
            synthetic: SyntheticSpec {
                per_class: 8,
                ..SyntheticSpec::default()
            },
            ..DatasetSpec::default()
        },
        ..ProblemSpec::default()
    }
}

#[test]
fn criterion_1_optimizer_oracles() {
    let _g = serial();
    let start = Instant::now();
    let reports = oracle_suite(1000, 3, 20240611).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_error).fold(0.0, f64::max);
    let bad: Vec<String> = reports
        .iter()
        .filter(|r| r.max_error > 1e-12)
        .map(|r| format!("{} {:.2e}", r.algorithm, r.max_error))
        .collect();
    let pass = reports.len() == 9 && bad.is_empty() && secs < 10.0;
    report(
        1,
        "optimizer oracle suite",
        pass,
        &format!("9 algorithms x 1000 problems x 3 steps, worst error {worst:.2e}, {secs:.2}s {bad:?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_gradient_checks() {
    let _g = serial();
    let start = Instant::now();
    let checks = gradient_suite(24, 99).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    let largest = checks.iter().map(|c| c.params).max().unwrap_or(0);
    let pass = checks.len() >= 20 && largest <= 5000 && worst <= 1e-5 && secs < 60.0;
    report(
        2,
        "gradient checks",
        pass,
        &format!(
            "{} networks, at most {largest} parameters, worst relative error {worst:.2e}, {secs:.1}s",
            checks.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_convergence_reproduction() {
    let _g = serial();
    let start = Instant::now();
    let mut configs: Vec<RunConfig> = ["adam", "adamax", "nadam", "rmsprop", "sgd"]
        .iter()
        .map(|n| config(Algorithm::parse(n).unwrap(), Preset::Tuned, 100))
        .collect();
    configs.extend(
        ["adadelta", "adagrad", "ftrl"]
            .iter()
            .map(|n| config(Algorithm::parse(n).unwrap(), Preset::Default, 100)),
    );
    let records = run_all(&configs, workers()).unwrap();
    let secs = start.elapsed().as_secs_f64();

    let mut lines = Vec::new();
    let mut reached = true;
    for r in &records {
        let best = r.losses().into_iter().fold(f64::INFINITY, f64::min);
        let good = r.preset == "tuned";
        if good {
            reached &= best < 0.05;
        }
        lines.push(format!(
            "{} final {:.4} min {:.4} decrease {:.3}{}",
            r.solver,
            r.profile_loss(),
            best,
            r.relative_decrease(),
            if r.failed() { " (failed)" } else { "" }
        ));
    }
    let outcomes: Vec<Outcome> = records.iter().map(Outcome::from).collect();
    let findings = qualitative_findings_check(&outcomes);
    let failed: Vec<String> = findings.failures().map(|a| format!("{} ({})", a.name, a.detail)).collect();
    let pass = reached && findings.all_passed() && secs < 15.0 * 60.0;
    report(
        3,
        "convergence reproduction",
        pass,
        &format!(
            "{secs:.0}s; good solvers below 0.05: {reached}; {}; failed checks: {failed:?}",
            lines.join("; ")
        ),
    );
    assert!(pass, "{findings}");
}

#[test]
fn criterion_4_tuning_speed() {
    let _g = serial();
    let records = run_all(
        &[
            config(Algorithm::Adam, Preset::Tuned, 100),
            config(Algorithm::Adam, Preset::Default, 100),
        ],
        workers(),
    )
    .unwrap();
    let tuned = records[0].epochs_to_reach(0.1);
    let default = records[1].epochs_to_reach(0.1);
    let pass = match (tuned, default) {
        (Some(t), Some(d)) => t < d,
        (Some(_), None) => true,
        _ => false,
    };
    report(
        4,
        "tuning speed",
        pass,
        &format!("epochs to loss 0.1: tuned {tuned:?}, default {default:?}"),
    );
    assert!(pass);
}

/// `f(w) = ½ wᵀ diag(2, 10) w` from `w0`; iterations used and final `‖∇f‖`.
fn diagonal_quadratic_iterations(w0: [f64; 2]) -> (usize, f64) {
    let a = [2.0, 10.0];
    let grad = |x: &[f64]| vec![a[0] * x[0], a[1] * x[1]];
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut f = |x: &[f64]| Ok((0.5 * (a[0] * x[0] * x[0] + a[1] * x[1] * x[1]), grad(x)));
    let mut opt = make_preset::<f64>("lbfgs", "default", 2).unwrap();
    let mut w = w0.to_vec();
    let mut iters = 0;
    while iters < 10 && norm(&grad(&w)) > 1e-8 {
        opt.step(&mut w, &mut f).unwrap();
        iters += 1;
    }
    (iters, norm(&grad(&w)))
}

#[test]
fn criterion_5_lbfgs() {
    let _g = serial();
    let mut rng = Rng::new(5);
    let quad: Vec<(usize, f64)> = (0..20)
        .map(|_| diagonal_quadratic_iterations([rng.uniform_range(-3.0, 3.0), rng.uniform_range(-3.0, 3.0)]))
        .collect();
    let quad_ok = quad.iter().all(|&(_, g)| g <= 1e-8);
    let max_iters = quad.iter().map(|q| q.0).max().unwrap();

    let run = run_training(&config(Algorithm::Lbfgs, Preset::Default, 50)).unwrap();
    let mut trace = vec![run.initial_loss];
    trace.extend(run.losses());
    let monotone = trace.windows(2).all(|w| w[1] <= w[0]);
    let long_enough = !run.failed() && run.trace.len() >= 50;

    let template = config(Algorithm::Lbfgs, Preset::Default, 10);
    let (_, summary) = multistart(
        &template,
        &[0, 100],
        &[InitializerKind::GlorotUniform, InitializerKind::LecunNormal],
        workers(),
    )
    .unwrap();
    let spread_ok = summary.runs == 4 && summary.loss_spread > 0.0;

    let pass = quad_ok && monotone && long_enough && spread_ok;
    report(
        5,
        "L-BFGS",
        pass,
        &format!(
            "diag(2, 10) quadratic from 20 starts, gradient below 1e-8 within {max_iters} iterations: {quad_ok}; smooth baseline-mini {} iterations, \
             loss {:.4} -> {:.4}, monotone: {monotone}; 4-start spread {:.4e}",
            run.trace.len(),
            run.initial_loss,
            run.final_loss,
            summary.loss_spread
        ),
    );
    assert!(pass);
}

/// Random record sets on dyadic values so that power-of-two scalings and
/// integer shifts are exact.
fn record_sets() -> impl Strategy<Value = Vec<Outcome>> {
    (1usize..6, 1usize..6).prop_flat_map(|(problems, solvers)| {
        (
            prop::collection::vec(0i64..800, problems),
            prop::collection::vec(0i64..800, problems * solvers),
        )
            .prop_map(move |(starts, finals)| {
                let mut out = Vec::new();
                for p in 0..problems {
                    for s in 0..solvers {
                        out.push(Outcome {
                            problem: format!("p{p}"),
                            solver: format!("s{s}"),
                            initial_loss: starts[p] as f64 / 8.0,
                            final_loss: finals[p * solvers + s] as f64 / 8.0,
                        });
                    }
                }
                out
            })
    })
}

fn profile_properties(cases: u32) -> Result<(), String> {
    let taus = {
        let mut t = vec![0.0];
        t.extend(default_tau_grid());
        t
    };
    let mut runner = TestRunner::new(Config {
        cases,
        ..Config::default()
    });
    let strategy = (record_sets(), -3i32..=3, -50i64..=50);
    runner
        .run(&strategy, |(set, scale_exp, shift)| {
            let curves = success_rate_profile(&set, &taus).unwrap();
            for c in &curves {
                prop_assert!(c.points.iter().all(|&(_, s)| (0.0..=1.0).contains(&s)));
                prop_assert!(c.points.windows(2).all(|w| w[0].1 <= w[1].1));
            }
            let problems: BTreeSet<&str> = set.iter().map(|o| o.problem.as_str()).collect();
            for p in &problems {
                let rows: Vec<&Outcome> = set.iter().filter(|o| o.problem == *p).collect();
                let best = rows.iter().map(|o| o.final_loss).fold(f64::INFINITY, f64::min);
                let winners: Vec<&str> = rows.iter().filter(|o| o.final_loss == best).map(|o| o.solver.as_str()).collect();
                let th = thresholds(&set).unwrap();
                for w in winners {
                    let row = &th[w];
                    prop_assert!(row.iter().any(|(q, t)| q == p && *t == Some(0.0)));
                }
            }
            let a = 2f64.powi(scale_exp);
            let b = shift as f64;
            let moved: Vec<Outcome> = set
                .iter()
                .map(|o| Outcome {
                    initial_loss: a * o.initial_loss + b,
                    final_loss: a * o.final_loss + b,
                    ..o.clone()
                })
                .collect();
            prop_assert_eq!(success_rate_profile(&moved, &taus).unwrap(), curves);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

#[test]
fn criterion_6_performance_profiles() {
    let _g = serial();
    let o = |p: &str, s: &str, f: f64| Outcome {
        problem: p.into(),
        solver: s.into(),
        initial_loss: 1.0,
        final_loss: f,
    };
    let set = [o("p1", "A", 0.1), o("p2", "A", 0.5), o("p1", "B", 0.2), o("p2", "B", 0.4)];
    let th = thresholds(&set).unwrap();
    let t_a = th["A"].iter().filter_map(|x| x.1).fold(0.0, f64::max);
    let t_b = th["B"].iter().filter_map(|x| x.1).fold(0.0, f64::max);
    let curves = success_rate_profile(&set, &[0.0]).unwrap();
    let at_zero = curves.iter().all(|c| c.points[0].1 == 0.5);
    let brute = (t_a - 0.1667).abs() < 1e-4
        && (t_a - 0.1 / 0.6).abs() <= 1e-12
        && (t_b - 0.1 / 0.9).abs() <= 1e-12
        && at_zero;
    let props = profile_properties(1000);
    let pass = brute && props.is_ok();
    report(
        6,
        "performance profiles",
        pass,
        &format!(
            "thresholds A {t_a:.4}, B {t_b:.4}, sigma(0) = 0.5 for both: {at_zero}; 1000 random record sets: {}",
            props.as_ref().map_or_else(|e| e.clone(), |_| "monotone, bounded, argmin covered, affine invariant".into())
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_data_ingestion() {
    let _g = serial();
    let dir = fixtures();
    let mut notes = Vec::new();
    let mut ok = true;
    for (file, variant) in [
        ("cifar10_sample.bin", CifarVariant::Cifar10),
        ("cifar100_sample.bin", CifarVariant::Cifar100),
    ] {
        let path = dir.join(file);
        let bytes = std::fs::read(&path).unwrap();
        let ds = read_cifar_binary(&[&path], variant).unwrap();
        let same = encode_cifar(&ds, variant).unwrap() == bytes;
        ok &= same && ds.len() == 3;
        notes.push(format!("{file} round-trip {same}"));
    }

    let ppm = read_ppm_directory(&dir.join("ppm")).unwrap();
    let v = |b: u8| b as f64 / 255.0;
    // a.ppm pixels red, green, blue, white as R, G, B planes
    let a = [255, 0, 0, 255, 0, 255, 0, 255, 0, 0, 255, 255].map(v);
    let b = [255, 255, 0, 0, 255, 0, 255, 0, 255, 0, 0, 255].map(v);
    let c = [10, 13, 0, 1, 32, 12, 128, 2, 9, 11, 255, 3].map(v);
    let exact = ppm.images.row(0) == a && ppm.images.row(1) == b && ppm.images.row(2) == c && ppm.class_indices() == vec![0, 0, 1];
    ok &= exact;
    notes.push(format!("PPM fixtures exact: {exact}"));

    let bad = dir.join("malformed");
    let mut errors = vec![
        matches!(
            read_cifar_binary(&[bad.join("cifar10_truncated.bin")], CifarVariant::Cifar10),
            Err(Error::TruncatedFile { .. })
        ),
        matches!(
            read_cifar_binary(&[bad.join("cifar10_bad_label.bin")], CifarVariant::Cifar10),
            Err(Error::LabelOutOfRange { label: 12, classes: 10 })
        ),
        matches!(read_ppm_directory(&bad.join("mixed")), Err(Error::DimensionMismatch { .. })),
    ];
    for f in ["ascii_p3.ppm", "maxval.ppm", "short_raster.ppm", "missing_height.ppm"] {
        errors.push(matches!(optbench::data::read_ppm(&bad.join(f)), Err(Error::MalformedHeader { .. })));
    }
    let all_errors = errors.iter().all(|&e| e);
    ok &= all_errors;
    notes.push(format!("{} of {} malformed fixtures rejected as documented", errors.iter().filter(|&&e| e).count(), errors.len()));
    report(7, "data ingestion", ok, &notes.join("; "));
    assert!(ok);
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["optbench"];
    argv.extend_from_slice(args);
    let code = optbench::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned() + &String::from_utf8_lossy(&err))
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let run = serde_json::json!({
        "run": {
            "problem": {"dataset": {"synthetic": {"per_class": 8}}},
            "optimizer": {"name": "nadam", "preset": "tuned"},
            "epochs": 3,
            "batch_size": 16,
            "augmentation": {"flip_horizontal": 0.5, "noise_std": 0.01},
            "eval_every": 1
        },
        "axes": [{"key": "eta", "values": [0.01, 0.001]}, {"key": "beta1", "values": [0.6, 0.9]}]
    });
    let grid_cfg = tmp.path().join("grid.json");
    std::fs::write(&grid_cfg, run.to_string()).unwrap();
    let train_cfg = tmp.path().join("train.json");
    std::fs::write(&train_cfg, run["run"].to_string()).unwrap();
    let ms = serde_json::json!({"run": run["run"], "seeds": [1, 2], "initializers": ["glorot_uniform", "lecun_normal"]});
    let ms_cfg = tmp.path().join("multistart.json");
    std::fs::write(&ms_cfg, ms.to_string()).unwrap();

    let replay = |out: &Path| {
        let o = out.to_str().unwrap();
        let mut codes = vec![
            cli(&["train", "--config", train_cfg.to_str().unwrap(), "--out", o, "--workers", "1"]).0,
            cli(&["grid-search", "--config", grid_cfg.to_str().unwrap(), "--out", o, "--workers", "1"]).0,
            cli(&["multistart", "--config", ms_cfg.to_str().unwrap(), "--out", o, "--workers", "1"]).0,
        ];
        codes.push(cli(&["report", "--out", o]).0);
        codes
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let codes_a = replay(&a);
    let codes_b = replay(&b);
    let files_a = tree_bytes(&a);
    let files_b = tree_bytes(&b);
    let identical = files_a == files_b;

    // replay one emitted config by its hash
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let (hash, entry) = manifest["runs"].as_object().unwrap().iter().next().unwrap();
    let replay_cfg = tmp.path().join("replay.json");
    std::fs::write(&replay_cfg, entry["config"].to_string()).unwrap();
    let c = tmp.path().join("c");
    let code_c = cli(&["train", "--config", replay_cfg.to_str().unwrap(), "--out", c.to_str().unwrap()]).0;
    let replayed = std::fs::read(c.join("runs").join(format!("{hash}.json"))).ok()
        == std::fs::read(a.join("runs").join(format!("{hash}.json"))).ok();

    let pass = identical && replayed && codes_a.iter().chain(&codes_b).all(|&c| c == 0) && code_c == 0;
    report(
        8,
        "determinism",
        pass,
        &format!(
            "{} files byte-identical across two replays: {identical}; config {hash} replayed from the manifest: {replayed}",
            files_a.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_grid_cardinality() {
    let _g = serial();
    let start = Instant::now();
    let mut counts = Vec::new();
    let mut ok = true;
    for (algorithm, want) in [(Algorithm::Adam, 162), (Algorithm::Sgd, 24)] {
        let template = RunConfig {
            problem: small_problem(),
            optimizer: OptimizerSpec::preset(algorithm, Preset::Default),
            epochs: Some(5),
            ..RunConfig::default()
        };
        let result = grid_search(&template, &preset_grid(algorithm).unwrap(), workers()).unwrap();
        let hashes: BTreeSet<&str> = result.records.iter().map(|r| r.hash.as_str()).collect();
        let complete = result.records.iter().all(|r| r.failed() || r.trace.len() == 5);
        ok &= result.records.len() == want && hashes.len() == want && complete;
        counts.push(format!("{algorithm} {} runs, {} distinct", result.records.len(), hashes.len()));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(30 * 60);
    report(
        9,
        "grid cardinality",
        ok,
        &format!("{}; {:.0}s", counts.join(", "), elapsed.as_secs_f64()),
    );
    assert!(ok);
}

