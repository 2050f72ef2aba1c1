use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use morel::evaluation::RobustnessReport;

const TINY: [&str; 12] = [
    "--dataset",
    "synthetic",
    "--set",
    "data.synthetic.per_class=6",
    "--set",
    "data.synthetic.test_per_class=3",
    "--set",
    "model.width=4",
    "--set",
    "train.augment=false",
    "--set",
    "embedding.dim=16",
];

fn morel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morel"))
        .args(args)
        .output()
        .expect("spawn morel")
}

fn train(dir: &Path, preset: &str, seed: &str) -> Output {
    let out = dir.to_str().unwrap();
    let mut args = vec!["train", "--preset", preset, "--epochs", "1", "--seed", seed, "--out", out];
    args.extend(TINY);
    args.extend(["--set", "train_attack.iterations=2", "--set", "eval_attack.iterations=2"]);
    morel(&args)
}

fn eval_args<'a>(ckpt: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["evaluate", "--checkpoint", ckpt, "--set", "eval.suite=[\"fgsm\",\"pgd-3\"]"];
    v.extend(extra);
    v
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_run_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = train(&run, "morel-t", "0");
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["effective_config.toml", "best.ckpt", "last.ckpt", "history.csv", "epochs.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let echoed = fs::read_to_string(run.join("effective_config.toml")).unwrap();
    for line in [
        "preset = \"morel-t\"",
        "scalarization.k1 = 0.1",
        "scalarization.k2 = 0.9",
        "scalarization.gamma = 0.00002",
        "loss.alpha = 0.00001",
        "loss.inv_lambda = 6.0",
        "embedding.heads = 2",
    ] {
        assert!(echoed.contains(line), "effective config lacks `{line}`:\n{echoed}");
    }
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = morel(&["train", "--set", "train.momentun=0.5", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.momentun"));

    let o = morel(&["train", "--preset", "sgd", "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let o = morel(&["train", "--device", "cuda:0", "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let o = morel(&["train", "--set", "scalarization.gamma=0.2", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scalarization.gamma"));
}

#[test]
fn missing_or_corrupt_checkpoints_are_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"MORELCKP garbage").unwrap();
    let o = morel(&["export", "--checkpoint", bad.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn evaluate_export_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (run, surrogate) = (dir.path().join("morel"), dir.path().join("natural"));
    assert!(train(&run, "morel-t", "0").status.success());
    assert!(train(&surrogate, "natural", "1").status.success());
    let best = run.join("best.ckpt");
    let best = best.to_str().unwrap();

    let o = morel(&eval_args(best, &["--mode", "blackbox"]));
    assert_eq!(o.status.code(), Some(2), "black-box without surrogate must be a usage error");

    let o = morel(&eval_args(best, &[]));
    assert!(o.status.success(), "{}", stderr(&o));
    let report_path = run.join("report-best-whitebox.json");
    let first = RobustnessReport::load(&report_path).unwrap();
    assert_eq!(first.per_attack.keys().collect::<Vec<_>>(), ["FGSM", "PGD-3"]);
    assert!(run.join("report-best-whitebox.csv").is_file());
    assert!(run.join("report-best-whitebox.svg").is_file());

    assert!(morel(&eval_args(best, &[])).status.success());
    let second = RobustnessReport::load(&report_path).unwrap();
    assert_eq!(
        RobustnessReport {
            timestamp: 0,
            ..first.clone()
        },
        RobustnessReport {
            timestamp: 0,
            ..second
        }
    );

    let sur = surrogate.join("last.ckpt");
    let o = morel(&eval_args(best, &["--mode", "blackbox", "--surrogate", sur.to_str().unwrap()]));
    assert!(o.status.success(), "{}", stderr(&o));
    let black = RobustnessReport::load(&run.join("report-best-blackbox.json")).unwrap();
    assert!(black.surrogate.is_some());

    let exported = dir.path().join("export/model.bin");
    let o = morel(&["export", "--checkpoint", run.join("last.ckpt").to_str().unwrap(), "--out", exported.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::metadata(&exported).unwrap().len() < fs::metadata(run.join("last.ckpt")).unwrap().len());
    let cfg = run.join("effective_config.toml");
    let o = morel(&eval_args(exported.to_str().unwrap(), &["--config", cfg.to_str().unwrap()]));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(exported.with_file_name("report-export-whitebox.json").is_file());

    assert!(morel(&eval_args(run.join("last.ckpt").to_str().unwrap(), &[])).status.success());
    let table_dir = dir.path().join("tables");
    let inputs = [
        run.join("report-best-whitebox.json"),
        run.join("report-last-whitebox.json"),
        run.join("report-best-blackbox.json"),
    ];
    let mut args = vec!["report", "--out", table_dir.to_str().unwrap(), "--input"];
    args.extend(inputs.iter().map(|p| p.to_str().unwrap()));
    let o = morel(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(table_dir.join("table-whitebox.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("Method,Clean (best),Clean (last),FGSM (best),FGSM (last)"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "morel");
    assert!(row[1..].iter().all(|c| !c.is_empty()), "best and last cells filled: {row:?}");
    assert!(table_dir.join("table-blackbox.csv").is_file());
}
