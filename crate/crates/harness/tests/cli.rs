use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ivus_harness::commands::runs_header;

const BIN: &str = env!("CARGO_BIN_EXE_ivus");

fn ivus(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("IVUS_OUT_ROOT")
        .output()
        .expect("run the ivus binary")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

const TINY: &str = "[data]\ntrain = 2\nval = 1\ntest = 1\n[train]\nepochs = 1\n";

#[test]
fn gen_data_counts_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = ivus(tmp.path(), &["gen-data", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    // Writing over an existing dataset changes nothing either.
    assert!(ivus(tmp.path(), &["gen-data", "--out", "a"]).status.success());
    let (a, b) = (files_under(&tmp.path().join("a")), files_under(&tmp.path().join("b")));
    assert_eq!(a, b);
    let images = a.keys().filter(|p| p.to_string_lossy().ends_with("_image.pgm")).count();
    assert_eq!(images, 32 + 8 + 8);
    assert!(a.contains_key(Path::new("manifest.json")));
}

#[test]
fn corrupt_config_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "[phantom]\nimage_size = 64\nseed = [\n").unwrap();
    let o = ivus(tmp.path(), &["gen-data", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.toml") && err.contains("line 3"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ivus(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(ivus(tmp.path(), &["eval"]).status.code(), Some(1));
    assert_eq!(ivus(tmp.path(), &["experiment", "--kind", "nope"]).status.code(), Some(1));
    let o = ivus(tmp.path(), &["report"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("usage"));
}

#[test]
fn smoke_train_and_eval_write_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let split = ["--train", "4", "--val", "2", "--test", "2"];
    let mut args = vec!["train", "--epochs", "2", "--out", "run"];
    args.extend(split);
    let o = ivus(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut args = vec!["eval", "--checkpoint", "run/checkpoint.ivck", "--out", "eval"];
    args.extend(split);
    let o = ivus(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(60));

    let run = tmp.path().join("run");
    for f in ["checkpoint.ivck", "history.csv", "config.toml", "provenance.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let eval = tmp.path().join("eval");
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("sample,lu_jm,ma_jm,lu_pad,ma_pad,lu_hd,ma_hd,lu_ad,ma_ad\n"));
    assert_eq!(metrics.lines().count(), 3);
    let svgs: Vec<_> = fs::read_dir(eval.join("overlays")).unwrap().collect();
    assert_eq!(svgs.len(), 2);
    assert!(fs::read_to_string(eval.join("summary.csv")).unwrap().starts_with("statistic,n,"));

    // The resolved configuration reproduces the run.
    let o = ivus(tmp.path(), &["train", "--config", "run/config.toml", "--out", "again"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(run.join("checkpoint.ivck")).unwrap(),
        fs::read(tmp.path().join("again/checkpoint.ivck")).unwrap()
    );
}

#[test]
fn eval_errors_are_structured() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ivus(tmp.path(), &["eval", "--checkpoint", "missing.ivck"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.ivck"));

    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    let o = ivus(tmp.path(), &["train", "--config", "tiny.toml", "--out", "run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(
        tmp.path().join("other.toml"),
        format!("{TINY}[generator]\nbase_channels = 8\n"),
    )
    .unwrap();
    let o = ivus(
        tmp.path(),
        &["eval", "--config", "other.toml", "--checkpoint", "run/checkpoint.ivck"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("base_channels"), "{}", stderr(&o));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let o = Command::new(BIN)
        .args(["gen-data", "--train", "1", "--val", "1", "--test", "1", "--out", "data"])
        .current_dir(tmp.path())
        .env("IVUS_OUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("data/manifest.json").is_file());
    assert!(!tmp.path().join("data").exists());
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn experiments_report_their_grids() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("tiny.toml"), TINY).unwrap();
    let run = |kind: &str| {
        let o = ivus(
            tmp.path(),
            &["experiment", "--config", "tiny.toml", "--kind", kind, "--seeds", "3", "--out", kind],
        );
        assert!(o.status.success(), "{kind}: {}", stderr(&o));
        read_csv(&tmp.path().join(kind).join("report.csv"))
    };

    let ablation = run("loss_ablation");
    assert_eq!(ablation.len(), 1 + 5);
    let metric_cols = ablation[0].iter().filter(|c| c.starts_with("lu_") || c.starts_with("ma_")).count();
    assert_eq!(metric_cols, 8);
    let prov = fs::read_to_string(tmp.path().join("loss_ablation/provenance.json")).unwrap();
    assert!(prov.contains("config_hash") && prov.contains("\"seeds\": [\n    3\n  ]") && prov.contains("version"));
    let md = fs::read_to_string(tmp.path().join("loss_ablation/comparison.md")).unwrap();
    assert!(md.contains("config hash") && md.contains("seeds: 3") && md.contains("build version"));

    let sweep = run("beta_sweep_l1");
    let betas: Vec<&str> = sweep[1..].iter().map(|r| r[2].as_str()).collect();
    assert_eq!(betas, ["1", "2", "4", "8", "16", "32", "64", "128"]);

    let gens = run("generator_comparison");
    let size = |name: &str| -> f64 {
        let row = gens.iter().find(|r| r[1] == name).unwrap();
        row[5].parse().unwrap()
    };
    assert!(size("encoder_decoder") < size("unet"));
    let cmp = fs::read_to_string(tmp.path().join("generator_comparison/comparison.csv")).unwrap();
    assert!(cmp.contains("unet,model_size_m,") && cmp.contains(",226.413,"));
}

#[test]
fn failed_runs_are_recorded_and_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("diverge.toml"),
        format!("{TINY}[train.adam]\nlr = 1e30\n"),
    )
    .unwrap();
    let o = ivus(
        tmp.path(),
        &["experiment", "--config", "diverge.toml", "--kind", "loss_ablation", "--seeds", "0", "--out", "x"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let runs = read_csv(&tmp.path().join("x/runs.csv"));
    assert_eq!(runs.len(), 1 + 5, "every run is recorded");
    assert!(runs[1..].iter().any(|r| r[6] == "failed"));
    assert!(stderr(&o).contains("runs failed"));
}

fn write_runs(dir: &Path, rows: &[&str]) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut text = runs_header().join(",");
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    let path = dir.join("runs.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn report_merges_dedupes_and_checks_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = [
        "beta_sweep_l1,beta_1,1,unet,10,0,ok,0.5,0.6,1,2,3,4,0.1,0.2,",
        "beta_sweep_l1,beta_2,2,unet,10,0,ok,0.7,0.8,1,2,3,4,0.1,0.2,",
        "loss_ablation,l1_only,,unet,10,0,failed,,,,,,,,,boom",
    ];
    write_runs(&tmp.path().join("one"), &rows);
    write_runs(&tmp.path().join("two"), &rows[..2]);

    let o = ivus(tmp.path(), &["report", "--out", "single", "one"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_csv(&tmp.path().join("single/merged.csv")).len(), 1 + 3);
    let plot = fs::read_to_string(tmp.path().join("single/plots/beta_sweep_l1_lu_jm.svg")).unwrap();
    assert!(plot.starts_with("<svg") && plot.contains("<polyline"));
    assert!(tmp.path().join("single/plots/loss_ablation_lu_jm.svg").is_file());

    let o = ivus(tmp.path(), &["report", "--out", "both", "one", "two"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: dropping duplicate"));
    assert_eq!(read_csv(&tmp.path().join("both/merged.csv")).len(), 1 + 3);

    fs::create_dir_all(tmp.path().join("odd")).unwrap();
    fs::write(tmp.path().join("odd/runs.csv"), "experiment,config,seed\nx,y,0\n").unwrap();
    let o = ivus(tmp.path(), &["report", "--out", "bad", "one", "odd"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("columns"), "{}", stderr(&o));
}
