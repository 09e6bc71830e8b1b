use std::path::Path;
use std::process::{Command, Output};

use flock::kg::composition_dataset;

fn flock(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flock"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("flock binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.cfg");
    assert_eq!(flock(&["train", "--config", p(&missing)]).status.code(), Some(2));
    assert_eq!(flock(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(
        flock(&["eval", "--checkpoint", p(&missing), "--dataset_dir", p(tmp.path())])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(flock(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_help_lists_defaults() {
    let o = flock(&["train", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for key in ["walk_length", "base_walks", "adv_temp", "weight_decay", "negatives"] {
        assert!(text.contains(key), "{key} missing from help");
    }
    assert!(text.contains("default"));
}

#[test]
fn petals_generation_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(flock(&["petals-gen", "--out", p(&a), "--seed", "3"]).status.success());
    assert!(flock(&["petals-gen", "--out", p(&b), "--seed", "3"]).status.success());
    let files = files_under(&a);
    assert!(files.len() > 220);
    assert_eq!(
        files,
        files_under(&b)
            .iter()
            .map(|f| f.replace(p(&b), p(&a)))
            .collect::<Vec<_>>()
    );
    for f in files {
        let twin = f.replace(p(&a), p(&b));
        assert_eq!(std::fs::read(&f).unwrap(), std::fs::read(&twin).unwrap(), "{f}");
    }
}

fn files_under(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(files_under(&path));
        } else {
            out.push(path.to_str().unwrap().to_string());
        }
    }
    out.sort();
    out
}

#[test]
fn petals_structure_suite_passes() {
    let o = flock(&["verify", "--suite", "petals-structure"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASSED"));
}

#[test]
fn train_eval_predict_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("run");
    composition_dataset(0, 30, 90, 4).unwrap().save(&data).unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# tiny run\ndataset_dir = {}\nout_dir = {}\nwalk_length = 6\nbase_walks = 4\n\
             update_steps = 1\nheads = 1\nhead_dim = 4\nensemble = 1\nnegatives = 4\n\
             batch_size = 2\nsteps = 4\nval_every = 2\n",
            p(&data),
            p(&out)
        ),
    )
    .unwrap();
    let o = flock(&["train", "--config", p(&cfg), "--set", "lr=0.001"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "best.ckpt",
        "train_log.csv",
        "run.cfg",
        "test_metrics.json",
        "test_ranks.csv",
    ] {
        assert!(out.join(f).is_file(), "{f} not written");
    }
    assert!(std::fs::read_to_string(out.join("run.cfg"))
        .unwrap()
        .contains("lr = 1e-3"));

    let ckpt = out.join("best.ckpt");
    let eval = |walks: &str| {
        let o = flock(&[
            "eval",
            "--checkpoint",
            p(&ckpt),
            "--dataset_dir",
            p(&data),
            "--walks",
            walks,
            "--passes",
            "1",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
        v["mrr"].as_f64().unwrap()
    };
    let m = eval("4");
    assert!((0.0..=1.0).contains(&m));
    assert_eq!(m, eval("4"));
    assert!((0.0..=1.0).contains(&eval("auto")));

    let o = flock(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--graph",
        p(&data),
        "--query",
        "e10 parent_of ?",
        "--top",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| !l.starts_with('#')).count(), 3 + 1);

    let o = flock(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--graph",
        p(&data),
        "--query",
        "e10 nope ?",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let o = flock(&["walk-bench", "--graph", p(&data), "--length", "4,8", "--samples", "20"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("l,cover_fraction"));
}
