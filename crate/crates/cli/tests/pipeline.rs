use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn toy_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/data/toy_fines.xes")
        .canonicalize()
        .unwrap()
}

/// A toy config small enough to train in a few seconds.
fn write_config(dir: &Path, tweak: impl FnOnce(&mut Value)) -> PathBuf {
    let mut cfg = json!({
        "schema_version": 1,
        "name": "toy",
        "dataset": { "path": toy_data() },
        "labeler": { "kind": "activity-presence", "activity": "Appeal" },
        "model": { "lstm_hidden": 12, "latent_dim": 3, "attr_hidden": 4 },
        "train": { "learning_rate": 0.01, "batch_size": 64, "max_epochs": 6, "patience": 6 },
        "generation": { "n_logs": 2, "what_if_pairs": 2 },
        "seed": 3
    });
    tweak(&mut cfg);
    let p = dir.join("cfg.json");
    std::fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

fn condgen(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condgen"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn full_pipeline_then_guards() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |_| {});
    let out = tmp.path().join("run");
    for verb in ["prepare", "train", "generate", "evaluate", "report"] {
        ok(&condgen(&[verb], &cfg, &out));
    }
    for f in [
        "prepared/train.xes",
        "prepared/encoding.json",
        "prepared/summary.md",
        "model/checkpoint.json",
        "model/last.json",
        "model/history.csv",
        "generated/gen_00.xes",
        "generated/gen_01.csv",
        "generated/what_if.md",
        "results/results.json",
        "results/long.csv",
        "report/tables.md",
        "report/toy_RED.svg",
        "report/toy_CONF.svg",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let history = std::fs::read_to_string(out.join("model/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 6);

    // Existing outputs are not overwritten without --force.
    let again = condgen(&["prepare"], &cfg, &out);
    assert_eq!(again.status.code(), Some(1));
    assert!(stderr(&again).contains("--force"));

    // Same seed, same bytes.
    let first = std::fs::read(out.join("generated/gen_00.xes")).unwrap();
    ok(&condgen(&["generate", "--force"], &cfg, &out));
    assert_eq!(std::fs::read(out.join("generated/gen_00.xes")).unwrap(), first);
    let other_seed = condgen(&["generate", "--force", "--seed", "4"], &cfg, &out);
    // a different seed is a different config
    assert_eq!(other_seed.status.code(), Some(1));
    assert!(stderr(&other_seed).contains("--allow-mixed"));

    // A changed config is refused against the old artifacts unless asked.
    let changed = write_config(tmp.path(), |c| c["generation"]["n_logs"] = json!(1));
    let mixed = condgen(&["generate", "--force"], &changed, &out);
    assert_eq!(mixed.status.code(), Some(1));
    assert!(stderr(&mixed).contains("--allow-mixed"));
    ok(&condgen(&["generate", "--force", "--allow-mixed"], &changed, &out));
    assert!(!out.join("generated/gen_01.xes").exists());
}

#[test]
fn resume_continues_epoch_numbering() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |_| {});
    let out = tmp.path().join("run");
    ok(&condgen(&["prepare"], &cfg, &out));
    ok(&condgen(&["train"], &cfg, &out));
    let longer = write_config(tmp.path(), |c| c["train"]["max_epochs"] = json!(9));
    ok(&condgen(
        &["train", "--force", "--allow-mixed", "--checkpoint", "model/last.json"],
        &longer,
        &out,
    ));
    let history = std::fs::read_to_string(out.join("model/history.csv")).unwrap();
    let epochs: Vec<usize> = history
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(epochs, (1..=9).collect::<Vec<_>>());
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let missing = condgen(&["prepare"], &tmp.path().join("nope.json"), &out);
    assert_eq!(missing.status.code(), Some(2));

    let bad = write_config(tmp.path(), |c| {
        c["split"] = json!([0.5, 0.1, 0.1]);
        c["dataset"]["path"] = json!("missing.xes");
    });
    let o = condgen(&["prepare"], &bad, &out);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("split"), "{err}");
    assert!(err.contains("dataset.path"), "{err}");

    let unknown = write_config(tmp.path(), |c| c["train"]["epochs"] = json!(3));
    assert_eq!(condgen(&["prepare"], &unknown, &out).status.code(), Some(2));
}

#[test]
fn evaluate_scores_extra_model_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), |_| {});
    let out = tmp.path().join("run");
    for verb in ["prepare", "train", "generate"] {
        ok(&condgen(&[verb], &cfg, &out));
    }
    // The test split itself stands in for another generator's output.
    let other = out.join("oracle");
    std::fs::create_dir_all(&other).unwrap();
    std::fs::copy(out.join("prepared/test.xes"), other.join("log1.xes")).unwrap();
    ok(&condgen(&["evaluate", "--extra-logs", "oracle"], &cfg, &out));
    let results: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("results/results.json")).unwrap()).unwrap();
    let models: Vec<&str> = results["models"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["model"].as_str().unwrap())
        .collect();
    assert_eq!(models, ["cvae", "oracle"]);
    let oracle = &results["models"][1]["reports"][0];
    assert_eq!(oracle["red"], json!(0.0));
    assert_eq!(oracle["two_gd"], json!(0.0));
}
