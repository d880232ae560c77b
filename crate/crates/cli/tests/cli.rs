use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sevs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sevs"))
        .args(args)
        .output()
        .unwrap()
}

fn sevs_ok(args: &[&str]) -> Output {
    let out = sevs(args);
    assert!(
        out.status.success(),
        "sevs {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn train_tiny(out: &Path, extra: &[&str]) {
    let mut args = vec![
        "train",
        "--data",
        "synth",
        "--tiny",
        "--split",
        "0",
        "--out",
        p(out),
    ];
    args.extend_from_slice(extra);
    sevs_ok(&args);
}

#[test]
fn defaults_resolve_to_published_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    train_tiny(&out, &[]);
    let m = json(&out.join("run_manifest.json"));
    let cfg = &m["config"]["train"];
    assert_eq!(cfg["epochs"], 300);
    assert_eq!(cfg["lr"], 5e-5);
    assert_eq!(cfg["weight_decay"], 1e-5);
    assert_eq!(cfg["nms_threshold"], 0.5);
    assert_eq!(cfg["gamma"], 1.0);
    assert_eq!(m["command"], "train");
    let outputs = m["outputs"].as_array().unwrap();
    assert!(outputs
        .iter()
        .any(|o| o["path"].as_str().unwrap().ends_with("split_0.ckpt")));
    assert!(outputs
        .iter()
        .all(|o| o["sha256"].as_str().unwrap().len() == 64));
    let log = std::fs::read_to_string(out.join("split_0.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 300);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "cls", "reg", "pre", "mse", "total"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn training_is_reproducible_and_seed_env_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c, d) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
        dir.path().join("d"),
    );
    train_tiny(&a, &["--epochs", "50", "--seed", "1"]);
    train_tiny(&b, &["--epochs", "50", "--seed", "1"]);
    let ckpt = |d: &PathBuf| std::fs::read(d.join("split_0.ckpt")).unwrap();
    assert_eq!(ckpt(&a), ckpt(&b));

    let out = Command::new(env!("CARGO_BIN_EXE_sevs"))
        .args([
            "train",
            "--data",
            "synth",
            "--tiny",
            "--split",
            "0",
            "--epochs",
            "50",
            "--out",
            p(&c),
        ])
        .env("SEVS_SEED", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(ckpt(&a), ckpt(&c));

    train_tiny(&d, &["--epochs", "50", "--seed", "2"]);
    assert_ne!(ckpt(&a), ckpt(&d));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path());
    assert_eq!(
        sevs(&[
            "train",
            "--data",
            "synth",
            "--setting",
            "transfer",
            "--out",
            out
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(sevs(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(
        sevs(&["train", "--data", "synth", "--split", "7", "--out", out])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        sevs(&["validate", "--data", "/definitely/missing"])
            .status
            .code(),
        Some(2)
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(
        sevs(&["validate", "--data", p(&bad)]).status.code(),
        Some(2)
    );
    let diverge = sevs(&[
        "train", "--data", "synth", "--tiny", "--split", "0", "--epochs", "5", "--lr", "1e300",
        "--out", out,
    ]);
    assert_eq!(
        diverge.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&diverge.stderr)
    );
    assert_eq!(sevs(&["--help"]).status.code(), Some(0));
}

#[test]
fn generate_validate_and_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    sevs_ok(&[
        "generate",
        "--out",
        p(&data),
        "--videos",
        "6",
        "--dim",
        "8",
        "--seed",
        "3",
    ]);
    let manifest = data.join("manifest.json");
    let snapshot = || -> Vec<(std::ffi::OsString, Vec<u8>)> {
        let mut files: Vec<_> = std::fs::read_dir(&data)
            .unwrap()
            .map(|e| e.unwrap())
            .filter(|e| e.file_name() != "run_manifest.json")
            .map(|e| (e.file_name(), std::fs::read(e.path()).unwrap()))
            .collect();
        files.sort();
        files
    };
    let before = snapshot();
    let v = sevs_ok(&["validate", "--data", p(&manifest)]);
    assert!(String::from_utf8_lossy(&v.stdout).contains("6 videos"));
    sevs_ok(&[
        "train",
        "--data",
        p(&manifest),
        "--tiny",
        "--epochs",
        "2",
        "--split",
        "0",
        "--out",
        p(&dir.path().join("t")),
    ]);
    let after = snapshot();
    assert_eq!(before, after);
}

struct Trained {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn trained() -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    train_tiny(&root.join("t"), &["--epochs", "30", "--seed", "4"]);
    Trained { _dir: dir, root }
}

#[test]
fn summaries_respect_budget() {
    let t = trained();
    let ckpt = t.root.join("t/split_0.ckpt");
    let meta = t.root.join("meta");
    let avg = t.root.join("avg");
    let all = t.root.join("all");
    sevs_ok(&[
        "summarize",
        "--data",
        "synth",
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&meta),
    ]);
    sevs_ok(&[
        "summarize",
        "--data",
        "synth",
        "--checkpoint",
        p(&ckpt),
        "--fusion",
        "average",
        "--out",
        p(&avg),
    ]);
    sevs_ok(&[
        "summarize",
        "--data",
        "synth",
        "--checkpoint",
        p(&ckpt),
        "--budget",
        "1.0",
        "--out",
        p(&all),
    ]);
    let meta = json(&meta.join("summaries.json"));
    let avg = json(&avg.join("summaries.json"));
    let all = json(&all.join("summaries.json"));
    let records = meta.as_array().unwrap();
    assert_eq!(records.len(), 10);
    for r in records {
        let sel = r["selected"].as_array().unwrap();
        let used = sel.iter().filter(|v| v.as_u64() == Some(1)).count();
        assert!(
            used * 100 <= 15 * sel.len(),
            "{} uses {used} of {}",
            r["video_id"],
            sel.len()
        );
    }
    let shots_of = |v: &serde_json::Value| -> Vec<serde_json::Value> {
        v.as_array()
            .unwrap()
            .iter()
            .map(|r| r["shot_scores"].clone())
            .collect()
    };
    assert_ne!(shots_of(&meta), shots_of(&avg));
    for r in all.as_array().unwrap() {
        let scores = r["shot_scores"].as_array().unwrap();
        let positive: Vec<u64> = (0..scores.len() as u64)
            .filter(|&i| scores[i as usize].as_f64().unwrap() > 0.0)
            .collect();
        let picked: Vec<u64> = r["selected_shots"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap())
            .collect();
        assert_eq!(picked, positive);
    }
}

#[test]
fn sweep_and_plot_outputs() {
    let t = trained();
    let ckpt = t.root.join("t/split_0.ckpt");
    let sweep = t.root.join("sweep");
    sevs_ok(&[
        "sweep-nms",
        "--data",
        "synth",
        "--checkpoint",
        p(&ckpt),
        "--thresholds",
        "0.3,0.4,0.5,0.6",
        "--out",
        p(&sweep),
    ]);
    let csv = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("0.3,"));

    let plot = t.root.join("plot");
    sevs_ok(&[
        "plot-data",
        "--data",
        "synth",
        "--checkpoint",
        p(&ckpt),
        "--video",
        "video_000",
        "--out",
        p(&plot),
    ]);
    let csv = std::fs::read_to_string(plot.join("plot_video_000.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "frame,gt_score,P_S,P_K,Y_average,Y_meta"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let v = sevs_ok(&["validate", "--data", "synth"]);
    assert!(String::from_utf8_lossy(&v.stdout).contains("10 videos"));
    assert!(rows.len() >= 40);
    for (t, r) in rows.iter().enumerate() {
        assert_eq!(r[0], t as f64);
        assert!(r[1..].iter().all(|x| (0.0..=1.0).contains(x)));
        assert!((r[4] - 0.5 * (r[2] + r[3])).abs() < 1e-12);
    }
    let missing = sevs(&[
        "plot-data",
        "--data",
        "synth",
        "--checkpoint",
        p(&ckpt),
        "--video",
        "nope",
        "--out",
        p(&plot),
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn checkpoint_width_mismatch_is_a_data_error() {
    let t = trained();
    let ckpt = t.root.join("t/split_0.ckpt");
    let data = t.root.join("wide");
    sevs_ok(&["generate", "--out", p(&data), "--videos", "2", "--dim", "5"]);
    let out = sevs(&[
        "summarize",
        "--data",
        p(&data.join("manifest.json")),
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&t.root.join("s")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_and_ablate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let eval = dir.path().join("eval");
    sevs_ok(&[
        "evaluate",
        "--data",
        "synth",
        "--tiny",
        "--epochs",
        "5",
        "--train-first",
        "--out",
        p(&eval),
    ]);
    let report = json(&eval.join("report.json"));
    assert_eq!(report["splits"].as_array().unwrap().len(), 5);
    let mean = report["mean_fscore"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&mean));
    assert_eq!(report["mode"], "average");
    assert!(eval.join("split_4.ckpt").exists());

    let ablate = dir.path().join("ablate");
    sevs_ok(&[
        "ablate",
        "--data",
        "synth",
        "--extras",
        "synth:9",
        "--setting",
        "canonical,augmented",
        "--tiny",
        "--epochs",
        "2",
        "--out",
        p(&ablate),
    ]);
    let grid = json(&ablate.join("ablation.json"));
    assert_eq!(grid["rows"].as_array().unwrap().len(), 4);
    assert_eq!(grid["columns"].as_array().unwrap().len(), 2);
    let text = std::fs::read_to_string(ablate.join("ablation.txt")).unwrap();
    assert_eq!(text.lines().count(), 5);
}
