use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TOY: &str = r#"
[dataset]
n_train_speakers = 3
n_dev_speakers = 2
n_eval_speakers = 2
n_train_mixtures = 4
n_dev_mixtures = 2
n_eval_mixtures = 3
n_enrollments = 3
utterances_per_speaker = 8
utterance_duration_range_s = [0.5, 0.6]

[model]
embedding_dim = 4
encoder_channels = 6
n_blocks_embed = 1
n_blocks_extract_per_repeat = 1
n_repeats = 1
n_train_speakers = 3

[train]
loss_mode = "worst_hard_si"
k = 2
total_epochs = 2
worst_loss_start_epoch = 1
batch_size = 2
"#;

struct Run {
    _dir: tempfile::TempDir,
    config: PathBuf,
    work: PathBuf,
}

fn setup(extra: &str) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, format!("{TOY}\n{extra}")).unwrap();
    let work = dir.path().join("work");
    Run { _dir: dir, config, work }
}

fn tse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tse"))
        .args(args)
        .env("TSE_LOG", "warn")
        .output()
        .unwrap()
}

impl Run {
    fn cmd(&self, verb: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            verb,
            "--config",
            self.config.to_str().unwrap(),
            "--workdir",
            self.work.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        tse(&args)
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&tse(&[])), 2);
    assert_eq!(code(&tse(&["frobnicate"])), 2);
    assert_eq!(code(&tse(&["simulate", "--config", "/nonexistent/run.toml"])), 2);
    assert_eq!(code(&tse(&["train", "--loss-mode", "best_case"])), 2);

    let r = setup("");
    fs::write(&r.config, "[train]\nnot_a_key = 1\n").unwrap();
    assert_eq!(code(&r.cmd("simulate", &[])), 2);
}

#[test]
fn subset_larger_than_candidates_is_a_usage_error() {
    let r = setup("");
    let text = fs::read_to_string(&r.config).unwrap().replace("k = 2", "k = 4");
    fs::write(&r.config, text).unwrap();
    let o = r.cmd("train", &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains('4'));
}

#[test]
fn simulate_is_deterministic_and_refuses_overwrite() {
    let r = setup("");
    ok(r.cmd("simulate", &["--seed", "3"]));
    let manifest = r.work.join("data/manifest.jsonl");
    let first = read(&manifest);
    let some_wav = r.work.join("data/train/train_00000_mix.wav");
    let wav = read(&some_wav);

    assert_eq!(code(&r.cmd("simulate", &["--seed", "3"])), 2);
    ok(r.cmd("simulate", &["--seed", "3", "--force"]));
    assert_eq!(read(&manifest), first);
    assert_eq!(read(&some_wav), wav);

    ok(r.cmd("simulate", &["--seed", "4", "--force"]));
    assert_ne!(read(&manifest), first);
}

#[test]
fn train_without_data_is_a_runtime_error() {
    let r = setup("");
    assert_eq!(code(&r.cmd("train", &[])), 1);
}

#[test]
fn zero_epoch_checkpoint_evaluates_and_reports() {
    let r = setup("");
    ok(r.cmd("simulate", &[]));
    ok(r.cmd("train", &["--epochs", "0", "--loss-mode", "conventional"]));
    let ck = r.work.join("checkpoints/conventional");
    assert!(ck.join("best.json").is_file());
    assert!(ck.join("last.json").is_file());
    assert_eq!(fs::read_to_string(ck.join("history.jsonl")).unwrap(), "");

    ok(r.cmd("eval", &["--loss-mode", "conventional"]));
    let matrix = fs::read_to_string(r.work.join("eval/conventional.tsv")).unwrap();
    assert!(matrix.starts_with("# tse-eval-matrix v1"));
    assert!(matrix.contains("# system: conventional"));
    // 3 eval mixtures, 3 enrollments each.
    let rows: Vec<&str> = matrix.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].split('\t').count(), 4);

    let o = ok(r.cmd("report", &[]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("conventional"));
    for f in ["comparison.tsv", "comparison.md", "plot_data.tsv", "systems.json"] {
        assert!(r.work.join("reports").join(f).is_file(), "{f}");
    }
    assert_eq!(code(&r.cmd("report", &[])), 2);
    ok(r.cmd("report", &["--force"]));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let r = setup("");
    ok(r.cmd("simulate", &[]));
    ok(r.cmd("train", &["--name", "full"]));
    ok(r.cmd("train", &["--name", "split", "--epochs", "1"]));
    ok(r.cmd("train", &["--name", "split", "--resume"]));

    let ck = r.work.join("checkpoints");
    let strip = |p: PathBuf| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_slice(&read(p)).unwrap();
        for rec in v["train_state"]["history"]["records"].as_array_mut().unwrap() {
            rec["wall_time_s"] = 0.0.into();
        }
        v
    };
    assert_eq!(strip(ck.join("full/last.json")), strip(ck.join("split/last.json")));
    assert_eq!(read(ck.join("full/best.json")), read(ck.join("split/best.json")));
    let lines = |p: PathBuf| fs::read_to_string(p).unwrap().lines().count();
    assert_eq!(lines(ck.join("split/history.jsonl")), 2);

    assert_eq!(code(&r.cmd("train", &["--name", "full"])), 2);
    assert_eq!(code(&r.cmd("train", &["--name", "full", "--resume", "--force"])), 2);
}

#[test]
fn malformed_matrix_is_a_usage_error() {
    let r = setup("");
    let bad = r.work.join("bad.tsv");
    fs::create_dir_all(&r.work).unwrap();
    fs::write(&bad, "# tse-eval-matrix v1\nmixture\tenr0\nm0\tnot-a-number\n").unwrap();
    let o = r.cmd("report", &[bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.tsv"));
    assert_eq!(code(&r.cmd("report", &["/nonexistent.tsv"])), 2);
}

#[test]
fn held_lock_blocks_writers() {
    let r = setup("");
    fs::create_dir_all(&r.work).unwrap();
    fs::write(r.work.join(".tse.lock"), "999999\n").unwrap();
    let o = r.cmd("simulate", &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("999999"));
}

#[test]
fn gradcheck_passes() {
    let o = ok(tse(&["gradcheck", "--samples", "12"]));
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.contains(" ok ")).count(), 5, "{out}");
    assert_eq!(code(&tse(&["gradcheck", "--samples", "12", "--tolerance", "0"])), 1);
}
