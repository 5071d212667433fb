mod common;

use std::path::Path;
use std::process::Command;

use common::toy_run_config;
use textrec::analysis::{item_frequency, tail_split_by_ratio};
use textrec::cli::run;
use textrec::pipeline::{AnalysisReport, EvalReport, RunConfig, Workspace};

struct Out {
    code: u8,
    stdout: String,
    stderr: String,
}

fn textrec(config: &Path, args: &[&str]) -> Out {
    let mut argv = vec!["textrec".to_string(), "--config".into(), config.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(argv, &mut out, &mut err);
    Out { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn setup(dir: &Path, steps: usize) -> (RunConfig, std::path::PathBuf) {
    let config = toy_run_config(dir, steps);
    let path = dir.join("run.conf");
    std::fs::write(&path, config.render()).unwrap();
    (config, path)
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, conf) = setup(dir.path(), 10);
    let o = textrec(&conf, &["preprocess", "--set", "paths.items=/nonexistent/items.jsonl"]);
    assert_eq!(o.code, 3, "{}", o.stderr);
    assert!(o.stderr.contains("/nonexistent/items.jsonl"));

    let bin = Command::new(env!("CARGO_BIN_EXE_textrec"))
        .args(["--set", "paths.interactions=/nonexistent/x.tsv", "preprocess"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(bin.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bin.stderr).contains("/nonexistent/x.tsv"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (_, conf) = setup(dir.path(), 10);
    assert_eq!(textrec(&conf, &["train", "--set", "train.lr=fast"]).code, 2);
    assert_eq!(textrec(&conf, &["train", "--set", "verbalize.sessions=0x4"]).code, 2);
    assert_eq!(textrec(&dir.path().join("absent.conf"), &["train"]).code, 2);
}

#[test]
fn preprocess_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (config, conf) = setup(dir.path(), 10);
    let first = textrec(&conf, &["preprocess"]);
    assert_eq!(first.code, 0, "{}", first.stderr);
    assert!(first.stdout.contains("# effective config"));
    let data = config.paths.workdir.join("data");
    let snapshot = |d: &Path| {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let before = snapshot(&data);
    assert!(!before.is_empty());
    assert_eq!(textrec(&conf, &["preprocess"]).code, 0);
    assert_eq!(snapshot(&data), before);
}

#[test]
fn hard_strategy_needs_an_init_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (_, conf) = setup(dir.path(), 10);
    assert_eq!(textrec(&conf, &["preprocess"]).code, 0);
    assert_eq!(textrec(&conf, &["build-vocab"]).code, 0);
    let o = textrec(&conf, &["--strategy", "hard", "train"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("init"), "{}", o.stderr);
}

#[test]
fn stale_vocabulary_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (config, conf) = setup(dir.path(), 5);
    for cmd in ["preprocess", "build-vocab", "train"] {
        assert_eq!(textrec(&conf, &[cmd]).code, 0);
    }
    let o = textrec(&conf, &["build-vocab", "--set", "verbalize.attributes=title"]);
    assert_eq!(o.code, 0);
    let o = textrec(&conf, &["evaluate"]);
    assert_eq!(o.code, 3, "{}", o.stderr);
    assert!(config.paths.workdir.join("model-random.ckpt").exists());
}

#[test]
fn toy_workflow_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (config, conf) = setup(dir.path(), 300);
    for cmd in ["preprocess", "build-vocab", "train", "evaluate"] {
        let o = textrec(&conf, &[cmd]);
        assert_eq!(o.code, 0, "{cmd}: {}", o.stderr);
    }
    let wd = &config.paths.workdir;
    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(wd.join("model-random.report-test.json")).unwrap()).unwrap();
    assert_eq!(report.users, 50);
    assert_eq!(report.metrics["Recall@10"], 1.0);

    let o = textrec(&conf, &["analyze"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(o.stdout.contains("threshold"));
    let analysis: AnalysisReport =
        serde_json::from_str(&std::fs::read_to_string(wd.join("model-random.analysis.json")).unwrap()).unwrap();
    let ws = Workspace::load(&config).unwrap();
    let split = tail_split_by_ratio(&item_frequency(&ws.split.train, &ws.catalog), 0.2).unwrap();
    assert_eq!(analysis.threshold, split.threshold);
    assert_eq!(analysis.achieved_ratio, split.achieved_ratio);
    assert_eq!(analysis.grouped.long_tail.users + analysis.grouped.head.users, 50);
    assert_eq!(analysis.checkpoint_fingerprint, report.checkpoint_fingerprint);

    for cmd in ["export-embeddings", "encode"] {
        assert_eq!(textrec(&conf, &[cmd]).code, 0);
    }
    let export = std::fs::read_to_string(wd.join("model-random.export.txt")).unwrap();
    let mut lines = export.lines();
    assert_eq!(lines.next(), Some("30 32"));
    assert!(lines.all(|l| l.ends_with(" popular") || l.ends_with(" other")));

    let mask = textrec(&conf, &["evaluate", "--mask-history"]);
    assert_eq!(mask.code, 0);
    assert!(mask.stdout.contains("eval.mask_history = true"));

    let hard = textrec(
        &conf,
        &[
            "--strategy",
            "hard",
            "--set",
            "train.total_steps=20",
            "train",
            "--init-checkpoint",
            wd.join("model-random.ckpt").to_str().unwrap(),
        ],
    );
    assert_eq!(hard.code, 0, "{}", hard.stderr);
    assert!(wd.join("model-hard.ckpt").exists());
    assert!(hard.stdout.contains("train.hard_lr = 0.00005"), "{}", hard.stdout);
}
