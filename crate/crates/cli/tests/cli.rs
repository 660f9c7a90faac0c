//! End-to-end checks of the `newsrec` binary: the synth → train →
//! evaluate → analyze chain, config-file handling, and the documented
//! exit codes (2 config, 3 data, 4 numeric).

use std::path::Path;
use std::process::{Command, Output};

fn newsrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_newsrec"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tiny_model_sets(data: &Path) -> Vec<String> {
    let d = data.display();
    vec![
        format!("--set=dataset.train_dir={d}/train"),
        format!("--set=dataset.test_dir={d}/test"),
        "--set=dataset.max_title_len=8".into(),
        "--set=dataset.max_abstract_len=6".into(),
        "--set=model.embed_dim=12".into(),
        "--set=model.d_model=8".into(),
        "--set=model.heads=2".into(),
        "--set=model.d_att=6".into(),
        "--set=model.max_history_len=10".into(),
        "--set=model.conv_filters=8".into(),
        "--set=model.gru_dim=8".into(),
        "--set=model.cat_embed_dim=4".into(),
        "--set=train.epochs=1".into(),
        "--set=train.min_epochs=1".into(),
        "--set=train.negatives=3".into(),
    ]
}

#[test]
fn synth_train_evaluate_analyze_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = dir.join("data");
    let out = dir.join("out");

    let synth = newsrec(
        dir,
        &[
            "synth",
            "--seed",
            "3",
            "--set=synth.topics=3",
            "--set=synth.users=12",
            "--set=synth.articles=40",
            "--set=synth.train_impressions=150",
            "--set=synth.test_impressions=50",
            "--set=synth.candidates=4",
            "--out",
            data.to_str().unwrap(),
        ],
    );
    assert_success(&synth);
    assert!(data.join("train/news.tsv").exists());
    assert!(data.join("test/behaviors.tsv").exists());

    let mut train_args: Vec<String> = vec!["train".into(), "--seed".into(), "5".into()];
    train_args.extend(tiny_model_sets(&data));
    train_args.push("--out".into());
    train_args.push(out.to_str().unwrap().into());
    let train = newsrec(dir, &train_args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_success(&train);
    let stdout = String::from_utf8_lossy(&train.stdout);
    assert!(stdout.contains("test:"), "{stdout}");
    for artifact in ["run.json", "model.ckpt", "metrics.json", "distribution.csv"] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
    let record = std::fs::read_to_string(out.join("run.json")).unwrap();
    assert!(record.contains("\"seed\": 5"), "seed flag must reach the record");

    let mut eval_args: Vec<String> = vec!["evaluate".into(), "--seed".into(), "5".into()];
    eval_args.extend(tiny_model_sets(&data));
    eval_args.push("--out".into());
    eval_args.push(out.to_str().unwrap().into());
    let eval = newsrec(dir, &eval_args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_success(&eval);
    let eval_stdout = String::from_utf8_lossy(&eval.stdout);
    assert!(eval_stdout.contains("auc"), "{eval_stdout}");

    let mut analyze_args: Vec<String> = vec!["analyze".into(), "--seed".into(), "5".into()];
    analyze_args.extend(tiny_model_sets(&data));
    analyze_args.push("--out".into());
    analyze_args.push(out.to_str().unwrap().into());
    let analyze = newsrec(dir, &analyze_args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_success(&analyze);
    for artifact in [
        "article_stats.csv",
        "ctr_scatter.svg",
        "treemap_ground_truth.svg",
        "treemap_recommended.svg",
    ] {
        assert!(out.join(artifact).exists(), "missing {artifact}");
    }
}

#[test]
fn analyze_without_checkpoint_emits_dataset_side_only() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = dir.join("data");
    let out = dir.join("analysis");
    assert_success(&newsrec(
        dir,
        &[
            "synth",
            "--set=synth.topics=3",
            "--set=synth.users=10",
            "--set=synth.articles=30",
            "--set=synth.train_impressions=60",
            "--set=synth.test_impressions=40",
            "--set=synth.candidates=4",
            "--out",
            data.to_str().unwrap(),
        ],
    ));
    let mut args: Vec<String> = vec!["analyze".into()];
    args.extend(tiny_model_sets(&data));
    args.push("--out".into());
    args.push(out.to_str().unwrap().into());
    let analyze = newsrec(dir, &args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_success(&analyze);
    assert!(out.join("article_stats.csv").exists());
    assert!(out.join("treemap_ground_truth.svg").exists());
    assert!(!out.join("treemap_recommended.svg").exists());
}

#[test]
fn config_file_plus_override_reaches_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("exp.toml"),
        "seed = 9\n[synth]\ntopics = 3\nusers = 8\narticles = 30\ntrain_impressions = 40\ntest_impressions = 20\ncandidates = 4\n",
    )
    .unwrap();
    let out = newsrec(
        dir,
        &[
            "synth",
            "--config",
            "exp.toml",
            "--set=synth.users=6",
            "--out",
            dir.join("data").to_str().unwrap(),
        ],
    );
    assert_success(&out);
    // 6 users (override), not 8 (file): behaviors reference U0..U5 only
    let behaviors = std::fs::read_to_string(dir.join("data/train/behaviors.tsv")).unwrap();
    assert!(!behaviors.contains("\tU7\t"), "override must beat the file value");
}

#[test]
fn unknown_key_exits_2_and_suggests() {
    let tmp = tempfile::tempdir().unwrap();
    let out = newsrec(tmp.path(), &["train", "--set=train.lrate=0.1"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("did you mean"), "{stderr}");
}

#[test]
fn missing_data_exits_3_but_still_writes_the_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = newsrec(
        tmp.path(),
        &[
            "train",
            "--set=dataset.train_dir=/nonexistent/a",
            "--set=dataset.test_dir=/nonexistent/b",
            "--out",
            out_dir.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let record = std::fs::read_to_string(out_dir.join("run.json")).unwrap();
    assert!(record.contains("load_data"), "{record}");
}

#[test]
fn sweep_without_axis_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = newsrec(tmp.path(), &["sweep"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sweep.axis"), "{stderr}");
}

#[test]
fn bad_flag_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = newsrec(tmp.path(), &["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_synth_spec_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = newsrec(
        tmp.path(),
        &["synth", "--set=synth.topics=1", "--out", "d"],
    );
    assert_eq!(out.status.code(), Some(2));
}
