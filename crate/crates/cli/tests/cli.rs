use std::path::Path;
use std::process::{Command, Output};

fn tvg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvg"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .expect("tvg runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tvg(args);
    assert!(
        out.status.success(),
        "tvg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn eval_without_results_is_usage_error() {
    let out = tvg(&["eval", "--truth", "truth.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = tvg(&["selfcheck", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selfcheck_passes() {
    let out = ok(&["selfcheck"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn full_pipeline_writes_eval_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["synth-gen", "--out", p(&data)]);

    let cfg = d.join("run.cfg");
    let mut text = tvg_core::pipeline::benchmark_config().to_text();
    text.push_str("iterations = 2\nlanguage_epochs = 5\n");
    std::fs::write(&cfg, text).unwrap();

    let lang = d.join("lang.ckpt");
    let necks = d.join("necks.bin");
    let train = ok(&[
        "train-language",
        "--config",
        p(&cfg),
        "--queries",
        p(&data.join("queries.txt")),
        "--embeddings",
        p(&data.join("embeddings.txt")),
        "--out",
        p(&lang),
        "--necks",
        p(&necks),
    ]);
    assert!(String::from_utf8_lossy(&train.stderr).contains("config hash"));

    let clusters = d.join("clusters.bin");
    ok(&["build-clusters", "--config", p(&cfg), "--necks", p(&necks), "--out", p(&clusters)]);

    let video = d.join("video.ckpt");
    let metrics = d.join("metrics.csv");
    ok(&[
        "train-video",
        "--config",
        p(&cfg),
        "--features",
        p(&data.join("features")),
        "--clusters",
        p(&clusters),
        "--out",
        p(&video),
        "--metrics",
        p(&metrics),
    ]);
    let m = std::fs::read_to_string(&metrics).unwrap();
    assert!(m.starts_with("iteration,neck,mean_l_cls,mean_l_sab,mean_l_trip,label_change_rate"));
    assert_eq!(m.lines().count(), 1 + 2 * 4);

    let results = d.join("results.csv");
    let (features, pairs) = (data.join("features"), data.join("pairs.csv"));
    let shared = [
        "--checkpoint",
        p(&video),
        "--necks",
        p(&necks),
        "--features",
        p(&features),
        "--pairs",
        p(&pairs),
    ];
    let mut infer = vec!["infer"];
    infer.extend(shared);
    infer.extend(["--out", p(&results)]);
    ok(&infer);

    let table = d.join("eval.csv");
    let out = ok(&[
        "eval",
        "--results",
        p(&results),
        "--truth",
        p(&data.join("truth.csv")),
        "--out",
        p(&table),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("R@1"));
    let csv = std::fs::read_to_string(&table).unwrap();
    assert!(csv.starts_with("metric,iou,recall"));
    assert_eq!(csv.lines().count(), 7);

    let rep = d.join("report");
    let mut report = vec!["report"];
    report.extend(shared);
    report.extend(["--clusters", p(&clusters), "--out", p(&rep)]);
    ok(&report);
    assert!(rep.join("scores.csv").exists());
    assert!(rep.join("attention").join("v0000.a_fore.tvgm").exists());
}
