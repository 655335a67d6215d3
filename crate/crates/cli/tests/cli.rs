use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lightd::harness::synthetic::{photo_like, write_corpus};
use lightd::imagecore::{read_png, write_png};

fn lightd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lightd"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn lightgen_renders_the_four_column_ramp() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("l.png");
    let o = lightd(&[
        "lightgen",
        "--start",
        "#ff0000",
        "--end",
        "#0000ff",
        "--direction",
        "left_to_right",
        "--weight",
        "1",
        "--size",
        "1x4",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    let img = read_png(&out).unwrap();
    let red: Vec<f64> = (0..4).map(|x| img.pixel(0, x)[0]).collect();
    let expect = [1.0, 1.0, 0.75, 0.25];
    for (a, b) in red.iter().zip(expect) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
}

#[test]
fn eval_captions_scores_the_fixture_corpus() {
    let fixtures =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/captions.jsonl");
    let o = lightd(&["eval-captions", "--fixtures", s(&fixtures)]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 12);
    let first = text.lines().nth(1).unwrap();
    assert!(
        first.starts_with("c01") && first.contains("0.829932"),
        "{first}"
    );
}

#[test]
fn check_grad_reports_and_exits_cleanly() {
    let o = lightd(&["check-grad", "--module", "relight", "--instances", "3"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("PASS relight"));
    assert!(!lightd(&["check-grad", "--module", "nope"]).status.success());
}

#[test]
fn attack_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), 1, 2, 12, 12).unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        "[attack]\nparam_iters = 2\nimage_iters = 2\nresize_count = 2\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = lightd(&[
        "attack",
        "--config",
        s(&config),
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--seed",
        "9",
        "--workers",
        "2",
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("2 ok, 0 failed"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["master_seed"], 9);
    assert!(out.join("scene001_adv.png").exists());

    let o = lightd(&[
        "attack",
        "--manifest",
        s(&manifest),
        "--out",
        s(&out),
        "--backend",
        "remote",
    ]);
    assert!(!o.status.success());
}

#[test]
fn niqe_fit_then_score() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("pristine");
    fs::create_dir(&images).unwrap();
    for k in 0..10 {
        write_png(images.join(format!("p{k}.png")), &photo_like(k, 64, 64)).unwrap();
    }
    let model = dir.path().join("niqe.json");
    let o = lightd(&[
        "niqe-fit",
        "--images",
        s(&images),
        "--out",
        s(&model),
        "--patch-size",
        "16",
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("fitted on 10 images"));
    let o = lightd(&[
        "niqe-score",
        "--model",
        s(&model),
        "--image",
        s(&images.join("p3.png")),
    ]);
    assert!(o.status.success(), "{o:?}");
    let score: f64 = stdout(&o).trim().parse().unwrap();
    assert!(score >= 0.0);
}
