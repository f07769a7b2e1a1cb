use std::path::Path;
use std::process::{Command, Output};

fn gml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gml"))
        .args(args)
        .output()
        .expect("run gml")
}

fn ok(args: &[&str]) -> Output {
    let out = gml(args);
    assert!(
        out.status.success(),
        "gml {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_featurize_train_predict_evaluate_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, cache, run, pred, rep) = (
        tmp.path().join("data"),
        tmp.path().join("cache"),
        tmp.path().join("run"),
        tmp.path().join("pred"),
        tmp.path().join("rep"),
    );
    ok(&["synth", "--excerpts", "6", "--listeners", "5", "--seed", "2", "--out", s(&data)]);
    ok(&["featurize", "--manifest", s(&data.join("manifest.csv")), "--out", s(&cache)]);
    ok(&[
        "train", "--cache", s(&cache), "--folds", "2", "--epochs", "1", "--augmentation", "cutmix", "--provenance",
        "--out", s(&run),
    ]);
    for f in ["fold0.gmlckpt", "fold1.gmlckpt", "loss.csv", "provenance.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    ok(&["predict", "--cache", s(&cache), "--run", s(&run), "--oof", "--out", s(&pred)]);
    let predictions = std::fs::read_to_string(pred.join("predictions.csv")).unwrap();
    assert!(predictions.starts_with("condition_id,mu,log_scale,family\n"));
    assert_eq!(predictions.lines().count(), 1 + 6 * 5);

    let out = ok(&[
        "evaluate", "--predictions", s(&pred.join("predictions.csv")), "--subjective",
        s(&cache.join("subjective.csv")), "--out", s(&rep),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("R_p"));
    ok(&["report", "--report", s(&rep.join("report.json")), "--out", s(&rep)]);
    let svg = std::fs::read_to_string(rep.join("report.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 30);
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("p.csv");
    std::fs::write(&p, "condition_id,mu,log_scale,family\ne1/a,70,1.8,logistic\ne1/b,35.5,2.1,gaussian\n").unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["simulate", "--predictions", s(&p), "--n", "9", "--seed", "7", "--out", s(dir)]);
    }
    let x = std::fs::read(a.join("simulated.csv")).unwrap();
    assert_eq!(x, std::fs::read(b.join("simulated.csv")).unwrap());
    assert_eq!(String::from_utf8_lossy(&x).lines().count(), 1 + 2 * 9);
}

#[test]
fn evaluate_reports_first_missing_condition() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("p.csv");
    let subj = tmp.path().join("s.csv");
    std::fs::write(&p, "condition_id,mu,log_scale,family\ne1/a,70,1.8,logistic\n").unwrap();
    std::fs::write(
        &subj,
        "condition_id,listener_id,score\ne1/a,L1,60\ne1/a,L2,70\ne2/b,L1,50\ne2/b,L2,55\n",
    )
    .unwrap();
    let out = gml(&["evaluate", "--predictions", s(&p), "--subjective", s(&subj), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("e2/b"));
}

#[test]
fn flag_and_config_errors_exit_with_one() {
    assert_eq!(gml(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(gml(&["frobnicate"]).status.code(), Some(1));
    let conflicting = gml(&["predict", "--cache", "c", "--checkpoint", "a.gmlckpt", "--run", "r"]);
    assert_eq!(conflicting.status.code(), Some(1));
    assert!(!conflicting.stderr.is_empty());

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"learning_rate": 0.001, "warmup": 3}}"#).unwrap();
    let out = gml(&["--config", s(&cfg), "synth", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warmup"));

    let missing = gml(&["featurize", "--manifest", s(&tmp.path().join("none.csv"))]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(gml(&["--help"]).status.code(), Some(0));
}
