use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_speechcascade"));
    c.env_remove("SPEECHCASCADE_LOG").env_remove("SPEECHCASCADE_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pause").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_command_exits_two() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frobnicate"));
}

#[test]
fn encode_pauses_matches_golden() {
    let got = ok(&["encode-pauses", "--alignment", s(&fixture("18_mixed_classes.align.csv"))]);
    let want = std::fs::read_to_string(fixture("18_mixed_classes.expected.txt")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn encode_pauses_writes_file_and_honours_min_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("enc.txt");
    ok(&[
        "encode-pauses",
        "--alignment",
        s(&fixture("13_unmarked_min_gap.align.csv")),
        "--min-gap",
        "0.1",
        "--out",
        s(&out),
    ]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "a b\n");
}

#[test]
fn missing_input_reports_error_class() {
    let out = run(&["encode-pauses", "--alignment", "/nonexistent/x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error[io]:"), "{err}");
}

#[test]
fn parse_and_wer() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.txt");
    std::fs::write(&raw, "[PAR] The boy, uh (3.0) is falling!").unwrap();
    assert_eq!(ok(&["parse", "--transcript", s(&raw)]), "the boy uh is falling\n");

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "the (boy").unwrap();
    let out = run(&["parse", "--transcript", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[annotation]:"));

    let r = dir.path().join("ref.txt");
    let h = dir.path().join("hyp.txt");
    std::fs::write(&r, "the boy , is ... falling").unwrap();
    std::fs::write(&h, "The boy falling down").unwrap();
    assert_eq!(ok(&["evaluate", "--reference", s(&r), "--hypothesis", s(&h)]), "wer=0.5 edits=2 ref_len=4\n");
}

#[test]
fn silence_features_of_one_file() {
    let dir = tempfile::tempdir().unwrap();
    let vad = dir.path().join("a.vad.csv");
    std::fs::write(&vad, "# total_duration_sec=7.0\nstart_sec,end_sec\n0.0,1.0\n2.0,3.0\n6.0,7.0\n").unwrap();
    let out = ok(&["silence-features", "--vad", s(&vad)]);
    let mut lines = out.lines();
    assert!(lines.next().unwrap().starts_with("silence_count_per_sec,"));
    let values: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(values[2..6], [3.0, 1.0, 2.0, 1.0]);
}

/// Synthesizes a small cohort and drives every experiment command.
#[test]
fn synthetic_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let msg = ok(&["synth", "--seed", "3", "--out", s(&data), "--n-dev", "60", "--n-test", "20"]);
    assert!(msg.contains("60 development subjects (30 HC, 24 MCI, 6 Dementia)"), "{msg}");
    let manifest = data.join("manifest.csv");
    let test_manifest = data.join("test_manifest.csv");

    let split = dir.path().join("split.json");
    assert!(ok(&["split", "--manifest", s(&manifest), "--seed", "11", "--out", s(&split)]).starts_with("46 train / 14 validation"));

    let feats = dir.path().join("silence.csv");
    ok(&["featurize", "--manifest", s(&manifest), "--feature", "silence", "--out", s(&feats)]);
    assert_eq!(std::fs::read_to_string(&feats).unwrap().lines().count(), 1 + 60 * 3);

    let model = dir.path().join("cascade.json");
    let direct = dir.path().join("direct.json");
    let msg = ok(&[
        "train-cascade",
        "--manifest",
        s(&manifest),
        "--split",
        s(&split),
        "--feature",
        "ngram-12",
        "--model",
        s(&model),
        "--direct",
        s(&direct),
        "--epochs",
        "3",
    ]);
    assert!(msg.contains("stage 1 trained on 46 (23 HC vs 23 NonHC), stage 2 on 23 (18 MCI vs 5 Dementia)"), "{msg}");

    let preds = dir.path().join("preds.csv");
    let out = ok(&["predict", "--model", s(&model), "--manifest", s(&manifest), "--split", s(&split)]);
    assert!(out.starts_with("subject_id,predicted_label,stage1_prob,stage2_prob\n"));
    assert_eq!(out.lines().count(), 15);
    std::fs::write(&preds, &out).unwrap();
    assert!(ok(&["evaluate", "--predictions", s(&preds), "--manifest", s(&manifest)]).starts_with("macro_f1="));
    let direct_out = ok(&["predict", "--model", s(&direct), "--manifest", s(&manifest)]);
    assert!(direct_out.starts_with("subject_id,predicted_label,p_hc,p_mci,p_dementia\n"));

    let common = [
        "--manifest",
        s(&manifest),
        "--test-manifest",
        s(&test_manifest),
        "--split-seeds",
        "11",
        "--seeds",
        "0",
        "--epochs",
        "2",
        "--no-retrain",
    ];
    let cmp = dir.path().join("cmp");
    let mut args = vec!["compare", "--out", s(&cmp)];
    args.extend(common);
    let table = ok(&args);
    assert!(table.contains("Majority voting (1 splits) [cascade]"), "{table}");
    assert!(table.contains("[direct3]"));
    for f in ["report.txt", "report.csv", "provenance.json", "splits/split1.json", "predictions/multi_split_test_cascade.csv"] {
        assert!(cmp.join(f).exists(), "{f}");
    }

    let ens = dir.path().join("ens");
    let mut args = vec!["ensemble", "--out", s(&ens)];
    args.extend(common);
    assert!(!ok(&args).contains("direct3"));

    let reg = dir.path().join("reg");
    let mut args = vec!["train-regress", "--out", s(&reg), "--rmse-threshold", "3.0"];
    args.extend(common);
    let table = ok(&args);
    assert!(table.contains("metric: rmse"), "{table}");
    let members = std::fs::read_to_string(reg.join("pool/split1_members.csv")).unwrap();
    assert_eq!(members.lines().count(), 1 + 45);
    let test_scores = reg.join("predictions/score_averaging_test.csv");
    assert!(ok(&["evaluate", "--predictions", s(&test_scores), "--manifest", s(&test_manifest)]).starts_with("rmse="));
}

#[test]
fn config_file_and_invalid_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = run(&["compare", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]:"));

    let out = run(&["compare", "--stage1-threshold", "1.5", "--manifest", "m.csv"]);
    assert_eq!(out.status.code(), Some(1));
}
