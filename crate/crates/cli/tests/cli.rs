use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vibrotact(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vibrotact"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_writes_one_participant_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&vibrotact(tmp.path(), &["synth", "--participants", "1", "--out", "a", "--seed", "5"]));
    assert!(text.contains("wrote 42 trials"), "{text}");
    let csvs = fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 42);
    ok(&vibrotact(tmp.path(), &["synth", "--participants", "1", "--out", "b", "--seed", "5"]));
    let ma = fs::read(tmp.path().join("a/manifest.json")).unwrap();
    let mb = fs::read(tmp.path().join("b/manifest.json")).unwrap();
    assert_eq!(ma, mb);
    ok(&vibrotact(tmp.path(), &["synth", "--participants", "1", "--out", "c", "--seed", "6"]));
    assert_ne!(ma, fs::read(tmp.path().join("c/manifest.json")).unwrap());
}

#[test]
fn train_eval_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vibrotact(d, &["synth", "--participants", "1", "--out", "corpus"]));

    let log = ok(&vibrotact(d, &["train", "--corpus", "corpus", "--model", "m1.json"]));
    assert!(log.contains("p00: 840 training vectors"), "{log}");
    assert_eq!(log.matches("lambda").count(), 7, "{log}");
    assert_eq!(log.matches("nonzero").count(), 7, "{log}");
    ok(&vibrotact(d, &["train", "--corpus", "corpus", "--model", "m2.json"]));
    assert_eq!(fs::read(d.join("m1.json")).unwrap(), fs::read(d.join("m2.json")).unwrap());

    let model: serde_json::Value = serde_json::from_slice(&fs::read(d.join("m1.json")).unwrap()).unwrap();
    assert!(model["run_config"]["pipeline"]["fft_pad"] == 256);
    assert!(model["run_config"].get("corpus_dir").is_none());

    let text = ok(&vibrotact(d, &["eval", "--corpus", "corpus", "--model", "m1.json", "--report", "r.json"]));
    assert!(text.contains("chance level: 14.3 %"), "{text}");
    let rows = text.lines().filter(|l| l.starts_with("1-")).count();
    assert_eq!(rows, 6, "{text}");
    assert_eq!(fs::read_to_string(d.join("r.txt")).unwrap(), text);

    ok(&vibrotact(d, &["eval", "--corpus", "corpus", "--model", "m1.json", "--report", "r2.json"]));
    assert_eq!(fs::read(d.join("r.json")).unwrap(), fs::read(d.join("r2.json")).unwrap());

    let rendered = ok(&vibrotact(d, &["report", "--input", "r.json"]));
    assert_eq!(rendered, text);

    let bad = vibrotact(d, &["eval", "--corpus", "corpus", "--model", "m1.json", "--report", "r3.json", "--fft-pad", "512"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("provenance"), "{}", stderr(&bad));
    assert!(!d.join("r3.json").exists());

    let pooled = vibrotact(d, &["eval", "--corpus", "corpus", "--model", "m1.json", "--report", "r4.json", "--pooled"]);
    assert_eq!(pooled.status.code(), Some(1));

    let feats = ok(&vibrotact(d, &["featurize", "--corpus", "corpus", "--out", "f.csv"]));
    assert!(feats.contains("wrote 840 feature vectors of dimension 72"), "{feats}");
    let csv = fs::read_to_string(d.join("f.csv")).unwrap();
    assert_eq!(csv.lines().count(), 841);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 78);

    let stuck = vibrotact(d, &["train", "--corpus", "corpus", "--model", "m5.json", "--max-iter", "1"]);
    assert_eq!(stuck.status.code(), Some(2), "{}", stderr(&stuck));
}

#[test]
fn held_out_speed_must_match_between_train_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vibrotact(d, &["synth", "--participants", "1", "--out", "corpus"]));
    let log = ok(&vibrotact(d, &["train", "--corpus", "corpus", "--model", "m.json", "--hold-out-speed", "60"]));
    assert!(log.contains("p00: 560 training vectors"), "{log}");
    let text = ok(&vibrotact(
        d,
        &["eval", "--corpus", "corpus", "--model", "m.json", "--report", "r.json", "--hold-out-speed", "60"],
    ));
    assert!(text.contains("accuracy"), "{text}");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["windows"][0]["trials"], 14);
    let mismatch = vibrotact(d, &["eval", "--corpus", "corpus", "--model", "m.json", "--report", "r2.json"]);
    assert_eq!(mismatch.status.code(), Some(1));
}

#[test]
fn strict_mode_rejects_missing_material() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&vibrotact(d, &["synth", "--participants", "1", "--out", "corpus"]));
    let manifest_path = d.join("corpus/manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_slice(&fs::read(&manifest_path).unwrap()).unwrap();
    manifest["trials"]
        .as_array_mut()
        .unwrap()
        .retain(|t| t["meta"]["material"] != "cotton");
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest).unwrap()).unwrap();

    let out = vibrotact(d, &["train", "--corpus", "corpus", "--model", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("cotton"), "{}", stderr(&out));
    assert!(!d.join("m.json").exists());

    let relaxed = ok(&vibrotact(d, &["train", "--corpus", "corpus", "--model", "m.json", "--relaxed"]));
    assert!(relaxed.contains("720 training vectors"), "{relaxed}");
}

#[test]
fn anova_tables_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("fixture.csv"),
        "material,speed,value\nx,p,10\nx,p,12\nx,q,20\nx,q,22\ny,p,30\ny,p,32\ny,q,40\ny,q,42\n",
    )
    .unwrap();
    let table = ok(&vibrotact(d, &["anova", "--input", "fixture.csv"]));
    assert!(table.contains("material x speed"), "{table}");
    let json: serde_json::Value =
        serde_json::from_str(&ok(&vibrotact(d, &["anova", "--input", "fixture.csv", "--json"]))).unwrap();
    assert!((json["factor_a"]["ss"].as_f64().unwrap() - 800.0).abs() < 1e-9);
    assert!((json["factor_b"]["ss"].as_f64().unwrap() - 200.0).abs() < 1e-9);
    assert!((json["factor_a"]["F"].as_f64().unwrap() - 400.0).abs() < 1e-9);
    assert!((json["ss_error"].as_f64().unwrap() - 8.0).abs() < 1e-9);

    fs::write(d.join("flat.csv"), "a,b,v\nx,p,3\nx,p,3\nx,q,3\nx,q,3\ny,p,3\ny,p,3\ny,q,3\ny,q,3\n").unwrap();
    let flat: serde_json::Value =
        serde_json::from_str(&ok(&vibrotact(d, &["anova", "--input", "flat.csv", "--json"]))).unwrap();
    for effect in ["factor_a", "factor_b", "interaction"] {
        assert_eq!(flat[effect]["F"], 0.0);
    }

    fs::write(d.join("bad.csv"), "a,b,v\nx,p,1\nx,p,2\nx,q,three\n").unwrap();
    let bad = vibrotact(d, &["anova", "--input", "bad.csv"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("bad.csv:4"), "{}", stderr(&bad));

    fs::write(d.join("unbalanced.csv"), "a,b,v\nx,p,1\nx,p,2\nx,q,3\nx,q,4\ny,p,5\ny,p,6\ny,q,7\n").unwrap();
    assert_eq!(vibrotact(d, &["anova", "--input", "unbalanced.csv"]).status.code(), Some(1));

    assert_eq!(vibrotact(d, &["anova", "--input", "missing.csv"]).status.code(), Some(3));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(vibrotact(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(vibrotact(tmp.path(), &["train"]).status.code(), Some(1));
    assert!(vibrotact(tmp.path(), &["--help"]).status.success());
}
