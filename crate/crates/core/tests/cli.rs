// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smallobj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smallobj")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn synth(dir: &Path) {
    let o = smallobj(&["synth", "--seed", "1", "--images", "4", "--out", s(dir)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
}

#[test]
fn synth_then_validate_and_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    synth(&corpus);
    let ann = corpus.join("annotations.json");

    let o = smallobj(&["validate", s(&ann), "--recompute-area"]);
    assert_eq!(code(&o), 0);
    assert!(text(&o.stdout).contains("clean"));

    let report = tmp.path().join("stats.json");
    let o = smallobj(&["analyze", s(&ann), "--iou-threshold", "0.5", "--json", "--out", s(&report)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["anchor_config"]["positive_iou"], 0.5);
    assert_eq!(v["total_objects"], 16);
    let written: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(written, v);

    let o = smallobj(&["analyze", s(&ann), "--size-basis", "bbox"]);
    assert_eq!(code(&o), 0);
    assert!(text(&o.stdout).contains("small"));
}

#[test]
fn empty_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e");
    let o = smallobj(&["synth", "--images", "1", "--small", "0", "--large", "0", "--seed", "2", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let o = smallobj(&["validate", s(&out.join("annotations.json"))]);
    assert_eq!(code(&o), 0);
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    synth(&corpus);
    let ann = corpus.join("annotations.json");

    let o = smallobj(&["oversample", s(&corpus), "--ratio", "0", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    let o = smallobj(&["analyze", s(&ann), "--ratios", "1,0"]);
    assert_eq!(code(&o), 2);
    let o = smallobj(&["analyze", s(&ann), "--size-basis", "volume"]);
    assert_eq!(code(&o), 2);
    let o = smallobj(&["augment", s(&corpus), "--blend", "gaussian:4", "--out", s(&tmp.path().join("b"))]);
    assert_eq!(code(&o), 2);
    assert!(!tmp.path().join("b").exists());
    let o = smallobj(&["frobnicate"]);
    assert_eq!(code(&o), 2);

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[augment]\nstrategy = \"all\"\ncopis = 2\n").unwrap();
    let o = smallobj(&["--config", s(&cfg), "validate", s(&ann)]);
    assert_eq!(code(&o), 2);
    assert!(text(&o.stderr).contains("copis"));
}

#[test]
fn data_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let o = smallobj(&["analyze", s(&missing)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("nope.json"));

    let dangling = tmp.path().join("dangling.json");
    fs::write(
        &dangling,
        r#"{"images":[{"id":1,"width":10,"height":10,"file_name":"a.png"}],
            "annotations":[{"id":77,"image_id":9,"category_id":1,"bbox":[0,0,2,2],"area":4,
                            "segmentation":[[0,0,2,0,2,2,0,2]],"iscrowd":0}],
            "categories":[{"id":1,"name":"x"}]}"#,
    )
    .unwrap();
    let o = smallobj(&["validate", s(&dangling)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("77"));

    let o = smallobj(&["synth", "--large", "1", "--width", "64", "--height", "64", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 1);
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn area_mismatch_is_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("a.json");
    fs::write(
        &path,
        r#"{"images":[{"id":1,"width":20,"height":20,"file_name":"a.png"}],
            "annotations":[{"id":5,"image_id":1,"category_id":1,"bbox":[0,0,10,10],"area":120,
                            "segmentation":[[0,0,10,0,10,10,0,10]],"iscrowd":0}],
            "categories":[{"id":1,"name":"x"}]}"#,
    )
    .unwrap();
    assert_eq!(code(&smallobj(&["validate", s(&path)])), 0);
    let o = smallobj(&["validate", s(&path), "--recompute-area"]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stdout).contains("warning: annotation 5"));
}

#[test]
fn augment_missing_image_cleans_up() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    synth(&corpus);
    fs::remove_file(corpus.join("images/synth_0002.png")).unwrap();
    let out = tmp.path().join("out");
    let o = smallobj(&["augment", s(&corpus), "--seed", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("synth_0002.png"));
    assert!(!out.exists());
}

#[test]
fn augment_writes_layout_and_echoes_config() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    synth(&corpus);
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "seed = 5\n[augment]\nstrategy = \"single\"\ncopies = 2\nblend = \"gaussian:3\"\n").unwrap();
    let out = tmp.path().join("out");
    let o = smallobj(&["--config", s(&cfg), "augment", s(&corpus), "--copies", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    for f in ["annotations.json", "provenance.json", "report.json", "idmap.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let eff = &report["effective_config"];
    assert_eq!(eff["seed"], 5);
    assert_eq!(eff["augment"]["strategy"]["kind"], "single_object");
    assert_eq!(eff["augment"]["strategy"]["copies"], 3);
    assert_eq!(eff["augment"]["blend"]["kernel"], 3);
    assert_eq!(
        report["paste_successes"].as_u64().unwrap() + report["paste_failures"].as_u64().unwrap(),
        report["paste_attempts"].as_u64().unwrap()
    );
    // original+aug is the default mode
    assert_eq!(report["images_out"], 8);

    let o = smallobj(&["validate", s(&out.join("annotations.json")), "--recompute-area"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stdout));
}

#[test]
fn omitted_seed_is_printed_and_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("c");
    synth(&corpus);
    let out = tmp.path().join("out");
    let o = smallobj(&["augment", s(&corpus), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let stderr = text(&o.stderr);
    let seed: u64 = stderr
        .lines()
        .find_map(|l| l.strip_prefix("seed: "))
        .expect("seed printed")
        .trim()
        .parse()
        .unwrap();
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], seed);
}
