use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn anonbench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anonbench"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = anonbench(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn labels_csv(manifest: &Path, out: &Path) {
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    let mut csv = String::from("id,label\n");
    for r in m["records"].as_array().unwrap() {
        csv += &format!("{},{}\n", r["id"].as_str().unwrap(), r["label"]);
    }
    fs::write(out, csv).unwrap();
}

#[test]
fn module_subcommands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n", "40", "--seed", "1", "--out", "val"]);
    ok(
        d,
        &[
            "synth", "--n", "40", "--seed", "2", "--split", "train", "--out", "train",
        ],
    );
    ok(
        d,
        &[
            "embed",
            "--manifest",
            "val/manifest.json",
            "--out",
            "val.emb1",
        ],
    );
    ok(
        d,
        &[
            "embed",
            "--manifest",
            "train/manifest.json",
            "--out",
            "train.emb1",
        ],
    );
    ok(
        d,
        &[
            "anonymize",
            "--manifest",
            "val/manifest.json",
            "--method",
            "pixel",
            "--degree",
            "0.5",
            "--seed",
            "3",
            "--out",
            "anon",
        ],
    );
    assert!(d.join("anon/images/doc00000.png").exists());
    ok(
        d,
        &[
            "embed",
            "--manifest",
            "anon/manifest.json",
            "--out",
            "anon.emb1",
            "--grid",
            "8",
            "--bins",
            "8",
        ],
    );

    ok(
        d,
        &[
            "retrieve",
            "--query",
            "val.emb1",
            "--db",
            "val.emb1",
            "--out",
            "base.jsonl",
        ],
    );
    ok(
        d,
        &[
            "retrieve",
            "--query",
            "val.emb1",
            "--db",
            "anon.emb1",
            "--out",
            "r.jsonl",
        ],
    );
    let base = fs::read_to_string(d.join("base.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(base.lines().next().unwrap()).unwrap();
    assert_eq!(first["query_id"], "doc00000");
    assert_eq!(first["entries"].as_array().unwrap().len(), 39);
    assert!(first["entries"][0][1].is_f64());

    ok(
        d,
        &[
            "retrieve",
            "--query",
            "val.emb1",
            "--db",
            "val.emb1",
            "--truncate",
            "--top-k",
            "3",
            "--out",
            "top.jsonl",
        ],
    );
    let top: serde_json::Value = serde_json::from_str(
        fs::read_to_string(d.join("top.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(top["entries"].as_array().unwrap().len(), 3);

    let stdout = ok(
        d,
        &[
            "score",
            "--rankings",
            "base.jsonl",
            "--baseline",
            "base.jsonl",
            "--out",
            "self.json",
        ],
    );
    assert!(stdout.starts_with("mAP 100.0  mnDCG1 100.0"), "{stdout}");
    ok(
        d,
        &[
            "score",
            "--rankings",
            "r.jsonl",
            "--baseline",
            "base.jsonl",
            "--out",
            "report.json",
            "--anon",
            "pixel_50",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    for key in ["scenario", "cutoff_p", "map", "mndcg", "per_query"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["per_query"].as_array().unwrap().len(), 40);

    labels_csv(&d.join("val/manifest.json"), &d.join("val.csv"));
    labels_csv(&d.join("train/manifest.json"), &d.join("train.csv"));
    let self_knn = ok(
        d,
        &[
            "classify",
            "--train",
            "train.emb1",
            "--train-labels",
            "train.csv",
            "--eval",
            "train.emb1",
            "--eval-labels",
            "train.csv",
            "--mode",
            "knn",
            "--k",
            "1",
        ],
    );
    assert_eq!(self_knn.trim(), "100.0");
    let linear = ok(
        d,
        &[
            "classify",
            "--train",
            "train.emb1",
            "--train-labels",
            "train.csv",
            "--eval",
            "val.emb1",
            "--eval-labels",
            "val.csv",
            "--mode",
            "linear",
        ],
    );
    let acc: f64 = linear.trim().parse().unwrap();
    assert!((0.0..=100.0).contains(&acc));
}

#[test]
fn crops_prints_tagged_batch() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(
        tmp.path(),
        &[
            "crops",
            "--adaption",
            "A",
            "--globals",
            "2",
            "--locals",
            "8",
            "--seed",
            "5",
        ],
    );
    let batch: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(batch["adaption"], "A");
    let globals = batch["globals"].as_array().unwrap();
    let locals = batch["locals"].as_array().unwrap();
    assert_eq!((globals.len(), locals.len()), (2, 8));
    assert!(globals
        .iter()
        .all(|c| c["source"] == "original" && c["output_size"] == 224));
    assert!(locals
        .iter()
        .all(|c| c["source"] == "anonymized" && c["output_size"] == 96));
    assert_eq!(
        out,
        ok(
            tmp.path(),
            &[
                "crops",
                "--adaption",
                "A",
                "--globals",
                "2",
                "--locals",
                "8",
                "--seed",
                "5"
            ]
        )
    );

    let bad = anonbench(tmp.path(), &["crops", "--adaption", "D"]);
    assert!(!bad.status.success());
}

#[test]
fn correlate_reads_numeric_columns() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("s.csv"), "name,x,y\na,1,1\nb,2,3\nc,3,2\n").unwrap();
    let out = ok(tmp.path(), &["correlate", "--input", "s.csv"]);
    assert_eq!(out.lines().next().unwrap(), ",x,y");
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[..2], ["x", "1"]);
    assert!(
        (row[2].parse::<f64>().unwrap() - 0.5).abs() < 1e-12,
        "{out}"
    );
}

#[test]
fn failed_run_exits_nonzero_and_marks_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("exp.toml"),
        "validation_manifest = \"nowhere.json\"\noutput_dir = \"out\"\n",
    )
    .unwrap();
    let out = anonbench(tmp.path(), &["--jobs", "1", "run", "--config", "exp.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage load"));
    assert!(tmp.path().join("out/INCOMPLETE").exists());

    fs::write(
        tmp.path().join("bad.toml"),
        "validation_manifest = \"v.json\"\nmethods = []\n",
    )
    .unwrap();
    let out = anonbench(tmp.path(), &["run", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}
