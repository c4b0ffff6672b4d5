use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn avuc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avuc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn avuc")
}

fn ok(args: &[&str]) {
    let out = avuc(args);
    assert!(
        out.status.success(),
        "avuc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"{
  "seed": 3,
  "data": {"generator": "two_moons", "n": 300, "noise": 0.2, "ood_n": 50},
  "train": {"method": "svi-avuc", "epochs": 4, "batch_size": 32, "lr": 0.01, "hidden": [8], "warmup_epochs": 2},
  "evaluate": {"mc_samples": 4}
}"#;

/// gen-data plus one trained checkpoint.
struct Fixture {
    dir: TempDir,
    config: PathBuf,
    data: PathBuf,
    ckpt: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", SMALL);
    let data = dir.path().join("data");
    let ckpt = dir.path().join("model.json");
    ok(&["gen-data", "--config", s(&config), "--out", s(&data)]);
    ok(&["train", "--config", s(&config), "--data", s(&data), "--out", s(&ckpt)]);
    Fixture { dir, config, data, ckpt }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let f = fixture();
    let d = f.dir.path();
    for name in ["train.csv", "val.csv", "test.csv", "ood.csv", "descriptor.json"] {
        assert!(f.data.join(name).is_file(), "{name}");
    }
    let desc = read_json(&f.data.join("descriptor.json"));
    assert_eq!(desc["shifts"].as_array().unwrap().len(), 25);
    let history = fs::read_to_string(d.join("model.history.csv")).unwrap();
    assert!(history.starts_with("epoch,elbo,avuc,total,acc,avu"));
    assert_eq!(history.lines().count(), 5);

    let fit = d.join("ts.json");
    ok(&["calibrate", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--objective", "nll", "--mc", "4", "--out", s(&fit), "--apply"]);
    let t = read_json(&fit)["temperature"].as_f64().unwrap();
    assert_eq!(read_json(&f.ckpt)["temperature"].as_f64().unwrap(), t);

    let eval = d.join("eval");
    ok(&["evaluate", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--config", s(&f.config), "--method", "svi-avuc", "--out", s(&eval)]);
    let agg = fs::read_to_string(eval.join("aggregate.csv")).unwrap();
    assert!(agg.starts_with("method,shift,intensity,acc,ece,uce,nll,brier,avu_auc"));
    assert_eq!(agg.lines().count(), 27);
    let sp = fs::read_to_string(eval.join("spearman.csv")).unwrap();
    assert!(sp.starts_with("method,metric,rho,n"));
    assert!(eval.join("curves").join("rotation_5.csv").is_file());
    assert!(read_json(&eval.join("gauss_noise_3.json"))["detection"].is_object());

    let det = d.join("det.json");
    ok(&["detect", "--ckpt", s(&f.ckpt), "--in-data", s(&f.data.join("test.csv")), "--ood-data", s(&f.data.join("ood.csv")), "--mc", "4", "--out", s(&det)]);
    assert!(d.join("det.hist.csv").is_file());
    let det = read_json(&det);
    assert_eq!(det["n_shift"].as_u64(), Some(50));
}

#[test]
fn detecting_a_set_against_itself_finds_nothing() {
    let f = fixture();
    let det = f.dir.path().join("self.json");
    let test = f.data.join("test.csv");
    ok(&["detect", "--ckpt", s(&f.ckpt), "--in-data", s(&test), "--shift-data", s(&test), "--mc", "4", "--out", s(&det)]);
    let det = read_json(&det);
    assert!((det["auroc"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(det["wasserstein"].as_f64().unwrap(), 0.0);
}

#[test]
fn unknown_config_key_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("\"lr\": 0.01", "\"lr\": 0.01, \"learning_rate\": 0.1");
    let cfg = write_config(dir.path(), "bad.json", &bad);
    let out = avuc(&["gen-data", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    let missing = avuc(&["gen-data", "--config", s(&dir.path().join("nope.json")), "--out", s(&dir.path().join("d"))]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_method = avuc(&["evaluate", "--ckpt", "x", "--data", "y", "--out", "z", "--shifts", "fog"]);
    assert_eq!(bad_method.status.code(), Some(2));
}

#[test]
fn divergent_training_exits_with_three() {
    let f = fixture();
    let wild = SMALL
        .replace("\"lr\": 0.01", "\"lr\": 1e300, \"optimizer\": {\"kind\": \"sgd\"}")
        .replace("svi-avuc", "vanilla");
    let cfg = write_config(f.dir.path(), "wild.json", &wild);
    let out = avuc(&["train", "--config", s(&cfg), "--data", s(&f.data), "--out", s(&f.dir.path().join("w.json"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn zero_beta_matches_plain_svi_end_to_end() {
    let f = fixture();
    let d = f.dir.path();
    let zero = write_config(d, "zero.json", &SMALL.replace("\"lr\": 0.01", "\"lr\": 0.01, \"beta\": 0.0"));
    let a = d.join("a.json");
    let b = d.join("b.json");
    ok(&["train", "--config", s(&zero), "--data", s(&f.data), "--out", s(&a)]);
    ok(&["train", "--config", s(&zero), "--data", s(&f.data), "--out", s(&b), "--method", "svi"]);
    let strip = |p: &Path| {
        let mut v = read_json(p);
        v["u_th"] = Value::Null;
        v
    };
    assert_eq!(strip(&a), strip(&b));
    let ea = d.join("ea");
    let eb = d.join("eb");
    ok(&["evaluate", "--ckpt", s(&a), "--data", s(&f.data), "--mc", "4", "--shifts", "gauss_noise", "--out", s(&ea)]);
    ok(&["evaluate", "--ckpt", s(&b), "--data", s(&f.data), "--mc", "4", "--shifts", "gauss_noise", "--out", s(&eb)]);
    let rows = |p: &Path| {
        fs::read_to_string(p.join("aggregate.csv"))
            .unwrap()
            .lines()
            .map(|l| l.split(',').skip(3).take(5).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
    };
    assert_eq!(rows(&ea), rows(&eb));
}

#[test]
fn reruns_are_byte_identical() {
    let f = fixture();
    let d = f.dir.path();
    let again = d.join("again.json");
    ok(&["train", "--config", s(&f.config), "--data", s(&f.data), "--out", s(&again)]);
    assert_eq!(fs::read(&f.ckpt).unwrap(), fs::read(&again).unwrap());
    let data2 = d.join("data2");
    ok(&["gen-data", "--config", s(&f.config), "--out", s(&data2)]);
    for name in ["train.csv", "test.csv", "ood.csv", "shift/rotation_4.csv"] {
        assert_eq!(fs::read(f.data.join(name)).unwrap(), fs::read(data2.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn sample_count_does_not_change_the_schema() {
    let f = fixture();
    let d = f.dir.path();
    let mut headers = Vec::new();
    for mc in ["1", "32"] {
        let out = d.join(format!("e{mc}"));
        ok(&["evaluate", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--mc", mc, "--shifts", "scale", "--out", s(&out)]);
        let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
        let report = read_json(&out.join("scale_2.json"));
        let keys: Vec<String> = report.as_object().unwrap().keys().cloned().collect();
        headers.push((agg.lines().next().unwrap().to_string(), agg.lines().count(), keys));
    }
    assert_eq!(headers[0], headers[1]);
}

#[test]
fn calibrate_reads_a_logit_dump() {
    let f = fixture();
    let d = f.dir.path();
    let dump = d.join("logits.csv");
    let a = d.join("a.json");
    let b = d.join("b.json");
    ok(&["calibrate", "--ckpt", s(&f.ckpt), "--data", s(&f.data), "--mc", "4", "--dump-logits", s(&dump), "--out", s(&a)]);
    ok(&["calibrate", "--logits", s(&dump), "--out", s(&b)]);
    assert_eq!(read_json(&a), read_json(&b));
    let none = avuc(&["calibrate", "--out", s(&d.join("c.json"))]);
    assert_eq!(none.status.code(), Some(2));
}
