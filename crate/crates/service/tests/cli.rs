//! Drives the `apcg` binary end to end in a temporary data directory.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const SMALL: &[&str] = &[
    "--d-model", "16", "--heads", "2", "--ff-dim", "32", "--max-positions", "64", "--batch-size", "4",
];

fn apcg(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_apcg"))
        .env("APCG_DATA_DIR", dir)
        .env_remove("APCG_LISTEN")
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "apcg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run(dir: &Path, args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    apcg(dir, &refs)
}

fn http(addr: &str, method: &str, path: &str) -> (String, Value) {
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    write!(s, "{method} {path} HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let (head, body) = resp.split_once("\r\n\r\n").unwrap();
    (head.lines().next().unwrap().to_owned(), serde_json::from_str(body).unwrap())
}

#[test]
fn pipeline_from_corpus_to_service() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    apcg(dir, &["corpus", "synth", "--n", "24", "--seed", "3"]);
    assert!(dir.join("corpus/raw.jsonl").exists());
    assert!(dir.join("corpus/documents.jsonl").exists());
    let report = json(&apcg(dir, &["corpus", "clean"]));
    assert_eq!(report["kept"], 24, "{report}");
    apcg(dir, &["corpus", "build"]);
    assert!(dir.join("corpus/vocab.json").exists());

    let pre = json(&run(dir, &with(&["pretrain", "--objective", "psg", "--epochs", "1"], SMALL)));
    assert!(pre["model_version"].is_string());
    assert!(dir.join("checkpoints/pretrained.apcg").exists());
    let fine = json(&run(dir, &with(&["finetune", "--epochs", "2"], SMALL)));
    assert!(dir.join("checkpoints/model.apcg").exists());
    let version = fine["model_version"].as_str().unwrap().to_owned();

    let g = json(&apcg(dir, &["grammar", "train", "--n", "200", "--rounds", "10"]));
    assert!(g["held_out_accuracy"].as_f64().unwrap() >= 0.9, "{g}");
    assert!(dir.join("grammar.json").exists());

    let a = json(&apcg(dir, &["generate", "--sku", "sku-3-0001", "--beam-size", "2", "--max-len", "12"]));
    assert_eq!(a["sku"], "sku-3-0001");
    assert_eq!(a["model_version"], version.as_str());
    assert_eq!(a["provenance"], "model");

    let skus = dir.join("skus.txt");
    std::fs::write(&skus, "sku-3-0002\nsku-3-0003\nmissing\n").unwrap();
    let b = json(&apcg(dir, &["batch-generate", "--skus", skus.to_str().unwrap(), "--beam-size", "1"]));
    assert_eq!(b["requested"], 3);
    assert_eq!(b["errored"], 1);
    let total = ["enqueued", "filter_rejected", "cached", "errored"]
        .iter()
        .map(|k| b[k].as_u64().unwrap())
        .sum::<u64>();
    assert_eq!(total, 3);

    let tsv = String::from_utf8(
        apcg(dir, &["eval", "--limit", "3", "--beam-size", "1", "--max-len", "12"]).stdout,
    )
    .unwrap();
    let mut lines = tsv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "Model\tSacreBLEU\tROUGE-1\tROUGE-2\tROUGE-L\tBLEU-1\tBLEU-2\tBLEU-3\tBLEU-4\tMeteor"
    );
    let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(row[0], "Transformer-Pointer");
    assert_eq!(row.len(), 10);
    assert!(row[1..].iter().all(|v| v.parse::<f64>().is_ok()));

    let inject = dir.join("latencies.json");
    let sample: Vec<u32> = (1..=100).collect();
    std::fs::write(&inject, serde_json::to_string(&sample).unwrap()).unwrap();
    let bench = json(&apcg(dir, &["bench", "--inject", inject.to_str().unwrap()]));
    assert_eq!(bench["tp99_ms"], 99.0);
    let bench = json(&apcg(dir, &["bench", "--requests", "6", "--concurrency", "2", "--beam-size", "1"]));
    assert_eq!(bench["completed"], 6);

    // A live server picks up a retrained checkpoint on notification.
    let mut server = Command::new(env!("CARGO_BIN_EXE_apcg"))
        .env("APCG_DATA_DIR", dir)
        .args(["serve", "--listen", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.split_whitespace().nth(2).unwrap().to_owned();
    let (status, health) = http(&addr, "GET", "/v1/healthz");
    assert!(status.contains("200"), "{status}");
    assert_eq!(health["model_version"], version.as_str());

    let r = json(&run(dir, &with(&["retrain", "--epochs", "1", "--batch-size", "4", "--notify"], &[&addr])));
    let new_version = r["model_version"].as_str().unwrap().to_owned();
    assert_ne!(new_version, version);
    assert_eq!(r["reload"]["model_version"], new_version.as_str());
    let (_, health) = http(&addr, "GET", "/v1/healthz");
    assert_eq!(health["model_version"], new_version.as_str());
    server.kill().unwrap();
    server.wait().unwrap();
}

#[test]
fn errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_apcg"))
        .args(["--data-dir", tmp.path().to_str().unwrap(), "corpus", "build"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus clean"));
}
