use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_lpirec");

/// Click sessions that tend to walk forward through a 12-item catalog, with
/// an occasional purchase.
fn write_csv(path: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut text = String::from("session_id,timestamp,item_id,event_type,rating\n");
    for s in 0..120 {
        let len = rng.random_range(3..8);
        let mut item = rng.random_range(0..12);
        for t in 0..len {
            let event = if rng.random_bool(0.15) { "purchase" } else { "click" };
            text.push_str(&format!("s{s},{t},item{item},{event},\n"));
            item = if rng.random_bool(0.7) { (item + 1) % 12 } else { rng.random_range(0..12) };
        }
    }
    fs::write(path, text).unwrap();
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_csv(&dir.path().join("data.csv"));
    let config = format!(
        "data_path = data.csv\nembedding_dim = 8\nbatch_size = 32\nlearning_rate = 0.01\nepochs = 2\n\
         objective = lpi\nlambda_td = 0.5\ngamma = 0.5\noutput_dir = out\n{extra}"
    );
    fs::write(dir.path().join("run.conf"), config).unwrap();
    dir
}

fn lpirec(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn train_then_eval() {
    let dir = setup("");
    let train = lpirec(dir.path(), &["train", "--config", "run.conf"]);
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/train_log.json")).unwrap()).unwrap();
    assert_eq!(log["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(log["objective"], "lpi");
    assert_eq!(log["epochs"][0]["selection_metric"], "selection_score");

    let eval =
        lpirec(dir.path(), &["eval", "--config", "run.conf", "--checkpoint", "out/checkpoint.bin", "--split", "test"]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/metrics_test.json")).unwrap()).unwrap();
    for key in ["hr@10", "ndcg@20", "ar@1", "selection_score", "js", "kl"] {
        assert!(metrics.get(key).is_some(), "missing {key}");
    }
    let js = metrics["js"]["value"].as_f64().unwrap();
    assert!((0.0..=std::f64::consts::LN_2).contains(&js));
    let stdout: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(stdout, metrics);
}

#[test]
fn zero_epochs_saves_initial_checkpoint() {
    let tmp = setup("");
    let dir = tmp.path();
    let conf = fs::read_to_string(dir.join("run.conf")).unwrap().replace("epochs = 2", "epochs = 0");
    fs::write(dir.join("run.conf"), conf).unwrap();
    let out = lpirec(dir, &["train", "--config", "run.conf"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("out/checkpoint.bin").exists());
    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("out/train_log.json")).unwrap()).unwrap();
    assert!(log["epochs"].as_array().unwrap().is_empty());
}

#[test]
fn diagnose_sweeps_beta() {
    let dir = setup("");
    let base = fs::read_to_string(dir.path().join("run.conf")).unwrap();
    for (beta, name) in [(2.0, "b2"), (0.5, "b05")] {
        let conf = format!("{base}beta = {beta}\n").replace("output_dir = out", &format!("output_dir = {name}"));
        fs::write(dir.path().join(format!("{name}.conf")), conf).unwrap();
        let out = lpirec(dir.path(), &["train", "--config", &format!("{name}.conf")]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = lpirec(
        dir.path(),
        &["diagnose", "--config", "b2.conf", "--checkpoints", "b2/checkpoint.bin", "b05/checkpoint.bin"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("b2/sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "beta,ndcg_click@20,ndcg_purchase@20,ndcg@20,js");
    assert!(lines[1].starts_with("0.5,") && lines[2].starts_with("2,"));

    let single = lpirec(dir.path(), &["diagnose", "--config", "b2.conf", "--checkpoints", "b2/checkpoint.bin"]);
    assert_eq!(code(&single), 1);
}

#[test]
fn exit_codes() {
    let dir = setup("");
    assert_eq!(code(&lpirec(dir.path(), &["--help"])), 0);
    assert_eq!(code(&lpirec(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&lpirec(dir.path(), &["train"])), 1);
    assert_eq!(code(&lpirec(dir.path(), &["train", "--config", "missing.conf"])), 1);

    fs::write(dir.path().join("bad.conf"), "data_path = data.csv\nbeta = 0\n").unwrap();
    assert_eq!(code(&lpirec(dir.path(), &["train", "--config", "bad.conf"])), 1);

    let eval = lpirec(dir.path(), &["eval", "--config", "run.conf", "--checkpoint", "nowhere.bin"]);
    assert_eq!(code(&eval), 2);
    let split = lpirec(dir.path(), &["eval", "--config", "run.conf", "--checkpoint", "nowhere.bin", "--split", "dev"]);
    assert_eq!(code(&split), 1);

    fs::write(dir.path().join("junk.bin"), b"not a checkpoint").unwrap();
    let junk = lpirec(dir.path(), &["eval", "--config", "run.conf", "--checkpoint", "junk.bin"]);
    assert_eq!(code(&junk), 1);
    assert!(String::from_utf8_lossy(&junk.stderr).contains("magic"));
}
