//! End-to-end runs of the `cgt` binary on a tiny configuration.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
model.n_layers=3
model.readout_layer=1
model.dim_x=16
model.dim_y=8
model.heads_x=2
model.heads_y=2
model.rank=2
model.n_templates=4
model.max_seq_len=80
data.kind=icl
data.n_tasks=2
data.n_ex=4
data.digits=1
optim.total_steps=6
optim.warmup=2
optim.batch=2
train.eval_every=3
train.eval_batches=1
train.checkpoint_every=3
";

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cgt-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn cgt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgt")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = cgt(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn trained(dir: &Path) -> PathBuf {
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let run = dir.join("run");
    ok(&["train", s(&cfg), "--set", &format!("output_dir={}", run.display()), "--log-every", "0"]);
    run
}

#[test]
fn train_writes_run_artifacts() {
    let dir = scratch("train");
    let run = trained(&dir);
    for f in ["config.txt", "build.txt", "loss.csv", "eval.csv", "last.ckpt", "best.ckpt", "final.ckpt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,lce,laux,rc,rd,kl,rp,total,lr\n"));
    assert_eq!(loss.lines().count(), 7);
}

#[test]
fn eval_specialize_and_inspect() {
    let dir = scratch("pipeline");
    let run = trained(&dir);
    let ck = run.join("final.ckpt");
    let out = dir.join("eval");
    ok(&["eval", s(&ck), "--mode", "dynamic", "--count", "8", "--out", s(&out)]);
    let acc = std::fs::read_to_string(out.join("accuracy.csv")).unwrap();
    assert!(acc.starts_with("run,segment,mode,value,stderr"));
    assert!(out.join("variation.csv").exists());
    for mode in ["frozen", "folded", "moving-average@0.5"] {
        ok(&["eval", s(&ck), "--mode", mode, "--count", "8", "--out", s(&dir.join(mode))]);
    }

    let spec = dir.join("spec.ckpt");
    ok(&["specialize", s(&ck), "--prefix", "3*4=+0012|5*1=+0005|", "--fold", "--out", s(&spec)]);
    ok(&["eval", s(&spec), "--count", "8", "--out", s(&dir.join("spec_eval"))]);

    ok(&["probe", s(&ck), "--count", "16", "--train", "8", "--out", s(&dir.join("probe"))]);
    assert!(dir.join("probe/probe.csv").exists());
    ok(&["dump", s(&ck), "--count", "2", "--out", s(&dir.join("dump"))]);
    assert!(dir.join("dump/embeddings.csv").exists());
    assert!(dir.join("dump/dotmat_0.csv").exists());
}

#[test]
fn gen_data_writes_json_lines() {
    let dir = scratch("gendata");
    let cfg = dir.join("tiny.cfg");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.join("samples.jsonl");
    ok(&["gen-data", s(&cfg), "--count", "5", "--out", s(&out)]);
    assert_eq!(std::fs::read_to_string(out).unwrap().lines().count(), 5);
}

#[test]
fn oracle_passes_on_small_budget() {
    let dir = scratch("oracle");
    let out = dir.join("oracle.csv");
    ok(&["oracle", "--draws", "20000", "--models", "3", "--suffixes", "5", "--out", s(&out)]);
    assert!(out.exists());
}

#[test]
fn bad_config_key_is_reported() {
    let dir = scratch("badkey");
    let cfg = dir.join("bad.cfg");
    std::fs::write(&cfg, "model.dim_z=4\n").unwrap();
    let out = cgt(&["train", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.dim_z"));
}
