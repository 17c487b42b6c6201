use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rrn::checkpoint::Checkpoint;
use tempfile::TempDir;

const TINY: &str = "\
videos_per_class = 2
test_videos_per_class = 1
frames = 4
size = 8
stages = 4x1,8x1
temporal_positions = 1:0
connection = linear
epochs = 4
update_fraction = 0.25
pretrain_frames = 24
pretrain_epochs = 1
extractor_stages = 4x1
feature_stage = 0
ablate_positions = 1:0
";

fn rrn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rrn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rrn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Env {
    dir: TempDir,
}

impl Env {
    fn new(extra: &str) -> Self {
        Self::with(&format!("{TINY}{extra}"))
    }

    fn with(config: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("run.cfg"), config).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn generate(&self, out: &str) {
        ok(&["generate", "--config", &self.p("run.cfg"), "--out", &self.p(out), "--seed", "5"]);
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn generate_is_byte_identical_for_a_seed() {
    let env = Env::new("");
    env.generate("a");
    env.generate("b");
    for f in ["train.rrnd", "test.rrnd", "manifest.txt"] {
        assert_eq!(read(&env.path("a").join(f)), read(&env.path("b").join(f)), "{f}");
    }
    ok(&["generate", "--config", &env.p("run.cfg"), "--out", &env.p("c"), "--seed", "6"]);
    assert_ne!(read(&env.path("a/train.rrnd")), read(&env.path("c/train.rrnd")));
    assert_ne!(read(&env.path("a/train.rrnd")), read(&env.path("a/test.rrnd")));
    let manifest = String::from_utf8(read(&env.path("a/manifest.txt"))).unwrap();
    assert!(manifest.contains("--seed 5"), "{manifest}");
}

#[test]
fn config_and_flag_errors_exit_with_one() {
    let env = Env::new("bogus_key = 3\n");
    let out = rrn(&["generate", "--config", &env.p("run.cfg"), "--out", &env.p("d")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    let env = Env::new("frames = 9\n");
    assert_eq!(rrn(&["generate", "--config", &env.p("run.cfg"), "--out", &env.p("d")]).status.code(), Some(1));

    assert_eq!(rrn(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(rrn(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rrn(&["ablate", "--data", "x", "--threads", "0"]).status.code(), Some(1));
}

#[test]
fn help_and_schema_succeed() {
    assert!(rrn(&["--help"]).status.success());
    let out = ok(&["schema"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["connection", "temporal_positions", "update_fraction", "gru_hidden", "ablate_contexts"] {
        assert!(text.contains(key), "schema lacks {key}");
    }
}

#[test]
fn missing_and_corrupt_files_exit_with_two() {
    let env = Env::new("");
    let out = rrn(&["train", "--config", &env.p("run.cfg"), "--data", &env.p("nowhere"), "--out", &env.p("m")]);
    assert_eq!(out.status.code(), Some(2));

    env.generate("d");
    ok(&["train", "--config", &env.p("run.cfg"), "--data", &env.p("d"), "--out", &env.p("m.ckpt")]);
    let good = read(&env.path("m.ckpt"));

    let mut truncated = good.clone();
    truncated.truncate(good.len() - 3);
    let mut bad_magic = good.clone();
    bad_magic[0] ^= 0xff;
    let mut trailing = good.clone();
    trailing.push(0);
    for (name, bytes) in [("truncated", truncated), ("magic", bad_magic), ("trailing", trailing)] {
        fs::write(env.path("bad.ckpt"), bytes).unwrap();
        let out = rrn(&["eval", "--checkpoint", &env.p("bad.ckpt"), "--data", &env.p("d")]);
        assert_eq!(out.status.code(), Some(2), "{name}");
        assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    }

    let mut data = read(&env.path("d/test.rrnd"));
    data.truncate(data.len() / 2);
    fs::write(env.path("d/test.rrnd"), data).unwrap();
    let out = rrn(&["eval", "--checkpoint", &env.p("m.ckpt"), "--data", &env.p("d")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_shape_mismatch_is_reported() {
    let env = Env::new("");
    env.generate("d");
    let other = Env::with(&TINY.replace("size = 8", "size = 16"));
    let out = rrn(&["train", "--config", &other.p("run.cfg"), "--data", &env.p("d"), "--out", &env.p("m")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape"));
}

fn metrics(path: &Path) -> Vec<String> {
    String::from_utf8(read(path)).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let env = Env::new("");
    env.generate("d");
    let cfg = env.p("run.cfg");
    ok(&["train", "--config", &cfg, "--data", &env.p("d"), "--out", &env.p("full.ckpt"), "--metrics", &env.p("full.jsonl")]);

    fs::write(env.path("half.cfg"), TINY.replace("epochs = 4", "epochs = 2")).unwrap();
    ok(&["train", "--config", &env.p("half.cfg"), "--data", &env.p("d"), "--out", &env.p("half.ckpt"), "--metrics", &env.p("half.jsonl")]);
    ok(&[
        "train", "--config", &cfg, "--data", &env.p("d"), "--out", &env.p("resumed.ckpt"),
        "--resume", &env.p("half.ckpt"), "--metrics", &env.p("rest.jsonl"),
    ]);

    assert_eq!(read(&env.path("full.ckpt")), read(&env.path("resumed.ckpt")));
    let mut joined = metrics(&env.path("half.jsonl"));
    joined.extend(metrics(&env.path("rest.jsonl")));
    assert_eq!(joined, metrics(&env.path("full.jsonl")));
    assert_eq!(joined.len(), 8);

    // Anything but the epoch budget must match the checkpoint.
    fs::write(env.path("other.cfg"), format!("{TINY}lr = 0.01\n")).unwrap();
    let out = rrn(&["train", "--config", &env.p("other.cfg"), "--data", &env.p("d"), "--out", &env.p("x"), "--resume", &env.p("half.ckpt")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr"));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    for model in ["rrn", "gru", "avgpool"] {
        let env = Env::with(&TINY.replace("epochs = 4", &format!("epochs = 1\nmodel = {model}")));
        env.generate("d");
        ok(&["train", "--config", &env.p("run.cfg"), "--data", &env.p("d"), "--out", &env.p("m.ckpt")]);
        let bytes = read(&env.path("m.ckpt"));
        let ckpt = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(ckpt.encode().unwrap(), bytes, "{model}");
        let cfg = ckpt.run_config().unwrap();
        let mut restored = rrn::checkpoint::restore::<f32>(&cfg, &ckpt).unwrap();
        let again = rrn::checkpoint::capture(&cfg, &mut restored, None).unwrap();
        let params_only: Vec<_> = ckpt.records.iter().filter(|r| !r.name.starts_with("optim.")).cloned().collect();
        assert_eq!(again.records, params_only, "{model}");

        let out = ok(&["eval", "--checkpoint", &env.p("m.ckpt"), "--data", &env.p("d"), "--split", "test"]);
        let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 4, "{model}");
        for (i, l) in lines.iter().enumerate() {
            assert_eq!(l["id"], i);
            let probs = l["probs"].as_array().unwrap();
            let total: f64 = probs.iter().map(|p| p.as_f64().unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    let env = Env::new("gradcheck_coords = 3\n");
    let out = ok(&["gradcheck", "--config", &env.p("run.cfg")]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max rel error"));
    let out = rrn(&["gradcheck", "--config", &env.p("run.cfg"), "--inject-fault", "conv2d"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn ablation_grid_rows_and_degenerate_axes() {
    let env = Env::with(&TINY.replace("epochs = 4", "epochs = 1\nablate_connections = identity,nonlinear\nablate_contexts = 2,1"));
    env.generate("d");
    let one = ok(&["ablate", "--config", &env.p("run.cfg"), "--data", &env.p("d")]);
    let two = ok(&["ablate", "--config", &env.p("run.cfg"), "--data", &env.p("d"), "--threads", "3"]);
    assert_eq!(one.stdout, two.stdout, "table must not depend on the thread count");
    let table = String::from_utf8(one.stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 4, "{table}");
    assert!(rows[0].starts_with("| identity | 1:0 | 2 |"), "{table}");
    assert!(rows[3].starts_with("| nonlinear | 1:0 | 1 |"), "{table}");
    // Identity connections add no parameters.
    assert!(rows[0].contains("| 0 |"));

    let empty = Env::new("ablate_contexts =\n");
    let out = rrn(&["ablate", "--config", &empty.p("run.cfg"), "--data", &env.p("d")]);
    assert_eq!(out.status.code(), Some(1));
}
