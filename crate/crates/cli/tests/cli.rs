use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SYNTH: [&str; 7] = [
    "synth_vocab=60",
    "synth_indicative=10",
    "synth_train=80",
    "synth_dev=20",
    "synth_test=20",
    "synth_source_dim=16",
    "synth_small_dim=4",
];

const FAST: &str = "max_epochs=3\npatience=2\nbatch_size=16\ndistilled_dim=4\nae_epochs=3\nensemble_size=2\n";

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embdistill")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let mut args = vec!["synth-corpus", "--seed", "3", "--out", data.to_str().unwrap()];
        for kv in &SYNTH {
            args.extend(["--set", kv]);
        }
        ok(&args);
        fs::write(dir.path().join("fast.cfg"), FAST).unwrap();
        Fixture { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn s(&self, rel: &str) -> String {
        self.path(rel).to_str().unwrap().to_string()
    }

    fn teacher(&self, out: &str, seed: &str) {
        let (emb, data, cfg, out) = (self.s("data/source.vec"), self.s("data"), self.s("fast.cfg"), self.s(out));
        ok(&[
            "train-teacher",
            "--arch",
            "cnn",
            "--emb",
            &emb,
            "--data",
            &data,
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            &out,
        ]);
    }

    fn logits(&self, teacher: &str, out: &str) {
        let (t, emb, data, out) = (self.s(teacher), self.s("data/source.vec"), self.s("data"), self.s(out));
        ok(&["gen-logits", "--teacher", &t, "--emb", &emb, "--data", &data, "--out", &out]);
    }
}

fn manifest_value(dir: &Path, key: &str) -> Option<String> {
    let text = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    text.lines().find_map(|l| l.strip_prefix(&format!("{key}: ")).map(str::to_string))
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = bin(&["train-teacher", "--arch", "cnn", "--data", "d", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--emb") && err.contains("Usage"), "{err}");
}

#[test]
fn help_exits_zero() {
    let out = bin(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("distill-student"));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let f = Fixture::new();
    let (emb, data) = (f.s("data/source.vec"), f.s("data"));

    let out = bin(&["pretrain-ae", "--emb", &emb, "--set", "no_such_key=1", "--out", &f.s("a")]);
    assert_eq!(out.status.code(), Some(1));

    let out = bin(&["train-teacher", "--arch", "cnn", "--emb", &emb, "--data", &f.s("nowhere"), "--out", &f.s("b")]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(manifest_value(&f.path("b"), "status").as_deref(), Some("failed"));

    let cfg = f.s("fast.cfg");
    let out = bin(&[
        "train-teacher",
        "--arch",
        "cnn",
        "--emb",
        &emb,
        "--data",
        &data,
        "--config",
        &cfg,
        "--set",
        "learning_rate=1e308",
        "--out",
        &f.s("c"),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn teacher_training_is_reproducible_and_recorded() {
    let f = Fixture::new();
    f.teacher("t1", "5");
    f.teacher("t2", "5");
    for name in ["model.ckpt", "report.tsv", "history.tsv"] {
        assert_eq!(fs::read(f.path("t1").join(name)).unwrap(), fs::read(f.path("t2").join(name)).unwrap(), "{name}");
    }
    let dir = f.path("t1");
    assert_eq!(manifest_value(&dir, "status").as_deref(), Some("done"));
    assert_eq!(manifest_value(&dir, "seed").as_deref(), Some("5"));
    assert_eq!(manifest_value(&dir, "config.max_epochs").as_deref(), Some("3"));
    let hash = manifest_value(&dir, "output.report.tsv.sha256").unwrap();
    let bytes = fs::read(dir.join("report.tsv")).unwrap();
    let expected: String = {
        use sha2::Digest;
        sha2::Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    };
    assert_eq!(hash, expected);
    assert!(manifest_value(&dir, "input.train.sha256").is_some());
}

#[test]
fn single_teacher_ensemble_matches_logit_matching() {
    let f = Fixture::new();
    f.teacher("t", "1");
    f.logits("t/model.ckpt", "z");
    let (emb, data, cfg, z) = (f.s("data/source.vec"), f.s("data"), f.s("fast.cfg"), f.s("z/logits.ckpt"));
    ok(&[
        "distill-student",
        "--emb",
        &emb,
        "--data",
        &data,
        "--logits",
        &z,
        "--loss",
        "lm",
        "--projection",
        "1l",
        "--config",
        &cfg,
        "--seed",
        "9",
        "--out",
        &f.s("s"),
    ]);
    ok(&[
        "ensemble-distill",
        "--emb",
        &emb,
        "--data",
        &data,
        "--teachers",
        &z,
        "--mode",
        "rde",
        "--iterations",
        "3",
        "--config",
        &cfg,
        "--seed",
        "9",
        "--out",
        &f.s("e"),
    ]);
    for name in ["model.ckpt", "history.tsv", "report.tsv"] {
        assert_eq!(fs::read(f.path("s").join(name)).unwrap(), fs::read(f.path("e").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn full_pipeline_and_deployment_equivalence() {
    let f = Fixture::new();
    let (emb, data, cfg) = (f.s("data/source.vec"), f.s("data"), f.s("fast.cfg"));
    f.teacher("t0", "1");
    f.teacher("t1", "2");
    f.logits("t0/model.ckpt", "z");
    ok(&["pretrain-ae", "--emb", &emb, "--config", &cfg, "--seed", "1", "--out", &f.s("ae")]);
    assert_eq!(fs::read_to_string(f.path("ae/curve.tsv")).unwrap().lines().count(), 4);
    ok(&[
        "distill-student",
        "--emb",
        &emb,
        "--data",
        &data,
        "--logits",
        &f.s("z/logits.ckpt"),
        "--loss",
        "stm",
        "--projection",
        "2l",
        "--pretrained-ae",
        &f.s("ae/autoencoder.ckpt"),
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out",
        &f.s("s"),
    ]);
    ok(&[
        "ensemble-distill",
        "--emb",
        &emb,
        "--data",
        &data,
        "--teachers",
        &format!("{},{}", f.s("t0/model.ckpt"), f.s("t1/model.ckpt")),
        "--config",
        &cfg,
        "--out",
        &f.s("e"),
    ]);

    let student =
        ok(&["evaluate", "--model", &f.s("s/model.ckpt"), "--emb", &emb, "--data", &data, "--out", &f.s("ev1")]);
    ok(&["extract-embeddings", "--model", &f.s("s/model.ckpt"), "--emb", &emb, "--out", &f.s("x")]);
    let deployed = ok(&[
        "evaluate",
        "--model",
        &f.s("x/deployed.ckpt"),
        "--emb",
        &f.s("x/distilled.vec"),
        "--data",
        &data,
        "--out",
        &f.s("ev2"),
    ]);
    assert_eq!(student.stdout, deployed.stdout);
    let line = String::from_utf8_lossy(&student.stdout).to_string();
    assert!(line.starts_with("test accuracy"), "{line}");
    let strip = |p: &str| -> String {
        fs::read_to_string(f.path(p)).unwrap().lines().filter(|l| !l.contains("_params")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip("ev1/report.tsv"), strip("ev2/report.tsv"));

    let reduction = ok(&[
        "report-reduction",
        "--teachers",
        &format!("{},{}", f.s("t0/model.ckpt"), f.s("t1/model.ckpt")),
        "--student",
        &f.s("s/model.ckpt"),
        "--emb",
        &emb,
        "--out",
        &f.s("r"),
    ]);
    let text = String::from_utf8_lossy(&reduction.stdout);
    assert!(text.contains("single_teacher_ratio\t4"), "{text}");
    assert!(text.contains("ensemble_deploy_ratio\t8"), "{text}");

    for (i, table) in [emb.clone(), f.s("x/distilled.vec")].iter().enumerate() {
        let out = f.s(&format!("analysis{i}"));
        ok(&[
            "analyze",
            "--emb",
            table,
            "--positive",
            &f.s("data/positive.txt"),
            "--negative",
            &f.s("data/negative.txt"),
            "--out",
            &out,
        ]);
        for name in ["same.tsv", "opposite.tsv", "all.tsv"] {
            let tsv = fs::read_to_string(Path::new(&out).join(name)).unwrap();
            assert_eq!(tsv.lines().count(), 41, "{name}");
        }
    }
}

#[test]
fn lstm_teacher_trains() {
    let f = Fixture::new();
    let (emb, data, cfg) = (f.s("data/source.vec"), f.s("data"), f.s("fast.cfg"));
    ok(&[
        "train-teacher",
        "--arch",
        "lstm",
        "--emb",
        &emb,
        "--data",
        &data,
        "--config",
        &cfg,
        "--set",
        "max_epochs=1",
        "--out",
        &f.s("l"),
    ]);
    let ev = ok(&[
        "evaluate",
        "--model",
        &f.s("l/model.ckpt"),
        "--emb",
        &emb,
        "--data",
        &data,
        "--partition",
        "dev",
        "--out",
        &f.s("ev"),
    ]);
    assert!(String::from_utf8_lossy(&ev.stdout).starts_with("dev accuracy"));
}

#[test]
fn experiment_writes_result_tables() {
    let f = Fixture::new();
    let (emb, small, data, cfg) = (f.s("data/source.vec"), f.s("data/small.vec"), f.s("data"), f.s("fast.cfg"));
    let run = |out: &str| {
        ok(&[
            "experiment",
            "--emb",
            &emb,
            "--small-emb",
            &small,
            "--data",
            &data,
            "--cells",
            "ENC,CNN-50,LM+TSED,RAE",
            "--seeds",
            "1,2",
            "--config",
            &cfg,
            "--out",
            &f.s(out),
        ]);
    };
    run("x1");
    run("x2");
    let results = fs::read_to_string(f.path("x1/results.tsv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 4 * 2);
    assert_eq!(fs::read_to_string(f.path("x1/summary.tsv")).unwrap().lines().count(), 1 + 4);
    assert_eq!(results, fs::read_to_string(f.path("x2/results.tsv")).unwrap());
}
