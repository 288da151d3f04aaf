use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = "\
[scenario]
clouds_per_cell = 20
points = 24
validation_size = 20
[model]
encoder = 3,8,16
classifier_hidden = 16
projection_hidden = 16
embedding_dim = 8
[closed]
epochs = 2
batch_size = 8
[open]
epochs = 2
batch_size = 8
[attribution]
anchors = 5
[explain]
resolution = 8
members = 5
";

fn fakepcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fakepcd"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = fakepcd(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn simulate(&self, rel: &str, seed: &str) -> PathBuf {
        let out = self.path(rel);
        ok(&["simulate", "--config", s(&self.path("tiny.cfg")), "--seed", seed, "--out", s(&out)]);
        out
    }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.json" {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let f = Fixture::new();
    let a = f.simulate("a", "5");
    let b = f.simulate("b", "5");
    let c = f.simulate("c", "6");
    assert_eq!(tree(&a), tree(&b));
    let pa: Vec<_> = tree(&a).into_iter().filter(|(n, _)| n.ends_with(".pcda")).collect();
    let pc: Vec<_> = tree(&c).into_iter().filter(|(n, _)| n.ends_with(".pcda")).collect();
    assert_eq!(pa.len(), pc.len());
    assert_ne!(pa, pc);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert!(manifest["config"].as_str().unwrap().contains("clouds_per_cell = 20"));
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o == "manifest.csv"));
}

#[test]
fn unknown_config_key_exits_2_naming_the_key() {
    let f = Fixture::new();
    let cfg = f.path("bad.cfg");
    fs::write(&cfg, "[open]\nepochs = 3\ntemprature = 0.1\n").unwrap();
    let out = fakepcd(&["simulate", "--config", s(&cfg), "--out", s(&f.path("x"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("open.temprature"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn usage_errors_exit_2() {
    let f = Fixture::new();
    assert_eq!(fakepcd(&["ablate", "everything"]).status.code(), Some(2));
    assert_eq!(fakepcd(&["simulate"]).status.code(), Some(2));
    let bogus = f.path("none.fpcd");
    for p in ["0", "150", "-5"] {
        let out = fakepcd(&["attribute", "--checkpoint", s(&bogus), "--percentile", p, "--out", s(&f.path("o"))]);
        assert_eq!(out.status.code(), Some(2), "P = {p}");
    }
}

#[test]
fn numeric_divergence_exits_3() {
    let f = Fixture::new();
    let data = f.simulate("data", "1");
    let cfg = f.path("hot.cfg");
    fs::write(&cfg, format!("{TINY}[closed]\nlearning_rate = 1e30\n")).unwrap();
    let out = fakepcd(&["train", "--stage", "closed", "--data", s(&data), "--config", s(&cfg), "--out", s(&f.path("t"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_end_to_end_and_replay() {
    let f = Fixture::new();
    let data = f.simulate("data", "3");
    let closed = f.path("closed");
    ok(&["train", "--stage", "closed", "--data", s(&data), "--checkpoint-every", "1", "--out", s(&closed)]);
    let metrics = fs::read_to_string(closed.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,loss,accuracy\n"));
    assert_eq!(metrics.lines().count(), 3);
    assert!(closed.join("checkpoints/epoch_0002.fpcd").is_file());

    let open = f.path("open");
    let init = closed.join("model.fpcd");
    ok(&["train", "--stage", "open", "--data", s(&data), "--init-from", s(&init), "--out", s(&open)]);
    let model = open.join("model.fpcd");

    let att = f.path("att");
    let out = ok(&["attribute", "--checkpoint", s(&model), "--data", s(&data), "--build-anchors", "5", "--tune", "--out", s(&att)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("tuned percentile"));
    let report = fs::read_to_string(att.join("report.csv")).unwrap();
    assert!(report.starts_with("id,d_real,d_noisy,d_smooth,d_biased,threshold,verdict,margin\n"));
    assert!(att.join("anchors.fpcd").is_file() && att.join("tune.csv").is_file());

    // A closed-stage checkpoint has no projection head.
    let out = fakepcd(&["attribute", "--checkpoint", s(&init), "--data", s(&data), "--percentile", "90", "--out", s(&f.path("bad"))]);
    assert_eq!(out.status.code(), Some(2));

    // Anchors from an 8-dimensional model against a 4-dimensional one.
    let narrow_cfg = f.path("narrow.cfg");
    fs::write(&narrow_cfg, format!("{TINY}[model]\nembedding_dim = 4\n")).unwrap();
    let narrow = f.path("narrow");
    ok(&["train", "--stage", "open", "--data", s(&data), "--config", s(&narrow_cfg), "--out", s(&narrow)]);
    let out = fakepcd(&[
        "attribute",
        "--checkpoint",
        s(&narrow.join("model.fpcd")),
        "--anchors",
        s(&att.join("anchors.fpcd")),
        "--data",
        s(&data),
        "--percentile",
        "90",
        "--out",
        s(&f.path("mismatch")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));

    let first = |source: &str| {
        let mut files: Vec<PathBuf> = fs::read_dir(data.join("test").join(source)).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        files.swap_remove(0)
    };
    let query = first("real");
    let ex = f.path("explain");
    ok(&[
        "explain",
        "--checkpoint",
        s(&model),
        "--critical",
        s(&query),
        "--fingerprint",
        "5",
        "--data",
        s(&data),
        "--match",
        s(&query),
        "--candidates",
        s(&first("noisy")),
        s(&query),
        "--out",
        s(&ex),
    ]);
    let summary = fs::read_to_string(ex.join("critical/summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with(",true"), "{summary}");
    for source in ["real", "noisy", "smooth", "biased", "quantized", "patchy"] {
        let pgm = fs::read_to_string(ex.join(format!("fingerprints/{source}.pgm"))).unwrap();
        assert!(pgm.starts_with("P2\n8 8\n255\n"));
    }
    let matched = fs::read_to_string(ex.join("match.csv")).unwrap();
    assert!(matched.lines().nth(2).unwrap().ends_with(",0.000000000,true"), "{matched}");

    for (dir, files) in [(&closed, &["model.fpcd", "metrics.csv"][..]), (&open, &["model.fpcd"]), (&ex, &["fingerprints/real.pgm"])] {
        let again = f.path(&format!("replay_{}", dir.file_name().unwrap().to_str().unwrap()));
        ok(&["replay", s(&dir.join("run_manifest.json")), "--out", s(&again)]);
        for file in files {
            assert_eq!(fs::read(dir.join(file)).unwrap(), fs::read(again.join(file)).unwrap(), "{file}");
        }
    }
}

#[test]
fn threshold_sweep_is_monotone() {
    let f = Fixture::new();
    let data = f.simulate("data", "2");
    let out = f.path("sweep");
    ok(&["ablate", "threshold-sweep", "--data", s(&data), "--out", s(&out)]);
    let csv = fs::read_to_string(out.join("threshold_sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 20);
    for w in rows.windows(2) {
        assert!(w[1][1] >= w[0][1]);
        assert!(w[1][2] >= w[0][2], "known accuracy fell: {csv}");
        assert!(w[1][3] <= w[0][3], "unknown accuracy rose: {csv}");
    }
}
