use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn sdegan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdegan"))
        .args(args)
        .env_remove("SDEGAN_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = sdegan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn sample_ids(csv: &Path) -> Vec<String> {
    let text = fs::read_to_string(csv).unwrap();
    let mut ids: Vec<String> = text.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
    ids.dedup();
    ids
}

/// Small OU dataset plus a tiny training config.
fn fixture(dir: &TempDir) -> (PathBuf, PathBuf) {
    let data = dir.path().join("ou.csv");
    ok(&["generate-ou", "--out", s(&data), "--samples", "32", "--horizon", "7"]);
    let cfg = dir.path().join("tiny.cfg");
    fs::write(
        &cfg,
        "# tiny run\nbatch_size = 8\ngenerator_steps = 2\ndisc_steps_per_gen = 1\n\
         generator_hidden = 4\ndiscriminator_hidden = 4\nmlp_width = 4\nswa_start = 1\n",
    )
    .unwrap();
    (data, cfg)
}

#[test]
fn generate_ou_defaults_and_counts() {
    let dir = TempDir::new().unwrap();
    let full = dir.path().join("full.csv");
    ok(&["generate-ou", "--out", s(&full)]);
    let text = fs::read_to_string(&full).unwrap();
    assert_eq!(text.lines().next(), Some("sample_id,t,ch0"));
    assert_eq!(text.lines().count(), 1 + 8192 * 64);
    assert_eq!(sample_ids(&full).len(), 8192);
    let cfg = fs::read_to_string(dir.path().join("full.config")).unwrap();
    assert!(cfg.contains("samples = 8192") && cfg.contains("theta = 0.1"), "{cfg}");

    let ten = dir.path().join("ten.csv");
    ok(&["generate-ou", "--out", s(&ten), "--samples", "10"]);
    assert_eq!(sample_ids(&ten).len(), 10);
}

#[test]
fn generate_ou_seed_from_flag_or_env() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["generate-ou", "--out", s(&p("a.csv")), "--samples", "5", "--seed", "1"]);
    ok(&["generate-ou", "--out", s(&p("b.csv")), "--samples", "5", "--seed", "1"]);
    ok(&["generate-ou", "--out", s(&p("c.csv")), "--samples", "5"]);
    let read = |n: &str| fs::read(p(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));

    let env = Command::new(env!("CARGO_BIN_EXE_sdegan"))
        .args(["generate-ou", "--out", s(&p("d.csv")), "--samples", "5"])
        .env("SDEGAN_SEED", "1")
        .output()
        .unwrap();
    assert!(env.status.success());
    assert_eq!(read("a.csv"), read("d.csv"));
    let flag_wins = Command::new(env!("CARGO_BIN_EXE_sdegan"))
        .args(["generate-ou", "--out", s(&p("e.csv")), "--samples", "5", "--seed", "0"])
        .env("SDEGAN_SEED", "1")
        .output()
        .unwrap();
    assert!(flag_wins.status.success());
    assert_eq!(read("c.csv"), read("e.csv"));
}

#[test]
fn paper_preset_is_echoed() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("ou.csv");
    ok(&["generate-ou", "--out", s(&data), "--samples", "1024"]);
    let out = dir.path().join("run");
    ok(&["train", "--preset", "ou-paper", "--data", s(&data), "--out", s(&out), "--generator-steps", "0"]);
    let cfg = fs::read_to_string(out.join("config.txt")).unwrap();
    for line in [
        "generator_hidden = 32",
        "discriminator_hidden = 32",
        "mlp_width = 16",
        "mlp_depth = 1",
        "batch_size = 1024",
        "lr = 1e-3",
        "weight_decay = 1e-2",
        "noise_dim = 5",
        "brownian_dim = 3",
        "swa_start = 501",
    ] {
        assert!(cfg.lines().any(|l| l == line), "`{line}` missing from\n{cfg}");
    }
}

#[test]
fn zero_step_run_gives_a_usable_checkpoint() {
    let dir = TempDir::new().unwrap();
    let (data, cfg) = fixture(&dir);
    let out = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&out), "--generator-steps", "0"]);
    let ckpt = out.join("final.ckpt");
    assert!(ckpt.exists());
    assert!(fs::read_to_string(out.join("losses.csv")).unwrap().lines().count() == 1);

    let paths = dir.path().join("sample.csv");
    ok(&["sample", "--checkpoint", s(&ckpt), "--out", s(&paths), "--count", "1"]);
    assert_eq!(sample_ids(&paths), vec!["0"]);
    let text = fs::read_to_string(&paths).unwrap();
    for line in text.lines().skip(1) {
        let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(v.is_finite());
    }
    assert!(dir.path().join("sample.config").exists());
}

#[test]
fn training_and_sampling_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let (data, cfg) = fixture(&dir);
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&out), "--seed", "3"];
        args.extend_from_slice(extra);
        ok(&args);
        out
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--workers", "2"]);
    for f in ["final.ckpt", "swa.ckpt", "losses.csv"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(x, fs::read(c.join(f)).unwrap(), "{f} with two workers");
    }
    let losses = fs::read_to_string(a.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().next(), Some("step,phase,loss,penalty"));
    assert_eq!(losses.lines().count(), 1 + 4);

    let ckpt = a.join("swa.ckpt");
    let sample = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        ok(&["sample", "--checkpoint", s(&ckpt), "--out", s(&p), "--count", "3", "--seed", seed]);
        fs::read(p).unwrap()
    };
    assert_eq!(sample("s1.csv", "4"), sample("s2.csv", "4"));
    assert_ne!(sample("s1.csv", "4"), sample("s3.csv", "5"));
}

#[test]
fn evaluate_writes_report_and_histograms() {
    let dir = TempDir::new().unwrap();
    let (data, cfg) = fixture(&dir);
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&run)]);
    let out = dir.path().join("eval");
    let res = ok(&[
        "evaluate",
        "--checkpoint",
        s(&run.join("final.ckpt")),
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--indices",
        "1,4,6",
        "--bins",
        "4",
        "--no-aux",
    ]);
    let stdout = String::from_utf8(res.stdout).unwrap();
    let metrics = fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert_eq!(stdout, metrics);
    for key in ["w1.t1 = ", "w1.t6 = ", "baseline_w1.t4 = ", "mmd = ", "mmd_depth = 5"] {
        assert!(metrics.contains(key), "{key} missing from\n{metrics}");
    }
    let hist = fs::read_to_string(out.join("histograms.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + 3 * 4);
    assert!(out.join("config.txt").exists());
}

#[test]
fn evaluate_uses_the_standard_marginal_times() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("ou.csv");
    ok(&["generate-ou", "--out", s(&data), "--samples", "16"]);
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "batch_size = 4\ngenerator_hidden = 4\ndiscriminator_hidden = 4\nmlp_width = 4\n").unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&run), "--generator-steps", "0"]);
    let out = dir.path().join("eval");
    ok(&["evaluate", "--checkpoint", s(&run.join("final.ckpt")), "--data", s(&data), "--out", s(&out), "--no-aux"]);
    let metrics = fs::read_to_string(out.join("metrics.txt")).unwrap();
    for t in [6, 19, 32, 44, 57] {
        assert!(metrics.contains(&format!("w1.t{t} = ")), "{metrics}");
    }
}

#[test]
fn gradcheck_passes_and_is_deterministic() {
    let a = ok(&["gradcheck", "--seed", "2"]);
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    assert!(!text.is_empty() && text.lines().all(|l| l.starts_with("PASS ")), "{text}");
    assert!(text.contains("solver/combined"));
    assert_eq!(a.stdout, ok(&["gradcheck", "--seed", "2"]).stdout);
}

#[test]
fn exit_codes_classify_failures() {
    let dir = TempDir::new().unwrap();
    let (data, cfg) = fixture(&dir);
    let out = dir.path().join("run");
    let code = |o: Output| o.status.code().unwrap();

    let bad_key = sdegan(&["train", "--data", s(&data), "--out", s(&out), "--set", "bogus_key=1"]);
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("bogus_key"));
    assert_eq!(code(bad_key), 1);

    let bad_file = dir.path().join("bad.cfg");
    fs::write(&bad_file, "batch_size = 8\nlr = fast\n").unwrap();
    let bad_value = sdegan(&["train", "--data", s(&data), "--config", s(&bad_file), "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&bad_value.stderr).contains("`lr`"));
    assert_eq!(code(bad_value), 1);

    assert_eq!(code(sdegan(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(sdegan(&["--help"])), 0);

    let missing = dir.path().join("missing.csv");
    assert_eq!(code(sdegan(&["train", "--data", s(&missing), "--config", s(&cfg), "--out", s(&out)])), 2);

    let garbage = dir.path().join("garbage.csv");
    fs::write(&garbage, "sample_id,t,ch0\n0,0,1\n0,zero,2\n").unwrap();
    let bad_data = sdegan(&["train", "--data", s(&garbage), "--config", s(&cfg), "--out", s(&out)]);
    assert!(String::from_utf8_lossy(&bad_data.stderr).contains("line 3"));
    assert_eq!(code(bad_data), 2);

    let diverge = sdegan(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&out), "--set", "lr=1e300"]);
    let msg = String::from_utf8_lossy(&diverge.stderr).to_string();
    assert!(msg.contains("numerical failure at step"), "{msg}");
    assert_eq!(code(diverge), 3);
}

#[test]
fn corrupt_checkpoint_names_the_field() {
    let dir = TempDir::new().unwrap();
    let (data, cfg) = fixture(&dir);
    let out = dir.path().join("run");
    ok(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&out), "--generator-steps", "0"]);
    let text = fs::read_to_string(out.join("final.ckpt")).unwrap();
    let broken = dir.path().join("broken.ckpt");
    let edited: String = text
        .lines()
        .map(|l| if l.starts_with("meta norm.std") { "meta norm.std = oops".to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    assert_ne!(edited, text.trim_end());
    fs::write(&broken, edited + "\n").unwrap();
    let res = sdegan(&["sample", "--checkpoint", s(&broken), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("norm.std"));
}
