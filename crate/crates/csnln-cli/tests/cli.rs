//! Black-box tests of the binary: exit-code contract, help snapshot,
//! determinism of file outputs, and the error surfaces of each subcommand.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csnln::{imgio, synth, train, TrainConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csnln"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// A ready toy checkpoint (random init, zero epochs) plus a tiny HR set.
fn fixture(dir: &Path) -> PathBuf {
    synth::write_dataset(dir.join("hr"), 2, 48, 50).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.epochs = 0;
    cfg.train_dir = dir.join("hr");
    cfg.out_dir = dir.join("run");
    train::train(&cfg, None).unwrap().last_path
}

#[test]
fn help_matches_snapshot() {
    let mut got = String::new();
    let top = run(&["--help"]);
    assert_eq!(code(&top), 0);
    got.push_str(&String::from_utf8(top.stdout).unwrap());
    for sub in ["train", "infer", "eval", "gradcheck", "oracle", "attnmap", "params"] {
        got.push_str(&format!("================ {sub}\n"));
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help");
        got.push_str(&String::from_utf8(out.stdout).unwrap());
    }
    let want = include_str!("data/help.txt");
    assert_eq!(got, want, "help output drifted; regenerate tests/data/help.txt");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1, "no subcommand");
    assert_eq!(code(&run(&["bogus"])), 1, "unknown subcommand");
    assert_eq!(code(&run(&["oracle", "--bogus"])), 1, "unknown flag");
    assert_eq!(code(&run(&["train"])), 1, "missing required flag");
    assert_eq!(code(&run(&["train", "--config", "/definitely/not/here.cfg"])), 1);
    assert_eq!(code(&run(&["oracle", "--seeds", "0"])), 1);
}

#[test]
fn version_exits_zero() {
    let out = run(&["--version"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("csnln"));
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint at all").unwrap();
    let img = tmp.path().join("in.png");
    imgio::save_png(&img, &synth::texture_image(32, 1).unwrap()).unwrap();
    let out = bin()
        .args(["infer", "--ckpt"])
        .arg(&ckpt)
        .arg("--input")
        .arg(&img)
        .args(["--scale", "2", "--output"])
        .arg(tmp.path().join("out.png"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn infer_is_deterministic_and_scales_dims() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = fixture(tmp.path());
    let input = tmp.path().join("lr.png");
    imgio::save_png(&input, &synth::texture_image(32, 9).unwrap()).unwrap();
    let go = |out: &Path| {
        let o = bin()
            .args(["infer", "--ckpt"])
            .arg(&ckpt)
            .arg("--input")
            .arg(&input)
            .args(["--scale", "2", "--output"])
            .arg(out)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (a, b) = (tmp.path().join("a.png"), tmp.path().join("b.png"));
    go(&a);
    go(&b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let sr = imgio::load_png(&a).unwrap();
    assert_eq!((sr.width, sr.height), (64, 64));

    // Scale mismatch against the checkpoint is a runtime failure.
    let o = bin()
        .args(["infer", "--ckpt"])
        .arg(&ckpt)
        .arg("--input")
        .arg(&input)
        .args(["--scale", "3", "--output"])
        .arg(tmp.path().join("c.png"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("scale"));
}

#[test]
fn eval_empty_dir_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = fixture(tmp.path());
    let empty = tmp.path().join("none");
    std::fs::create_dir(&empty).unwrap();
    let out = bin()
        .args(["eval", "--ckpt"])
        .arg(&ckpt)
        .arg("--hr-dir")
        .arg(&empty)
        .args(["--scale", "2"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_break_hook_exits_three() {
    let out = bin()
        .arg("gradcheck")
        .env("CSNLN_GRADCHECK_BREAK", "only")
        .output()
        .unwrap();
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("harness.break"));
}

#[test]
fn oracle_few_seeds_passes() {
    let out = run(&["oracle", "--seeds", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("patch vs oracle"));
    assert!(text.contains("p=1 reduction"));
    assert!(text.contains("naive vs in-scale"));
    assert!(text.contains("seed: 0"));
}

#[test]
fn attnmap_rejects_bad_queries() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.png");
    imgio::save_png(&input, &synth::texture_image(32, 2).unwrap()).unwrap();
    let heat = tmp.path().join("h.png");
    for query in ["99,0", "five,5", "5"] {
        let out = bin()
            .args(["attnmap", "--input"])
            .arg(&input)
            .args(["--query", query, "--out"])
            .arg(&heat)
            .output()
            .unwrap();
        assert_eq!(code(&out), 1, "query {query}");
    }
}

#[test]
fn attnmap_constant_image_is_uniform() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("flat.png");
    let flat = imgio::ImageU8::new(16, 16, vec![120; 16 * 16 * 3]).unwrap();
    imgio::save_png(&input, &flat).unwrap();
    let heat = tmp.path().join("h.png");
    let out = bin()
        .args(["attnmap", "--input"])
        .arg(&input)
        .args(["--query", "8,8", "--out"])
        .arg(&heat)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let img = imgio::load_png(&heat).unwrap();
    assert_eq!((img.width, img.height), (16, 16));
    // Identical weights normalize to the ramp's top; only the marker differs.
    for y in 0..16 {
        for x in 0..16 {
            let p = img.pixel(y, x);
            assert!(p == [255, 255, 255] || p == [0, 255, 0], "pixel ({y},{x}) = {p:?}");
        }
    }
}

#[test]
fn params_reports_the_csnl_ablation() {
    let total = |extra: &[&str]| -> u64 {
        let mut args = vec!["params", "--preset", "toy"];
        args.extend_from_slice(extra);
        let out = run(&args);
        assert_eq!(code(&out), 0);
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .find_map(|l| l.strip_prefix("total")?.trim().parse().ok())
            .expect("total line")
    };
    let full = total(&[]);
    let no_csnl = total(&["--no-csnl"]);
    assert!(no_csnl < full, "{no_csnl} !< {full}");
    // Identical across runs: parameter counts depend only on shapes.
    assert_eq!(full, total(&[]));
    // Dropping both attention branches is rejected as a usage error.
    let out = run(&["params", "--no-csnl", "--no-isnl"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn train_runs_and_resume_rejects_architecture_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    synth::write_dataset(tmp.path().join("data"), 1, 32, 5).unwrap();
    let write_cfg = |name: &str, extra: &str| {
        let path = tmp.path().join(name);
        std::fs::write(
            &path,
            format!(
                "preset = toy\nbatch = 1\ncrop = 12\nepochs = 1\nsteps_per_epoch = 2\n\
                 train_dir = {}\nout_dir = {}\n{extra}",
                tmp.path().join("data").display(),
                tmp.path().join("out").display()
            ),
        )
        .unwrap();
        path
    };
    let cfg = write_cfg("run.cfg", "");
    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("seed: 0"));
    assert!(text.contains("preset = toy"));
    assert!(text.contains("last checkpoint:"));
    let ckpt = tmp.path().join("out").join("last.ckpt");
    assert!(ckpt.exists());

    // Resuming under a different architecture must fail before training.
    let cfg3 = write_cfg("run3.cfg", "scale = 3\ncrop = 24\n");
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg3)
        .arg("--resume")
        .arg(&ckpt)
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
