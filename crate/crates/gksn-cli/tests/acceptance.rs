//! Acceptance criterion 8 — determinism of the command-line pipeline.
//!
//! Two `gen` + `train` runs with identical flags and --threads 1 must agree
//! byte for byte: frames files exactly; history CSVs exactly up to the
//! `seconds` column, which records wall-clock time and is excluded from the
//! comparison; checkpoints exactly.

use std::path::{Path, PathBuf};
use std::process::Command;

fn gksn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gksn"))
}

fn run_ok(cmd: &mut Command) {
    let out = cmd.output().expect("spawn gksn");
    assert!(
        out.status.success(),
        "command failed\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn run_pipeline(dir: &Path, tag: &str, threads: &str) -> (PathBuf, PathBuf, PathBuf) {
    let frames = dir.join(format!("{tag}.frames"));
    let ckpt = dir.join(format!("{tag}.ckpt.json"));
    let hist = dir.join(format!("{tag}.history.csv"));
    run_ok(gksn().args([
        "--threads",
        threads,
        "gen",
        "--kind",
        "lj",
        "--m",
        "4",
        "--n",
        "3",
        "--samples",
        "80",
        "--seed",
        "2026",
        "--osc",
        "default",
        "--out",
        frames.to_str().unwrap(),
    ]));
    run_ok(gksn().args([
        "--threads",
        threads,
        "train",
        "--data",
        frames.to_str().unwrap(),
        "--model",
        "kan",
        "--epochs",
        "4",
        "--batch",
        "32",
        "--seed",
        "2026",
        "--out",
        ckpt.to_str().unwrap(),
        "--history",
        hist.to_str().unwrap(),
    ]));
    (frames, ckpt, hist)
}

fn csv_without_seconds(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let cut = line.rfind(',').unwrap();
            &line[..cut]
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (frames_a, ckpt_a, hist_a) = run_pipeline(dir.path(), "a", "1");
    let (frames_b, ckpt_b, hist_b) = run_pipeline(dir.path(), "b", "1");

    let fa = std::fs::read(&frames_a).unwrap();
    let fb = std::fs::read(&frames_b).unwrap();
    assert_eq!(fa, fb, "frames files differ between identical runs");

    let ca = std::fs::read(&ckpt_a).unwrap();
    let cb = std::fs::read(&ckpt_b).unwrap();
    assert_eq!(ca, cb, "checkpoints differ between identical runs");

    assert_eq!(
        csv_without_seconds(&hist_a),
        csv_without_seconds(&hist_b),
        "history CSVs differ between identical runs"
    );

    // Work split across threads must not change any numeric output either.
    let (frames_c, ckpt_c, hist_c) = run_pipeline(dir.path(), "c", "2");
    assert_eq!(fa, std::fs::read(&frames_c).unwrap(), "frames differ across thread counts");
    assert_eq!(ca, std::fs::read(&ckpt_c).unwrap(), "checkpoints differ across thread counts");
    assert_eq!(
        csv_without_seconds(&hist_a),
        csv_without_seconds(&hist_c),
        "history CSVs differ across thread counts"
    );

    println!("criterion 8 (gen+train byte determinism): PASS");
}
