#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn salbench(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_salbench"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("SALBENCH_THREADS", n.to_string()),
        None => cmd.env_remove("SALBENCH_THREADS"),
    };
    cmd.output().expect("salbench runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = salbench(args, None);
    assert!(
        out.status.success(),
        "salbench {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// Writes the seeded 20-entry fixture with saliency maps of the given kind under `dir/ds`.
pub fn fixture(dir: &Path, saliency: &str) -> PathBuf {
    let ds = dir.join("ds");
    ok(&["fixture", "--out", p(&ds), "--saliency", saliency]);
    ds
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(path)).expect("valid json")
}

/// Files in `dir` other than the config echo, which names the output directory.
pub fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| e.expect("dir entry").path())
        .filter(|f| f.file_name().is_some_and(|n| n != "config_echo.json"))
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), read(&f)))
        .collect();
    files.sort();
    files
}
