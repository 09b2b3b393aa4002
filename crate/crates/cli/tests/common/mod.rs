#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SUBCOMMANDS: &[&[&str]] = &[
    &["toy2d"],
    &["prop-check"],
    &["train-encoder", "--objective", "recon"],
    &["train-encoder", "--objective", "disc"],
    &["fit-codebook", "--tag", "recon"],
    &["fit-codebook", "--tag", "disc"],
    &["tokenize", "--tag", "recon"],
    &["tokenize", "--tag", "disc"],
    &["stability"],
    &["train-ar", "--tag", "recon"],
    &["train-ar", "--tag", "disc", "--conditional"],
    &["train-stage2"],
    &["generate"],
    &["probe"],
    &["tokenize-ablation"],
    &["prefix-sweep"],
    &["report"],
];

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn digit(out: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_digit"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--reproducible")
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    files
}

/// Runs every subcommand in order; the first failure is returned with its stderr.
pub fn run_all(out: &Path, config: &Path) -> Result<(), String> {
    for args in SUBCOMMANDS {
        let o = digit(out, config, args);
        if !o.status.success() {
            return Err(format!("{args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
        }
    }
    Ok(())
}
