#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub const TINY_SNE: &[&str] = &[
    "sab_hidden=8",
    "encoding_size=8",
    "pma_seed_size=8",
    "heads=2",
    "chunk_size=9",
    "sab_blocks=1",
    "head_hidden=16",
    "epochs=2",
    "batch_size=4",
    "lr=0.003",
];

pub fn sne(args: &[&str]) -> i32 {
    let mut v = vec!["sne"];
    v.extend_from_slice(args);
    sne::cli::run_from(v)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Twenty-member zoo at 8px (arch1) or 28px (arch2): 8 train, 2 val, 10 test.
pub fn tiny_zoo(dir: &Path, name: &str, arch: &str, generator: &str, seed: u64) -> PathBuf {
    sized_zoo(dir, name, arch, generator, seed, 20)
}

pub fn sized_zoo(dir: &Path, name: &str, arch: &str, generator: &str, seed: u64, population: usize) -> PathBuf {
    let out = dir.join(name);
    let size = if arch == "arch2" { "28" } else { "8" };
    let seed = seed.to_string();
    let population = population.to_string();
    let code = sne(&[
        "--threads", "1", "zoo", "--out", p(&out), "--name", name, "--arch", arch, "--generator", generator,
        "--size", size, "--population", &population, "--images", "40", "--seed", &seed,
    ]);
    assert_eq!(code, 0);
    out
}

pub fn train_tiny(zoo: &Path, out: &Path, encoder: &str, extra: &[&str]) -> i32 {
    let mut args = vec!["--threads", "1", "train", "--zoo", p(zoo), "--out", p(out), "--encoder", encoder];
    for kv in TINY_SNE.iter().chain(extra) {
        args.push("--set");
        args.push(kv);
    }
    sne(&args)
}
