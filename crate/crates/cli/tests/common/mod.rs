#![allow(dead_code)]

use std::path::{Path, PathBuf};

use conq::pipeline::ConqParams;
use conq_cli::RunConfig;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

pub fn golden_input() -> PathBuf {
    data_dir().join("golden_input.csv")
}

/// Configuration of the golden-file run: segmented, small bootstrap.
pub fn golden_config(output_dir: &Path) -> RunConfig {
    RunConfig {
        params: ConqParams {
            buckets: 10,
            bootstraps: 50,
            ..Default::default()
        },
        seed: 42,
        segment_by: true,
        ..RunConfig::new(golden_input(), output_dir)
    }
}

pub fn write_input(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

pub fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref())
        .unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}
