//! Locating and reading the bundled reference measurements.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

/// Environment variable that overrides [`data_dir`].
pub const DATA_DIR_ENV: &str = "INFERCOST_DATA_DIR";

/// The reference-data directory: `$INFERCOST_DATA_DIR` if set, otherwise the
/// copy at the workspace root.
pub fn data_dir() -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../reference-data"),
    }
}

/// One measured operation time.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct OpTiming {
    pub library: String,
    pub b: u64,
    pub s: u64,
    pub op: String,
    pub time_ms: f64,
}

pub fn load_op_timings(path: &Path) -> Result<Vec<OpTiming>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Sum of `library`'s operation times at (`b`, `s`).
pub fn total_ms(rows: &[OpTiming], library: &str, b: u64, s: u64) -> f64 {
    rows.iter()
        .filter(|r| r.library == library && r.b == b && r.s == s)
        .map(|r| r.time_ms)
        .sum()
}
