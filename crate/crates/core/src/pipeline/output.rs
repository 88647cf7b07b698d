use std::path::Path;

use serde::{Deserialize, Serialize};

/// One metric value in long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidyRow {
    pub cell: String,
    pub beta: Option<f64>,
    pub repeat: usize,
    pub seed: u64,
    pub variant: String,
    pub metric: String,
    pub value: f64,
}

pub fn write_tidy_csv(path: impl AsRef<Path>, rows: &[TidyRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub(super) fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}
