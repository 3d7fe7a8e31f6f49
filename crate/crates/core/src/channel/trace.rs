//! Raw record dumps: little-endian `f64` samples plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::signal::SampledSignal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub fs: f64,
    pub t0: f64,
    pub len: usize,
    #[serde(default)]
    pub scenario: Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `signal` to `path` and its header to `path.json`.
pub fn write_trace(path: &Path, signal: &SampledSignal<f64>, scenario: Value) -> Result<()> {
    let mut bytes = Vec::with_capacity(signal.len() * 8);
    for x in &signal.samples {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let header = TraceHeader {
        fs: signal.fs,
        t0: signal.t0,
        len: signal.len(),
        scenario,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<(SampledSignal<f64>, TraceHeader)> {
    let header: TraceHeader = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != header.len * 8 {
        return Err(Error::Input(format!(
            "trace {} holds {} bytes, sidecar announces {} samples",
            path.display(),
            bytes.len(),
            header.len
        )));
    }
    let samples = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((SampledSignal::new(samples, header.fs, header.t0)?, header))
}
