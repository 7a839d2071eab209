//! Artifact writers: CSV tables, 16-bit PGM heatmaps and the run manifest.
//!
//! Everything is formatted with fixed precision and written in a fixed order
//! so identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use spintem::kernel::ValidityCheck;

/// Bumped whenever a manifest field changes meaning.
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub file: String,
    pub kind: &'static str,
    /// Value mapped to 0 and to 65535 for heatmaps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub software: &'static str,
    pub version: &'static str,
    pub command: String,
    pub parameters: serde_json::Value,
    pub parameter_hash: String,
    pub validity: Vec<ValidityCheck>,
    pub warnings: Vec<String>,
    pub results: serde_json::Value,
    pub outputs: Vec<OutputEntry>,
}

/// Collects artifacts of one run inside its output directory.
pub struct Run {
    dir: PathBuf,
    outputs: Vec<OutputEntry>,
    pub warnings: Vec<String>,
}

impl Run {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), outputs: Vec::new(), warnings: Vec::new() })
    }

    fn put(&mut self, name: &str, bytes: &[u8], kind: &'static str, window: Option<[f64; 2]>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(OutputEntry { file: name.to_string(), kind, window });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let mut s = header.join(",");
        s.push('\n');
        for row in rows {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                write!(s, "{}", fmt_num(*v)).unwrap();
            }
            s.push('\n');
        }
        self.put(name, s.as_bytes(), "csv", None)
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.put(name, text.as_bytes(), "json", None)
    }

    /// Row-major `n × n` heatmap, first row at the top (largest y).
    pub fn pgm(&mut self, name: &str, values: &[f64], n: usize, window: [f64; 2]) -> Result<()> {
        let bytes = pgm16(values, n, window);
        self.put(name, &bytes, "pgm", Some(window))
    }

    pub fn finish(
        self,
        command: &str,
        params: &impl Serialize,
        validity: Vec<ValidityCheck>,
        results: serde_json::Value,
    ) -> Result<PathBuf> {
        let parameters = serde_json::to_value(params)?;
        let canonical = serde_json::to_string(&parameters)?;
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA,
            software: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            parameter_hash: hex(&Sha256::digest(canonical.as_bytes())),
            parameters,
            validity,
            warnings: self.warnings,
            results,
            outputs: self.outputs,
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

/// Shortest round-trip representation, so CSV values are exact.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v:e}")
    }
}

/// Binary PGM (P5) with 16-bit big-endian samples.
pub fn pgm16(values: &[f64], n: usize, [lo, hi]: [f64; 2]) -> Vec<u8> {
    let mut out = format!("P5\n{n} {n}\n65535\n").into_bytes();
    let span = if hi > lo { hi - lo } else { 1.0 };
    for row in (0..n).rev() {
        for col in 0..n {
            let t = ((values[row * n + col] - lo) / span).clamp(0.0, 1.0);
            let v = (t * 65535.0).round() as u16;
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

/// Window symmetric about zero for signed maps.
pub fn symmetric_window(values: &[f64]) -> [f64; 2] {
    let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    [-m, m]
}

pub fn range_window(values: &[f64]) -> [f64; 2] {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [lo, hi]
}
