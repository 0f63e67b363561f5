//! Result files: CSV tables, plot scripts and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use hscd_core::model::local_volume_density;
use hscd_core::{Problem, SystemState};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Full round-trip precision.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Files of one run, held in memory until the run succeeds.
#[derive(Debug, Default)]
pub struct Bundle {
    files: Vec<(String, Vec<u8>)>,
}

impl Bundle {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn add_csv(
        &mut self,
        name: impl Into<String>,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        self.add(name, bytes);
        Ok(())
    }

    /// Profile with columns `x, r, b, rho, phi`.
    pub fn add_profile(
        &mut self,
        name: impl Into<String>,
        problem: &Problem,
        state: &SystemState,
    ) -> Result<(), CliError> {
        let rows = (0..state.len()).map(|i| {
            let (r, b) = (state.r[i], state.b[i]);
            vec![
                num(problem.grid.x(i)),
                num(r),
                num(b),
                num(r + b),
                num(local_volume_density(&problem.params, r, b)),
            ]
        });
        self.add_csv(name, &["x", "r", "b", "rho", "phi"], rows)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }
}

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize, S: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a C,
    pub config_sha256: String,
    pub elapsed_seconds: f64,
    pub summary: S,
    pub outputs: Vec<OutputEntry>,
    /// Hash over the config hash and every output hash, in listed order.
    pub content_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub struct RunInfo<'a, C: Serialize> {
    pub command: &'a str,
    pub config: &'a C,
    pub raw_config: &'a str,
    pub elapsed_seconds: f64,
}

/// Writes every file of the bundle, then the manifest listing them.
pub fn persist<C: Serialize, S: Serialize>(
    dir: &Path,
    bundle: Bundle,
    info: RunInfo<'_, C>,
    summary: S,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let config_sha256 = sha256_hex(info.raw_config.as_bytes());
    let mut outputs = Vec::with_capacity(bundle.files.len());
    let mut content = Sha256::new();
    content.update(config_sha256.as_bytes());
    for (name, bytes) in &bundle.files {
        write_atomic(&dir.join(name), bytes)?;
        let digest = sha256_hex(bytes);
        content.update(digest.as_bytes());
        outputs.push(OutputEntry {
            path: name.clone(),
            bytes: bytes.len(),
            sha256: digest,
        });
    }
    let manifest = Manifest {
        tool: "hscd",
        version: env!("CARGO_PKG_VERSION"),
        command: info.command,
        config: info.config,
        config_sha256,
        elapsed_seconds: info.elapsed_seconds,
        summary,
        outputs,
        content_sha256: hex::encode(content.finalize()),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.into()))?;
    write_atomic(&path, &json)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, 2.0e-300, -7.25e12] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn csv_quotes_free_text() {
        let mut b = Bundle::default();
        b.add_csv(
            "t.csv",
            &["a", "note"],
            [vec![num(1.0), "x, y".to_string()]],
        )
        .unwrap();
        let text = String::from_utf8(b.files[0].1.clone()).unwrap();
        assert!(text.contains("\"x, y\""));
    }
}
