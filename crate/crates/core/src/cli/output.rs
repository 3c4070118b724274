//! File output with path context, digests, and provenance records.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::CliError;

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    write_file(path, text)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// What is needed to regenerate an output: the effective configuration,
/// its hash, the seed, and digests of every input file.
#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(cfg: &RunConfig, inputs: Vec<InputDigest>) -> Self {
        let canonical = cfg.canonical_json();
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(canonical.as_bytes()),
            seed: cfg.seed,
            config: serde_json::from_str(&canonical).expect("canonical config parses"),
            inputs,
        }
    }
}

/// Digests of every file a configuration reads, in a fixed order.
pub fn input_digests(
    cfg: &RunConfig,
    with_images: bool,
    with_backend: bool,
) -> Result<Vec<InputDigest>, CliError> {
    let mut paths: Vec<&Path> = Vec::new();
    for s in &cfg.samples {
        paths.extend(s.members.iter().map(|m| m.path.as_path()));
        paths.extend(s.map.as_deref());
        if with_images {
            paths.extend(s.image.as_deref());
        }
    }
    if with_backend {
        match &cfg.backend {
            Some(super::config::BackendConfig::Linear { weights, .. }) => paths.push(weights),
            Some(super::config::BackendConfig::Match { reference }) => paths.push(reference),
            _ => {}
        }
    }
    let mut out: Vec<InputDigest> = Vec::with_capacity(paths.len());
    for p in paths {
        if out.iter().any(|d| d.path == p) {
            continue;
        }
        out.push(InputDigest {
            path: p.to_path_buf(),
            sha256: sha256_file(p)?,
        });
    }
    Ok(out)
}
