//! Result persistence: comma-separated data files with a header row, a
//! plain-text manifest per run, and the field serialization format.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! re-read from a file is bit-identical and repeated runs of the same
//! configuration produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use nlhomog_core::torus::PeriodicField;

use crate::config::RunConfig;

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v}")
    }
}

/// Writes a CSV file with a header row; returns the path.
pub fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<PathBuf> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

/// Hash of the density configuration, recorded in the manifest so result
/// files can be traced to the exact integrand.
pub fn density_hash(cfg: &RunConfig) -> String {
    let mut hasher = Sha256::new();
    for key in [
        "density.kind",
        "density.p",
        "density.m",
        "density.a.cells",
        "density.a.values",
        "density.b.cells",
        "density.b.values",
        "density.growth_mode",
    ] {
        hasher.update(key.as_bytes());
        hasher.update(b"=");
        hasher.update(cfg.get(key).as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    hex_prefix(&digest, 16)
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n).map(|b| format!("{b:02x}")).collect()
}

/// Writes the run manifest: the full effective configuration plus run
/// metadata, as `key = value` lines.
pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig) -> std::io::Result<PathBuf> {
    let mut text = String::new();
    text.push_str(&format!("run.command = {command}\n"));
    text.push_str(&format!("run.tool_version = {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str(&format!("run.density_hash = {}\n", density_hash(cfg)));
    text.push_str(&cfg.serialize());
    let path = dir.join("manifest.txt");
    fs::write(&path, text)?;
    Ok(path)
}

/// Serializes a periodic field: header line `d,n,m,M_00,...` then node
/// values row-major.
pub fn write_field(dir: &Path, name: &str, matrix: &[f64], field: &PeriodicField) -> std::io::Result<PathBuf> {
    let grid = field.grid();
    let mut text = format!("{},{},{}", grid.dim(), grid.nodes_per_axis(), field.components());
    for v in matrix {
        text.push(',');
        text.push_str(&fmt_f64(*v));
    }
    text.push('\n');
    for i in 0..grid.node_count() {
        let row: Vec<String> = field.node(i).iter().map(|v| fmt_f64(*v)).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}
