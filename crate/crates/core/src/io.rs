//! JSON and CSV artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::envelopes::{EnvelopeGrid, IterateStep, KSource};
use crate::error::{invalid, Result};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Numeric table with a header row. Every row must match the header width.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(r) = rows.iter().find(|r| r.len() != header.len()) {
        return Err(invalid(format!("row of width {} under a header of width {}", r.len(), header.len())));
    }
    let mut out = csv::Writer::from_path(path)?;
    out.write_record(header)?;
    for row in rows {
        out.write_record(row.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EnvelopeMeta<'a> {
    degree: u32,
    k_source: &'a KSource,
    gap: f64,
    mode: &'a str,
    history: &'a [IterateStep],
    distortion: &'a Option<Vec<(u32, f64)>>,
}

/// `(t, phi, potential, value)` rows plus the grid metadata as JSON.
pub fn write_envelope(dir: &Path, stem: &str, env: &EnvelopeGrid) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let rows: Vec<Vec<f64>> = (0..env.t.len()).map(|i| vec![env.t[i], env.phi[i], env.potential[i], env.values[i]]).collect();
    write_csv(&csv_path, &["t", "phi", "potential", "value"], &rows)?;
    let meta = EnvelopeMeta {
        degree: env.degree,
        k_source: &env.k_source,
        gap: env.gap,
        mode: &env.mode,
        history: &env.history,
        distortion: &env.distortion,
    };
    write_json(&json_path, &meta)?;
    Ok((csv_path, json_path))
}
