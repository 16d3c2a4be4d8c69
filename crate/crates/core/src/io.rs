//! On-disk formats: state snapshots, diagnostics streams, and checkpoints.
//!
//! A snapshot is a raw little-endian `f64` file (`theta` then `chi`) next to a
//! JSON sidecar holding the grid spec, time stamp, step index, and a SHA-256
//! checksum of the raw bytes. Checkpoints reuse the same format, so restarts
//! are bit-exact. Diagnostics stream as NDJSON (one row object per line) with
//! an optional flat CSV export.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::DiagnosticsRow;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::State;

/// Sidecar metadata for a snapshot/checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub dim: usize,
    pub extent: f64,
    pub n_interior: usize,
    pub time: f64,
    pub step: usize,
    pub theta_len: usize,
    pub chi_len: usize,
    pub sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn bin_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}

fn meta_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

/// Writes `<base>.bin` and `<base>.json`.
pub fn save_state(base: &Path, state: &State, step: usize) -> Result<()> {
    let mut raw = Vec::with_capacity(8 * (state.theta.len() + state.chi.len()));
    for v in state.theta.iter().chain(&state.chi) {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    let digest = hex(&Sha256::digest(&raw));
    let meta = SnapshotMeta {
        dim: state.grid.dim(),
        extent: state.grid.extent(),
        n_interior: state.grid.n_interior(),
        time: state.time,
        step,
        theta_len: state.theta.len(),
        chi_len: state.chi.len(),
        sha256: digest,
    };
    if let Some(parent) = base.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(bin_path(base), &raw)?;
    fs::write(meta_path(base), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Loads a snapshot; verifies the checksum and, when given, the grid shape.
/// Returns the state and the stored step index.
pub fn load_state(base: &Path, grid: Option<&Arc<Grid>>) -> Result<(State, usize)> {
    let meta_bytes = fs::read(meta_path(base))?;
    let meta: SnapshotMeta = serde_json::from_slice(&meta_bytes)?;
    let raw = fs::read(bin_path(base))?;
    let digest = hex(&Sha256::digest(&raw));
    if digest != meta.sha256 {
        return Err(Error::Corrupt {
            path: bin_path(base).display().to_string(),
            reason: "checksum mismatch".into(),
        });
    }
    if raw.len() != 8 * (meta.theta_len + meta.chi_len) {
        return Err(Error::Corrupt {
            path: bin_path(base).display().to_string(),
            reason: format!(
                "payload holds {} bytes, sidecar promises {}",
                raw.len(),
                8 * (meta.theta_len + meta.chi_len)
            ),
        });
    }
    let grid = match grid {
        Some(g) => {
            if g.dim() != meta.dim || g.extent() != meta.extent || g.n_interior() != meta.n_interior
            {
                return Err(Error::GridMismatch);
            }
            g.clone()
        }
        None => Arc::new(Grid::new(meta.dim, meta.extent, meta.n_interior)?),
    };
    let mut values = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let theta: Vec<f64> = values.by_ref().take(meta.theta_len).collect();
    let chi: Vec<f64> = values.collect();
    let state = State::new(grid, theta, chi, meta.time)?;
    Ok((state, meta.step))
}

/// Appends one NDJSON row.
pub fn write_row(writer: &mut impl Write, row: &DiagnosticsRow) -> Result<()> {
    serde_json::to_writer(&mut *writer, row)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Reads a whole NDJSON diagnostics stream.
pub fn read_rows(path: &Path) -> Result<Vec<DiagnosticsRow>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: DiagnosticsRow = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "step,t,energy_total,energy_thermal,energy_chi_mass,energy_chi_grad,\
energy_well,dissipation,dissipation_discrete,min_theta,max_theta,theta_lp,theta_h1,inv_theta_h1,\
inv_theta_max,chi_h2,chi_rate,flux_grad,newton_iterations,final_residual,damping_events,dt_used,\
min_theta_seen";

/// One flat CSV line per row, matching [`CSV_HEADER`].
pub fn csv_line(row: &DiagnosticsRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        row.step,
        row.t,
        row.energy.total,
        row.energy.thermal,
        row.energy.chi_mass,
        row.energy.chi_grad,
        row.energy.well,
        row.dissipation,
        row.dissipation_discrete,
        row.min_theta,
        row.max_theta,
        row.theta_lp,
        row.theta_h1,
        row.inv_theta_h1,
        row.inv_theta_max,
        row.chi_h2,
        row.chi_rate,
        row.flux_grad,
        row.stats.newton_iterations,
        row.stats.final_residual,
        row.stats.damping_events,
        row.stats.dt_used,
        row.stats.min_theta_seen,
    )
}
