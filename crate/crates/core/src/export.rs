//! CSV and JSON writers for grams, trajectories and kernel PCA results.
//!
//! Floats are written in shortest round-trip form, so identical values give
//! identical files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NtkError, Result};
use crate::function_space::KernelPcaResult;
use crate::limit_kernel::{GramKind, GramLayout, KernelGram};
use crate::numerics::SymMatrix;

/// Writes serializable rows as CSV with a header line.
pub fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Header stored next to a gram CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramHeader {
    pub kind: GramKind,
    pub n_points: usize,
    pub n_out: usize,
    pub layout: GramLayout,
    pub dim: usize,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes every entry of the stored matrix as `(row, col, value)` to `path`
/// and the header to the same path with a `.json` extension.
pub fn write_gram(path: &Path, gram: &KernelGram) -> Result<()> {
    let m = gram.entries.as_matrix();
    let dim = m.nrows();
    write_csv(
        path,
        (0..dim).flat_map(|row| {
            (0..dim).map(move |col| GramEntry {
                row,
                col,
                value: m[(row, col)],
            })
        }),
    )?;
    write_json(
        &sidecar(path),
        &GramHeader {
            kind: gram.kind.clone(),
            n_points: gram.n_points,
            n_out: gram.n_out,
            layout: gram.layout,
            dim,
        },
    )
}

pub fn read_gram(path: &Path) -> Result<KernelGram> {
    let header: GramHeader = serde_json::from_slice(&fs::read(sidecar(path))?)?;
    let entries: Vec<GramEntry> = read_csv(path)?;
    if entries.len() != header.dim * header.dim {
        return Err(NtkError::Dimension {
            context: "gram csv entries",
            expected: header.dim * header.dim,
            found: entries.len(),
        });
    }
    let mut m = nalgebra::DMatrix::zeros(header.dim, header.dim);
    for e in entries {
        if e.row >= header.dim || e.col >= header.dim {
            return Err(NtkError::arg(format!("gram entry ({}, {}) out of range", e.row, e.col)));
        }
        m[(e.row, e.col)] = e.value;
    }
    let entries = SymMatrix::from_matrix(m)?;
    match header.layout {
        GramLayout::ScalarBlock => Ok(KernelGram::scalar_block(header.kind, entries, header.n_out)),
        GramLayout::Full => KernelGram::full(header.kind, entries, header.n_points, header.n_out),
    }
}

/// One row of a function-space trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub loss: f64,
    pub g_norm: f64,
    pub h_norm: f64,
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    write_csv(path, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueRow {
    pub index: usize,
    pub eigenvalue: f64,
}

/// Eigenvalues to `eigen_path`; component values per point to `components_path`
/// with columns `point, output, component_1, …`.
pub fn write_pca(eigen_path: &Path, components_path: &Path, pca: &KernelPcaResult) -> Result<()> {
    write_csv(
        eigen_path,
        pca.eigenvalues.iter().enumerate().map(|(i, &eigenvalue)| EigenvalueRow {
            index: i + 1,
            eigenvalue,
        }),
    )?;
    let mut writer = csv::Writer::from_path(components_path)?;
    let mut header = vec!["point".to_string(), "output".to_string()];
    header.extend((1..=pca.components.len()).map(|i| format!("component_{i}")));
    writer.write_record(&header)?;
    if let Some(first) = pca.components.first() {
        for point in 0..first.n_points() {
            for output in 0..first.n_out() {
                let mut record = vec![point.to_string(), output.to_string()];
                record.extend(pca.components.iter().map(|c| c.values()[(point, output)].to_string()));
                writer.write_record(&record)?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}
