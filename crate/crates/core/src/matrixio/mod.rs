//! Dense matrices, label vectors and their on-disk formats.
//!
//! Binary matrix layout (little-endian):
//!
//! ```text
//! offset 0   magic  "SNPM"
//! offset 4   rows   u32
//! offset 8   cols   u32
//! offset 12  rows*cols f32, row-major
//! ```
//!
//! CSV matrices are header-less numeric rows.

mod bundle;
mod report;

pub use bundle::{
    load_bundle, load_bundle_with, load_edges, write_bundle, BundleOptions, DatasetBundle,
    Manifest, PROBABILITY_TOLERANCE,
};
pub use report::{encode_report_csv, read_report, write_report, ReportFormat};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"SNPM";
const HEADER_LEN: usize = 12;

/// On-disk encoding of a [`DenseMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Binary,
    Csv,
}

impl MatrixFormat {
    /// `.csv` files are CSV, everything else is the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Binary,
        }
    }
}

/// Row-major real matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                rows,
                cols,
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
                value: data[pos],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::RowMismatch {
                    what: format!("row {i} length"),
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// New matrix holding the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Checks every row sums to one within `tolerance`.
    pub fn validate_stochastic(&self, tolerance: f64) -> Result<()> {
        for (i, r) in self.row_iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > tolerance {
                return Err(Error::ProbabilityRow {
                    row: i,
                    sum,
                    tolerance,
                });
            }
        }
        Ok(())
    }

    /// Divides each row by its sum; all-zero rows become uniform.
    pub fn renormalize_rows(&mut self) {
        let cols = self.cols;
        for r in self.data.chunks_mut(cols.max(1)) {
            let sum: f64 = r.iter().sum();
            if sum > 0.0 {
                r.iter_mut().for_each(|v| *v /= sum);
            } else {
                r.iter_mut().for_each(|v| *v = 1.0 / cols as f64);
            }
        }
    }
}

/// Per-node class indices in `[0, classes)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange {
                node,
                label,
                classes,
            });
        }
        Ok(Self { labels, classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    /// Node indices grouped by class.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

pub fn load_matrix(path: impl AsRef<Path>, format: MatrixFormat) -> Result<DenseMatrix> {
    let path = path.as_ref();
    match format {
        MatrixFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(path, &bytes)
        }
        MatrixFormat::Csv => load_csv(path),
    }
}

fn decode_binary(path: &Path, bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "SNPM",
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows * cols;
    if payload.len() != expected * 4 {
        return Err(Error::DimensionMismatch {
            rows,
            cols,
            expected,
            actual: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DenseMatrix::new(rows, cols, data)
}

fn load_csv(path: &Path) -> Result<DenseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let width = *cols.get_or_insert(record.len());
        if record.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {width} cells, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("malformed cell {j}: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: rows,
                    col: j,
                    value: v,
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    DenseMatrix::new(rows, cols.unwrap_or(0), data)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Encodes a matrix in the binary format. Values are narrowed to `f32`.
pub fn encode_matrix(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data.len() * 4);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(m.rows as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for &v in &m.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DenseMatrix, format: MatrixFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        MatrixFormat::Binary => encode_matrix(m),
        MatrixFormat::Csv => {
            let mut buf = Vec::new();
            for r in m.row_iter() {
                let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
                writeln!(buf, "{}", line.join(",")).expect("write to vec");
            }
            buf
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// One class index per line; blank lines and `#` comments are skipped.
pub fn load_labels(path: impl AsRef<Path>, classes: usize) -> Result<LabelVector> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let label = line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: format!("bad label {line:?}"),
        })?;
        labels.push(label);
    }
    LabelVector::new(labels, classes)
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelVector) -> Result<()> {
    let path = path.as_ref();
    let mut buf = String::with_capacity(labels.len() * 3);
    for &l in labels.as_slice() {
        buf.push_str(&l.to_string());
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
