//! Sparse-matrix plumbing on top of `nalgebra-sparse`: products, dense
//! conversion, and MatrixMarket / plain-vector text formats.

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("matrix market: {0}")]
    MatrixMarket(String),
    #[error("line {line}: cannot parse {text:?} as a number")]
    Parse { line: usize, text: String },
}

/// Builds a CSC matrix from triplets, summing duplicates and dropping exact zeros.
pub fn csc_from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let mut coo = CooMatrix::new(nrows, ncols);
    for &(i, j, v) in triplets {
        if v != 0.0 {
            coo.push(i, j, v);
        }
    }
    let csc = CscMatrix::from(&coo);
    drop_zeros(&csc)
}

pub fn drop_zeros(a: &CscMatrix<f64>) -> CscMatrix<f64> {
    let mut coo = CooMatrix::new(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        if *v != 0.0 {
            coo.push(i, j, *v);
        }
    }
    CscMatrix::from(&coo)
}

/// `y = A x`.
pub fn mul_vec(a: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    for (j, col) in a.col_iter().enumerate() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            y[i] += v * xj;
        }
    }
    y
}

/// `y = Aᵀ x`.
pub fn tr_mul_vec(a: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    a.col_iter()
        .map(|col| {
            col.row_indices()
                .iter()
                .zip(col.values())
                .map(|(&i, &v)| v * x[i])
                .sum()
        })
        .collect()
}

pub fn to_dense(a: &CscMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        d[(i, j)] += *v;
    }
    d
}

pub fn from_dense(d: &DMatrix<f64>) -> CscMatrix<f64> {
    let mut t = Vec::new();
    for j in 0..d.ncols() {
        for i in 0..d.nrows() {
            t.push((i, j, d[(i, j)]));
        }
    }
    csc_from_triplets(d.nrows(), d.ncols(), &t)
}

/// Columns of `a` listed in `cols`, in that order.
pub fn select_columns(a: &CscMatrix<f64>, cols: &[usize]) -> CscMatrix<f64> {
    let mut t = Vec::new();
    for (k, &j) in cols.iter().enumerate() {
        let col = a.col(j);
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            t.push((i, k, v));
        }
    }
    csc_from_triplets(a.nrows(), cols.len(), &t)
}

/// Writes a general real coordinate MatrixMarket file with 17 significant digits.
pub fn write_matrix_market<W: Write>(
    mut w: W,
    nrows: usize,
    ncols: usize,
    triplets: &[(usize, usize, f64)],
) -> std::io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", nrows, ncols, triplets.len())?;
    for &(i, j, v) in triplets {
        writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn save_matrix_market(path: impl AsRef<Path>, a: &CscMatrix<f64>) -> std::io::Result<()> {
    let t: Vec<_> = a.triplet_iter().map(|(i, j, v)| (i, j, *v)).collect();
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix_market(f, a.nrows(), a.ncols(), &t)
}

pub fn parse_matrix_market(text: &str) -> Result<CscMatrix<f64>, FormatError> {
    let coo: CooMatrix<f64> = nalgebra_sparse::io::load_coo_from_matrix_market_str(text)
        .map_err(|e| FormatError::MatrixMarket(e.to_string()))?;
    Ok(CscMatrix::from(&coo))
}

pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<CscMatrix<f64>, FormatError> {
    parse_matrix_market(&std::fs::read_to_string(path)?)
}

/// One value per line.
pub fn write_vector<W: Write>(mut w: W, v: &[f64]) -> std::io::Result<()> {
    for x in v {
        writeln!(w, "{:.16e}", x)?;
    }
    Ok(())
}

pub fn save_vector(path: impl AsRef<Path>, v: &[f64]) -> std::io::Result<()> {
    write_vector(std::io::BufWriter::new(std::fs::File::create(path)?), v)
}

/// Reads one value per line; blank lines and lines starting with `%` or `#`
/// are skipped.
pub fn read_vector<R: BufRead>(r: R) -> Result<Vec<f64>, FormatError> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') || t.starts_with('#') {
            continue;
        }
        out.push(t.parse().map_err(|_| FormatError::Parse {
            line: n + 1,
            text: t.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<f64>, FormatError> {
    read_vector(std::io::BufReader::new(std::fs::File::open(path)?))
}
