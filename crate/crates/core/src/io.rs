//! Matrix Market and CSV plumbing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// Renders a sparse matrix in Matrix Market coordinate format (1-based).
pub fn matrix_market_string<T: Scalar>(m: &CsrMatrix<T>) -> String {
    let mut s = String::with_capacity(32 * m.nnz() + 64);
    s.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{} {} {}", m.nrows(), m.ncols(), m.nnz());
    for (i, j, v) in m.triplet_iter() {
        let _ = writeln!(s, "{} {} {:e}", i + 1, j + 1, v.as_f64());
    }
    s
}

pub fn write_matrix_market<T: Scalar>(path: &Path, m: &CsrMatrix<T>) -> Result<()> {
    fs::write(path, matrix_market_string(m))?;
    Ok(())
}

/// Dense matrices are written in coordinate form with every entry stored.
pub fn write_dense_matrix_market<T: Scalar>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    let mut trip = Vec::with_capacity(m.len());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            trip.push((i, j, m[(i, j)]));
        }
    }
    write_matrix_market(path, &CsrMatrix::from_triplets(m.nrows(), m.ncols(), &trip))
}

/// Parses Matrix Market `coordinate real|integer general` or `array real general` text.
pub fn parse_matrix_market<T: Scalar>(text: &str) -> Result<CsrMatrix<T>> {
    let perr = |line: usize, column: usize, message: String| Error::Parse { line, column, message };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, 1, "empty file".into()))?;
    let h: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" {
        return Err(perr(1, 1, "missing %%MatrixMarket matrix header".into()));
    }
    let array = match h[2].as_str() {
        "coordinate" => false,
        "array" => true,
        other => return Err(perr(1, 16, format!("unsupported format '{other}'"))),
    };
    if h[3] != "real" && h[3] != "integer" {
        return Err(perr(1, 1, format!("unsupported field '{}'", h[3])));
    }
    if h[4] != "general" {
        return Err(perr(1, 1, format!("unsupported symmetry '{}'", h[4])));
    }

    let mut data = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (sl, size_line) = data.next().ok_or_else(|| perr(2, 1, "missing size line".into()))?;
    let sizes = parse_fields::<usize>(size_line, sl + 1)?;
    let (nr, nc) = match (array, sizes.as_slice()) {
        (false, [r, c, _]) | (true, [r, c]) => (*r, *c),
        _ => return Err(perr(sl + 1, 1, "malformed size line".into())),
    };
    let mut trip = Vec::new();
    if array {
        let mut k = 0;
        for (ln, l) in data {
            let v = parse_value(l.trim(), ln + 1, 1)?;
            if k >= nr * nc {
                return Err(perr(ln + 1, 1, "too many entries".into()));
            }
            trip.push((k % nr.max(1), k / nr.max(1), T::lit(v)));
            k += 1;
        }
        if k != nr * nc {
            return Err(perr(0, 0, format!("expected {} entries, found {k}", nr * nc)));
        }
    } else {
        for (ln, l) in data {
            let mut it = l.split_whitespace();
            let mut col = 1;
            let mut idx = [0usize; 2];
            for (slot, dim) in idx.iter_mut().zip([nr, nc]) {
                let tok = it.next().ok_or_else(|| perr(ln + 1, col, "missing index".into()))?;
                let v: usize = tok.parse().map_err(|_| perr(ln + 1, col, format!("bad index '{tok}'")))?;
                if v == 0 || v > dim {
                    return Err(perr(ln + 1, col, format!("index {v} out of range 1..={dim}")));
                }
                *slot = v - 1;
                col += tok.len() + 1;
            }
            let tok = it.next().ok_or_else(|| perr(ln + 1, col, "missing value".into()))?;
            trip.push((idx[0], idx[1], T::lit(parse_value(tok, ln + 1, col)?)));
        }
    }
    Ok(CsrMatrix::from_triplets(nr, nc, &trip))
}

pub fn read_matrix_market<T: Scalar>(path: &Path) -> Result<CsrMatrix<T>> {
    parse_matrix_market(&fs::read_to_string(path)?)
}

fn parse_fields<F: std::str::FromStr>(line: &str, ln: usize) -> Result<Vec<F>> {
    line.split_whitespace()
        .map(|t| {
            t.parse().map_err(|_| Error::Parse {
                line: ln,
                column: line.find(t).unwrap_or(0) + 1,
                message: format!("bad integer '{t}'"),
            })
        })
        .collect()
}

fn parse_value(tok: &str, line: usize, column: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        line,
        column,
        message: format!("bad number '{tok}'"),
    })
}

/// Writes a CSV with a header row and one row per record.
///
/// Numbers use Rust's shortest round-trip formatting, so identical inputs
/// produce byte-identical files.
pub fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Reads a numeric CSV with a header row.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            column: 1,
            message: "empty CSV".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (ln, l) in lines.enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(header.len());
        let mut col = 1;
        for tok in l.split(',') {
            row.push(parse_value(tok.trim(), ln + 2, col)?);
            col += tok.len() + 1;
        }
        if row.len() != header.len() {
            return Err(Error::Parse {
                line: ln + 2,
                column: 1,
                message: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}
