//! Matrix Market coordinate I/O for symmetric real matrices.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::sparse::SymSparseMatrix;

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads a symmetric real matrix in Matrix Market coordinate format.
///
/// Accepts `symmetric` headers (one triangle stored) as well as `general`
/// headers, in which case every off-diagonal entry must have a matching
/// mirrored entry with the same value.
pub fn read_matrix_market<R: BufRead>(reader: R, path: &str) -> Result<SymSparseMatrix> {
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let header = header?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || !fields[0].eq_ignore_ascii_case("%%MatrixMarket") {
        return Err(parse_err(path, 1, "expected a %%MatrixMarket header"));
    }
    if !fields[1].eq_ignore_ascii_case("matrix") || !fields[2].eq_ignore_ascii_case("coordinate") {
        return Err(parse_err(path, 1, "only coordinate matrices are supported"));
    }
    let field_ty = fields[3].to_ascii_lowercase();
    if field_ty != "real" && field_ty != "integer" {
        return Err(parse_err(
            path,
            1,
            format!("unsupported value type `{}` (need real or integer)", fields[3]),
        ));
    }
    let symmetry = fields[4].to_ascii_lowercase();
    if symmetry != "symmetric" && symmetry != "general" {
        return Err(parse_err(
            path,
            1,
            format!("unsupported symmetry `{}` (need symmetric or general)", fields[4]),
        ));
    }

    // Size line (after comments).
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        match dims {
            None => {
                if toks.len() != 3 {
                    return Err(parse_err(path, lineno, "size line must be `rows cols nnz`"));
                }
                let rows: usize = toks[0]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "invalid row count"))?;
                let cols: usize = toks[1]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "invalid column count"))?;
                let nnz: usize = toks[2]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "invalid entry count"))?;
                if rows != cols {
                    return Err(parse_err(path, lineno, format!("matrix is {rows}x{cols}, not square")));
                }
                dims = Some((rows, cols, nnz));
                triplets.reserve(nnz);
            }
            Some((n, _, _)) => {
                if toks.len() != 3 {
                    return Err(parse_err(path, lineno, "entry line must be `i j value`"));
                }
                let i: usize = toks[0]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "invalid row index"))?;
                let j: usize = toks[1]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "invalid column index"))?;
                let v: f64 = toks[2]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, "invalid value"))?;
                if i == 0 || j == 0 || i > n || j > n {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("coordinate ({i}, {j}) outside 1..={n}"),
                    ));
                }
                if !v.is_finite() {
                    return Err(parse_err(path, lineno, format!("non-finite value at ({i}, {j})")));
                }
                triplets.push((i - 1, j - 1, v));
            }
        }
    }
    let (n, _, nnz) = dims.ok_or_else(|| parse_err(path, 1, "missing size line"))?;
    if triplets.len() != nnz {
        return Err(parse_err(
            path,
            0,
            format!("expected {nnz} entries, found {}", triplets.len()),
        ));
    }
    if symmetry == "symmetric" {
        // One triangle stored; mirroring happens in the constructor. Reject
        // mixed-triangle storage to avoid masking duplicates.
        for &(i, j, _) in &triplets {
            if j > i {
                return Err(parse_err(
                    path,
                    0,
                    format!(
                        "symmetric storage requires lower-triangle entries, found ({}, {})",
                        i + 1,
                        j + 1
                    ),
                ));
            }
        }
    }
    SymSparseMatrix::from_triplets(n, &triplets).map_err(|e| match e {
        Error::AsymmetricEntry { row, col } => parse_err(
            path,
            0,
            format!("asymmetric entry at ({}, {})", row + 1, col + 1),
        ),
        Error::DuplicateEntry { row, col } => parse_err(
            path,
            0,
            format!("duplicate entry at ({}, {})", row + 1, col + 1),
        ),
        other => other,
    })
}

/// Writes the lower triangle in Matrix Market symmetric coordinate format.
pub fn write_matrix_market<W: Write + ?Sized>(writer: &mut W, m: &SymSparseMatrix) -> Result<()> {
    let triplets = m.upper_triplets();
    writeln!(writer, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(writer, "{} {} {}", m.dim(), m.dim(), triplets.len())?;
    for (i, j, v) in triplets {
        // Store the lower triangle: (j, i) with j >= i in 1-based indexing.
        writeln!(writer, "{} {} {}", j + 1, i + 1, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufReader;

    #[test]
    fn round_trips_symmetric_matrix() {
        let m = SymSparseMatrix::from_triplets(4, &[(0, 1, 1.5), (2, 3, -2.0), (1, 1, 3.25)])
            .unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, &m).unwrap();
        let back = read_matrix_market(BufReader::new(buf.as_slice()), "mem").unwrap();
        assert_eq!(back.dim(), 4);
        assert_eq!(back.entry(1, 0), 1.5);
        assert_eq!(back.entry(3, 2), -2.0);
        assert_eq!(back.entry(1, 1), 3.25);
        assert_eq!(back.nnz(), m.nnz());
    }

    #[test]
    fn general_header_with_asymmetric_entry_is_cited() {
        let text = "%%MatrixMarket matrix coordinate real general\n3 3 2\n1 2 1.0\n2 1 2.0\n";
        let err = read_matrix_market(BufReader::new(text.as_bytes()), "w.mtx").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("asymmetric"), "{msg}");
        assert!(msg.contains("(1, 2)") || msg.contains("(2, 1)"), "{msg}");
    }

    #[test]
    fn malformed_line_reports_position() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 1\n1 x 1.0\n";
        let err = read_matrix_market(BufReader::new(text.as_bytes()), "w.mtx").unwrap_err();
        assert!(err.to_string().contains("w.mtx:3"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n\n2 2 1\n2 1 4.0\n";
        let m = read_matrix_market(BufReader::new(text.as_bytes()), "mem").unwrap();
        assert_eq!(m.entry(0, 1), 4.0);
    }
}
