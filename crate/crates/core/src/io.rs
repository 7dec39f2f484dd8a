//! Long-format panel CSV codec.
//!
//! One row per `(cell, time)` pair with header `cell_id,time,y,x1,...,xk`.
//! Cell ids must be dense in `[0, N)` and times dense in `[0, T)`; every
//! pair must appear exactly once. Values are written with Rust's shortest
//! round-trip float formatting, so a written panel re-reads bit-exactly.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::{PanelData, SpatialWeights};
use crate::sparse::Permutation;

/// A panel in the original (file) cell ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub n: usize,
    pub t_len: usize,
    pub k: usize,
    /// `y[t * n + cell]`
    pub y: Vec<f64>,
    /// `x[(t * k + j) * n + cell]`
    pub x: Vec<f64>,
}

impl RawPanel {
    /// Aligns the panel to preprocessed weights.
    pub fn align(&self, w: &SpatialWeights) -> Result<PanelData> {
        PanelData::from_original_order(w, self.t_len, self.k, &self.y, &self.x)
    }
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads a long-format panel CSV.
pub fn read_panel_csv<R: BufRead>(reader: R, path: &str) -> Result<RawPanel> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let header = header?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "cell_id" || cols[1] != "time" || cols[2] != "y" {
        return Err(parse_err(
            path,
            1,
            "header must be `cell_id,time,y,x1,...,xk`",
        ));
    }
    let k = cols.len() - 3;
    for (j, c) in cols[3..].iter().enumerate() {
        let expect = format!("x{}", j + 1);
        if *c != expect {
            return Err(parse_err(
                path,
                1,
                format!("design column {} must be named `{expect}`, found `{c}`", j + 4),
            ));
        }
    }

    struct Row {
        cell: usize,
        time: usize,
        y: f64,
        x: Vec<f64>,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut max_cell = 0usize;
    let mut max_time = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != k + 3 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {} fields, found {}", k + 3, fields.len()),
            ));
        }
        let cell: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid cell_id `{}`", fields[0])))?;
        let time: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid time `{}`", fields[1])))?;
        let y: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid response `{}`", fields[2])))?;
        if !y.is_finite() {
            return Err(parse_err(path, lineno, "non-finite response value"));
        }
        let mut x = Vec::with_capacity(k);
        for (j, f) in fields[3..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| {
                parse_err(path, lineno, format!("invalid value `{f}` in column x{}", j + 1))
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("non-finite value in column x{}", j + 1),
                ));
            }
            x.push(v);
        }
        max_cell = max_cell.max(cell);
        max_time = max_time.max(time);
        rows.push(Row { cell, time, y, x });
    }
    if rows.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let n = max_cell + 1;
    let t_len = max_time + 1;

    let mut seen = vec![false; n * t_len];
    let mut y = vec![0.0; n * t_len];
    let mut x = vec![0.0; n * t_len * k];
    for row in &rows {
        let slot = row.time * n + row.cell;
        if seen[slot] {
            return Err(parse_err(
                path,
                0,
                format!("duplicate row for cell {} at time {}", row.cell, row.time),
            ));
        }
        seen[slot] = true;
        y[slot] = row.y;
        for j in 0..k {
            x[(row.time * k + j) * n + row.cell] = row.x[j];
        }
    }
    if let Some(slot) = seen.iter().position(|s| !s) {
        let time = slot / n;
        let cell = slot % n;
        return Err(parse_err(
            path,
            0,
            format!(
                "missing row for cell {cell} at time {time} \
                 (ids must be dense in [0, {n}) and times in [0, {t_len}))"
            ),
        ));
    }
    Ok(RawPanel { n, t_len, k, y, x })
}

/// Writes a panel in the original cell ordering.
///
/// `data` rows are in the working (permuted) order; `perm` maps them back to
/// the original cell ids. Rows come out sorted by `(time, cell_id)`.
pub fn write_panel_csv<W: Write + ?Sized>(
    writer: &mut W,
    data: &PanelData,
    perm: &Permutation,
) -> Result<()> {
    let n = data.n();
    if perm.len() != n {
        return Err(Error::DimensionMismatch(
            "permutation does not match panel".into(),
        ));
    }
    write!(writer, "cell_id,time,y")?;
    for j in 1..=data.k() {
        write!(writer, ",x{j}")?;
    }
    writeln!(writer)?;
    for t in 0..data.t_len() {
        let ys = data.y_slice(t);
        for cell in 0..n {
            let row = perm.new_index(cell);
            write!(writer, "{cell},{t},{}", ys[row])?;
            for j in 0..data.k() {
                write!(writer, ",{}", data.x_col(t, j)[row])?;
            }
            writeln!(writer)?;
        }
    }
    Ok(())
}
