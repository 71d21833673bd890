//! CSV emission helpers.
//!
//! Numbers are written in Rust's shortest round-trip decimal form so reruns
//! with identical inputs produce byte-identical files. Every file gets a
//! header row and a provenance footer comment.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// In-memory CSV table with a fixed column set.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        CsvTable {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.header.len(), "row width mismatch");
        self.rows.push(row);
    }

    pub fn render(&self, footer: Option<&str>) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&format_f64(*v));
            }
            out.push('\n');
        }
        if let Some(f) = footer {
            out.push_str("# ");
            out.push_str(f);
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path, footer: Option<&str>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.render(footer).as_bytes())?;
        Ok(())
    }
}

/// Shortest round-trip decimal representation.
pub fn format_f64(v: f64) -> String {
    if v == 0.0 {
        // Normalize -0.0 so byte-identity does not depend on sign tricks.
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// Column names for a row-major flattened matrix block.
pub fn mat_columns(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(format!("{prefix}_{r}{c}"));
        }
    }
    out
}

/// Row-major flattening of a matrix into an existing row.
pub fn push_mat(row: &mut Vec<f64>, m: &crate::Mat) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            row.push(m[(r, c)]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_header_rows_and_footer() {
        let mut t = CsvTable::new(["t", "x"]);
        t.push_row(vec![0.0, 1.5]);
        t.push_row(vec![0.1, -2.25]);
        let s = t.render(Some("seed=7"));
        assert_eq!(s, "t,x\n0,1.5\n0.1,-2.25\n# seed=7\n");
    }

    #[test]
    fn round_trip_format() {
        for &v in &[0.1, 1.0 / 3.0, 1e-300, -123.456789, 2.0f64.powi(53)] {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }
}
