//! CSV and JSON emission. CSV files follow RFC 4180 (header row, CRLF
//! line endings); numbers are serialized with 12 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

/// 12-significant-digit rendering used for every floating-point field.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.11e}")
}

/// Minimal RFC 4180 writer for purely numeric/boolean tables.
pub struct CsvTable {
    buffer: String,
    columns: usize,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        let mut buffer = String::new();
        buffer.push_str(&header.join(","));
        buffer.push_str("\r\n");
        Self {
            buffer,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.columns, "row width mismatch");
        let mut line = String::new();
        for (i, field) in fields.iter().enumerate() {
            debug_assert!(
                !field.contains([',', '"', '\n', '\r']),
                "field needs quoting: {field}"
            );
            if i > 0 {
                line.push(',');
            }
            line.push_str(field);
        }
        let _ = writeln!(self.buffer, "{line}\r");
    }

    pub fn write_to(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.buffer.as_bytes())
            .map_err(|e| CliError::io(&format!("writing {}", path.display()), e))
    }
}

/// Parses a previously written numeric CSV back into (header, rows).
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
    let header = lines
        .next()
        .ok_or_else(|| CliError::Io(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}
