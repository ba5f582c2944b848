use std::fmt::Display;
use std::path::Path;

use anyhow::{Context, Result};

/// Renders records as CSV and writes them atomically.
pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().context("flushing csv buffer")?;
    pau::io::write_atomic(path, &bytes)?;
    Ok(())
}

/// Right-aligned columns, written to stderr so stdout stays one summary line.
pub fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    eprintln!("{}", line(header.to_vec()));
    for row in rows {
        eprintln!("{}", line(row.iter().map(String::as_str).collect()));
    }
}

/// `command key=value key=value ...` on a single stdout line.
pub struct Summary {
    parts: Vec<String>,
}

impl Summary {
    pub fn new(command: &str) -> Self {
        Summary {
            parts: vec![command.to_string()],
        }
    }

    pub fn kv(mut self, key: &str, value: impl Display) -> Self {
        self.parts.push(format!("{key}={value}"));
        self
    }

    pub fn print(self) {
        println!("{}", self.parts.join(" "));
    }
}

pub fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}
