//! CSV reports. Every table ends with a `# checksum: <sha256>` line over
//! its data rows, so two runs can be compared by that line alone.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{invalid, FnseError, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Floats are written with Rust's shortest round-trip formatting, which is
/// deterministic and lossless.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return invalid(format!("row has {} cells, header has {}", row.len(), self.header.len()));
        }
        if row.iter().any(|c| c.contains([',', '\n', '"'])) {
            return invalid("cells must not contain commas, quotes or newlines");
        }
        self.rows.push(row);
        Ok(())
    }

    fn data_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    /// Hex sha256 of the data rows (header excluded).
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.data_text().as_bytes()))
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        s.push_str(&self.data_text());
        let _ = writeln!(s, "# checksum: {}", self.checksum());
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    /// Parse a rendered table and verify its trailer.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| FnseError::Format("empty CSV".into()))?;
        let mut table = Self::new(header.split(','));
        let mut trailer = None;
        for line in lines {
            if let Some(sum) = line.strip_prefix("# checksum: ") {
                trailer = Some(sum.trim().to_string());
                break;
            }
            table.push(line.split(',').map(str::to_string).collect()).map_err(|e| FnseError::Format(e.to_string()))?;
        }
        match trailer {
            Some(t) if t == table.checksum() => Ok(table),
            Some(_) => Err(FnseError::Format("checksum mismatch".into())),
            None => Err(FnseError::Format("missing checksum trailer".into())),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Extract the checksum trailer of a rendered CSV.
pub fn checksum_of(text: &str) -> Option<&str> {
    text.lines().rev().find_map(|l| l.strip_prefix("# checksum: ")).map(str::trim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tamper_detection() {
        let mut t = CsvTable::new(["a", "b"]);
        t.push(vec!["1".into(), fmt_f64(0.1)]).unwrap();
        t.push(vec!["2".into(), fmt_f64(-3e-20)]).unwrap();
        let text = t.render();
        assert_eq!(CsvTable::parse(&text).unwrap(), t);
        assert_eq!(checksum_of(&text), Some(t.checksum().as_str()));
        let tampered = text.replace("0.1", "0.2");
        assert!(CsvTable::parse(&tampered).is_err());
        assert!(t.push(vec!["x".into()]).is_err());
        assert!(t.push(vec!["x,y".into(), "1".into()]).is_err());
    }

    #[test]
    fn empty_table_has_checksum_of_empty_input() {
        let t = CsvTable::new(["x"]);
        assert_eq!(t.checksum(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
