//! `FNSE-FIELD v1` binary dumps and CSV slices.
//!
//! A dump is one ASCII header line
//! `FNSE-FIELD v1 dim=<d> n=<N> comps=<c> t=<time>` followed by the node
//! values as little-endian `f64`, node-major and component-fastest.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{PeriodicField, PeriodicGrid};
use crate::error::{FnseError, Result};

const MAGIC: &str = "FNSE-FIELD v1";

pub fn encode_field(field: &PeriodicField, t: f64) -> Vec<u8> {
    let g = field.grid();
    let header = format!("{MAGIC} dim={} n={} comps={} t={:e}\n", g.dim, g.n, field.comps(), t);
    let mut out = header.into_bytes();
    out.reserve(field.values().len() * 8);
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<(PeriodicField, f64)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FnseError::Format("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| FnseError::Format("header is not UTF-8".into()))?;
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| FnseError::Format(format!("bad magic in header {header:?}")))?;
    let (mut dim, mut n, mut comps, mut t) = (None, None, None, None);
    for tok in rest.split_whitespace() {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| FnseError::Format(format!("malformed header token {tok:?}")))?;
        match key {
            "dim" => dim = Some(parse_token::<usize>(tok, val)?),
            "n" => n = Some(parse_token::<usize>(tok, val)?),
            "comps" => comps = Some(parse_token::<usize>(tok, val)?),
            "t" => t = Some(parse_token::<f64>(tok, val)?),
            _ => return Err(FnseError::Format(format!("unknown header key {key:?}"))),
        }
    }
    let missing = |k: &str| FnseError::Format(format!("header lacks {k}"));
    let grid = PeriodicGrid::new(dim.ok_or_else(|| missing("dim"))?, n.ok_or_else(|| missing("n"))?)
        .map_err(|e| FnseError::Format(e.to_string()))?;
    let comps = comps.ok_or_else(|| missing("comps"))?;
    let t = t.ok_or_else(|| missing("t"))?;
    let body = &bytes[nl + 1..];
    let expected = grid.node_count() * comps * 8;
    if body.len() != expected {
        return Err(FnseError::Format(format!("expected {expected} payload bytes, found {}", body.len())));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let field = PeriodicField::from_values(grid, comps, values).map_err(|e| FnseError::Format(e.to_string()))?;
    Ok((field, t))
}

fn parse_token<T: std::str::FromStr>(tok: &str, val: &str) -> Result<T> {
    val.parse().map_err(|_| FnseError::Format(format!("bad value in {tok:?}")))
}

pub fn write_field(path: &Path, field: &PeriodicField, t: f64) -> Result<()> {
    fs::write(path, encode_field(field, t))?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(PeriodicField, f64)> {
    decode_field(&fs::read(path)?)
}

/// CSV of a 1D field or a 2D field: coordinates then components.
pub fn write_csv_slice(w: &mut impl Write, field: &PeriodicField) -> Result<()> {
    let g = field.grid();
    if g.dim > 2 {
        return Err(FnseError::InvalidInput("CSV export supports 1D and 2D fields".into()));
    }
    let coords = ["x1", "x2"];
    let mut header: Vec<String> = coords[..g.dim].iter().map(|s| s.to_string()).collect();
    header.extend((0..field.comps()).map(|c| format!("c{c}")));
    writeln!(w, "{}", header.join(","))?;
    for node in 0..g.node_count() {
        let x = g.node(node);
        let mut row: Vec<String> = x[..g.dim].iter().map(|v| format!("{v:.17e}")).collect();
        row.extend(field.node_value(node).iter().map(|v| format!("{v:.17e}")));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
