//! Fluctuation-field files.
//!
//! Binary layout (little endian): the 8-byte magic `CHFIELD1`, then `k`, `m`
//! and the split (0 diagonal, 1 crossed) as `u32`, a reserved `u32`, then
//! `2 × node_count` `f64` values in node order (component 1, component 2 per
//! node). The CSV form has a `node,x1,x2,phi1,phi2` header and one row per
//! node in the same order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FluctuationField, Grid, Split};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CHFIELD1";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    node: usize,
    x1: f64,
    x2: f64,
    phi1: f64,
    phi2: f64,
}

pub fn write_field_csv(path: &Path, phi: &FluctuationField) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (node, v) in phi.values.iter().enumerate() {
        let x = phi.grid.node_position(node);
        w.serialize(Row {
            node,
            x1: x[0],
            x2: x[1],
            phi1: v[0],
            phi2: v[1],
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_field_csv(path: &Path, grid: Grid) -> Result<FluctuationField> {
    let mut r = csv::Reader::from_path(path)?;
    let mut values = Vec::with_capacity(grid.node_count());
    for (expected, row) in r.deserialize::<Row>().enumerate() {
        let row = row?;
        if row.node != expected {
            return Err(Error::invalid(
                "node",
                format!("row {expected} carries node {}", row.node),
            ));
        }
        values.push([row.phi1, row.phi2]);
    }
    FluctuationField::from_values(grid, values)
}

pub fn write_field_binary(path: &Path, phi: &FluctuationField) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let split = match phi.grid.split {
        Split::Diagonal => 0u32,
        Split::Crossed => 1u32,
    };
    w.write_all(MAGIC).map_err(io)?;
    for v in [phi.grid.k as u32, phi.grid.m as u32, split, 0u32] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for v in phi.as_flat() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_field_binary(path: &Path) -> Result<FluctuationField> {
    let io = |e| Error::io(path, e);
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io)?)
        .read_to_end(&mut bytes)
        .map_err(io)?;
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(Error::invalid("field", "not a fluctuation-field file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let split = match word(2) {
        0 => Split::Diagonal,
        1 => Split::Crossed,
        other => return Err(Error::invalid("split", format!("unknown split code {other}"))),
    };
    let grid = Grid::with_split(word(0), word(1), split)?;
    let payload = &bytes[24..];
    if payload.len() != 16 * grid.node_count() {
        return Err(Error::SizeMismatch {
            expected: grid.node_count(),
            found: payload.len() / 16,
        });
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FluctuationField::from_flat(grid, &flat)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FluctuationField {
        let grid = Grid::new(1, 3).unwrap();
        let values = (0..grid.node_count())
            .map(|v| if grid.is_boundary(v) { [0.0, 0.0] } else { [v as f64 * 0.1, -1.0 / 3.0] })
            .collect();
        FluctuationField::from_values(grid, values).unwrap()
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let phi = sample();
        let bin = dir.path().join("phi.bin");
        write_field_binary(&bin, &phi).unwrap();
        assert_eq!(read_field_binary(&bin).unwrap(), phi);
        let csv = dir.path().join("phi.csv");
        write_field_csv(&csv, &phi).unwrap();
        assert_eq!(read_field_csv(&csv, phi.grid).unwrap(), phi);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"hello world, not a field").unwrap();
        assert!(read_field_binary(&path).is_err());
    }
}
