//! Binary and CSV encodings for observation matrices and scalar fields.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "CVTP" | version u32 = 1 | nx u32 | ny u32 | n_time u32 | mask-present u8
//! [nx*ny mask bytes, row-major, 1 = in-mask]       (only if mask-present = 1)
//! for t in 0..n_time: in-mask values as f64 in scan order
//! ```
//!
//! A scalar field is the same container with `n_time = 1`. Neither encoding
//! stores the physical cell size, so loaders take it as an argument.
//!
//! The CSV long format has the header `x,y,t,value` with zero-based integer
//! indices. The mask is the set of `(x, y)` pairs that appear.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, ObservationMatrix, ScalarField};

pub const MAGIC: &[u8; 4] = b"CVTP";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.csv` files are CSV, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Binary,
        }
    }
}

/// Grid-shaped payload before it is checked against a concrete type.
struct Raw {
    nx: usize,
    ny: usize,
    n_time: usize,
    mask: Vec<bool>,
    // time-major
    values: Vec<f64>,
}

impl Raw {
    fn grid(&self, cell_size_km: f64) -> Result<Grid> {
        Grid::new(self.nx, self.ny, cell_size_km, self.mask.clone())
    }
}

fn encode_raw(grid: &Grid, n_time: usize, time_major: impl Iterator<Item = f64>) -> Vec<u8> {
    let mask_present = !grid.is_full();
    let mut out = Vec::with_capacity(
        HEADER_LEN + if mask_present { grid.mask().len() } else { 0 } + 8 * n_time * grid.active_count(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.nx() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.ny() as u32).to_le_bytes());
    out.extend_from_slice(&(n_time as u32).to_le_bytes());
    out.push(mask_present as u8);
    if mask_present {
        out.extend(grid.mask().iter().map(|&m| m as u8));
    }
    for v in time_major {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn decode_raw(bytes: &[u8]) -> Result<Raw> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            format!("byte {}", bytes.len()),
            format!("truncated header: need {HEADER_LEN} bytes"),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format("byte 0", "bad magic, expected \"CVTP\""));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::format(
            "byte 4",
            format!("unsupported version {version}"),
        ));
    }
    let nx = read_u32(bytes, 8) as usize;
    let ny = read_u32(bytes, 12) as usize;
    let n_time = read_u32(bytes, 16) as usize;
    if n_time == 0 {
        return Err(Error::format("byte 16", "n_time is zero"));
    }
    let mut at = HEADER_LEN;
    let mask = match bytes[20] {
        0 => vec![true; nx * ny],
        1 => {
            let end = at + nx * ny;
            if bytes.len() < end {
                return Err(Error::format(
                    format!("byte {}", bytes.len()),
                    format!("truncated mask: need {} mask bytes", nx * ny),
                ));
            }
            let mut mask = Vec::with_capacity(nx * ny);
            for (i, &b) in bytes[at..end].iter().enumerate() {
                match b {
                    0 => mask.push(false),
                    1 => mask.push(true),
                    other => {
                        return Err(Error::format(
                            format!("byte {}", at + i),
                            format!("mask byte must be 0 or 1, got {other}"),
                        ))
                    }
                }
            }
            at = end;
            mask
        }
        other => {
            return Err(Error::format(
                "byte 20",
                format!("mask-present flag must be 0 or 1, got {other}"),
            ))
        }
    };
    let active = mask.iter().filter(|&&m| m).count();
    let payload = &bytes[at..];
    if payload.len() % 8 != 0 {
        return Err(Error::format(
            format!("byte {}", bytes.len()),
            "payload is not a whole number of f64 values",
        ));
    }
    let declared = active * n_time;
    if payload.len() / 8 != declared {
        return Err(Error::Dimension(format!(
            "header declares {active} in-mask cells x {n_time} steps = {declared} values, payload carries {}",
            payload.len() / 8
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Raw {
        nx,
        ny,
        n_time,
        mask,
        values,
    })
}

pub fn encode_observations(obs: &ObservationMatrix) -> Vec<u8> {
    let cells = obs.n_cells();
    let n_time = obs.n_time();
    encode_raw(
        obs.grid(),
        n_time,
        (0..n_time).flat_map(move |t| (0..cells).map(move |c| obs.value(c, t))),
    )
}

pub fn decode_observations(bytes: &[u8], cell_size_km: f64) -> Result<ObservationMatrix> {
    let raw = decode_raw(bytes)?;
    let grid = raw.grid(cell_size_km)?;
    ObservationMatrix::from_time_major(grid, raw.n_time, raw.values)
}

pub fn encode_field(field: &ScalarField) -> Vec<u8> {
    encode_raw(field.grid(), 1, field.values().iter().copied())
}

pub fn decode_field(bytes: &[u8], cell_size_km: f64) -> Result<ScalarField> {
    let raw = decode_raw(bytes)?;
    if raw.n_time != 1 {
        return Err(Error::format(
            "byte 16",
            format!("scalar field must have n_time = 1, got {}", raw.n_time),
        ));
    }
    let grid = raw.grid(cell_size_km)?;
    ScalarField::new(grid, raw.values)
}

fn write_long_csv<W: Write>(
    mut w: W,
    grid: &Grid,
    n_time: usize,
    value: impl Fn(usize, usize) -> f64,
) -> std::io::Result<()> {
    writeln!(w, "x,y,t,value")?;
    for t in 0..n_time {
        for (slot, (x, y)) in grid.active_cells().enumerate() {
            writeln!(w, "{x},{y},{t},{}", value(slot, t))?;
        }
    }
    Ok(())
}

fn read_long_csv<R: Read>(r: R) -> Result<Raw> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = reader
        .headers()
        .map_err(|e| Error::format("line 1", e.to_string()))?
        .clone();
    let expected = ["x", "y", "t", "value"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::format(
            "line 1",
            format!("expected header x,y,t,value, got {}", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut entries: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let (mut max_x, mut max_y, mut max_t) = (0usize, 0usize, 0usize);
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::format(format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let idx = |i: usize, name: &str| -> Result<usize> {
            record[i].parse::<usize>().map_err(|_| {
                Error::format(
                    format!("line {line}"),
                    format!("{name} must be a non-negative integer, got {:?}", &record[i]),
                )
            })
        };
        let (x, y, t) = (idx(0, "x")?, idx(1, "y")?, idx(2, "t")?);
        let v: f64 = record[3].parse().map_err(|_| {
            Error::format(
                format!("line {line}"),
                format!("value is not a number: {:?}", &record[3]),
            )
        })?;
        if !v.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite value at cell ({x}, {y}) time {t} (line {line})"
            )));
        }
        if entries.insert((x, y, t), v).is_some() {
            return Err(Error::format(
                format!("line {line}"),
                format!("duplicate entry for cell ({x}, {y}) time {t}"),
            ));
        }
        max_x = max_x.max(x);
        max_y = max_y.max(y);
        max_t = max_t.max(t);
    }
    if entries.is_empty() {
        return Err(Error::format("line 2", "no data rows"));
    }
    let (nx, ny, n_time) = (max_x + 1, max_y + 1, max_t + 1);
    let mut mask = vec![false; nx * ny];
    for &(x, y, _) in entries.keys() {
        mask[y * nx + x] = true;
    }
    let active = mask.iter().filter(|&&m| m).count();
    if entries.len() != active * n_time {
        return Err(Error::Dimension(format!(
            "{active} cells x {n_time} steps need {} rows, found {}",
            active * n_time,
            entries.len()
        )));
    }
    let mut values = Vec::with_capacity(entries.len());
    for t in 0..n_time {
        for (flat, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let key = (flat % nx, flat / nx, t);
            match entries.get(&key) {
                Some(&v) => values.push(v),
                None => {
                    return Err(Error::Dimension(format!(
                        "cell ({}, {}) has no value at time {t}",
                        key.0, key.1
                    )))
                }
            }
        }
    }
    Ok(Raw {
        nx,
        ny,
        n_time,
        mask,
        values,
    })
}

pub fn write_observations_csv<W: Write>(w: W, obs: &ObservationMatrix) -> std::io::Result<()> {
    write_long_csv(w, obs.grid(), obs.n_time(), |c, t| obs.value(c, t))
}

pub fn read_observations_csv<R: Read>(r: R, cell_size_km: f64) -> Result<ObservationMatrix> {
    let raw = read_long_csv(r)?;
    let grid = raw.grid(cell_size_km)?;
    ObservationMatrix::from_time_major(grid, raw.n_time, raw.values)
}

pub fn write_field_csv<W: Write>(w: W, field: &ScalarField) -> std::io::Result<()> {
    write_long_csv(w, field.grid(), 1, |c, _| field.values()[c])
}

pub fn read_field_csv<R: Read>(r: R, cell_size_km: f64) -> Result<ScalarField> {
    let raw = read_long_csv(r)?;
    if raw.n_time != 1 {
        return Err(Error::Dimension(format!(
            "scalar field must have a single time step, found {}",
            raw.n_time
        )));
    }
    let grid = raw.grid(cell_size_km)?;
    ScalarField::new(grid, raw.values)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_observations(path: &Path, format: Format, cell_size_km: f64) -> Result<ObservationMatrix> {
    let bytes = read_file(path)?;
    match format {
        Format::Binary => decode_observations(&bytes, cell_size_km),
        Format::Csv => read_observations_csv(bytes.as_slice(), cell_size_km),
    }
}

pub fn save_observations(obs: &ObservationMatrix, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Binary => encode_observations(obs),
        Format::Csv => {
            let mut buf = Vec::new();
            write_observations_csv(&mut buf, obs).map_err(|e| Error::io(path, e))?;
            buf
        }
    };
    write_file(path, &bytes)
}

pub fn load_field(path: &Path, format: Format, cell_size_km: f64) -> Result<ScalarField> {
    let bytes = read_file(path)?;
    match format {
        Format::Binary => decode_field(&bytes, cell_size_km),
        Format::Csv => read_field_csv(bytes.as_slice(), cell_size_km),
    }
}

pub fn save_field(field: &ScalarField, path: &Path, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Binary => encode_field(field),
        Format::Csv => {
            let mut buf = Vec::new();
            write_field_csv(&mut buf, field).map_err(|e| Error::io(path, e))?;
            buf
        }
    };
    write_file(path, &bytes)
}
