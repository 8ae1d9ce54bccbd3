//! `PEFNO1` binary container.
//!
//! Layout: 7-byte magic `PEFNO1\0`, `u8` version (1), little-endian `u32`
//! `n1`, `n2` and channel count, then each channel as `n1 * n2` little-endian
//! `f64` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{GridSpec, TensorField, VectorField};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"PEFNO1\0";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 7 + 1 + 4 * 3;

/// Raw container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub n1: usize,
    pub n2: usize,
    pub channels: Vec<Vec<f64>>,
}

pub fn encode_container(n1: usize, n2: usize, channels: &[&[f64]]) -> Result<Vec<u8>> {
    let count = n1
        .checked_mul(n2)
        .ok_or_else(|| Error::Shape("grid too large".into()))?;
    for (k, ch) in channels.iter().enumerate() {
        if ch.len() != count {
            return Err(Error::Shape(format!(
                "channel {k}: expected {count} values, got {}",
                ch.len()
            )));
        }
    }
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Shape(format!("{what} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * count * channels.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&to_u32(n1, "n1")?.to_le_bytes());
    out.extend_from_slice(&to_u32(n2, "n2")?.to_le_bytes());
    out.extend_from_slice(&to_u32(channels.len(), "channel count")?.to_le_bytes());
    for ch in channels {
        for v in ch.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8], path: &Path) -> Result<Container> {
    let fail = |field: &'static str, detail: String| Error::Format {
        path: path.to_path_buf(),
        field,
        detail,
    };
    if bytes.len() < 7 || &bytes[..7] != MAGIC {
        return Err(fail("magic", "expected \"PEFNO1\\0\"".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(
            "header",
            format!("file is {} bytes, header needs {HEADER_LEN}", bytes.len()),
        ));
    }
    if bytes[7] != VERSION {
        return Err(fail("version", format!("expected {VERSION}, found {}", bytes[7])));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n1, n2, nch) = (word(8), word(12), word(16));
    if n1 == 0 {
        return Err(fail("n1", "zero".into()));
    }
    if n2 == 0 {
        return Err(fail("n2", "zero".into()));
    }
    let per = n1
        .checked_mul(n2)
        .ok_or_else(|| fail("n2", "n1*n2 overflows".into()))?;
    let expected = per
        .checked_mul(nch)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| fail("channels", "payload size overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(fail(
            "payload",
            format!(
                "truncated: header declares {n1}x{n2}x{nch} ({expected} bytes), found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(fail(
            "payload",
            format!("{} trailing bytes after {expected}", payload.len() - expected),
        ));
    }
    let channels = payload
        .chunks_exact(8 * per)
        .map(|ch| {
            ch.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok(Container { n1, n2, channels })
}

pub fn write_container(path: &Path, n1: usize, n2: usize, channels: &[&[f64]]) -> Result<()> {
    let bytes = encode_container(n1, n2, channels)?;
    let mut file = fs::File::create(path).map_err(Error::file(path))?;
    file.write_all(&bytes).map_err(Error::file(path))?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(Error::file(path))?;
    decode_container(&bytes, path)
}

fn expect_channels(c: &Container, want: usize, path: &Path) -> Result<()> {
    if c.channels.len() != want {
        return Err(Error::Format {
            path: path.to_path_buf(),
            field: "channels",
            detail: format!("expected {want}, found {}", c.channels.len()),
        });
    }
    Ok(())
}

fn grid_of(c: &Container, l: f64, path: &Path) -> Result<GridSpec> {
    GridSpec::new(c.n1, c.n2, l).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        field: "n1",
        detail: e.to_string(),
    })
}

pub fn write_tensor(path: &Path, f: &TensorField) -> Result<()> {
    let chans: Vec<&[f64]> = f.channels().iter().map(Vec::as_slice).collect();
    write_container(path, f.grid().n1(), f.grid().n2(), &chans)
}

/// Reads a 9-channel tensor field. The container carries no cell length, so
/// the field is placed on a cell of side `l`.
pub fn read_tensor(path: &Path, l: f64) -> Result<TensorField> {
    let c = read_container(path)?;
    expect_channels(&c, 9, path)?;
    let grid = grid_of(&c, l, path)?;
    TensorField::from_components(grid, c.channels)
}

pub fn write_vector(path: &Path, v: &VectorField) -> Result<()> {
    let chans: Vec<&[f64]> = v.channels().iter().map(Vec::as_slice).collect();
    write_container(path, v.grid().n1(), v.grid().n2(), &chans)
}

pub fn read_vector(path: &Path, l: f64) -> Result<VectorField> {
    let c = read_container(path)?;
    expect_channels(&c, 3, path)?;
    let grid = grid_of(&c, l, path)?;
    VectorField::from_components(grid, c.channels)
}
