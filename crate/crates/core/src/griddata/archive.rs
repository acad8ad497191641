//! Raster archive: a single file per city.
//!
//! ```text
//! bytes 0..8    magic  b"STGRAST1"
//! bytes 8..16   u64 LE length N of the JSON header
//! bytes 16..16+N  UTF-8 JSON header (see [`ArchiveHeader`])
//! then          conditions, f32 LE, shape (days, features, rows, cols), C order
//! then          mobility,   f32 LE, shape (days, rows, cols), C order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};

use super::{CityRasters, GridSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"STGRAST1";
pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "stgr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub version: u32,
    pub grid: GridSpec,
    pub feature_names: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub conditions_shape: [usize; 4],
    pub mobility_shape: [usize; 3],
    pub dtype: String,
}

pub fn write(city: &CityRasters, path: &Path) -> Result<()> {
    city.validate()?;
    let (d, k, r, c) = city.conditions.dim();
    let header = ArchiveHeader {
        version: FORMAT_VERSION,
        grid: city.grid.clone(),
        feature_names: city.feature_names.to_vec(),
        dates: city.dates.clone(),
        conditions_shape: [d, k, r, c],
        mobility_shape: [d, r, c],
        dtype: "f32-le".into(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in city.conditions.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in city.mobility.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn read_header(path: &Path) -> Result<ArchiveHeader> {
    let mut r = BufReader::new(File::open(path)?);
    read_header_from(&mut r, path)
}

fn read_header_from(r: &mut impl Read, path: &Path) -> Result<ArchiveHeader> {
    let bad = |reason: &str| Error::Archive {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: ArchiveHeader = serde_json::from_slice(&json)?;
    if header.version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {}", header.version)));
    }
    if header.dtype != "f32-le" {
        return Err(bad(&format!("unsupported dtype {}", header.dtype)));
    }
    Ok(header)
}

pub fn read(path: &Path) -> Result<CityRasters> {
    let mut r = BufReader::new(File::open(path)?);
    let h = read_header_from(&mut r, path)?;
    let [d, k, rows, cols] = h.conditions_shape;
    let cond = read_f32s(&mut r, d * k * rows * cols)?;
    let mob = read_f32s(&mut r, h.mobility_shape.iter().product())?;
    let bad = |reason: String| Error::Archive {
        path: path.to_path_buf(),
        reason,
    };
    let city = CityRasters {
        grid: h.grid,
        feature_names: h.feature_names.into(),
        dates: h.dates,
        conditions: Array4::from_shape_vec((d, k, rows, cols), cond).map_err(|e| bad(e.to_string()))?,
        mobility: Array3::from_shape_vec(
            (h.mobility_shape[0], h.mobility_shape[1], h.mobility_shape[2]),
            mob,
        )
        .map_err(|e| bad(e.to_string()))?,
    };
    city.validate()?;
    Ok(city)
}
