//! Graph JSON and the CSV tables the graph is built from.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TaskGraph;
use crate::error::Result;

pub fn save_graph(graph: &TaskGraph, path: &Path) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, graph)?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<TaskGraph> {
    let g: TaskGraph = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    g.validate()?;
    Ok(g)
}

/// Row of the city table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityRow {
    pub city_id: String,
    pub lat: f64,
    pub lon: f64,
    pub airlines: u32,
    pub stage: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairRow<V> {
    src: String,
    dst: String,
    value: V,
}

pub fn write_cities(rows: &[CityRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cities(path: &Path) -> Result<Vec<CityRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

/// Writes a pair table with columns `src,dst,value`.
pub fn write_pairs<V: Serialize + Copy>(table: &BTreeMap<(String, String), V>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for ((src, dst), value) in table {
        w.serialize(PairRow { src: src.clone(), dst: dst.clone(), value: *value })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<BTreeMap<(String, String), V>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in r.deserialize() {
        let row: PairRow<V> = row?;
        out.insert((row.src, row.dst), row.value);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ValueRow {
    city_id: String,
    value: f64,
}

/// Per-city cell values for the S1 reference date, one row per cell.
pub fn write_reference_values(values: &BTreeMap<String, Vec<f64>>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (city, vs) in values {
        for &value in vs {
            w.serialize(ValueRow { city_id: city.clone(), value })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_reference_values(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: ValueRow = row?;
        out.entry(row.city_id).or_default().push(row.value);
    }
    Ok(out)
}
