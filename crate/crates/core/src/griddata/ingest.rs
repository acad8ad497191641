//! Builds a [`CityRasters`] from raw files.
//!
//! Inputs (all columns are required):
//!
//! * POI visits, CSV with header `lat,lon,visit_count,date`; `date` is
//!   `YYYY-MM-DD`. Each row is one POI's visit count on one day.
//! * Polygon features, a GeoJSON `FeatureCollection` of `Polygon`
//!   features (`[lon, lat]` coordinates, outer ring used). Every numeric
//!   property becomes a static layer, area-rescaled onto the grid.
//! * Regions, a GeoJSON `FeatureCollection` of `Polygon` features with a
//!   string property `region_id`. Each cell belongs to the region that
//!   contains its centre.
//! * Region features, CSV with header `region_id,date,feature,value`. Each
//!   feature becomes a daily layer painted by region.
//!
//! Layers are ordered: polygon features (sorted by name), region features
//! (sorted by name), then a `weekday` layer (`weekday / 6`, Monday = 0).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use ndarray::{Array2, Array3, Array4};
use serde::Deserialize;
use serde_json::Value;

use super::raster::{
    assign_region_feature, rasterize_pois, region_map_from_polygons, rescale_polygon_feature,
    PoiRecord, PolygonFeature,
};
use super::{CityRasters, GridSpec};
use crate::error::{Error, Result};

pub const WEEKDAY_FEATURE: &str = "weekday";

#[derive(Debug, Deserialize)]
struct PoiRow {
    lat: f64,
    lon: f64,
    visit_count: f64,
    date: String,
}

#[derive(Debug, Deserialize)]
struct RegionRow {
    region_id: String,
    date: String,
    feature: String,
    value: f64,
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

pub fn read_pois(path: &Path, start: NaiveDate, days: usize) -> Result<(Vec<PoiRecord>, usize)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    let mut rejected = 0;
    for row in rdr.deserialize::<PoiRow>() {
        let Ok(row) = row else {
            rejected += 1;
            continue;
        };
        let slot = parse_date(&row.date)
            .map(|d| (d - start).num_days())
            .filter(|&d| d >= 0 && (d as usize) < days);
        match slot {
            Some(s) => out.push(PoiRecord {
                lat: row.lat,
                lon: row.lon,
                visit_count: row.visit_count,
                slot: s as usize,
            }),
            None => rejected += 1,
        }
    }
    if rejected > 0 {
        log::warn!("{}: rejected {rejected} malformed or out-of-range POI rows", path.display());
    }
    Ok((out, rejected))
}

fn outer_ring(feature: &Value) -> Option<Vec<(f64, f64)>> {
    let geom = feature.get("geometry")?;
    if geom.get("type")?.as_str()? != "Polygon" {
        return None;
    }
    let ring = geom.get("coordinates")?.get(0)?.as_array()?;
    ring.iter()
        .map(|p| {
            let lon = p.get(0)?.as_f64()?;
            let lat = p.get(1)?.as_f64()?;
            Some((lat, lon))
        })
        .collect()
}

fn features_of(path: &Path) -> Result<Vec<Value>> {
    let v: Value = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
    v.get("features")
        .and_then(Value::as_array)
        .cloned()
        .ok_or_else(|| Error::InvalidParam(format!("{} is not a FeatureCollection", path.display())))
}

/// Reads polygon features grouped by numeric property name.
pub fn read_polygon_features(path: &Path) -> Result<BTreeMap<String, Vec<PolygonFeature>>> {
    let mut out: BTreeMap<String, Vec<PolygonFeature>> = BTreeMap::new();
    for (i, f) in features_of(path)?.iter().enumerate() {
        let ring = outer_ring(f)
            .ok_or_else(|| Error::InvalidParam(format!("feature {i} in {} is not a polygon", path.display())))?;
        if let Some(props) = f.get("properties").and_then(Value::as_object) {
            for (name, v) in props {
                if let Some(x) = v.as_f64() {
                    out.entry(name.clone()).or_default().push(PolygonFeature {
                        ring: ring.clone(),
                        value: x,
                    });
                }
            }
        }
    }
    Ok(out)
}

pub fn read_regions(path: &Path) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    features_of(path)?
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let id = f
                .pointer("/properties/region_id")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::InvalidParam(format!("region feature {i} lacks region_id")))?;
            let ring = outer_ring(f)
                .ok_or_else(|| Error::InvalidParam(format!("region {id} is not a polygon")))?;
            Ok((id.to_string(), ring))
        })
        .collect()
}

/// feature -> day -> region -> value
type RegionSeries = BTreeMap<String, Vec<HashMap<String, f64>>>;

pub fn read_region_features(path: &Path, start: NaiveDate, days: usize) -> Result<RegionSeries> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out: RegionSeries = BTreeMap::new();
    for row in rdr.deserialize::<RegionRow>() {
        let row = row?;
        let day = parse_date(&row.date)
            .ok_or_else(|| Error::InvalidParam(format!("bad date {:?}", row.date)))?;
        let d = (day - start).num_days();
        if d < 0 || d as usize >= days {
            continue;
        }
        out.entry(row.feature)
            .or_insert_with(|| vec![HashMap::new(); days])[d as usize]
            .insert(row.region_id, row.value);
    }
    Ok(out)
}

pub struct IngestInputs<'a> {
    pub grid: GridSpec,
    pub start: NaiveDate,
    pub days: usize,
    pub pois: &'a Path,
    pub polygons: Option<&'a Path>,
    pub regions: Option<&'a Path>,
    pub region_features: Option<&'a Path>,
}

pub fn ingest(inputs: &IngestInputs<'_>) -> Result<CityRasters> {
    let grid = &inputs.grid;
    grid.validate()?;
    let days = inputs.days;
    let (rows, cols) = (grid.rows, grid.cols);
    let mut layers: Vec<(String, Vec<Array2<f64>>)> = Vec::new();

    if let Some(p) = inputs.polygons {
        for (name, polys) in read_polygon_features(p)? {
            let raster = rescale_polygon_feature(&polys, grid)?;
            layers.push((name, vec![raster; days]));
        }
    }
    if let Some(rf) = inputs.region_features {
        let regions_path = inputs
            .regions
            .ok_or_else(|| Error::InvalidParam("region features need a regions file".into()))?;
        let map = region_map_from_polygons(&read_regions(regions_path)?, grid);
        let mut region_map = Array2::from_elem((rows, cols), String::new());
        for ((r, c), id) in map.indexed_iter() {
            region_map[[r, c]] = id
                .clone()
                .ok_or_else(|| Error::MissingRegion(format!("<none> at cell ({r}, {c})")))?;
        }
        let used: BTreeSet<&String> = region_map.iter().collect();
        for (name, series) in read_region_features(rf, inputs.start, days)? {
            let mut per_day = Vec::with_capacity(days);
            for (d, values) in series.iter().enumerate() {
                if let Some(missing) = used.iter().find(|id| !values.contains_key(**id)) {
                    return Err(Error::MissingRegion(format!("{missing} ({name}, day {d})")));
                }
                per_day.push(assign_region_feature(&region_map, values)?);
            }
            layers.push((name, per_day));
        }
    }
    let dates: Vec<NaiveDate> = (0..days)
        .map(|d| inputs.start + chrono::Days::new(d as u64))
        .collect();
    layers.push((
        WEEKDAY_FEATURE.to_string(),
        dates
            .iter()
            .map(|d| Array2::from_elem((rows, cols), d.weekday().num_days_from_monday() as f64 / 6.0))
            .collect(),
    ));

    let (pois, _) = read_pois(inputs.pois, inputs.start, days)?;
    let raster = rasterize_pois(&pois, grid, days);
    let k = layers.len();
    let mut conditions = Array4::<f32>::zeros((days, k, rows, cols));
    for (f, (_, per_day)) in layers.iter().enumerate() {
        for (d, m) in per_day.iter().enumerate() {
            conditions
                .slice_mut(ndarray::s![d, f, .., ..])
                .assign(&m.mapv(|v| v as f32));
        }
    }
    let mut mobility = Array3::<f32>::zeros((days, rows, cols));
    for (d, m) in raster.maps.iter().enumerate() {
        mobility
            .slice_mut(ndarray::s![d, .., ..])
            .assign(&m.0.mapv(|v| v as f32));
    }
    let city = CityRasters {
        grid: grid.clone(),
        feature_names: layers.into_iter().map(|(n, _)| n).collect::<Vec<_>>().into(),
        dates,
        conditions,
        mobility,
    };
    city.validate()?;
    Ok(city)
}
