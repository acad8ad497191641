//! Spatial grid data model: rasterization of raw layers, sample windowing,
//! task partitioning and the on-disk raster archive.

pub mod archive;
pub mod geometry;
pub mod ingest;
pub mod norm;
pub mod raster;
pub mod tasks;
pub mod window;

use std::sync::Arc;

use chrono::NaiveDate;
use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use norm::Normalizer;
pub use raster::{assign_region_feature, rasterize_pois, rescale_polygon_feature};
pub use tasks::{partition_tasks, Task, TaskConfig};
pub use window::{covering_origins, window_origins, window_samples, Sample};

/// Default cell edge length.
pub const CELL_SIZE_M: f64 = 1000.0;
/// Default spatial window edge `l`.
pub const WINDOW: usize = 10;
/// Default period length `|T|` in daily slots.
pub const HORIZON: usize = 7;
pub const DAYS_PER_WEEK: usize = 7;

/// Regular grid over a city. Cell `(0, 0)` has its south-west corner at
/// `origin`; rows grow northward and columns eastward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub city_id: String,
    /// (lat, lon) of the south-west corner of cell (0, 0).
    pub origin: (f64, f64),
    pub cell_size_m: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(city_id: impl Into<String>, origin: (f64, f64), rows: usize, cols: usize) -> Result<Self> {
        let g = Self {
            city_id: city_id.into(),
            origin,
            cell_size_m: CELL_SIZE_M,
            rows,
            cols,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < WINDOW || self.cols < WINDOW {
            return Err(Error::Grid(format!(
                "{} is {}x{}; at least {WINDOW}x{WINDOW} cells are required",
                self.city_id, self.rows, self.cols
            )));
        }
        if !(self.cell_size_m > 0.0) {
            return Err(Error::Grid(format!("cell size must be positive, got {}", self.cell_size_m)));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell containing a projected point, if inside the grid.
    pub fn cell_of_local(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
            return None;
        }
        let c = (x / self.cell_size_m).floor() as usize;
        let r = (y / self.cell_size_m).floor() as usize;
        (r < self.rows && c < self.cols).then_some((r, c))
    }

    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let (x, y) = geometry::project(self.origin, lat, lon);
        self.cell_of_local(x, y)
    }

    /// (lat, lon) of a cell centre.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let x = (col as f64 + 0.5) * self.cell_size_m;
        let y = (row as f64 + 0.5) * self.cell_size_m;
        geometry::unproject(self.origin, x, y)
    }
}

/// Per-cell visit counts for one time slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityMap(pub Array2<f64>);

impl MobilityMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(Array2::zeros((rows, cols)))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(v) = self.0.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NonFinite {
                what: format!("mobility value {v}"),
                stage: "validation".into(),
            });
        }
        Ok(())
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.sum()
    }
}

/// Condition tensor for one window over `|T|` slots. Logically
/// `l x l x k x |T|`; stored with axes `(slot, feature, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionCube {
    pub values: Array4<f64>,
    pub feature_names: Arc<[String]>,
    pub t_end: usize,
}

impl ConditionCube {
    pub fn horizon(&self) -> usize {
        self.values.dim().0
    }

    pub fn features(&self) -> usize {
        self.values.dim().1
    }

    pub fn window(&self) -> usize {
        self.values.dim().2
    }

    /// Value at `(row, col, feature, slot)` in the logical layout.
    pub fn get(&self, row: usize, col: usize, feature: usize, slot: usize) -> f64 {
        self.values[[slot, feature, row, col]]
    }

    pub fn validate(&self) -> Result<()> {
        let (_, k, a, b) = self.values.dim();
        if a != b {
            return Err(Error::shape("condition window width", a, b));
        }
        if k != self.feature_names.len() {
            return Err(Error::shape("condition features", self.feature_names.len(), k));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "condition value".into(),
                stage: "validation".into(),
            });
        }
        Ok(())
    }
}

/// Full-grid condition and mobility rasters of one city, one slot per day.
/// This is the in-memory form of the raster archive.
#[derive(Debug, Clone, PartialEq)]
pub struct CityRasters {
    pub grid: GridSpec,
    pub feature_names: Arc<[String]>,
    pub dates: Vec<NaiveDate>,
    /// (day, feature, row, col)
    pub conditions: Array4<f32>,
    /// (day, row, col)
    pub mobility: Array3<f32>,
}

impl CityRasters {
    pub fn days(&self) -> usize {
        self.dates.len()
    }

    pub fn features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn city_id(&self) -> &str {
        &self.grid.city_id
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn mobility_map(&self, day: usize) -> MobilityMap {
        MobilityMap(self.mobility.index_axis(ndarray::Axis(0), day).mapv(f64::from))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let (d, k, r, c) = self.conditions.dim();
        let (md, mr, mc) = self.mobility.dim();
        if d != self.days() || md != self.days() {
            return Err(Error::shape("days", self.days(), d.max(md)));
        }
        if k != self.features() {
            return Err(Error::shape("features", self.features(), k));
        }
        if r != self.grid.rows || mr != self.grid.rows {
            return Err(Error::shape("rows", self.grid.rows, r));
        }
        if c != self.grid.cols || mc != self.grid.cols {
            return Err(Error::shape("cols", self.grid.cols, c));
        }
        if self.mobility.iter().any(|v| !v.is_finite() || *v < 0.0)
            || self.conditions.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                what: "raster value".into(),
                stage: "city validation".into(),
            });
        }
        Ok(())
    }
}
