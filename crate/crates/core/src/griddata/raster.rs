//! Conversion of point, polygon and region layers onto a [`GridSpec`].

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::geometry::{self, Point};
use super::{GridSpec, MobilityMap};
use crate::error::{Error, Result};

/// One POI visit-count record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub lat: f64,
    pub lon: f64,
    pub visit_count: f64,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rasterized {
    pub maps: Vec<MobilityMap>,
    /// Records outside the grid, outside the slot range, or malformed.
    pub dropped: usize,
}

/// Sums visit counts per cell and slot. Points outside the grid are dropped,
/// never clamped onto border cells.
pub fn rasterize_pois(points: &[PoiRecord], grid: &GridSpec, slots: usize) -> Rasterized {
    let mut maps = vec![MobilityMap::zeros(grid.rows, grid.cols); slots];
    let mut dropped = 0;
    for p in points {
        let ok = p.visit_count.is_finite() && p.visit_count >= 0.0 && p.slot < slots;
        match grid.cell_of(p.lat, p.lon).filter(|_| ok) {
            Some((r, c)) => maps[p.slot].0[[r, c]] += p.visit_count,
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} POI records outside grid or malformed", grid.city_id);
    }
    Rasterized { maps, dropped }
}

/// A polygon-valued attribute (for example a census-tract population).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonFeature {
    /// Outer ring as (lat, lon) vertices; closing vertex optional.
    pub ring: Vec<(f64, f64)>,
    pub value: f64,
}

/// Distributes each polygon's value over the cells it overlaps in
/// proportion to the overlapped share of its area.
pub fn rescale_polygon_feature(polygons: &[PolygonFeature], grid: &GridSpec) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((grid.rows, grid.cols));
    let s = grid.cell_size_m;
    for (idx, poly) in polygons.iter().enumerate() {
        if !poly.value.is_finite() {
            return Err(Error::InvalidParam(format!("polygon {idx} has non-finite value")));
        }
        let ring: Vec<Point> = poly
            .ring
            .iter()
            .map(|&(lat, lon)| geometry::project(grid.origin, lat, lon))
            .collect();
        let area = geometry::polygon_area(&ring);
        if !(area > 0.0) {
            log::warn!("{}: skipping zero-area polygon {idx}", grid.city_id);
            continue;
        }
        let (x0, y0, x1, y1) = geometry::bounding_box(&ring);
        let c0 = ((x0 / s).floor().max(0.0)) as usize;
        let r0 = ((y0 / s).floor().max(0.0)) as usize;
        let c1 = ((x1 / s).ceil().max(0.0) as usize).min(grid.cols);
        let r1 = ((y1 / s).ceil().max(0.0) as usize).min(grid.rows);
        for r in r0..r1 {
            for c in c0..c1 {
                let clipped = geometry::clip_to_rect(
                    &ring,
                    c as f64 * s,
                    r as f64 * s,
                    (c + 1) as f64 * s,
                    (r + 1) as f64 * s,
                );
                let a = geometry::polygon_area(&clipped);
                if a > 0.0 {
                    out[[r, c]] += poly.value * a / area;
                }
            }
        }
    }
    Ok(out)
}

/// Paints every cell with the value of the region it belongs to.
pub fn assign_region_feature(
    region_map: &Array2<String>,
    region_values: &HashMap<String, f64>,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(region_map.raw_dim());
    for (idx, region) in region_map.indexed_iter() {
        let v = region_values
            .get(region)
            .ok_or_else(|| Error::MissingRegion(region.clone()))?;
        out[idx] = *v;
    }
    Ok(out)
}

/// Region of each cell, by point-in-polygon on the cell centre. Cells
/// outside every region get `None`.
pub fn region_map_from_polygons(
    regions: &[(String, Vec<(f64, f64)>)],
    grid: &GridSpec,
) -> Array2<Option<String>> {
    let rings: Vec<(String, Vec<Point>)> = regions
        .iter()
        .map(|(id, ring)| {
            let pts = ring
                .iter()
                .map(|&(lat, lon)| geometry::project(grid.origin, lat, lon))
                .collect();
            (id.clone(), pts)
        })
        .collect();
    Array2::from_shape_fn((grid.rows, grid.cols), |(r, c)| {
        let centre = (
            (c as f64 + 0.5) * grid.cell_size_m,
            (r as f64 + 0.5) * grid.cell_size_m,
        );
        rings
            .iter()
            .find(|(_, ring)| geometry::contains(ring, centre))
            .map(|(id, _)| id.clone())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn grid() -> GridSpec {
        GridSpec::new("iowa", (41.6, -91.6), 20, 32).unwrap()
    }

    fn cell_ring(g: &GridSpec, x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<(f64, f64)> {
        [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
            .iter()
            .map(|&(x, y)| geometry::unproject(g.origin, x, y))
            .collect()
    }

    #[test]
    fn empty_points_give_zero_map() {
        let out = rasterize_pois(&[], &grid(), 1);
        assert_eq!(out.maps[0].0.dim(), (20, 32));
        assert_eq!(out.maps[0].total(), 0.0);
    }

    #[test]
    fn counts_in_one_cell_add() {
        let g = grid();
        let (lat, lon) = g.cell_center(3, 4);
        let pts: Vec<PoiRecord> = [2.0, 3.0, 5.0]
            .iter()
            .map(|&v| PoiRecord { lat, lon, visit_count: v, slot: 0 })
            .collect();
        let out = rasterize_pois(&pts, &g, 1);
        assert_eq!(out.maps[0].0[[3, 4]], 10.0);
        assert_eq!(out.maps[0].total(), 10.0);
    }

    #[test]
    fn out_of_bounds_and_malformed_are_dropped() {
        let g = grid();
        let pts = [
            PoiRecord { lat: 10.0, lon: 10.0, visit_count: 1.0, slot: 0 },
            PoiRecord { lat: f64::NAN, lon: -91.5, visit_count: 1.0, slot: 0 },
            PoiRecord { lat: 41.61, lon: -91.59, visit_count: 1.0, slot: 0 },
        ];
        let out = rasterize_pois(&pts, &g, 1);
        assert_eq!(out.dropped, 2);
        assert_eq!(out.maps[0].total(), 1.0);
    }

    #[test]
    fn thousand_points_match_bucket_recount() {
        let g = grid();
        let mut rng = seed::rng(11, &[]);
        let mut pts = Vec::new();
        let mut expected: HashMap<(usize, usize, usize), f64> = HashMap::new();
        for _ in 0..1000 {
            // keep away from cell edges so the recount is unambiguous
            let r = rng.random_range(0..22usize);
            let c = rng.random_range(0..34usize);
            let fx = rng.random_range(0.05..0.95);
            let fy = rng.random_range(0.05..0.95);
            let (lat, lon) =
                geometry::unproject(g.origin, (c as f64 + fx) * 1000.0, (r as f64 + fy) * 1000.0);
            let v = rng.random_range(0..50) as f64;
            let slot = rng.random_range(0..3usize);
            pts.push(PoiRecord { lat, lon, visit_count: v, slot });
            if r < 20 && c < 32 {
                *expected.entry((slot, r, c)).or_default() += v;
            }
        }
        let out = rasterize_pois(&pts, &g, 3);
        for s in 0..3 {
            for r in 0..20 {
                for c in 0..32 {
                    let e = expected.get(&(s, r, c)).copied().unwrap_or(0.0);
                    assert_eq!(out.maps[s].0[[r, c]], e);
                }
            }
        }
    }

    #[test]
    fn polygon_on_one_cell() {
        let g = grid();
        let p = PolygonFeature { ring: cell_ring(&g, 2000.0, 3000.0, 3000.0, 4000.0), value: 40.0 };
        let r = rescale_polygon_feature(&[p], &g).unwrap();
        assert!((r[[3, 2]] - 40.0).abs() < 1e-6);
        assert!((r.sum() - 40.0).abs() < 1e-6);
    }

    #[test]
    fn polygon_over_four_cells() {
        let g = grid();
        let p = PolygonFeature { ring: cell_ring(&g, 2500.0, 3500.0, 4500.0, 5500.0), value: 40.0 };
        let r = rescale_polygon_feature(&[p], &g).unwrap();
        for (rr, cc) in [(3, 2), (3, 3), (3, 4), (4, 2)] {
            assert!(r[[rr, cc]] > 0.0);
        }
        // 2x2 km square offset by half a cell: centre cell gets 1/4, edges 1/8, corners 1/16
        assert!((r[[4, 3]] - 10.0).abs() < 1e-6);
        assert!((r[[3, 2]] - 2.5).abs() < 1e-6);
        let p = PolygonFeature { ring: cell_ring(&g, 2000.0, 3000.0, 4000.0, 5000.0), value: 40.0 };
        let r = rescale_polygon_feature(&[p], &g).unwrap();
        for (rr, cc) in [(3, 2), (3, 3), (4, 2), (4, 3)] {
            assert!((r[[rr, cc]] - 10.0).abs() < 1e-6);
        }
    }

    #[test]
    fn random_polygons_conserve_mass() {
        let g = grid();
        let mut rng = seed::rng(5, &[]);
        let mut polys = Vec::new();
        let mut total = 0.0;
        for _ in 0..40 {
            let cx = rng.random_range(5000.0..27000.0);
            let cy = rng.random_range(5000.0..15000.0);
            let n = rng.random_range(3..9);
            let ring: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let a = i as f64 / n as f64 * std::f64::consts::TAU;
                    let rad = rng.random_range(500.0..4000.0);
                    geometry::unproject(g.origin, cx + rad * a.cos(), cy + rad * a.sin())
                })
                .collect();
            let v = rng.random_range(1.0..1000.0);
            total += v;
            polys.push(PolygonFeature { ring, value: v });
        }
        let r = rescale_polygon_feature(&polys, &g).unwrap();
        assert!((r.sum() - total).abs() < 1e-6 * total);
    }

    #[test]
    fn zero_area_polygon_is_skipped() {
        let g = grid();
        let (lat, lon) = g.cell_center(1, 1);
        let p = PolygonFeature { ring: vec![(lat, lon); 4], value: 5.0 };
        assert_eq!(rescale_polygon_feature(&[p], &g).unwrap().sum(), 0.0);
    }

    #[test]
    fn region_assignment() {
        let map = Array2::from_elem((3, 4), "a".to_string());
        let vals = HashMap::from([("a".to_string(), 7.0)]);
        let out = assign_region_feature(&map, &vals).unwrap();
        assert!(out.iter().all(|v| *v == 7.0));

        let split = Array2::from_shape_fn((4, 6), |(_, c)| if c < 2 { "w".into() } else { "e".into() });
        let vals = HashMap::from([("w".to_string(), 1.5), ("e".to_string(), -2.0)]);
        let out = assign_region_feature(&split, &vals).unwrap();
        for ((r, c), v) in out.indexed_iter() {
            assert_eq!(*v, vals[&split[[r, c]]]);
        }

        let err = assign_region_feature(&map, &HashMap::new()).unwrap_err();
        assert!(matches!(err, Error::MissingRegion(id) if id == "a"));
    }

    #[test]
    fn region_polygons_to_cells() {
        let g = grid();
        let west = ("w".to_string(), cell_ring(&g, 0.0, 0.0, 16000.0, 20000.0));
        let east = ("e".to_string(), cell_ring(&g, 16000.0, 0.0, 32000.0, 20000.0));
        let m = region_map_from_polygons(&[west, east], &g);
        assert_eq!(m[[0, 0]].as_deref(), Some("w"));
        assert_eq!(m[[19, 31]].as_deref(), Some("e"));
        assert_eq!(m[[5, 16]].as_deref(), Some("e"));
    }

    proptest::proptest! {
        #[test]
        fn rasterization_is_additive(seed in 0u64..500, split in 0usize..60) {
            let g = grid();
            let mut rng = seed::rng(seed, &[]);
            let pts: Vec<PoiRecord> = (0..60).map(|_| {
                let (lat, lon) = geometry::unproject(g.origin, rng.random_range(-2000.0..34000.0), rng.random_range(-2000.0..22000.0));
                PoiRecord { lat, lon, visit_count: rng.random_range(0..20) as f64, slot: 0 }
            }).collect();
            let whole = rasterize_pois(&pts, &g, 1);
            let a = rasterize_pois(&pts[..split], &g, 1);
            let b = rasterize_pois(&pts[split..], &g, 1);
            proptest::prop_assert_eq!(&whole.maps[0].0, &(&a.maps[0].0 + &b.maps[0].0));
            proptest::prop_assert_eq!(whole.dropped, a.dropped + b.dropped);
        }
    }
}
