//! Local equirectangular projection and the polygon arithmetic needed for
//! area-weighted rescaling.

/// Metres per degree of latitude on a sphere of mean Earth radius.
pub const METRES_PER_DEGREE: f64 = 6_371_008.8 * std::f64::consts::PI / 180.0;

/// Planar point in metres relative to a grid origin.
pub type Point = (f64, f64);

/// Projects `(lat, lon)` to metres east/north of `origin`.
pub fn project(origin: (f64, f64), lat: f64, lon: f64) -> Point {
    let (lat0, lon0) = origin;
    let x = (lon - lon0) * METRES_PER_DEGREE * lat0.to_radians().cos();
    let y = (lat - lat0) * METRES_PER_DEGREE;
    (x, y)
}

/// Inverse of [`project`].
pub fn unproject(origin: (f64, f64), x: f64, y: f64) -> (f64, f64) {
    let (lat0, lon0) = origin;
    let lat = lat0 + y / METRES_PER_DEGREE;
    let lon = lon0 + x / (METRES_PER_DEGREE * lat0.to_radians().cos());
    (lat, lon)
}

/// Unsigned shoelace area.
/// Great-circle distance in kilometres.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let r = 6_371.0088;
    let (la1, lo1) = (a.0.to_radians(), a.1.to_radians());
    let (la2, lo2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * r * h.sqrt().min(1.0).asin()
}

pub fn polygon_area(ring: &[Point]) -> f64 {
    if ring.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..ring.len() {
        let (x0, y0) = ring[i];
        let (x1, y1) = ring[(i + 1) % ring.len()];
        s += x0 * y1 - x1 * y0;
    }
    (s * 0.5).abs()
}

/// Sutherland-Hodgman clip of `ring` against the axis-aligned rectangle
/// `[x0, x1] x [y0, y1]`. Valid for concave subjects as far as area goes.
pub fn clip_to_rect(ring: &[Point], x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Point> {
    let mut out = ring.to_vec();
    // (axis, bound, keep_greater)
    let edges = [(0, x0, true), (0, x1, false), (1, y0, true), (1, y1, false)];
    for (axis, bound, keep_ge) in edges {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let inside = |p: &Point| {
            let v = if axis == 0 { p.0 } else { p.1 };
            if keep_ge {
                v >= bound
            } else {
                v <= bound
            }
        };
        let cross = |a: &Point, b: &Point| {
            let (va, vb) = if axis == 0 { (a.0, b.0) } else { (a.1, b.1) };
            let t = (bound - va) / (vb - va);
            (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
        };
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            match (inside(&prev), inside(&cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(cross(&prev, &cur)),
                (false, true) => {
                    out.push(cross(&prev, &cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    out
}

pub fn bounding_box(ring: &[Point]) -> (f64, f64, f64, f64) {
    ring.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
    )
}

/// Even-odd rule point-in-polygon test.
pub fn contains(ring: &[Point], p: Point) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[(i + n - 1) % n];
        if (yi > p.1) != (yj > p.1) && p.0 < (xj - xi) * (p.1 - yi) / (yj - yi) + xi {
            inside = !inside;
        }
    }
    inside
}
