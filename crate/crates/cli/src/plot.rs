//! Raster figures: mobility heat-map panels and KL-versus-bins curves.
//!
//! Images carry no text; the panel order and line colors are written next
//! to them as plain-text legends.

use image::{Rgb, RgbImage};
use ndarray::Array2;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GAP: u32 = 6;

/// Line colors, cycled per method.
pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("blue", [31, 119, 180]),
    ("orange", [255, 127, 14]),
    ("green", [44, 160, 44]),
    ("red", [214, 39, 40]),
    ("purple", [148, 103, 189]),
    ("brown", [140, 86, 75]),
    ("pink", [227, 119, 194]),
    ("grey", [127, 127, 127]),
];

/// Perceptually ordered dark-to-bright ramp.
fn colormap(t: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Side-by-side panels on one shared color scale from zero to `vmax`.
pub fn heatmap_panels(panels: &[&Array2<f64>], vmax: f64, cell_px: u32) -> RgbImage {
    let (rows, cols) = panels.first().map(|p| p.dim()).unwrap_or((0, 0));
    let (pw, ph) = (cols as u32 * cell_px, rows as u32 * cell_px);
    let n = panels.len() as u32;
    let mut img = RgbImage::from_pixel(n * pw + (n + 1) * GAP, ph + 2 * GAP, WHITE);
    let scale = if vmax > 0.0 { vmax } else { 1.0 };
    for (k, p) in panels.iter().enumerate() {
        let x0 = GAP + k as u32 * (pw + GAP);
        for ((r, c), v) in p.indexed_iter() {
            let color = colormap(v / scale);
            for dy in 0..cell_px {
                for dx in 0..cell_px {
                    img.put_pixel(x0 + c as u32 * cell_px + dx, GAP + r as u32 * cell_px + dy, color);
                }
            }
        }
    }
    img
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        for (ox, oy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let (px, py) = (x.round() as i64 + ox, y.round() as i64 + oy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

/// One polyline per series of `(bins, kl)` points; the y axis starts at
/// zero and tick marks sit at every x value of the first series.
pub fn kl_curves(series: &[Vec<(usize, f64)>], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    let margin = 30.0;
    let (w, h) = (width as f64 - 2.0 * margin, height as f64 - 2.0 * margin);
    let pts = series.iter().flatten();
    let xmin = pts.clone().map(|p| p.0).min().unwrap_or(0) as f64;
    let xmax = pts.clone().map(|p| p.0).max().unwrap_or(1) as f64;
    let ymax = pts.map(|p| p.1).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let xspan = (xmax - xmin).max(1.0);
    let yspan = if ymax > 0.0 { ymax * 1.05 } else { 1.0 };
    let map = |x: f64, y: f64| (margin + (x - xmin) / xspan * w, margin + h - y / yspan * h);
    draw_line(&mut img, (margin, margin), (margin, margin + h), BLACK);
    draw_line(&mut img, (margin, margin + h), (margin + w, margin + h), BLACK);
    if let Some(first) = series.first() {
        for &(x, _) in first {
            let (px, py) = map(x as f64, 0.0);
            draw_line(&mut img, (px, py), (px, py + 5.0), BLACK);
        }
    }
    for (i, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()].1);
        let pts: Vec<_> = s.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| map(x as f64, y)).collect();
        for pair in pts.windows(2) {
            draw_line(&mut img, pair[0], pair[1], color);
        }
        for &(x, y) in &pts {
            draw_line(&mut img, (x - 3.0, y - 3.0), (x + 3.0, y + 3.0), color);
            draw_line(&mut img, (x - 3.0, y + 3.0), (x + 3.0, y - 3.0), color);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panels_share_one_scale() {
        let a = Array2::from_elem((2, 3), 10.0);
        let b = Array2::zeros((2, 3));
        let img = heatmap_panels(&[&a, &b], 10.0, 2);
        assert_eq!(img.dimensions(), (2 * 6 + 3 * GAP, 4 + 2 * GAP));
        assert_eq!(*img.get_pixel(GAP, GAP), colormap(1.0));
        assert_eq!(*img.get_pixel(2 * GAP + 6, GAP), colormap(0.0));
        assert_eq!(*img.get_pixel(0, 0), WHITE);
    }

    #[test]
    fn colormap_is_clamped() {
        assert_eq!(colormap(-1.0), colormap(0.0));
        assert_eq!(colormap(2.0), colormap(1.0));
        assert_eq!(colormap(f64::NAN), colormap(0.0));
    }

    #[test]
    fn curves_draw_in_series_colors() {
        let img = kl_curves(&[vec![(5, 0.1), (10, 0.2)], vec![(5, 0.3), (10, 0.05)]], 200, 120);
        let has = |c: [u8; 3]| img.pixels().any(|p| p.0 == c);
        assert!(has(PALETTE[0].1) && has(PALETTE[1].1));
    }
}
