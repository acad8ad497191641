//! 3x3 same-padding convolution via im2col.
//!
//! Feature maps are stored channel-major as `(channels, n * h * w)`: column
//! `n*h*w + y*w + x` holds pixel `(y, x)` of image `n`. This keeps every
//! convolution a single GEMM over the whole batch.

use ndarray::{Array2, ArrayView2, Axis};

use crate::params::{Init, ParamLayout, Slot};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Conv3x3 {
    pub w: Slot,
    pub b: Slot,
    pub cin: usize,
    pub cout: usize,
    pub height: usize,
    pub width: usize,
}

impl Conv3x3 {
    pub fn new(
        layout: &mut ParamLayout,
        name: &str,
        cin: usize,
        cout: usize,
        height: usize,
        width: usize,
    ) -> Self {
        let fan_in = cin * 9;
        let w = layout.add(
            format!("{name}.w"),
            cout,
            fan_in,
            Init::Scaled {
                fan_in,
                gain: std::f64::consts::SQRT_2,
            },
        );
        let b = layout.add(format!("{name}.b"), 1, cout, Init::Zeros);
        Self {
            w,
            b,
            cin,
            cout,
            height,
            width,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Returns the pre-activation output and the im2col buffer.
    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let cols = im2col(x, self.height, self.width);
        let mut y = self.w.view(p).dot(&cols);
        let b = self.b.view(p);
        for (mut row, &bias) in y.axis_iter_mut(Axis(0)).zip(b.row(0)) {
            row += bias;
        }
        (y, cols)
    }

    pub fn backward(
        &self,
        p: &[f64],
        cols: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut [f64],
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        {
            let mut gw = self.w.view_mut(grad);
            gw += &dy.dot(&cols.t());
        }
        {
            let mut gb = self.b.view_mut(grad);
            gb += &dy.sum_axis(Axis(1)).insert_axis(Axis(0));
        }
        need_dx.then(|| {
            let dcols = self.w.view(p).t().dot(&dy);
            col2im(dcols.view(), self.cin, self.height, self.width)
        })
    }
}

pub fn im2col(x: ArrayView2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (c, total) = x.dim();
    let hw = h * w;
    let n = total / hw;
    let mut cols = Array2::<f64>::zeros((c * 9, total));
    let xs = x.as_standard_layout();
    let xs = xs.as_slice().expect("contiguous");
    let cs = cols.as_slice_mut().expect("contiguous");
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = ch * 9 + ky * 3 + kx;
                let dst = &mut cs[row * total..(row + 1) * total];
                for img in 0..n {
                    let base = ch * total + img * hw;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w - 1),
                        };
                        let d0 = img * hw + y * w;
                        let s0 = base + sy * w;
                        for xx in x0..x1 {
                            dst[d0 + xx] = xs[s0 + xx + kx - 1];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub fn col2im(dcols: ArrayView2<f64>, c: usize, h: usize, w: usize) -> Array2<f64> {
    let total = dcols.ncols();
    let hw = h * w;
    let n = total / hw;
    let mut dx = Array2::<f64>::zeros((c, total));
    let ds = dcols.as_standard_layout();
    let ds = ds.as_slice().expect("contiguous");
    let xs = dx.as_slice_mut().expect("contiguous");
    for ch in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = ch * 9 + ky * 3 + kx;
                let src = &ds[row * total..(row + 1) * total];
                for img in 0..n {
                    let base = ch * total + img * hw;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let (x0, x1) = match kx {
                            0 => (1, w),
                            1 => (0, w),
                            _ => (0, w - 1),
                        };
                        let d0 = img * hw + y * w;
                        let s0 = base + sy * w;
                        for xx in x0..x1 {
                            xs[s0 + xx + kx - 1] += src[d0 + xx];
                        }
                    }
                }
            }
        }
    }
    dx
}
