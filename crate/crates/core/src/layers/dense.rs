use ndarray::{Array2, ArrayView2, Axis};

use crate::params::{Init, ParamLayout, Slot};

/// Affine map `y = x W + b` on row-major batches.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Dense {
    pub w: Slot,
    pub b: Slot,
}

impl Dense {
    pub fn new(layout: &mut ParamLayout, name: &str, input: usize, output: usize, gain: f64) -> Self {
        let w = layout.add(
            format!("{name}.w"),
            input,
            output,
            Init::Scaled { fan_in: input, gain },
        );
        let b = layout.add(format!("{name}.b"), 1, output, Init::Zeros);
        Self { w, b }
    }

    pub fn input(&self) -> usize {
        self.w.rows
    }

    pub fn output(&self) -> usize {
        self.w.cols
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.view(p));
        y += &self.b.view(p);
        y
    }

    /// Accumulates dW, db into `grad`; returns dx when requested.
    pub fn backward(
        &self,
        p: &[f64],
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut [f64],
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        {
            let mut gw = self.w.view_mut(grad);
            gw += &x.t().dot(&dy);
        }
        {
            let mut gb = self.b.view_mut(grad);
            gb += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        need_dx.then(|| dy.dot(&self.w.view(p).t()))
    }
}
