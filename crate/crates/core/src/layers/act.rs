use ndarray::{Array2, ArrayView2, Zip};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Masks `dy` by the ReLU derivative evaluated at the layer output `y`.
pub fn relu_backward(dy: &mut Array2<f64>, y: ArrayView2<f64>) {
    Zip::from(dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
}

pub fn softplus_backward(dy: &mut Array2<f64>, pre: ArrayView2<f64>) {
    Zip::from(dy).and(pre).for_each(|d, &x| *d *= sigmoid(x));
}
