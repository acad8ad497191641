//! Single-layer LSTM with gate order (input, forget, cell, output).

use ndarray::{s, Array2, ArrayView2, Axis};

use super::act::sigmoid;
use crate::params::{Init, ParamLayout, Slot};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Lstm {
    pub wx: Slot,
    pub wh: Slot,
    pub b: Slot,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    xs: Vec<Array2<f64>>,
    /// h_0 .. h_T
    hs: Vec<Array2<f64>>,
    /// c_0 .. c_T
    cs: Vec<Array2<f64>>,
    /// activated gates per step, (batch, 4H)
    gates: Vec<Array2<f64>>,
}

impl LstmCache {
    pub fn last_hidden(&self) -> &Array2<f64> {
        self.hs.last().expect("at least h_0")
    }
}

impl Lstm {
    pub fn new(layout: &mut ParamLayout, name: &str, input: usize, hidden: usize) -> Self {
        let wx = layout.add(
            format!("{name}.wx"),
            input,
            4 * hidden,
            Init::Scaled { fan_in: input, gain: 1.0 },
        );
        let wh = layout.add(
            format!("{name}.wh"),
            hidden,
            4 * hidden,
            Init::Scaled { fan_in: hidden, gain: 1.0 },
        );
        let b = layout.add(format!("{name}.b"), 1, 4 * hidden, Init::Zeros);
        Self {
            wx,
            wh,
            b,
            input,
            hidden,
        }
    }

    /// Sets the forget-gate bias, conventionally 1 at init.
    pub fn init_forget_bias(&self, p: &mut [f64], value: f64) {
        let h = self.hidden;
        self.b.slice_mut(p)[h..2 * h].fill(value);
    }

    pub fn forward(&self, p: &[f64], xs: Vec<Array2<f64>>) -> LstmCache {
        let batch = xs.first().map(|x| x.nrows()).unwrap_or(0);
        let h = self.hidden;
        let wx = self.wx.view(p);
        let wh = self.wh.view(p);
        let b = self.b.view(p);
        let mut hs = vec![Array2::zeros((batch, h))];
        let mut cs = vec![Array2::zeros((batch, h))];
        let mut gates = Vec::with_capacity(xs.len());
        for x in &xs {
            let mut z = x.dot(&wx) + hs.last().unwrap().dot(&wh);
            z += &b;
            z.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
            z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(f64::tanh);
            z.slice_mut(s![.., 3 * h..4 * h]).mapv_inplace(sigmoid);
            let i = z.slice(s![.., 0..h]);
            let f = z.slice(s![.., h..2 * h]);
            let g = z.slice(s![.., 2 * h..3 * h]);
            let o = z.slice(s![.., 3 * h..4 * h]);
            let c = &f * cs.last().unwrap() + &i * &g;
            let hn = &o * &c.mapv(f64::tanh);
            cs.push(c);
            hs.push(hn);
            gates.push(z);
        }
        LstmCache { xs, hs, cs, gates }
    }

    /// Backpropagates a gradient on the final hidden state. Returns dL/dx_t.
    pub fn backward(
        &self,
        p: &[f64],
        cache: &LstmCache,
        dh_last: ArrayView2<f64>,
        grad: &mut [f64],
    ) -> Vec<Array2<f64>> {
        let h = self.hidden;
        let steps = cache.xs.len();
        let wx = self.wx.view(p);
        let wh = self.wh.view(p);
        let mut dh = dh_last.to_owned();
        let mut dc = Array2::<f64>::zeros(dh.raw_dim());
        let mut dxs = vec![Array2::zeros((0, 0)); steps];
        let mut gwx = Array2::<f64>::zeros(wx.raw_dim());
        let mut gwh = Array2::<f64>::zeros(wh.raw_dim());
        let mut gb = Array2::<f64>::zeros((1, 4 * h));
        for t in (0..steps).rev() {
            let z = &cache.gates[t];
            let i = z.slice(s![.., 0..h]);
            let f = z.slice(s![.., h..2 * h]);
            let g = z.slice(s![.., 2 * h..3 * h]);
            let o = z.slice(s![.., 3 * h..4 * h]);
            let tc = cache.cs[t + 1].mapv(f64::tanh);
            let c_prev = &cache.cs[t];
            dc = dc + &dh * &o * &tc.mapv(|v| 1.0 - v * v);
            let mut dz = Array2::<f64>::zeros(z.raw_dim());
            dz.slice_mut(s![.., 0..h])
                .assign(&(&dc * &g * &i.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![.., h..2 * h])
                .assign(&(&dc * c_prev * &f.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![.., 2 * h..3 * h])
                .assign(&(&dc * &i * &g.mapv(|v| 1.0 - v * v)));
            dz.slice_mut(s![.., 3 * h..4 * h])
                .assign(&(&dh * &tc * &o.mapv(|v| v * (1.0 - v))));
            gwx += &cache.xs[t].t().dot(&dz);
            gwh += &cache.hs[t].t().dot(&dz);
            gb += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            dxs[t] = dz.dot(&wx.t());
            dh = dz.dot(&wh.t());
            dc = &dc * &f;
        }
        self.wx.view_mut(grad).scaled_add(1.0, &gwx);
        self.wh.view_mut(grad).scaled_add(1.0, &gwh);
        self.b.view_mut(grad).scaled_add(1.0, &gb);
        dxs
    }
}
