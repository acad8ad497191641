use ndarray::{concatenate, s, Array2, Array5, ArrayView2, ArrayView5, Axis};

use super::NetConfig;
use crate::embed::GraphEncoder;
use crate::error::{Error, Result};
use crate::layers::act::{relu_backward, relu_inplace, softplus, softplus_backward};
use crate::layers::{Conv3x3, Dense, Lstm, LstmCache};
use crate::params::{Init, ParamLayout};

/// Stacks `(B, |T|, c, l, l)` blocks into a channel-major `(sum c, |T|*B*l*l)`
/// matrix whose image index is `t * B + b`.
pub(crate) fn channels_major(parts: &[ArrayView5<f64>]) -> Array2<f64> {
    let (b, t, _, h, w) = parts[0].dim();
    let px = h * w;
    let channels: usize = parts.iter().map(|p| p.dim().2).sum();
    let total = b * t * px;
    let mut x = Array2::<f64>::zeros((channels, total));
    let xs = x.as_slice_mut().expect("fresh array");
    let mut c_off = 0;
    for part in parts {
        let c_n = part.dim().2;
        let std = part.as_standard_layout();
        let src = std.as_slice().expect("standard layout");
        for bi in 0..b {
            for ti in 0..t {
                for c in 0..c_n {
                    let from = (((bi * t) + ti) * c_n + c) * px;
                    let to = (c_off + c) * total + (ti * b + bi) * px;
                    xs[to..to + px].copy_from_slice(&src[from..from + px]);
                }
            }
        }
        c_off += c_n;
    }
    x
}

/// `(C, N*P)` to `(N, C*P)`.
pub(crate) fn images_to_rows(y: ArrayView2<f64>, px: usize) -> Array2<f64> {
    let (c_n, total) = y.dim();
    let n = total / px;
    let mut out = Array2::<f64>::zeros((n, c_n * px));
    let std = y.as_standard_layout();
    let src = std.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("fresh array");
    for c in 0..c_n {
        for img in 0..n {
            let from = c * total + img * px;
            let to = img * c_n * px + c * px;
            dst[to..to + px].copy_from_slice(&src[from..from + px]);
        }
    }
    out
}

/// Inverse of [`images_to_rows`].
pub(crate) fn rows_to_images(r: ArrayView2<f64>, px: usize) -> Array2<f64> {
    let (n, width) = r.dim();
    let c_n = width / px;
    let total = n * px;
    let mut out = Array2::<f64>::zeros((c_n, total));
    let std = r.as_standard_layout();
    let src = std.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("fresh array");
    for c in 0..c_n {
        for img in 0..n {
            let from = img * c_n * px + c * px;
            let to = c * total + img * px;
            dst[to..to + px].copy_from_slice(&src[from..from + px]);
        }
    }
    out
}

/// CNN+LSTM generator. Parameters, including the optional graph encoder,
/// live in one flat vector described by `layout`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Generator {
    pub cfg: NetConfig,
    pub layout: ParamLayout,
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
    pub proj: Dense,
    pub lstm: Lstm,
    pub head: Dense,
    pub encoder: Option<GraphEncoder>,
}

#[derive(Debug, Clone)]
pub struct GenCache {
    batch: usize,
    cols1: Array2<f64>,
    y1: Array2<f64>,
    cols2: Array2<f64>,
    y2: Array2<f64>,
    flat: Array2<f64>,
    lstm: LstmCache,
    head_in: Array2<f64>,
    pre: Array2<f64>,
    /// Nonnegative output maps, `(B, l*l)`.
    pub out: Array2<f64>,
}

/// Bias that makes the initial output `softplus(b) = 1`, the mean of
/// scaled mobility.
const HEAD_BIAS: f64 = 0.541_324_854_612_918_1;

impl Generator {
    pub fn new(cfg: &NetConfig, with_graph: bool) -> Self {
        let mut layout = ParamLayout::new();
        let l = cfg.window;
        let conv1 = Conv3x3::new(&mut layout, "gen.conv1", cfg.features + cfg.noise, cfg.conv_hidden, l, l);
        let conv2 = Conv3x3::new(&mut layout, "gen.conv2", cfg.conv_hidden, cfg.conv_out, l, l);
        let proj = Dense::new(&mut layout, "gen.proj", cfg.conv_out * cfg.pixels(), cfg.conv_out, 1.0);
        let lstm = Lstm::new(&mut layout, "gen.lstm", cfg.conv_out, cfg.lstm_hidden);
        let head_w = layout.add("gen.head.w", cfg.lstm_hidden + cfg.z_dim, cfg.pixels(), Init::Scaled {
            fan_in: cfg.lstm_hidden + cfg.z_dim,
            gain: 0.5,
        });
        let head_b = layout.add("gen.head.b", 1, cfg.pixels(), Init::Const(HEAD_BIAS));
        let head = Dense { w: head_w, b: head_b };
        let encoder = (with_graph && cfg.node_features > 0)
            .then(|| GraphEncoder::new(&mut layout, "embed", cfg.node_features, cfg.gcn_hidden, cfg.z_dim));
        Self { cfg: cfg.clone(), layout, conv1, conv2, proj, lstm, head, encoder }
    }

    pub fn init_params<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = self.layout.init(rng);
        self.lstm.init_forget_bias(&mut p, 1.0);
        p
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    fn check(&self, cond: &Array5<f64>, noise: &Array5<f64>, z: &Array2<f64>) -> Result<()> {
        let c = &self.cfg;
        let (b, t, k, h, w) = cond.dim();
        let checks = [
            ("condition slots |T|", c.horizon, t),
            ("condition features k", c.features, k),
            ("condition window rows l", c.window, h),
            ("condition window cols l", c.window, w),
            ("noise batch", b, noise.dim().0),
            ("noise slots |T|", c.horizon, noise.dim().1),
            ("noise channels u", c.noise, noise.dim().2),
            ("noise window rows l", c.window, noise.dim().3),
            ("noise window cols l", c.window, noise.dim().4),
            ("embedding batch", b, z.nrows()),
            ("embedding width", c.z_dim, z.ncols()),
        ];
        for (what, expected, actual) in checks {
            if expected != actual {
                return Err(Error::shape(what, expected, actual));
            }
        }
        if b == 0 {
            return Err(Error::Empty("generator batch".into()));
        }
        Ok(())
    }

    /// Estimates the final-slot map of every sample.
    pub fn forward(&self, p: &[f64], cond: &Array5<f64>, noise: &Array5<f64>, z: &Array2<f64>) -> Result<GenCache> {
        self.check(cond, noise, z)?;
        let b = cond.dim().0;
        let px = self.cfg.pixels();
        let x = channels_major(&[cond.view(), noise.view()]);
        let (mut y1, cols1) = self.conv1.forward(p, x.view());
        relu_inplace(&mut y1);
        let (mut y2, cols2) = self.conv2.forward(p, y1.view());
        relu_inplace(&mut y2);
        let flat = images_to_rows(y2.view(), px);
        let r = self.proj.forward(p, flat.view());
        let xs = (0..self.cfg.horizon)
            .map(|t| r.slice(s![t * b..(t + 1) * b, ..]).to_owned())
            .collect();
        let lstm = self.lstm.forward(p, xs);
        let head_in = concatenate![Axis(1), lstm.last_hidden().view(), z.view()];
        let pre = self.head.forward(p, head_in.view());
        let out = pre.mapv(softplus);
        Ok(GenCache { batch: b, cols1, y1, cols2, y2, flat, lstm, head_in, pre, out })
    }

    /// Accumulates parameter gradients of `sum(dout * out)` and returns the
    /// gradient with respect to the embedding rows.
    pub fn backward(&self, p: &[f64], cache: &GenCache, dout: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        let b = cache.batch;
        let hidden = self.cfg.lstm_hidden;
        let px = self.cfg.pixels();
        let mut dpre = dout.to_owned();
        softplus_backward(&mut dpre, cache.pre.view());
        let dhead = self.head.backward(p, cache.head_in.view(), dpre.view(), grad, true).expect("dx");
        let dh = dhead.slice(s![.., ..hidden]);
        let dz = dhead.slice(s![.., hidden..]).to_owned();
        let dxs = self.lstm.backward(p, &cache.lstm, dh, grad);
        let mut dr = Array2::<f64>::zeros((b * self.cfg.horizon, self.cfg.conv_out));
        for (t, dx) in dxs.iter().enumerate() {
            dr.slice_mut(s![t * b..(t + 1) * b, ..]).assign(dx);
        }
        let dflat = self.proj.backward(p, cache.flat.view(), dr.view(), grad, true).expect("dx");
        let mut dy2 = rows_to_images(dflat.view(), px);
        relu_backward(&mut dy2, cache.y2.view());
        let mut dy1 = self.conv2.backward(p, cache.cols2.view(), dy2.view(), grad, true).expect("dx");
        relu_backward(&mut dy1, cache.y1.view());
        self.conv1.backward(p, cache.cols1.view(), dy1.view(), grad, false);
        dz
    }
}
