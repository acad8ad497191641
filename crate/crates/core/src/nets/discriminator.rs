use ndarray::{s, Array1, Array2, Array4, Array5, ArrayView1, ArrayView2, Axis};

use super::generator::channels_major;
use super::NetConfig;
use crate::error::{Error, Result};
use crate::layers::act::{relu_backward, relu_inplace, sigmoid};
use crate::layers::{Conv3x3, Dense};
use crate::params::ParamLayout;

/// Scores a candidate final-slot map against its conditions and the
/// preceding maps of the same window.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Discriminator {
    pub cfg: NetConfig,
    pub layout: ParamLayout,
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
    pub fc1: Dense,
    pub fc2: Dense,
}

#[derive(Debug, Clone)]
pub struct DiscCache {
    rows: usize,
    cols1: Array2<f64>,
    y1: Array2<f64>,
    cols2: Array2<f64>,
    y2: Array2<f64>,
    pooled: Array2<f64>,
    h: Array2<f64>,
    pub logits: Array1<f64>,
}

impl DiscCache {
    pub fn probs(&self) -> Array1<f64> {
        self.logits.mapv(sigmoid)
    }
}

impl Discriminator {
    pub fn new(cfg: &NetConfig) -> Self {
        let mut layout = ParamLayout::new();
        let l = cfg.window;
        let conv1 = Conv3x3::new(&mut layout, "disc.conv1", cfg.features + 1, cfg.disc_conv_hidden, l, l);
        let conv2 = Conv3x3::new(&mut layout, "disc.conv2", cfg.disc_conv_hidden, cfg.disc_conv_out, l, l);
        let fc1 = Dense::new(&mut layout, "disc.fc1", cfg.disc_conv_out, cfg.disc_hidden, std::f64::consts::SQRT_2);
        let fc2 = Dense::new(&mut layout, "disc.fc2", cfg.disc_hidden, 1, 1.0);
        Self { cfg: cfg.clone(), layout, conv1, conv2, fc1, fc2 }
    }

    pub fn init_params<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.layout.init(rng)
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    fn check(&self, cond: &Array5<f64>, history: &Array4<f64>, candidate: ArrayView2<f64>) -> Result<()> {
        let c = &self.cfg;
        let (r, t, k, h, w) = cond.dim();
        let checks = [
            ("condition slots |T|", c.horizon, t),
            ("condition features k", c.features, k),
            ("condition window rows l", c.window, h),
            ("condition window cols l", c.window, w),
            ("history rows", r, history.dim().0),
            ("history slots |T|-1", c.horizon - 1, history.dim().1),
            ("history window rows l", c.window, history.dim().2),
            ("history window cols l", c.window, history.dim().3),
            ("candidate rows", r, candidate.nrows()),
            ("candidate cells l*l", c.pixels(), candidate.ncols()),
        ];
        for (what, expected, actual) in checks {
            if expected != actual {
                return Err(Error::shape(what, expected, actual));
            }
        }
        if r == 0 {
            return Err(Error::Empty("discriminator batch".into()));
        }
        Ok(())
    }

    /// Logits for each row. `history` holds the first `|T|-1` maps of the
    /// window and `candidate` the final one.
    pub fn forward(
        &self,
        p: &[f64],
        cond: &Array5<f64>,
        history: &Array4<f64>,
        candidate: ArrayView2<f64>,
    ) -> Result<DiscCache> {
        self.check(cond, history, candidate)?;
        let (r, t, _, l, _) = cond.dim();
        let px = l * l;
        let mut series = Array4::<f64>::zeros((r, t, l, l));
        series.slice_mut(s![.., ..t - 1, .., ..]).assign(history);
        let cand = candidate.to_shape((r, l, l)).expect("checked width");
        series.slice_mut(s![.., t - 1, .., ..]).assign(&cand);
        let x = channels_major(&[cond.view(), series.view().insert_axis(Axis(2))]);
        let (mut y1, cols1) = self.conv1.forward(p, x.view());
        relu_inplace(&mut y1);
        let (mut y2, cols2) = self.conv2.forward(p, y1.view());
        relu_inplace(&mut y2);
        let channels = y2.nrows();
        let mut pooled = Array2::<f64>::zeros((r, channels));
        let scale = 1.0 / (t * px) as f64;
        for c in 0..channels {
            let row = y2.row(c);
            for ti in 0..t {
                for ri in 0..r {
                    let start = (ti * r + ri) * px;
                    pooled[[ri, c]] += row.slice(s![start..start + px]).sum() * scale;
                }
            }
        }
        let mut h = self.fc1.forward(p, pooled.view());
        relu_inplace(&mut h);
        let logits = self.fc2.forward(p, h.view()).column(0).to_owned();
        Ok(DiscCache { rows: r, cols1, y1, cols2, y2, pooled, h, logits })
    }

    /// Accumulates parameter gradients of `sum(dlogits * logits)`. When
    /// requested, returns the gradient with respect to the candidate maps.
    pub fn backward(
        &self,
        p: &[f64],
        cache: &DiscCache,
        dlogits: ArrayView1<f64>,
        grad: &mut [f64],
        need_candidate: bool,
    ) -> Option<Array2<f64>> {
        let r = cache.rows;
        let t = self.cfg.horizon;
        let px = self.cfg.pixels();
        let dl = dlogits.to_owned().insert_axis(Axis(1));
        let mut dh = self.fc2.backward(p, cache.h.view(), dl.view(), grad, true).expect("dx");
        relu_backward(&mut dh, cache.h.view());
        let dpooled = self.fc1.backward(p, cache.pooled.view(), dh.view(), grad, true).expect("dx");
        let scale = 1.0 / (t * px) as f64;
        let mut dy2 = Array2::<f64>::zeros(cache.y2.raw_dim());
        for (c, mut row) in dy2.axis_iter_mut(Axis(0)).enumerate() {
            for ti in 0..t {
                for ri in 0..r {
                    let start = (ti * r + ri) * px;
                    row.slice_mut(s![start..start + px]).fill(dpooled[[ri, c]] * scale);
                }
            }
        }
        relu_backward(&mut dy2, cache.y2.view());
        let mut dy1 = self.conv2.backward(p, cache.cols2.view(), dy2.view(), grad, true).expect("dx");
        relu_backward(&mut dy1, cache.y1.view());
        let dx = self.conv1.backward(p, cache.cols1.view(), dy1.view(), grad, need_candidate)?;
        let k = self.cfg.features;
        let start = (t - 1) * r * px;
        let block = dx.slice(s![k, start..start + r * px]);
        Some(block.to_shape((r, px)).expect("contiguous block").to_owned())
    }
}
