use ndarray::{Array1, Array4, ArrayD, ArrayView4, IxDyn};

use super::param::{Param, ParamGroup};

/// How a batch-norm layer normalizes during a recorded (differentiable) forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and fold them into the running estimates.
    Batch,
    /// Normalize with the stored running statistics; running estimates untouched.
    Running,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Array4<f64>,
    inv_std: Array1<f64>,
    mode: BnMode,
}

/// Per-channel batch normalization with affine `gamma`/`beta`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(path: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(
                ParamGroup::BnAffine,
                format!("{path}.gamma"),
                ArrayD::ones(IxDyn(&[channels])),
            ),
            beta: Param::new(
                ParamGroup::BnAffine,
                format!("{path}.beta"),
                ArrayD::zeros(IxDyn(&[channels])),
            ),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    fn normalize(
        &self,
        x: ArrayView4<'_, f64>,
        mean: &Array1<f64>,
        inv_std: &Array1<f64>,
    ) -> (Array4<f64>, Array4<f64>) {
        let mut xhat = x.to_owned();
        let mut y = Array4::zeros(x.raw_dim());
        let (n, c, _, _) = x.dim();
        for b in 0..n {
            for ch in 0..c {
                let (m, is) = (mean[ch], inv_std[ch]);
                let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
                let mut xp = xhat.slice_mut(ndarray::s![b, ch, .., ..]);
                let mut yp = y.slice_mut(ndarray::s![b, ch, .., ..]);
                ndarray::Zip::from(&mut xp).and(&mut yp).for_each(|xv, yv| {
                    *xv = (*xv - m) * is;
                    *yv = g * *xv + bt;
                });
            }
        }
        (xhat, y)
    }

    fn batch_stats(x: ArrayView4<'_, f64>) -> (Array1<f64>, Array1<f64>) {
        let (n, c, h, w) = x.dim();
        let count = (n * h * w) as f64;
        let mut mean = Array1::zeros(c);
        let mut var = Array1::zeros(c);
        for ch in 0..c {
            let plane = x.slice(ndarray::s![.., ch, .., ..]);
            let m = plane.sum() / count;
            let v = plane.fold(0.0, |acc, &v| acc + (v - m) * (v - m)) / count;
            mean[ch] = m;
            var[ch] = v;
        }
        (mean, var)
    }

    /// Eval-mode normalization with running statistics, no recording.
    pub fn infer(&self, x: ArrayView4<'_, f64>) -> Array4<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        self.normalize(x, &self.running_mean, &inv_std).1
    }

    pub fn forward(&mut self, x: Array4<f64>, mode: BnMode) -> Array4<f64> {
        let (mean, inv_std) = match mode {
            BnMode::Batch => {
                let (mean, var) = Self::batch_stats(x.view());
                let (n, _, h, w) = x.dim();
                let count = (n * h * w) as f64;
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let mom = self.momentum;
                self.running_mean = &self.running_mean * (1.0 - mom) + &mean * mom;
                self.running_var = &self.running_var * (1.0 - mom) + &var * (mom * unbias);
                let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
                (mean, inv_std)
            }
            BnMode::Running => (
                self.running_mean.clone(),
                self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt()),
            ),
        };
        let (xhat, y) = self.normalize(x.view(), &mean, &inv_std);
        self.cache = Some(BnCache { xhat, inv_std, mode });
        y
    }

    pub fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let BnCache { xhat, inv_std, mode } = self.cache.take().expect("bn backward without forward");
        let (n, c, h, w) = grad_out.dim();
        let count = (n * h * w) as f64;
        let mut dx = Array4::zeros(grad_out.raw_dim());
        for ch in 0..c {
            let gy = grad_out.slice(ndarray::s![.., ch, .., ..]);
            let xh = xhat.slice(ndarray::s![.., ch, .., ..]);
            let sum_g = gy.sum();
            let sum_gx = ndarray::Zip::from(&gy).and(&xh).fold(0.0, |acc, &g, &x| acc + g * x);
            self.gamma.grad[ch] += sum_gx;
            self.beta.grad[ch] += sum_g;
            let gamma = self.gamma.value[ch];
            let is = inv_std[ch];
            let mut dxp = dx.slice_mut(ndarray::s![.., ch, .., ..]);
            match mode {
                BnMode::Batch => {
                    // d xhat = g * gamma; dx = is/M * (M dxhat - sum dxhat - xhat sum(dxhat xhat))
                    let mean_g = sum_g / count;
                    let mean_gx = sum_gx / count;
                    ndarray::Zip::from(&mut dxp)
                        .and(&gy)
                        .and(&xh)
                        .for_each(|d, &g, &x| *d = gamma * is * (g - mean_g - x * mean_gx));
                }
                BnMode::Running => {
                    ndarray::Zip::from(&mut dxp)
                        .and(&gy)
                        .for_each(|d, &g| *d = gamma * is * g);
                }
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
