use ndarray::{Array2, Array4, ArrayView4, Axis};

use super::conv::Conv2d;
use super::norm::{BatchNorm2d, BnMode};
use super::param::Param;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    cache: Option<Array4<f64>>,
}

impl Relu {
    pub fn infer(x: Array4<f64>) -> Array4<f64> {
        x.mapv_into(|v| v.max(0.0))
    }

    pub fn forward(&mut self, x: Array4<f64>) -> Array4<f64> {
        let y = Self::infer(x);
        self.cache = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let y = self.cache.take().expect("relu backward without forward");
        let mut g = grad_out.clone();
        ndarray::Zip::from(&mut g).and(&y).for_each(|g, &y| {
            if y <= 0.0 {
                *g = 0.0
            }
        });
        g
    }
}

/// Argmax indices of the last forward pass plus the input shape.
type PoolCache = (Array4<usize>, (usize, usize, usize, usize));

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<PoolCache>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }

    fn pool(&self, x: ArrayView4<'_, f64>) -> (Array4<f64>, Array4<usize>) {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.output_size(h, w).expect("pool input smaller than kernel");
        let mut out = Array4::zeros((n, c, ho, wo));
        let mut arg = Array4::zeros((n, c, ho, wo));
        for b in 0..n {
            for ch in 0..c {
                let plane = x.slice(ndarray::s![b, ch, .., ..]);
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for ki in 0..self.kernel {
                            let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kj in 0..self.kernel {
                                let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let v = plane[[iy as usize, ix as usize]];
                                if v > best {
                                    best = v;
                                    best_idx = iy as usize * w + ix as usize;
                                }
                            }
                        }
                        out[[b, ch, oy, ox]] = best;
                        arg[[b, ch, oy, ox]] = best_idx;
                    }
                }
            }
        }
        (out, arg)
    }

    pub fn infer(&self, x: ArrayView4<'_, f64>) -> Array4<f64> {
        self.pool(x).0
    }

    pub fn forward(&mut self, x: Array4<f64>) -> Array4<f64> {
        let (out, arg) = self.pool(x.view());
        self.cache = Some((arg, x.dim()));
        out
    }

    pub fn backward(&mut self, grad_out: &Array4<f64>) -> Array4<f64> {
        let (arg, (n, c, h, w)) = self.cache.take().expect("pool backward without forward");
        let mut dx = Array4::zeros((n, c, h, w));
        for b in 0..n {
            for ch in 0..c {
                let mut plane = dx.slice_mut(ndarray::s![b, ch, .., ..]);
                let flat = plane.as_slice_mut().expect("contiguous plane");
                let g = grad_out.slice(ndarray::s![b, ch, .., ..]);
                let a = arg.slice(ndarray::s![b, ch, .., ..]);
                ndarray::Zip::from(&g).and(&a).for_each(|&g, &i| flat[i] += g);
            }
        }
        dx
    }
}

/// Residual block: `relu(body(x) + shortcut(x))`, identity shortcut when `shortcut` is empty.
#[derive(Debug, Clone)]
pub struct Residual {
    pub body: Vec<Layer>,
    pub shortcut: Vec<Layer>,
    out_relu: Relu,
}

impl Residual {
    pub fn new(body: Vec<Layer>, shortcut: Vec<Layer>) -> Self {
        Residual {
            body,
            shortcut,
            out_relu: Relu::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    Relu(Relu),
    MaxPool(MaxPool2d),
    Residual(Box<Residual>),
}

impl Layer {
    pub fn relu() -> Self {
        Layer::Relu(Relu::default())
    }

    pub fn infer(&self, x: Array4<f64>) -> Array4<f64> {
        match self {
            Layer::Conv(c) => c.infer(x.view()),
            Layer::BatchNorm(bn) => bn.infer(x.view()),
            Layer::Relu(_) => Relu::infer(x),
            Layer::MaxPool(p) => p.infer(x.view()),
            Layer::Residual(r) => {
                let body = infer_seq(&r.body, x.clone());
                let sc = infer_seq(&r.shortcut, x);
                Relu::infer(body + sc)
            }
        }
    }

    pub fn forward(&mut self, x: Array4<f64>, bn: BnMode) -> Array4<f64> {
        match self {
            Layer::Conv(c) => c.forward(x),
            Layer::BatchNorm(b) => b.forward(x, bn),
            Layer::Relu(r) => r.forward(x),
            Layer::MaxPool(p) => p.forward(x),
            Layer::Residual(r) => {
                let body = forward_seq(&mut r.body, x.clone(), bn);
                let sc = forward_seq(&mut r.shortcut, x, bn);
                r.out_relu.forward(body + sc)
            }
        }
    }

    pub fn backward(&mut self, grad: &Array4<f64>, need_input_grad: bool) -> Option<Array4<f64>> {
        match self {
            Layer::Conv(c) => c.backward(grad, need_input_grad),
            Layer::BatchNorm(b) => Some(b.backward(grad)),
            Layer::Relu(r) => Some(r.backward(grad)),
            Layer::MaxPool(p) => Some(p.backward(grad)),
            Layer::Residual(r) => {
                let g = r.out_relu.backward(grad);
                let gb = backward_seq(&mut r.body, g.clone(), need_input_grad);
                let gs = backward_seq(&mut r.shortcut, g, need_input_grad);
                match (gb, gs) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                }
            }
        }
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        match self {
            Layer::Conv(c) => {
                out.push(&c.weight);
                if let Some(b) = &c.bias {
                    out.push(b);
                }
            }
            Layer::BatchNorm(b) => {
                out.push(&b.gamma);
                out.push(&b.beta);
            }
            Layer::Relu(_) | Layer::MaxPool(_) => {}
            Layer::Residual(r) => {
                r.body.iter().for_each(|l| l.visit_params(out));
                r.shortcut.iter().for_each(|l| l.visit_params(out));
            }
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match self {
            Layer::Conv(c) => {
                out.push(&mut c.weight);
                if let Some(b) = &mut c.bias {
                    out.push(b);
                }
            }
            Layer::BatchNorm(b) => {
                out.push(&mut b.gamma);
                out.push(&mut b.beta);
            }
            Layer::Relu(_) | Layer::MaxPool(_) => {}
            Layer::Residual(r) => {
                r.body.iter_mut().for_each(|l| l.visit_params_mut(out));
                r.shortcut.iter_mut().for_each(|l| l.visit_params_mut(out));
            }
        }
    }

    pub fn visit_batch_norms<'a>(&'a self, out: &mut Vec<&'a BatchNorm2d>) {
        match self {
            Layer::BatchNorm(b) => out.push(b),
            Layer::Residual(r) => {
                r.body.iter().for_each(|l| l.visit_batch_norms(out));
                r.shortcut.iter().for_each(|l| l.visit_batch_norms(out));
            }
            _ => {}
        }
    }

    pub fn visit_batch_norms_mut<'a>(&'a mut self, out: &mut Vec<&'a mut BatchNorm2d>) {
        match self {
            Layer::BatchNorm(b) => out.push(b),
            Layer::Residual(r) => {
                r.body.iter_mut().for_each(|l| l.visit_batch_norms_mut(out));
                r.shortcut.iter_mut().for_each(|l| l.visit_batch_norms_mut(out));
            }
            _ => {}
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(c) => c.clear_cache(),
            Layer::BatchNorm(b) => b.clear_cache(),
            Layer::Relu(r) => r.cache = None,
            Layer::MaxPool(p) => p.cache = None,
            Layer::Residual(r) => {
                r.body.iter_mut().for_each(Layer::clear_cache);
                r.shortcut.iter_mut().for_each(Layer::clear_cache);
                r.out_relu.cache = None;
            }
        }
    }

    /// Output (channels, height, width) for a given input, or `None` when the
    /// spatial extent collapses below a kernel.
    pub fn output_shape(&self, c: usize, h: usize, w: usize) -> Option<(usize, usize, usize)> {
        match self {
            Layer::Conv(conv) => {
                if conv.in_channels != c {
                    return None;
                }
                conv.output_size(h, w).map(|(h, w)| (conv.out_channels, h, w))
            }
            Layer::BatchNorm(b) => (b.channels() == c).then_some((c, h, w)),
            Layer::Relu(_) => Some((c, h, w)),
            Layer::MaxPool(p) => p.output_size(h, w).map(|(h, w)| (c, h, w)),
            Layer::Residual(r) => {
                let body = seq_output_shape(&r.body, c, h, w)?;
                let sc = seq_output_shape(&r.shortcut, c, h, w)?;
                (body == sc).then_some(body)
            }
        }
    }
}

pub fn infer_seq(layers: &[Layer], x: Array4<f64>) -> Array4<f64> {
    layers.iter().fold(x, |x, l| l.infer(x))
}

pub fn forward_seq(layers: &mut [Layer], x: Array4<f64>, bn: BnMode) -> Array4<f64> {
    layers.iter_mut().fold(x, |x, l| l.forward(x, bn))
}

pub fn backward_seq(layers: &mut [Layer], grad: Array4<f64>, need_input_grad: bool) -> Option<Array4<f64>> {
    let mut g = grad;
    let n = layers.len();
    for (i, layer) in layers.iter_mut().enumerate().rev() {
        let need = i > 0 || need_input_grad;
        match layer.backward(&g, need) {
            Some(next) => g = next,
            None => {
                debug_assert!(i == 0 || n == 0);
                return None;
            }
        }
    }
    Some(g)
}

pub fn seq_output_shape(layers: &[Layer], c: usize, h: usize, w: usize) -> Option<(usize, usize, usize)> {
    layers
        .iter()
        .try_fold((c, h, w), |(c, h, w), l| l.output_shape(c, h, w))
}

/// Global average pooling NCHW -> NC.
pub fn global_avg_pool(x: &Array4<f64>) -> Array2<f64> {
    let (_, _, h, w) = x.dim();
    x.sum_axis(Axis(3)).sum_axis(Axis(2)) / (h * w) as f64
}

pub fn global_avg_pool_backward(grad: &Array2<f64>, h: usize, w: usize) -> Array4<f64> {
    let (n, c) = grad.dim();
    let scale = 1.0 / (h * w) as f64;
    let mut out = Array4::zeros((n, c, h, w));
    for ((b, ch), &g) in grad.indexed_iter() {
        out.slice_mut(ndarray::s![b, ch, .., ..]).fill(g * scale);
    }
    out
}
