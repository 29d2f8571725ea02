use ndarray::{linalg::general_mat_mul, s, Array2, Array4, ArrayView2, ArrayView4, Axis, Ix2, IxDyn};
use rand::Rng;

use super::param::{Param, ParamGroup};

/// Upper bound on the number of elements in one im2col buffer. Larger batches
/// are processed in chunks of whole images, in index order.
const MAX_COL_ELEMS: usize = 1 << 23;

/// 2-D convolution over NCHW tensors, lowered to a single GEMM per chunk.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<Array4<f64>>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        path: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        // He-uniform: U(-b, b) with b = sqrt(6 / fan_in).
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight = ndarray::ArrayD::from_shape_simple_fn(IxDyn(&[out_channels, in_channels, kernel, kernel]), || {
            rng.random_range(-bound..bound)
        });
        let bias = with_bias.then(|| {
            Param::new(
                ParamGroup::ConvWeight,
                format!("{path}.bias"),
                ndarray::ArrayD::zeros(IxDyn(&[out_channels])),
            )
        });
        Conv2d {
            weight: Param::new(ParamGroup::ConvWeight, format!("{path}.weight"), weight),
            bias,
            in_channels,
            out_channels,
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

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_channels, self.in_channels * self.kernel * self.kernel))
            .expect("conv weight is contiguous")
    }

    fn chunk_len(&self, n: usize, ho: usize, wo: usize) -> usize {
        let per_image = self.in_channels * self.kernel * self.kernel * ho * wo;
        (MAX_COL_ELEMS / per_image.max(1)).clamp(1, n.max(1))
    }

    pub fn infer(&self, x: ArrayView4<'_, f64>) -> Array4<f64> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_size(h, w).expect("conv input smaller than kernel");
        let mut out = Array4::zeros((n, self.out_channels, ho, wo));
        let wm = self.weight_matrix();
        let chunk = self.chunk_len(n, ho, wo);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let xs = x.slice(s![start..end, .., .., ..]);
            let cols = im2col(xs, self.kernel, self.stride, self.padding, ho, wo);
            let mut y = Array2::zeros((self.out_channels, (end - start) * ho * wo));
            general_mat_mul(1.0, &wm, &cols, 0.0, &mut y);
            let y = y
                .into_shape_with_order((self.out_channels, end - start, ho, wo))
                .expect("gemm output shape");
            out.slice_mut(s![start..end, .., .., ..])
                .assign(&y.permuted_axes([1, 0, 2, 3]));
            start = end;
        }
        if let Some(b) = &self.bias {
            for (mut plane, &bv) in out.axis_iter_mut(Axis(1)).zip(b.value.iter()) {
                plane += bv;
            }
        }
        out
    }

    pub fn forward(&mut self, x: Array4<f64>) -> Array4<f64> {
        let out = self.infer(x.view());
        self.cache = Some(x);
        out
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward(&mut self, grad_out: &Array4<f64>, need_input_grad: bool) -> Option<Array4<f64>> {
        let x = self.cache.take().expect("conv backward without forward");
        let (n, _, h, w) = x.dim();
        let (_, _, ho, wo) = grad_out.dim();
        let k = self.in_channels * self.kernel * self.kernel;
        if let Some(b) = &mut self.bias {
            let gb = grad_out.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
            b.grad += &gb.into_dyn();
        }
        let mut dx = need_input_grad.then(|| Array4::zeros((n, self.in_channels, h, w)));
        let mut dw = Array2::<f64>::zeros((self.out_channels, k));
        let chunk = self.chunk_len(n, ho, wo);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let m = end - start;
            let cols = im2col(
                x.slice(s![start..end, .., .., ..]),
                self.kernel,
                self.stride,
                self.padding,
                ho,
                wo,
            );
            let g = grad_out
                .slice(s![start..end, .., .., ..])
                .permuted_axes([1, 0, 2, 3])
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((self.out_channels, m * ho * wo))
                .expect("grad reshape");
            general_mat_mul(1.0, &g, &cols.t(), 1.0, &mut dw);
            if let Some(dx) = dx.as_mut() {
                let wm = self.weight_matrix();
                let mut dcols = Array2::zeros((k, m * ho * wo));
                general_mat_mul(1.0, &wm.t(), &g, 0.0, &mut dcols);
                col2im(
                    dcols.view(),
                    dx.slice_mut(s![start..end, .., .., ..]),
                    self.kernel,
                    self.stride,
                    self.padding,
                    ho,
                    wo,
                );
            }
            start = end;
        }
        let dw = dw
            .into_dimensionality::<Ix2>()
            .expect("2d")
            .into_shape_with_order(self.weight.value.raw_dim())
            .expect("weight grad shape");
        self.weight.grad += &dw;
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

fn im2col(x: ArrayView4<'_, f64>, kernel: usize, stride: usize, padding: usize, ho: usize, wo: usize) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let per_img = ho * wo;
    let ncols = n * per_img;
    let mut cols = Array2::zeros((c * kernel * kernel, ncols));
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                let dst_row = &mut cs[row * ncols..(row + 1) * ncols];
                for img in 0..n {
                    let src = &xs[(img * c + ci) * h * w..(img * c + ci + 1) * h * w];
                    let dst = &mut dst_row[img * per_img..(img + 1) * per_img];
                    for oy in 0..ho {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = srow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    cols: ArrayView2<'_, f64>,
    mut dx: ndarray::ArrayViewMut4<'_, f64>,
    kernel: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
) {
    let (n, c, h, w) = dx.dim();
    let per_img = ho * wo;
    let ncols = n * per_img;
    let cs = cols.as_slice().expect("standard layout");
    let ds = dx.as_slice_mut().expect("dx slice is contiguous");
    for ci in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                let src_row = &cs[row * ncols..(row + 1) * ncols];
                for img in 0..n {
                    let dst = &mut ds[(img * c + ci) * h * w..(img * c + ci + 1) * h * w];
                    let src = &src_row[img * per_img..(img + 1) * per_img];
                    for oy in 0..ho {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(conv: &Conv2d, x: &Array4<f64>) -> Array4<f64> {
        let (n, _, h, w) = x.dim();
        let (ho, wo) = conv.output_size(h, w).unwrap();
        let wt = conv.weight.value.view().into_dimensionality::<ndarray::Ix4>().unwrap();
        let mut out = Array4::zeros((n, conv.out_channels, ho, wo));
        for b in 0..n {
            for o in 0..conv.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |p| p.value[o]);
                        for c in 0..conv.in_channels {
                            for ki in 0..conv.kernel {
                                for kj in 0..conv.kernel {
                                    let iy = (oy * conv.stride + ki) as isize - conv.padding as isize;
                                    let ix = (ox * conv.stride + kj) as isize - conv.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += wt[[o, c, ki, kj]] * x[[b, c, iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                        out[[b, o, oy, ox]] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, stride, pad) in &[(3, 1, 1), (3, 2, 1), (1, 2, 0), (7, 2, 3)] {
            let mut conv = Conv2d::new("c", 3, 4, k, stride, pad, true, &mut rng);
            if let Some(b) = conv.bias.as_mut() {
                b.value.mapv_inplace(|_| rng.random_range(-1.0..1.0));
            }
            let x = Array4::from_shape_simple_fn((2, 3, 9, 8), || rng.random_range(-1.0..1.0));
            let fast = conv.infer(x.view());
            let slow = naive_conv(&conv, &x);
            let diff = (&fast - &slow).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(diff < 1e-12, "k={k} s={stride} p={pad}: {diff}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> == <x, conv^T(g)> for the input gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::new("c", 2, 3, 3, 2, 1, false, &mut rng);
        let x = Array4::from_shape_simple_fn((2, 2, 7, 6), || rng.random_range(-1.0..1.0));
        let y = conv.forward(x.clone());
        let g = Array4::from_shape_simple_fn(y.raw_dim(), || rng.random_range(-1.0..1.0));
        let dx = conv.backward(&g, true).unwrap();
        let lhs = (&y * &g).sum();
        let rhs = (&x * &dx).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
