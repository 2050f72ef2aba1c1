use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix2, Ix4, IxDyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

/// Serializable description of one layer, enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Standardize { mean: Vec<f64>, std: Vec<f64> },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d { size: usize },
    Flatten,
    Linear { inputs: usize, outputs: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(outputs, inputs)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((outputs, inputs), || {
                rng.random_range(-bound..bound)
            }),
            bias: Array1::from_shape_simple_fn(outputs, || rng.random_range(-bound..bound)),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Returns `(d_weight, d_bias, d_input)`.
    pub fn backward(
        &self,
        input: &Array2<f64>,
        grad: &Array2<f64>,
    ) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
        (
            grad.t().dot(input),
            grad.sum_axis(Axis(0)),
            grad.dot(&self.weight),
        )
    }

    pub fn input_grad(&self, grad: &Array2<f64>) -> Array2<f64> {
        grad.dot(&self.weight)
    }
}

/// Stride-1 square convolution implemented as im2col + matrix product.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `(out_channels, in_channels, kernel, kernel)`
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub padding: usize,
}

impl Conv2d {
    pub fn init(in_channels: usize, out_channels: usize, kernel: usize, padding: usize, rng: &mut Rng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Array4::from_shape_simple_fn((out_channels, in_channels, kernel, kernel), || {
                rng.random_range(-bound..bound)
            }),
            bias: Array1::from_shape_simple_fn(out_channels, || rng.random_range(-bound..bound)),
            padding,
        }
    }

    fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    fn weight_matrix(&self) -> ndarray::ArrayView2<'_, f64> {
        let (oc, ic, k, _) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((oc, ic * k * k))
            .expect("conv weights are contiguous")
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel();
        (h + 2 * self.padding + 1 - k, w + 2 * self.padding + 1 - k)
    }

    fn im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (n, c, h, w) = x.dim();
        let k = self.kernel();
        let p = self.padding as isize;
        let (oh, ow) = self.out_hw(h, w);
        let ckk = c * k * k;
        let mut cols = Array2::<f64>::zeros((n * oh * ow, ckk));
        let xs = x.as_standard_layout();
        let src = xs.as_slice().expect("standard layout");
        let dst = cols.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((b * oh + oy) * ow + ox) * ckk;
                    for ch in 0..c {
                        let base = (b * c + ch) * h * w;
                        for ky in 0..k {
                            let iy = oy as isize + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = base + iy as usize * w;
                            let dst_row = row + (ch * k + ky) * k;
                            for kx in 0..k {
                                let ix = ox as isize + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    dst[dst_row + kx] = src[src_row + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        let (n, c, h, w) = dim;
        let k = self.kernel();
        let p = self.padding as isize;
        let (oh, ow) = self.out_hw(h, w);
        let ckk = c * k * k;
        let mut out = Array4::<f64>::zeros(dim);
        let src = cols.as_slice().expect("standard layout");
        let dst = out.as_slice_mut().expect("fresh array");
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((b * oh + oy) * ow + ox) * ckk;
                    for ch in 0..c {
                        let base = (b * c + ch) * h * w;
                        for ky in 0..k {
                            let iy = oy as isize + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = base + iy as usize * w;
                            let src_row = row + (ch * k + ky) * k;
                            for kx in 0..k {
                                let ix = ox as isize + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    dst[dst_row + ix as usize] += src[src_row + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Array4<f64>) -> (Array4<f64>, Array2<f64>) {
        let (n, _, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let oc = self.weight.dim().0;
        let cols = self.im2col(x);
        let out = cols.dot(&self.weight_matrix().t()) + &self.bias;
        let out = out
            .into_shape_with_order((n, oh, ow, oc))
            .expect("contiguous product")
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .into_owned();
        (out, cols)
    }

    /// Returns `(d_weight, d_bias, d_input)`; weight gradients are skipped
    /// when `param_grads` is false.
    pub fn backward(
        &self,
        cols: &Array2<f64>,
        input_dim: (usize, usize, usize, usize),
        grad: &Array4<f64>,
        param_grads: bool,
    ) -> (Option<(Array4<f64>, Array1<f64>)>, Array4<f64>) {
        let (n, oc, oh, ow) = grad.dim();
        let g = grad
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n * oh * ow, oc))
            .expect("contiguous gradient");
        let params = param_grads.then(|| {
            let dw = g
                .t()
                .dot(cols)
                .into_shape_with_order(self.weight.dim())
                .expect("weight-shaped gradient");
            (dw, g.sum_axis(Axis(0)))
        });
        let dcols = g.dot(&self.weight_matrix());
        (params, self.col2im(&dcols, input_dim))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Fixed per-channel `(x - mean) / std`, used to fuse input normalization
    /// into the model so attacks keep working in pixel units.
    Standardize { mean: Vec<f64>, std: Vec<f64> },
    Conv2d(Conv2d),
    Relu,
    MaxPool2d { size: usize },
    Flatten,
    Linear(Linear),
}

#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    Standardize,
    Conv {
        cols: Array2<f64>,
        input_dim: (usize, usize, usize, usize),
    },
    Relu {
        output: ArrayD<f64>,
    },
    MaxPool {
        argmax: Vec<usize>,
        input_dim: (usize, usize, usize, usize),
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Linear {
        input: Array2<f64>,
    },
}

fn as4(x: ArrayD<f64>) -> Array4<f64> {
    x.into_dimensionality::<Ix4>().expect("layer expects (N, C, H, W) input")
}

fn as2(x: ArrayD<f64>) -> Array2<f64> {
    x.into_dimensionality::<Ix2>().expect("layer expects (N, F) input")
}

impl Layer {
    pub fn from_spec(spec: &LayerSpec, rng: &mut Rng) -> Layer {
        match spec {
            LayerSpec::Standardize { mean, std } => Layer::Standardize {
                mean: mean.clone(),
                std: std.clone(),
            },
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => Layer::Conv2d(Conv2d::init(*in_channels, *out_channels, *kernel, *padding, rng)),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2d { size } => Layer::MaxPool2d { size: *size },
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Linear { inputs, outputs } => Layer::Linear(Linear::init(*inputs, *outputs, rng)),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Standardize { mean, std } => LayerSpec::Standardize {
                mean: mean.clone(),
                std: std.clone(),
            },
            Layer::Conv2d(c) => {
                let (oc, ic, k, _) = c.weight.dim();
                LayerSpec::Conv2d {
                    in_channels: ic,
                    out_channels: oc,
                    kernel: k,
                    padding: c.padding,
                }
            }
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool2d { size } => LayerSpec::MaxPool2d { size: *size },
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Linear(l) => LayerSpec::Linear {
                inputs: l.inputs(),
                outputs: l.outputs(),
            },
        }
    }

    pub(crate) fn forward(&self, x: ArrayD<f64>, keep: bool) -> (ArrayD<f64>, Option<LayerCache>) {
        match self {
            Layer::Standardize { mean, std } => {
                let mut x = as4(x);
                for (c, mut plane) in x.axis_iter_mut(Axis(1)).enumerate() {
                    let (m, s) = (mean[c], std[c]);
                    plane.mapv_inplace(|v| (v - m) / s);
                }
                (x.into_dyn(), keep.then_some(LayerCache::Standardize))
            }
            Layer::Conv2d(conv) => {
                let x = as4(x);
                let input_dim = x.dim();
                let (out, cols) = conv.forward(&x);
                (out.into_dyn(), keep.then_some(LayerCache::Conv { cols, input_dim }))
            }
            Layer::Relu => {
                let out = x.mapv(|v| v.max(0.0));
                let cache = keep.then(|| LayerCache::Relu { output: out.clone() });
                (out, cache)
            }
            Layer::MaxPool2d { size } => {
                let x = as4(x);
                let (out, argmax) = max_pool(&x, *size);
                let input_dim = x.dim();
                (out.into_dyn(), keep.then_some(LayerCache::MaxPool { argmax, input_dim }))
            }
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                let n = shape[0];
                let rest: usize = shape[1..].iter().product();
                let out = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(&[n, rest]))
                    .expect("contiguous");
                (out, keep.then_some(LayerCache::Flatten { input_shape: shape }))
            }
            Layer::Linear(lin) => {
                let x = as2(x);
                let out = lin.forward(&x);
                (out.into_dyn(), keep.then_some(LayerCache::Linear { input: x }))
            }
        }
    }

    /// Returns parameter gradients (in [`Layer::params`] order, empty for
    /// parameter-free layers) and the input gradient.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache,
        grad: ArrayD<f64>,
        param_grads: bool,
    ) -> (Vec<Vec<f64>>, ArrayD<f64>) {
        match (self, cache) {
            (Layer::Standardize { std, .. }, LayerCache::Standardize) => {
                let mut g = as4(grad);
                for (c, mut plane) in g.axis_iter_mut(Axis(1)).enumerate() {
                    let s = std[c];
                    plane.mapv_inplace(|v| v / s);
                }
                (vec![], g.into_dyn())
            }
            (Layer::Conv2d(conv), LayerCache::Conv { cols, input_dim }) => {
                let g = as4(grad);
                let (params, dx) = conv.backward(cols, *input_dim, &g, param_grads);
                let pg = params
                    .map(|(dw, db)| vec![flat(dw.into_dyn()), flat(db.into_dyn())])
                    .unwrap_or_default();
                (pg, dx.into_dyn())
            }
            (Layer::Relu, LayerCache::Relu { output }) => {
                let mut g = grad;
                g.zip_mut_with(output, |g, &o| {
                    if o <= 0.0 {
                        *g = 0.0
                    }
                });
                (vec![], g)
            }
            (Layer::MaxPool2d { .. }, LayerCache::MaxPool { argmax, input_dim }) => {
                let g = grad.as_standard_layout().into_owned();
                let mut dx = Array4::<f64>::zeros(*input_dim);
                let dst = dx.as_slice_mut().expect("fresh array");
                for (&i, &v) in argmax.iter().zip(g.iter()) {
                    dst[i] += v;
                }
                (vec![], dx.into_dyn())
            }
            (Layer::Flatten, LayerCache::Flatten { input_shape }) => {
                let g = grad
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(IxDyn(input_shape))
                    .expect("contiguous");
                (vec![], g)
            }
            (Layer::Linear(lin), LayerCache::Linear { input }) => {
                let g = as2(grad);
                if param_grads {
                    let (dw, db, dx) = lin.backward(input, &g);
                    (vec![flat(dw.into_dyn()), flat(db.into_dyn())], dx.into_dyn())
                } else {
                    (vec![], lin.input_grad(&g).into_dyn())
                }
            }
            _ => unreachable!("layer cache does not match layer kind"),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(_) | Layer::Linear(_) => 2,
            _ => 0,
        }
    }
}

fn max_pool(x: &Array4<f64>, size: usize) -> (Array4<f64>, Vec<usize>) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / size, w / size);
    let xs = x.as_standard_layout();
    let src = xs.as_slice().expect("standard layout");
    let mut out = Array4::<f64>::zeros((n, c, oh, ow));
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let dst = out.as_slice_mut().expect("fresh array");
    let mut k = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = base + (oy * size + dy) * w + ox * size + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                dst[k] = src[best];
                argmax.push(best);
                k += 1;
            }
        }
    }
    (out, argmax)
}

pub(crate) fn flat(a: ArrayD<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        let (v, off) = a.into_raw_vec_and_offset();
        debug_assert!(off.unwrap_or(0) == 0);
        v
    } else {
        a.iter().copied().collect()
    }
}

/// Output feature size of a layer stack for a `(C, H, W)` input, or `None`
/// when the shapes do not line up.
pub fn infer_output(specs: &[LayerSpec], input: (usize, usize, usize)) -> Option<Vec<usize>> {
    let mut shape = vec![input.0, input.1, input.2];
    for spec in specs {
        shape = match (spec, shape.as_slice()) {
            (LayerSpec::Standardize { mean, std }, [c, _, _])
                if mean.len() == *c && std.len() == *c =>
            {
                shape
            }
            (
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                },
                [c, h, w],
            ) if c == in_channels && h + 2 * padding >= *kernel && w + 2 * padding >= *kernel => {
                vec![*out_channels, h + 2 * padding + 1 - kernel, w + 2 * padding + 1 - kernel]
            }
            (LayerSpec::Relu, _) => shape,
            (LayerSpec::MaxPool2d { size }, [c, h, w]) if *size > 0 => vec![*c, h / size, w / size],
            (LayerSpec::Flatten, s) => vec![s.iter().product()],
            (LayerSpec::Linear { inputs, outputs }, [f]) if f == inputs => vec![*outputs],
            _ => return None,
        };
    }
    Some(shape)
}
