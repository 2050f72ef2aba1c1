//! A compact CPU network stack with hand-written backward passes.
//!
//! A [`Network`] is an encoder `g` (every layer but the last) followed by an
//! affine classifier head `h`. Training code needs the split because the
//! robustness objective acts on encoder features while the accuracy objective
//! acts on logits.

mod layers;
mod optim;

use ndarray::{Array2, Array4, ArrayD, Ix2, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::Rng;

pub use layers::{infer_output, Conv2d, Layer, LayerSpec, Linear};
pub(crate) use layers::{flat, LayerCache};
pub use optim::{Sgd, SgdConfig};

/// What an attack needs from a model: logits, and the gradient of a scalar
/// loss with respect to the input.
pub trait DifferentiableClassifier {
    fn class_count(&self) -> usize;

    fn logits(&self, x: &Array4<f64>) -> Array2<f64>;

    /// Backpropagates `loss_grad(logits)` (the loss gradient with respect to
    /// the logits) down to the input. Returns the logits too, so callers can
    /// evaluate the loss without a second forward pass.
    fn input_gradient(
        &self,
        x: &Array4<f64>,
        loss_grad: &mut dyn FnMut(&Array2<f64>) -> Array2<f64>,
    ) -> (Array2<f64>, Array4<f64>);
}

/// Types that own trainable parameters in a fixed order.
pub trait Parameterized {
    fn param_names(&self) -> Vec<String>;
    fn param_shapes(&self) -> Vec<Vec<usize>>;
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_len(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Overwrites parameters from `(name, values)` pairs; every parameter must
    /// be present with the right length.
    fn load_params(&mut self, source: &dyn Fn(&str) -> Option<Vec<f64>>) -> Result<()> {
        let names = self.param_names();
        for (name, slot) in names.iter().zip(self.param_slices_mut()) {
            let values = source(name).ok_or_else(|| Error::Shape(format!("missing parameter `{name}`")))?;
            if values.len() != slot.len() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has {} values, expected {}",
                    values.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(&values);
        }
        Ok(())
    }

    /// SHA-256 over all parameter bytes; equal fingerprints mean equal weights.
    fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for s in self.param_slices() {
            for v in s {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Per-parameter gradients in [`Parameterized`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(p: &dyn Parameterized) -> Self {
        Gradients(p.param_slices().iter().map(|s| vec![0.0; s.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().flatten().for_each(|v| *v *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cached activations of one encoder pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTape {
    caches: Vec<LayerCache>,
    input_dim: (usize, usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    encoder: Vec<Layer>,
    head: Linear,
    input_shape: (usize, usize, usize),
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl Network {
    /// Splits `layers` into encoder and classifier head. The last layer must
    /// be affine; everything before it is the encoder.
    pub fn from_layers(mut layers: Vec<Layer>, input_shape: (usize, usize, usize)) -> Result<Self> {
        let head = match layers.pop() {
            Some(Layer::Linear(l)) => l,
            _ => return Err(Error::NoClassifierHead),
        };
        let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        let out = infer_output(&specs, input_shape)
            .ok_or_else(|| Error::Shape(format!("encoder layers do not fit input {input_shape:?}")))?;
        let feature_dim: usize = out.iter().product();
        if out.len() != 1 || feature_dim != head.inputs() {
            return Err(Error::Shape(format!(
                "encoder output {out:?} does not match head input {}",
                head.inputs()
            )));
        }
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Conv2d(c) => {
                    names.push(format!("encoder.{i}.weight"));
                    shapes.push(c.weight.shape().to_vec());
                    names.push(format!("encoder.{i}.bias"));
                    shapes.push(c.bias.shape().to_vec());
                }
                Layer::Linear(l) => {
                    names.push(format!("encoder.{i}.weight"));
                    shapes.push(l.weight.shape().to_vec());
                    names.push(format!("encoder.{i}.bias"));
                    shapes.push(l.bias.shape().to_vec());
                }
                _ => {}
            }
        }
        names.push("head.weight".into());
        shapes.push(head.weight.shape().to_vec());
        names.push("head.bias".into());
        shapes.push(head.bias.shape().to_vec());
        Ok(Self {
            encoder: layers,
            head,
            input_shape,
            names,
            shapes,
        })
    }

    pub fn from_spec(specs: &[LayerSpec], input_shape: (usize, usize, usize), rng: &mut Rng) -> Result<Self> {
        let layers = specs.iter().map(|s| Layer::from_spec(s, rng)).collect();
        Self::from_layers(layers, input_shape)
    }

    pub fn spec(&self) -> Vec<LayerSpec> {
        self.encoder
            .iter()
            .map(Layer::spec)
            .chain(std::iter::once(LayerSpec::Linear {
                inputs: self.head.inputs(),
                outputs: self.head.outputs(),
            }))
            .collect()
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    /// Encoder output width `o`.
    pub fn feature_dim(&self) -> usize {
        self.head.inputs()
    }

    /// The `(g, h)` split.
    pub fn split(&self) -> (&[Layer], &Linear) {
        (&self.encoder, &self.head)
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    fn check_input(&self, x: &Array4<f64>) {
        let (_, c, h, w) = x.dim();
        assert_eq!(
            (c, h, w),
            self.input_shape,
            "input shape does not match the network"
        );
    }

    /// `g(x)`, shape `(n, o)`.
    pub fn encode(&self, x: &Array4<f64>) -> Array2<f64> {
        self.check_input(x);
        let mut a: ArrayD<f64> = x.clone().into_dyn();
        for layer in &self.encoder {
            a = layer.forward(a, false).0;
        }
        to_features(a)
    }

    pub fn encode_with_tape(&self, x: &Array4<f64>) -> (Array2<f64>, EncoderTape) {
        self.check_input(x);
        let mut a: ArrayD<f64> = x.clone().into_dyn();
        let mut caches = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (out, cache) = layer.forward(a, true);
            caches.push(cache.expect("cache requested"));
            a = out;
        }
        (
            to_features(a),
            EncoderTape {
                caches,
                input_dim: x.dim(),
            },
        )
    }

    /// `h(z)`.
    pub fn classify(&self, z: &Array2<f64>) -> Array2<f64> {
        self.head.forward(z)
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array2<f64> {
        self.classify(&self.encode(x))
    }

    /// Backward through the encoder. Returns encoder parameter gradients (in
    /// parameter order, empty when `param_grads` is false) and `dL/dx`.
    pub fn encoder_backward(
        &self,
        tape: &EncoderTape,
        grad_z: Array2<f64>,
        param_grads: bool,
    ) -> (Vec<Vec<f64>>, Array4<f64>) {
        let mut g: ArrayD<f64> = grad_z.into_dyn();
        let mut per_layer: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.encoder.len());
        for (layer, cache) in self.encoder.iter().zip(&tape.caches).rev() {
            let (pg, dx) = layer.backward(cache, g, param_grads);
            per_layer.push(pg);
            g = dx;
        }
        per_layer.reverse();
        let grads = per_layer.into_iter().flatten().collect();
        let dx = if g.ndim() == 4 {
            g.into_dimensionality().expect("4-d input gradient")
        } else {
            g.into_shape_with_order(IxDyn(&[
                tape.input_dim.0,
                tape.input_dim.1,
                tape.input_dim.2,
                tape.input_dim.3,
            ]))
            .expect("input-sized gradient")
            .into_dimensionality()
            .expect("4-d input gradient")
        };
        (grads, dx)
    }

    /// Full parameter gradients given the loss gradient with respect to the
    /// logits and, optionally, an extra gradient arriving directly at the
    /// encoder features (from the embedding space).
    pub fn backward(
        &self,
        tape: &EncoderTape,
        features: &Array2<f64>,
        grad_logits: &Array2<f64>,
        extra_grad_z: Option<&Array2<f64>>,
    ) -> Gradients {
        let (dw, db, mut dz) = self.head.backward(features, grad_logits);
        if let Some(extra) = extra_grad_z {
            dz += extra;
        }
        let (mut grads, _) = self.encoder_backward(tape, dz, true);
        grads.push(flat(dw.into_dyn()));
        grads.push(flat(db.into_dyn()));
        Gradients(grads)
    }

    pub fn trainable_count(&self) -> usize {
        self.param_len()
    }
}

fn to_features(a: ArrayD<f64>) -> Array2<f64> {
    if a.ndim() == 2 {
        return a.into_dimensionality::<Ix2>().expect("2-d features");
    }
    let n = a.shape()[0];
    let rest: usize = a.shape()[1..].iter().product();
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, rest))
        .expect("contiguous features")
}

impl Parameterized for Network {
    fn param_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.shapes.clone()
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.encoder {
            match layer {
                Layer::Conv2d(c) => {
                    out.push(c.weight.as_slice().expect("contiguous"));
                    out.push(c.bias.as_slice().expect("contiguous"));
                }
                Layer::Linear(l) => {
                    out.push(l.weight.as_slice().expect("contiguous"));
                    out.push(l.bias.as_slice().expect("contiguous"));
                }
                _ => {}
            }
        }
        out.push(self.head.weight.as_slice().expect("contiguous"));
        out.push(self.head.bias.as_slice().expect("contiguous"));
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.encoder {
            match layer {
                Layer::Conv2d(c) => {
                    out.push(c.weight.as_slice_mut().expect("contiguous"));
                    out.push(c.bias.as_slice_mut().expect("contiguous"));
                }
                Layer::Linear(l) => {
                    out.push(l.weight.as_slice_mut().expect("contiguous"));
                    out.push(l.bias.as_slice_mut().expect("contiguous"));
                }
                _ => {}
            }
        }
        out.push(self.head.weight.as_slice_mut().expect("contiguous"));
        out.push(self.head.bias.as_slice_mut().expect("contiguous"));
        out
    }
}

impl DifferentiableClassifier for Network {
    fn class_count(&self) -> usize {
        self.head.outputs()
    }

    fn logits(&self, x: &Array4<f64>) -> Array2<f64> {
        self.forward(x)
    }

    fn input_gradient(
        &self,
        x: &Array4<f64>,
        loss_grad: &mut dyn FnMut(&Array2<f64>) -> Array2<f64>,
    ) -> (Array2<f64>, Array4<f64>) {
        let (z, tape) = self.encode_with_tape(x);
        let logits = self.classify(&z);
        let g = loss_grad(&logits);
        let dz = self.head.input_grad(&g);
        let (_, dx) = self.encoder_backward(&tape, dz, false);
        (logits, dx)
    }
}

/// Built-in architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Three conv/pool stages and a hidden affine layer; about 156k
    /// parameters on 32x32x3 inputs with width 16.
    ToyCnn { width: usize },
    /// One hidden ReLU layer.
    Mlp { hidden: usize },
    /// Flatten followed directly by the head.
    Linear,
}

impl Architecture {
    pub fn layers(&self, input: (usize, usize, usize), classes: usize) -> Result<Vec<LayerSpec>> {
        let (c, h, w) = input;
        let d = c * h * w;
        let specs = match *self {
            Architecture::ToyCnn { width } => {
                if h % 8 != 0 || w % 8 != 0 {
                    return Err(Error::config(
                        "model.arch",
                        format!("toy-cnn needs height and width divisible by 8, got {h}x{w}"),
                    ));
                }
                let conv = |i, o| LayerSpec::Conv2d {
                    in_channels: i,
                    out_channels: o,
                    kernel: 3,
                    padding: 1,
                };
                let flat = 4 * width * (h / 8) * (w / 8);
                vec![
                    LayerSpec::Standardize {
                        mean: vec![0.5; c],
                        std: vec![0.25; c],
                    },
                    conv(c, width),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2d { size: 2 },
                    conv(width, 2 * width),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2d { size: 2 },
                    conv(2 * width, 4 * width),
                    LayerSpec::Relu,
                    LayerSpec::MaxPool2d { size: 2 },
                    LayerSpec::Flatten,
                    LayerSpec::Linear {
                        inputs: flat,
                        outputs: 8 * width,
                    },
                    LayerSpec::Relu,
                    LayerSpec::Linear {
                        inputs: 8 * width,
                        outputs: classes,
                    },
                ]
            }
            Architecture::Mlp { hidden } => vec![
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    inputs: d,
                    outputs: hidden,
                },
                LayerSpec::Relu,
                LayerSpec::Linear {
                    inputs: hidden,
                    outputs: classes,
                },
            ],
            Architecture::Linear => vec![
                LayerSpec::Flatten,
                LayerSpec::Linear {
                    inputs: d,
                    outputs: classes,
                },
            ],
        };
        Ok(specs)
    }

    pub fn build(&self, input: (usize, usize, usize), classes: usize, rng: &mut Rng) -> Result<Network> {
        Network::from_spec(&self.layers(input, classes)?, input, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn fd_input_grad(net: &Network, x: &Array4<f64>, weights: &Array2<f64>) -> Array4<f64> {
        let h = 1e-6;
        let f = |x: &Array4<f64>| (net.forward(x) * weights).sum();
        let mut g = Array4::zeros(x.dim());
        for (idx, _) in x.indexed_iter() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            g[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        diff / scale.max(1e-12)
    }

    fn small_cnn(rng: &mut Rng) -> Network {
        let specs = vec![
            LayerSpec::Standardize {
                mean: vec![0.5, 0.4],
                std: vec![0.2, 0.3],
            },
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { inputs: 12, outputs: 5 },
            LayerSpec::Relu,
            LayerSpec::Linear { inputs: 5, outputs: 3 },
        ];
        Network::from_spec(&specs, (2, 4, 4), rng).unwrap()
    }

    #[test]
    fn split_requires_affine_head() {
        let err = Network::from_layers(vec![Layer::Flatten, Layer::Relu], (1, 2, 2)).unwrap_err();
        assert!(matches!(err, Error::NoClassifierHead));
    }

    #[test]
    fn split_composition_is_exact() {
        let mut rng = seed::rng(1, "t", 0, 0);
        let net = small_cnn(&mut rng);
        let x = Array4::from_shape_fn((3, 2, 4, 4), |(a, b, c, d)| ((a + 2 * b + 3 * c + 5 * d) % 7) as f64 / 7.0);
        let (g, h) = net.split();
        assert_eq!(g.len(), 7);
        assert_eq!(h.outputs(), 3);
        assert_eq!(net.classify(&net.encode(&x)), net.forward(&x));
        assert_eq!(net.feature_dim(), 5);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = seed::rng(2, "t", 0, 0);
        let net = small_cnn(&mut rng);
        let x = Array4::from_shape_fn((2, 2, 4, 4), |(a, b, c, d)| {
            0.1 + 0.8 * (((a * 7 + b * 5 + c * 3 + d * 11) % 13) as f64 / 13.0)
        });
        let weights = Array2::from_shape_fn((2, 3), |(i, j)| (i as f64 + 1.0) * (j as f64 - 1.2));
        let (_, g) = net.input_gradient(&x, &mut |_| weights.clone());
        let fd = fd_input_grad(&net, &x, &weights);
        let e = rel_err(g.as_slice().unwrap(), fd.as_slice().unwrap());
        assert!(e < 1e-6, "relative error {e}");
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = seed::rng(3, "t", 0, 0);
        let mut net = small_cnn(&mut rng);
        let x = Array4::from_shape_fn((2, 2, 4, 4), |(a, b, c, d)| {
            0.05 + 0.9 * (((a * 3 + b * 7 + c * 5 + d * 2) % 11) as f64 / 11.0)
        });
        let weights = Array2::from_shape_fn((2, 3), |(i, j)| 0.5 - (i + 2 * j) as f64 * 0.3);
        let (z, tape) = net.encode_with_tape(&x);
        let extra = Array2::from_shape_fn(z.dim(), |(i, j)| 0.1 * (i as f64 - j as f64));
        let grads = net.backward(&tape, &z, &weights, Some(&extra));

        let objective = |net: &Network| {
            let z = net.encode(&x);
            (net.classify(&z) * &weights).sum() + (&z * &extra).sum()
        };
        let h = 1e-6;
        for p in 0..grads.0.len() {
            let len = grads.0[p].len();
            let mut fd = vec![0.0; len];
            for i in 0..len {
                let orig = net.param_slices()[p][i];
                net.param_slices_mut()[p][i] = orig + h;
                let up = objective(&net);
                net.param_slices_mut()[p][i] = orig - h;
                let down = objective(&net);
                net.param_slices_mut()[p][i] = orig;
                fd[i] = (up - down) / (2.0 * h);
            }
            let e = rel_err(&grads.0[p], &fd);
            assert!(e < 1e-6, "param {} relative error {e}", net.param_names()[p]);
        }
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = seed::rng(4, "t", 0, 0);
        let conv = Conv2d::init(2, 3, 3, 1, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 5, 4), |(a, b, c, d)| ((a * 13 + b * 7 + c * 3 + d) % 10) as f64 / 10.0);
        let (out, _) = conv.forward(&x);
        assert_eq!(out.dim(), (2, 3, 5, 4));
        for ((n, o, y, xx), v) in out.indexed_iter() {
            let mut acc = conv.bias[o];
            for c in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = y as isize + ky as isize - 1;
                        let ix = xx as isize + kx as isize - 1;
                        if iy >= 0 && iy < 5 && ix >= 0 && ix < 4 {
                            acc += conv.weight[[o, c, ky, kx]] * x[[n, c, iy as usize, ix as usize]];
                        }
                    }
                }
            }
            assert!((acc - v).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_cnn_stays_under_parameter_budget() {
        let mut rng = seed::rng(5, "t", 0, 0);
        let net = Architecture::ToyCnn { width: 16 }.build((3, 32, 32), 10, &mut rng).unwrap();
        assert!(net.trainable_count() <= 200_000, "{}", net.trainable_count());
        assert_eq!(net.forward(&Array4::zeros((2, 3, 32, 32))).dim(), (2, 10));
    }

    #[test]
    fn fingerprint_tracks_weights() {
        let mut rng = seed::rng(6, "t", 0, 0);
        let mut net = Architecture::Linear.build((1, 2, 2), 2, &mut rng).unwrap();
        let before = net.fingerprint();
        assert_eq!(before, net.clone().fingerprint());
        net.param_slices_mut()[1][0] += 1.0;
        assert_ne!(before, net.fingerprint());
    }

    #[test]
    fn load_params_round_trip() {
        let mut rng = seed::rng(7, "t", 0, 0);
        let a = Architecture::Mlp { hidden: 4 }.build((1, 2, 2), 3, &mut rng).unwrap();
        let mut b = Architecture::Mlp { hidden: 4 }.build((1, 2, 2), 3, &mut rng).unwrap();
        assert_ne!(a, b);
        let names = a.param_names();
        let slices: Vec<Vec<f64>> = a.param_slices().iter().map(|s| s.to_vec()).collect();
        b.load_params(&|n| names.iter().position(|m| m == n).map(|i| slices[i].clone()))
            .unwrap();
        assert_eq!(a, b);
    }
}
