use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::head::Head;
use crate::error::{Error, Result};

/// Affine layer; `weight` is `in × out` so batches multiply on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

/// Fully connected network with rectifier hidden layers and an output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub head: Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub dims: Vec<usize>,
    pub head: Head,
}

/// Activations kept from a forward pass. `activations[0]` is the input and
/// `activations[i]` the rectified output of hidden layer `i`; `raw` is the
/// final affine output before the head.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub activations: Vec<Array2<f64>>,
    pub raw: Array2<f64>,
}

/// Per-layer `(weight, bias)` gradients, same shapes as the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.raw_dim())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }

    /// Flat parameter order: layer by layer, weights row-major then bias.
    pub fn get(&self, index: usize) -> f64 {
        let mut i = index;
        for (w, b) in &self.layers {
            if i < w.len() {
                return w[(i / w.ncols(), i % w.ncols())];
            }
            i -= w.len();
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("gradient index {index} out of range");
    }
}

impl Mlp {
    /// Layer widths `dims = [in, h1, …, out]`; raw output width `dims.last()`
    /// must match `head.raw_dim()`. Weights and biases are drawn from
    /// `U(±1/√fan_in)` and the final layer is further scaled by `final_scale`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], head: Head, final_scale: f64, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("network needs at least input and output widths".into()));
        }
        let out = *dims.last().expect("checked length");
        if out != head.raw_dim() {
            return Err(Error::Shape(format!("output width {out} but head expects {}", head.raw_dim())));
        }
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let scale = if i + 1 == n_layers { final_scale } else { 1.0 };
                Dense {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || scale * rng.random_range(-bound..=bound)),
                    bias: Array1::from_shape_simple_fn(w[1], || scale * rng.random_range(-bound..=bound)),
                }
            })
            .collect();
        Ok(Self { layers, head })
    }

    pub fn from_layers(layers: Vec<Dense>, head: Head) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::Shape("consecutive layer widths do not conform".into()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape("bias width differs from layer outputs".into()));
            }
        }
        match layers.last() {
            Some(l) if l.outputs() == head.raw_dim() => Ok(Self { layers, head }),
            _ => Err(Error::Shape("final layer width must match the head".into())),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn descriptor(&self) -> ArchDescriptor {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Dense::outputs));
        ArchDescriptor {
            dims,
            head: self.head.clone(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn param_mut(&mut self, index: usize) -> &mut f64 {
        let mut i = index;
        for l in &mut self.layers {
            if i < l.weight.len() {
                let cols = l.weight.ncols();
                return &mut l.weight[(i / cols, i % cols)];
            }
            i -= l.weight.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn param(&mut self, index: usize) -> f64 {
        *self.param_mut(index)
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        *self.param_mut(index) = value;
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Batched forward pass; one sample per row of `input`.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<ForwardPass> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} but network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_owned());
        for layer in &self.layers[..last] {
            let mut z = activations.last().expect("non-empty").dot(&layer.weight);
            z += &layer.bias;
            z.mapv_inplace(|v| v.max(0.0));
            activations.push(z);
        }
        let mut raw = activations.last().expect("non-empty").dot(&self.layers[last].weight);
        raw += &self.layers[last].bias;
        Ok(ForwardPass { activations, raw })
    }

    /// Forward pass followed by the head.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        let pass = self.forward(input)?;
        Ok(self.head.apply(pass.raw.view()))
    }

    /// Reverse pass from a gradient on the raw (pre-head) output. Returns
    /// parameter gradients and the gradient with respect to the input.
    pub fn backward_raw(&self, pass: &ForwardPass, grad_raw: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if grad_raw.dim() != pass.raw.dim() || pass.activations.len() != self.layers.len() {
            return Err(Error::Shape("backward cache does not match this network".into()));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut delta = grad_raw.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a = &pass.activations[i];
            let gw = a.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            layers.push((gw, gb));
            let mut back = delta.dot(&layer.weight.t());
            if i > 0 {
                // Rectifier subgradient: zero where the activation is not positive.
                back.zip_mut_with(a, |g, &act| {
                    if act <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = back;
        }
        layers.reverse();
        Ok((Gradients { layers }, delta))
    }

    /// Gradient with respect to the input only, skipping parameter gradients.
    pub fn backward_input_raw(&self, pass: &ForwardPass, grad_raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        if grad_raw.dim() != pass.raw.dim() || pass.activations.len() != self.layers.len() {
            return Err(Error::Shape("backward cache does not match this network".into()));
        }
        let mut delta = grad_raw.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut back = delta.dot(&layer.weight.t());
            if i > 0 {
                back.zip_mut_with(&pass.activations[i], |g, &act| {
                    if act <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = back;
        }
        Ok(delta)
    }

    /// Reverse pass from a gradient on the head output.
    pub fn backward(&self, pass: &ForwardPass, grad_out: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let grad_raw = self.head.backward(pass.raw.view(), grad_out)?;
        self.backward_raw(pass, grad_raw.view())
    }

    /// `self ← (1 − tau)·self + tau·source`
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.weight.zip_mut_with(&s.weight, |a, &b| *a = (1.0 - tau) * *a + tau * b);
            t.bias.zip_mut_with(&s.bias, |a, &b| *a = (1.0 - tau) * *a + tau * b);
        }
    }
}
