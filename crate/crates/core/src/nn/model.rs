use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    conv2d, conv2d_backward, dense, dense_backward, maxpool2x2, maxpool2x2_backward, relu,
    relu_backward, softmax, softmax_backward, Padding,
};
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Input shape of the classifier: one 224×224 grayscale channel.
pub const PAPER_INPUT_SHAPE: [usize; 3] = [224, 224, 1];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        padding: Padding,
    },
    MaxPool2x2,
    Flatten,
    Dense {
        units: usize,
    },
    Relu,
    Softmax,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d {
                filters,
                kernel: (kh, kw),
                padding,
            } => write!(f, "conv2d({filters}, {kh}x{kw}, {padding:?})"),
            LayerSpec::MaxPool2x2 => f.write_str("maxpool2x2"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense { units } => write!(f, "dense({units})"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

impl LayerSpec {
    /// Output shape for `input`, plus the weight shape of parametrised layers.
    fn infer(&self, input: &[usize]) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
        let bad = |what: &str| Error::shape(format!("{self} cannot take {what} input {input:?}"));
        Ok(match *self {
            LayerSpec::Conv2d {
                filters,
                kernel: (kh, kw),
                padding,
            } => {
                let [h, w, c] = *input else {
                    return Err(bad("non (H, W, C)"));
                };
                if filters == 0 || kh == 0 || kw == 0 {
                    return Err(bad("a degenerate kernel for"));
                }
                let (oh, ow) = match padding {
                    Padding::Same => (h, w),
                    Padding::Valid if h >= kh && w >= kw => (h - kh + 1, w - kw + 1),
                    Padding::Valid => return Err(bad("too small an")),
                };
                (vec![oh, ow, filters], Some(vec![kh, kw, c, filters]))
            }
            LayerSpec::MaxPool2x2 => {
                let [h, w, c] = *input else {
                    return Err(bad("non (H, W, C)"));
                };
                if h < 2 || w < 2 {
                    return Err(bad("too small an"));
                }
                (vec![h / 2, w / 2, c], None)
            }
            LayerSpec::Flatten => (vec![input.iter().product()], None),
            LayerSpec::Dense { units } => {
                let [n] = *input else {
                    return Err(bad("non-vector"));
                };
                if units == 0 {
                    return Err(bad("zero units for"));
                }
                (vec![units], Some(vec![n, units]))
            }
            LayerSpec::Relu => (input.to_vec(), None),
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(bad("non-vector"));
                }
                (input.to_vec(), None)
            }
        })
    }

    /// Glorot fan-in and fan-out of a weight tensor.
    fn fans(weight_shape: &[usize]) -> (usize, usize) {
        match *weight_shape {
            [kh, kw, cin, cout] => (kh * kw * cin, kh * kw * cout),
            [n, m] => (n, m),
            _ => unreachable!("only conv and dense layers carry weights"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer<T> {
    spec: LayerSpec,
    output_shape: Vec<usize>,
    /// Weights and bias of conv and dense layers.
    params: Option<(Tensor<T>, Tensor<T>)>,
}

/// An ordered chain of layers over a fixed input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

/// Parameter gradients in the order of [`Model::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T = f32> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        Self {
            tensors: model
                .params()
                .into_iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for x in t.data_mut() {
                *x *= factor;
            }
        }
    }
}

/// Output shape and weight shape (if any) of each layer.
type LayerShapes = Vec<(Vec<usize>, Option<Vec<usize>>)>;

fn checked_shapes(input_shape: &[usize], specs: &[LayerSpec]) -> Result<LayerShapes> {
    let mut shape = input_shape.to_vec();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let (next, weights) = spec.infer(&shape)?;
        shape = next.clone();
        out.push((next, weights));
    }
    Ok(out)
}

impl<T: Scalar> Model<T> {
    /// Builds a model with Glorot-uniform weights drawn from `seed` and zero biases.
    pub fn new(input_shape: Vec<usize>, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let shapes = checked_shapes(&input_shape, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .zip(shapes)
            .map(|(&spec, (output_shape, weights))| {
                let params = weights.map(|ws| {
                    let (fan_in, fan_out) = LayerSpec::fans(&ws);
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let bias = Tensor::zeros(vec![*ws.last().unwrap()]);
                    let w =
                        Tensor::from_fn(ws, |_| T::of(limit * (2.0 * rng.random::<f64>() - 1.0)));
                    (w, bias)
                });
                Layer {
                    spec,
                    output_shape,
                    params,
                }
            })
            .collect();
        Ok(Self {
            input_shape,
            layers,
        })
    }

    /// Rebuilds a model from explicit parameters, given in [`Model::params`] order.
    pub fn from_parts(
        input_shape: Vec<usize>,
        specs: &[LayerSpec],
        params: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let shapes = checked_shapes(&input_shape, specs)?;
        let mut params = params.into_iter();
        let mut layers = Vec::with_capacity(specs.len());
        for (&spec, (output_shape, weights)) in specs.iter().zip(shapes) {
            let params = match weights {
                Some(ws) => {
                    let w = params
                        .next()
                        .ok_or_else(|| Error::shape(format!("missing weights for {spec}")))?;
                    let b = params
                        .next()
                        .ok_or_else(|| Error::shape(format!("missing bias for {spec}")))?;
                    if w.shape() != ws.as_slice() || b.shape() != [*ws.last().unwrap()] {
                        return Err(Error::shape(format!(
                            "{spec} expects weights {ws:?}, got {:?} and bias {:?}",
                            w.shape(),
                            b.shape()
                        )));
                    }
                    Some((w, b))
                }
                None => None,
            };
            layers.push(Layer {
                spec,
                output_shape,
                params,
            });
        }
        if params.next().is_some() {
            return Err(Error::shape("more parameter tensors than layers need"));
        }
        Ok(Self {
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Output shape of every layer, in order.
    pub fn output_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().map(|l| l.output_shape.clone()).collect()
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map_or(&self.input_shape, |l| &l.output_shape)
    }

    /// Trainable parameter count of each layer.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.params.as_ref().map_or(0, |(w, b)| w.len() + b.len()))
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.params.as_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Human-readable name of the layer owning parameter tensor `index`.
    pub fn param_owner(&self, index: usize) -> String {
        let mut seen = 0;
        for (i, l) in self.layers.iter().enumerate() {
            if l.params.is_some() {
                if index < seen + 2 {
                    let part = if index == seen { "weights" } else { "bias" };
                    return format!("layer {i} {} {part}", l.spec);
                }
                seen += 2;
            }
        }
        format!("parameter {index}")
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            input_shape: self.input_shape.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec,
                    output_shape: l.output_shape.clone(),
                    params: l.params.as_ref().map(|(w, b)| (w.cast(), b.cast())),
                })
                .collect(),
        }
    }

    fn layer_forward(&self, i: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        let layer = &self.layers[i];
        match (layer.spec, &layer.params) {
            (LayerSpec::Conv2d { padding, .. }, Some((w, b))) => conv2d(x, w, b, padding),
            (LayerSpec::MaxPool2x2, _) => maxpool2x2(x),
            (LayerSpec::Flatten, _) => x.clone().reshape(vec![x.len()]),
            (LayerSpec::Dense { .. }, Some((w, b))) => dense(x, w, b),
            (LayerSpec::Relu, _) => Ok(relu(x)),
            (LayerSpec::Softmax, _) => Ok(softmax(x)),
            (spec, None) => unreachable!("{spec} always carries parameters"),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut act = x.clone();
        for i in 0..self.layers.len() {
            act = self.layer_forward(i, &act)?;
        }
        Ok(act)
    }

    /// Forward pass over a leading batch axis; returns (N, outputs...).
    pub fn forward_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        use rayon::prelude::*;
        let items = x.unstack()?;
        let outs = items
            .par_iter()
            .map(|item| self.forward(item))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&outs)
    }

    /// Forward pass keeping every activation: element 0 is the input and
    /// element `i + 1` the output of layer `i`.
    pub fn forward_trace(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for i in 0..self.layers.len() {
            let next = self.layer_forward(i, &acts[i])?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Back-propagates `upstream`, the loss gradient with respect to
    /// `acts[upto]`, through layers `upto - 1` down to 0.
    pub fn backward(
        &self,
        acts: &[Tensor<T>],
        upstream: Tensor<T>,
        upto: usize,
    ) -> Result<Gradients<T>> {
        if acts.len() != self.layers.len() + 1 || upto > self.layers.len() {
            return Err(Error::shape(
                "activation trace does not belong to this model",
            ));
        }
        let mut grads: Vec<Option<(Tensor<T>, Tensor<T>)>> = vec![None; self.layers.len()];
        let mut g = upstream;
        for i in (0..upto).rev() {
            let layer = &self.layers[i];
            let x = &acts[i];
            g = match (layer.spec, &layer.params) {
                (LayerSpec::Conv2d { padding, .. }, Some((w, b))) => {
                    let cg = conv2d_backward(x, w, b, padding, &g, i > 0)?;
                    grads[i] = Some((cg.dw, cg.db));
                    cg.dx.unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()))
                }
                (LayerSpec::MaxPool2x2, _) => maxpool2x2_backward(x, &g)?,
                (LayerSpec::Flatten, _) => g.reshape(x.shape().to_vec())?,
                (LayerSpec::Dense { .. }, Some((w, b))) => {
                    let dg = dense_backward(x, w, b, &g)?;
                    grads[i] = Some((dg.dw, dg.db));
                    dg.dx
                }
                (LayerSpec::Relu, _) => relu_backward(x, &g)?,
                (LayerSpec::Softmax, _) => softmax_backward(&acts[i + 1], &g)?,
                (spec, None) => unreachable!("{spec} always carries parameters"),
            };
        }
        let tensors = self
            .layers
            .iter()
            .zip(grads)
            .filter_map(|(l, g)| {
                l.params.as_ref().map(|(w, b)| {
                    g.unwrap_or_else(|| {
                        (
                            Tensor::zeros(w.shape().to_vec()),
                            Tensor::zeros(b.shape().to_vec()),
                        )
                    })
                })
            })
            .flat_map(|(w, b)| [w, b])
            .collect();
        Ok(Gradients { tensors })
    }
}

/// Layer chain of the lung CT classifier. Conv layers are followed by ReLU;
/// the 24-unit dense layer is linear.
///
/// The fourth convolution holds 3·3·32·64 + 64 = 18,496 parameters. The
/// figure 18,694 that circulates for it is a digit-swap typo: only 18,496
/// adds up to the 245,667 total.
pub fn paper_layers() -> Vec<LayerSpec> {
    let conv = |filters, padding| LayerSpec::Conv2d {
        filters,
        kernel: (3, 3),
        padding,
    };
    vec![
        conv(8, Padding::Same),
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        conv(16, Padding::Valid),
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        conv(32, Padding::Valid),
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        conv(64, Padding::Valid),
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 24 },
        LayerSpec::Dense { units: 3 },
        LayerSpec::Softmax,
    ]
}

impl<T: Scalar> Model<T> {
    pub fn paper(seed: u64) -> Self {
        Self::new(PAPER_INPUT_SHAPE.to_vec(), &paper_layers(), seed)
            .expect("the classifier's layer chain is consistent")
    }
}

pub fn build_paper_model(seed: u64) -> Model<f32> {
    Model::paper(seed)
}

pub fn count_params<T: Scalar>(model: &Model<T>) -> usize {
    model.layer_param_counts().iter().sum()
}
