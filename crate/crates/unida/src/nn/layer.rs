//! Dense layers and the multilayer perceptron built from them.
//!
//! A layer computes `y = x Wᵀ + b` on a row-major batch `x` (one sample per
//! row). Hidden layers of an [`Mlp`] apply an element-wise [`Activation`]; the
//! final layer is always affine so that its output can serve as a raw feature
//! vector or as logits.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    /// `ln(1 + eˣ)`. Smooth, so finite-difference checks stay clean.
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Softplus => {
                if x > 30.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "linear" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

/// Weight `(out, in)` and bias `(out)` of one affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// Xavier/Glorot uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| dist.sample(rng));
        Self {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim())
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    /// `x Wᵀ + b` for a batch `x` of shape `(n, in)`.
    pub fn affine(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape(format!(
                "layer expects input dim {}, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    /// Accumulates parameter gradients for `out_grad = ∂L/∂(x Wᵀ + b)` into
    /// `grad` and returns `∂L/∂x`.
    pub fn backward_into(
        &self,
        x: ArrayView2<'_, f64>,
        out_grad: ArrayView2<'_, f64>,
        grad: &mut DenseLayer,
    ) -> Array2<f64> {
        grad.weight += &out_grad.t().dot(&x);
        grad.bias += &out_grad.sum_axis(Axis(0));
        out_grad.dot(&self.weight)
    }

    pub(crate) fn params(&self) -> impl Iterator<Item = &f64> {
        self.weight.iter().chain(self.bias.iter())
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Per-parameter gradients for a stack of dense layers, in the same order as
/// the layers of the model they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<DenseLayer>,
}

impl GradientBundle {
    pub fn zeros_for(layers: &[&DenseLayer]) -> Self {
        Self {
            layers: layers.iter().map(|l| l.zeros_like()).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.params().copied())
            .collect()
    }

    pub fn add_assign(&mut self, other: &GradientBundle) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("gradient bundles differ in layer count"));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weight.dim() != b.weight.dim() {
                return Err(Error::shape("gradient bundles differ in layer shape"));
            }
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        Ok(())
    }
}

/// A multilayer perceptron: affine layers with an activation between them and
/// none after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

impl Mlp {
    /// Builds an MLP with Xavier initialisation. `dims` lists every width,
    /// input first: `[16, 64, 32]` is one hidden layer of 64 units.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!("invalid layer dims {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::xavier(w[0], w[1], rng))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::out_dim))
            .collect()
    }

    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<Activations> {
        mlp_forward(&self.layers, input, self.activation)
    }

    pub fn backprop(&self, acts: &Activations, output_grad: ArrayView2<'_, f64>) -> Result<GradientBundle> {
        backprop(&self.layers, acts, output_grad, self.activation)
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `outputs[0]` is the input batch, `outputs[i + 1]` the output of layer `i`.
    pub outputs: Vec<Array2<f64>>,
    /// Pre-activation values of each layer.
    pub pre: Vec<Array2<f64>>,
}

impl Activations {
    pub fn last(&self) -> &Array2<f64> {
        &self.outputs[self.outputs.len() - 1]
    }
}

/// Runs `input` through `layers`, keeping every intermediate result.
pub fn mlp_forward(layers: &[DenseLayer], input: ArrayView2<'_, f64>, activation: Activation) -> Result<Activations> {
    if layers.is_empty() {
        return Err(Error::shape("empty layer list"));
    }
    let mut outputs = Vec::with_capacity(layers.len() + 1);
    let mut pre = Vec::with_capacity(layers.len());
    outputs.push(input.to_owned());
    for (i, layer) in layers.iter().enumerate() {
        let z = layer.affine(outputs[i].view())?;
        let a = if i + 1 == layers.len() {
            z.clone()
        } else {
            z.mapv(|v| activation.apply(v))
        };
        pre.push(z);
        outputs.push(a);
    }
    Ok(Activations { outputs, pre })
}

/// Exact gradients of a scalar loss whose gradient with respect to the network
/// output is `output_grad`.
pub fn backprop(
    layers: &[DenseLayer],
    acts: &Activations,
    output_grad: ArrayView2<'_, f64>,
    activation: Activation,
) -> Result<GradientBundle> {
    let (grads, _) = backprop_with_input_grad(layers, acts, output_grad, activation)?;
    Ok(grads)
}

pub fn backprop_with_input_grad(
    layers: &[DenseLayer],
    acts: &Activations,
    output_grad: ArrayView2<'_, f64>,
    activation: Activation,
) -> Result<(GradientBundle, Array2<f64>)> {
    if acts.outputs.len() != layers.len() + 1 || acts.pre.len() != layers.len() {
        return Err(Error::shape("activations do not match layer count"));
    }
    for (i, layer) in layers.iter().enumerate() {
        if acts.outputs[i].ncols() != layer.in_dim() || acts.pre[i].ncols() != layer.out_dim() {
            return Err(Error::shape(format!("stale activations at layer {i}")));
        }
    }
    if output_grad.dim() != acts.last().dim() {
        return Err(Error::shape(format!(
            "output gradient {:?} does not match output {:?}",
            output_grad.dim(),
            acts.last().dim()
        )));
    }

    let refs: Vec<&DenseLayer> = layers.iter().collect();
    let mut grads = GradientBundle::zeros_for(&refs);
    let mut delta = output_grad.to_owned();
    for i in (0..layers.len()).rev() {
        if i + 1 != layers.len() {
            let pre = &acts.pre[i];
            let out = &acts.outputs[i + 1];
            ndarray::Zip::from(&mut delta)
                .and(pre)
                .and(out)
                .for_each(|d, &x, &y| *d *= activation.derivative(x, y));
        }
        delta = layers[i].backward_into(acts.outputs[i].view(), delta.view(), &mut grads.layers[i]);
    }
    Ok((grads, delta))
}
