//! Small dense networks: forward pass, reverse-mode gradients, SGD.
//!
//! Hidden layers use ReLU, the output layer is affine. The ReLU derivative
//! at exactly 0 is taken to be 0, a fixed convention so that independent
//! implementations produce identical gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// One affine layer: `z = weights * x + bias` (`weights` is out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Layer {
            weights: DMatrix::zeros(out_dim, in_dim),
            bias: DVector::zeros(out_dim),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Wire representation of a layer: row-major weight matrix plus bias.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSpec {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl From<&Layer> for LayerSpec {
    fn from(layer: &Layer) -> Self {
        let w = (0..layer.weights.nrows())
            .map(|r| layer.weights.row(r).iter().cloned().collect())
            .collect();
        LayerSpec {
            w,
            b: layer.bias.iter().cloned().collect(),
        }
    }
}

impl TryFrom<&LayerSpec> for Layer {
    type Error = Error;

    fn try_from(spec: &LayerSpec) -> Result<Layer> {
        let rows = spec.w.len();
        if rows == 0 || rows != spec.b.len() {
            return Err(Error::InvalidConfig(format!(
                "layer has {rows} weight rows but {} bias entries",
                spec.b.len()
            )));
        }
        let cols = spec.w[0].len();
        if cols == 0 || spec.w.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig("ragged weight matrix".into()));
        }
        let weights = DMatrix::from_fn(rows, cols, |r, c| spec.w[r][c]);
        Ok(Layer {
            weights,
            bias: DVector::from_column_slice(&spec.b),
        })
    }
}

/// A fully connected network. ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    layers: Vec<Layer>,
}

impl NetworkWeights {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::DimensionMismatch {
                    context: "consecutive network layers",
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            let finite = layer.weights.iter().all(|v| v.is_finite())
                && layer.bias.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFiniteActivation {
                    layer: i,
                    context: "weight initialization",
                });
            }
        }
        Ok(NetworkWeights { layers })
    }

    /// Glorot-uniform initialization on `+-sqrt(6 / (fan_in + fan_out))`,
    /// biases zero. `dims` lists layer widths input-first, e.g.
    /// `[72, 100, 80, 40, 15]`.
    pub fn glorot(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "need at least [in, out] nonzero dims, got {dims:?}"
            )));
        }
        let mut rng = rng_from(seed);
        let layers = dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    (rng.random::<f64>() * 2.0 - 1.0) * limit
                });
                Layer {
                    weights,
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Prepend a fixed affine layer (e.g. input scaling). The inserted layer
    /// is followed by ReLU like any other hidden layer, so it must map the
    /// data domain into the non-negative orthant to act as pure scaling.
    pub fn prepend_layer(&mut self, layer: Layer) -> Result<()> {
        if layer.out_dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "prepended layer",
                expected: self.input_dim(),
                got: layer.out_dim(),
            });
        }
        self.layers.insert(0, layer);
        Ok(())
    }

    pub fn to_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(LayerSpec::from).collect()
    }

    pub fn from_specs(specs: &[LayerSpec]) -> Result<Self> {
        let layers = specs.iter().map(Layer::try_from).collect::<Result<_>>()?;
        Self::new(layers)
    }

    /// Deterministic forward pass.
    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &a + &layer.bias;
            if l != last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }
}

/// Per-layer gradients, same shapes as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(w: &NetworkWeights) -> Self {
        Gradients {
            layers: w
                .layers()
                .iter()
                .map(|l| Layer::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weights *= factor;
            layer.bias *= factor;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Reverse-mode gradient of a scalar loss over a batch of inputs.
///
/// `loss_adjoint` receives the network outputs for every input in order and
/// returns the loss value together with the adjoint per output vector
/// (`dL/d out_k`). Gradients are the exact sums over the batch.
pub fn gradient<F>(
    w: &NetworkWeights,
    inputs: &[DVector<f64>],
    loss_adjoint: F,
) -> Result<(f64, Gradients)>
where
    F: FnOnce(&[DVector<f64>]) -> (f64, Vec<DVector<f64>>),
{
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("empty gradient batch".into()));
    }
    let n_layers = w.layers().len();
    let last = n_layers - 1;

    // Forward, keeping post-activation values per layer per input.
    let mut activations: Vec<Vec<DVector<f64>>> = Vec::with_capacity(inputs.len());
    for x in inputs {
        if x.len() != w.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: w.input_dim(),
                got: x.len(),
            });
        }
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.clone());
        for (l, layer) in w.layers().iter().enumerate() {
            let mut z = &layer.weights * acts.last().unwrap() + &layer.bias;
            if l != last {
                z.apply(|v| *v = v.max(0.0));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation {
                    layer: l,
                    context: "forward pass",
                });
            }
            acts.push(z);
        }
        activations.push(acts);
    }

    let outputs: Vec<DVector<f64>> = activations
        .iter()
        .map(|acts| acts.last().unwrap().clone())
        .collect();
    let (loss, adjoints) = loss_adjoint(&outputs);
    if adjoints.len() != inputs.len() {
        return Err(Error::InvalidConfig(format!(
            "loss adjoint returned {} gradients for {} outputs",
            adjoints.len(),
            inputs.len()
        )));
    }

    let mut grads = Gradients::zeros_like(w);
    for (acts, adjoint) in activations.iter().zip(adjoints) {
        let mut delta = adjoint;
        for l in (0..n_layers).rev() {
            let grad_layer = &mut grads.layers[l];
            grad_layer.weights.ger(1.0, &delta, &acts[l], 1.0);
            grad_layer.bias += &delta;
            if l > 0 {
                let mut prev = DVector::zeros(w.layers()[l].in_dim());
                prev.gemv_tr(1.0, &w.layers()[l].weights, &delta, 0.0);
                // ReLU mask: the stored activation is max(0, z), so z > 0
                // exactly where the activation is positive.
                for (p, a) in prev.iter_mut().zip(acts[l].iter()) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    Ok((loss, grads))
}

/// Stochastic gradient descent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 400,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Momentum SGD: `v <- momentum * v - lr * grad; w <- w + v`.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Layer>,
}

impl SgdOptimizer {
    pub fn new(cfg: &SgdConfig, w: &NetworkWeights) -> Result<Self> {
        cfg.validate()?;
        Ok(SgdOptimizer {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            velocity: Gradients::zeros_like(w).layers,
        })
    }

    pub fn step(&mut self, w: &mut NetworkWeights, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.velocity.len() {
            return Err(Error::InvalidConfig("gradient/velocity shape mismatch".into()));
        }
        for ((vel, layer), grad) in self
            .velocity
            .iter_mut()
            .zip(w.layers_mut())
            .zip(&grads.layers)
        {
            vel.weights = &vel.weights * self.momentum - &grad.weights * self.learning_rate;
            vel.bias = &vel.bias * self.momentum - &grad.bias * self.learning_rate;
            layer.weights += &vel.weights;
            layer.bias += &vel.bias;
        }
        Ok(())
    }
}
