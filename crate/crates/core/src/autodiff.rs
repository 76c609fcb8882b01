//! Minimal reverse-mode differentiation over dense layers.
//!
//! A [`DenseNet`] is a stack of affine layers with elementwise activations.
//! [`DenseNet::forward`] records a [`Tape`] (layer inputs and
//! pre-activations); [`backward`] walks it once in reverse, producing
//! parameter gradients and the gradient with respect to the network input.
//! Losses supply their own upstream gradient `dL/d(output)`, which keeps the
//! engine small while supporting every trainable family in the pool.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Elementwise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One affine layer: `act(x W' + b)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    /// d_out x d_in weight matrix.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub activation: Activation,
}

/// A feed-forward stack of dense layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
}

impl DenseNet {
    /// Builds a net with Glorot-uniform weights: `dims` has one more entry
    /// than `activations`.
    pub fn new<R: Rng>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert_eq!(dims.len() - 1, activations.len());
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(pair, &activation)| {
                let (d_in, d_out) = (pair[0], pair[1]);
                let a = (6.0 / (d_in + d_out) as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(d_out, d_in, |_, _| rng.random_range(-a..a)),
                    b: DVector::zeros(d_out),
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.w.ncols()).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.nrows()).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Forward pass over a batch (rows = samples) recording the tape.
    pub fn forward(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, Tape) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            inputs.push(a.clone());
            let mut z = &a * layer.w.transpose();
            for i in 0..z.nrows() {
                for j in 0..z.ncols() {
                    z[(i, j)] += layer.b[j];
                }
            }
            preacts.push(z.clone());
            a = z.map(|v| layer.activation.apply(v));
        }
        (a, Tape { inputs, preacts })
    }

    /// Forward pass without recording.
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        for layer in &self.layers {
            let mut z = &a * layer.w.transpose();
            for i in 0..z.nrows() {
                for j in 0..z.ncols() {
                    z[(i, j)] += layer.b[j];
                }
            }
            a = z.map(|v| layer.activation.apply(v));
        }
        a
    }

    /// Checks that every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|v| v.is_finite()) && l.b.iter().all(|v| v.is_finite()))
    }

    /// Serializes the parameters (shape headers included) to JSON. The f64
    /// round-trip is exact, so reloading reproduces the net bit for bit.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("net serialization cannot fail")
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        serde_json::from_str(text).map_err(|e| crate::Error::Validation(format!("bad checkpoint: {e}")))
    }
}

/// Recorded forward pass: the input and pre-activation of every layer.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<DMatrix<f64>>,
    preacts: Vec<DMatrix<f64>>,
}

/// Parameter gradients plus the gradient w.r.t. the network input.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Per layer: (dL/dW, dL/db).
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub input: DMatrix<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet, batch: usize) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len())))
                .collect(),
            input: DMatrix::zeros(batch, net.input_dim()),
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow * scale;
            *b += ob * scale;
        }
    }
}

/// Reverse pass: visits every layer exactly once, newest first.
///
/// `upstream` is `dL/d(output)` with the same shape as the forward output.
pub fn backward(net: &DenseNet, tape: &Tape, upstream: &DMatrix<f64>) -> Gradients {
    let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(net.layers.len());
    let mut g = upstream.clone();
    for (layer, (input, preact)) in net
        .layers
        .iter()
        .zip(tape.inputs.iter().zip(tape.preacts.iter()))
        .rev()
    {
        let mut dz = g;
        for i in 0..dz.nrows() {
            for j in 0..dz.ncols() {
                dz[(i, j)] *= layer.activation.derivative(preact[(i, j)]);
            }
        }
        let dw = dz.transpose() * input;
        let db = DVector::from_fn(layer.b.len(), |j, _| dz.column(j).sum());
        g = &dz * &layer.w;
        grads.push((dw, db));
    }
    grads.reverse();
    Gradients {
        layers: grads,
        input: g,
    }
}

/// Adam optimizer state over one net's parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u32,
    m: Vec<(DMatrix<f64>, DVector<f64>)>,
    v: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl Adam {
    /// beta1 = 0.5 suits the adversarial trainers in this pool; beta2 stays
    /// at the usual 0.999.
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) {
        if self.m.is_empty() {
            for l in &net.layers {
                self.m
                    .push((DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len())));
                self.v
                    .push((DMatrix::zeros(l.w.nrows(), l.w.ncols()), DVector::zeros(l.b.len())));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[idx];
            let (mw, mb) = &mut self.m[idx];
            let (vw, vb) = &mut self.v[idx];
            for i in 0..layer.w.nrows() {
                for j in 0..layer.w.ncols() {
                    let g = gw[(i, j)];
                    mw[(i, j)] = self.beta1 * mw[(i, j)] + (1.0 - self.beta1) * g;
                    vw[(i, j)] = self.beta2 * vw[(i, j)] + (1.0 - self.beta2) * g * g;
                    let mh = mw[(i, j)] / bc1;
                    let vh = vw[(i, j)] / bc2;
                    layer.w[(i, j)] -= self.lr * mh / (vh.sqrt() + self.epsilon);
                }
            }
            for j in 0..layer.b.len() {
                let g = gb[j];
                mb[j] = self.beta1 * mb[j] + (1.0 - self.beta1) * g;
                vb[j] = self.beta2 * vb[j] + (1.0 - self.beta2) * g * g;
                let mh = mb[j] / bc1;
                let vh = vb[j] / bc2;
                layer.b[j] -= self.lr * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

/// Compares analytic gradients of `L = sum(outputs)` against central finite
/// differences over every parameter; returns the worst relative error.
pub fn finite_diff_check(net: &DenseNet, x: &DMatrix<f64>, epsilon: f64) -> f64 {
    let (out, tape) = net.forward(x);
    let upstream = DMatrix::from_element(out.nrows(), out.ncols(), 1.0);
    let grads = backward(net, &tape, &upstream);

    let loss = |n: &DenseNet| n.predict(x).sum();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for l in 0..net.layers.len() {
        for i in 0..net.layers[l].w.nrows() {
            for j in 0..net.layers[l].w.ncols() {
                let orig = probe.layers[l].w[(i, j)];
                probe.layers[l].w[(i, j)] = orig + epsilon;
                let up = loss(&probe);
                probe.layers[l].w[(i, j)] = orig - epsilon;
                let down = loss(&probe);
                probe.layers[l].w[(i, j)] = orig;
                let numeric = (up - down) / (2.0 * epsilon);
                worst = worst.max(rel_err(grads.layers[l].0[(i, j)], numeric));
            }
        }
        for j in 0..net.layers[l].b.len() {
            let orig = probe.layers[l].b[j];
            probe.layers[l].b[j] = orig + epsilon;
            let up = loss(&probe);
            probe.layers[l].b[j] = orig - epsilon;
            let down = loss(&probe);
            probe.layers[l].b[j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(rel_err(grads.layers[l].1[j], numeric));
        }
    }
    worst
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / scale.max(1e-6)
    }
}
