//! A small fully connected network with ReLU hidden layers and a linear head,
//! plus the two optimizers used to train it.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpDoc", into = "MlpDoc")]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// On-disk layout: layer sizes plus per-layer row-major weights
/// (`outputs x inputs`) and biases.
#[derive(Serialize, Deserialize)]
struct MlpDoc {
    layer_sizes: Vec<usize>,
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<Mlp> for MlpDoc {
    fn from(m: Mlp) -> Self {
        let layers = (0..m.layer_count())
            .map(|l| {
                let (w, b) = m.layer(l);
                let inputs = m.sizes[l];
                LayerDoc {
                    weights: w.chunks(inputs).map(<[f64]>::to_vec).collect(),
                    bias: b.to_vec(),
                }
            })
            .collect();
        MlpDoc {
            layer_sizes: m.sizes,
            layers,
        }
    }
}

impl TryFrom<MlpDoc> for Mlp {
    type Error = Error;

    fn try_from(doc: MlpDoc) -> Result<Self> {
        if doc.layer_sizes.len() < 2 || doc.layers.len() + 1 != doc.layer_sizes.len() {
            return Err(Error::InvalidModel("layer sizes do not match layers".into()));
        }
        let mut params = Vec::new();
        for (l, layer) in doc.layers.iter().enumerate() {
            let (inputs, outputs) = (doc.layer_sizes[l], doc.layer_sizes[l + 1]);
            if layer.weights.len() != outputs
                || layer.weights.iter().any(|row| row.len() != inputs)
                || layer.bias.len() != outputs
            {
                return Err(Error::InvalidModel(format!("layer {l} has the wrong shape")));
            }
            layer.weights.iter().for_each(|row| params.extend_from_slice(row));
            params.extend_from_slice(&layer.bias);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network weights"));
        }
        Ok(Mlp {
            sizes: doc.layer_sizes,
            params,
        })
    }
}

/// Activations recorded by a forward pass, needed for backprop.
#[derive(Debug, Default, Clone)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1] + w[1]).map(|_| rng.gen_range(-bound..bound)));
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Self {
        let expected: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        assert_eq!(params.len(), expected, "parameter count");
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    fn offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let start = self.offset(l);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[start..start + i * o];
        let b = &self.params[start + i * o..start + i * o + o];
        (w, b)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = Trace::default();
        self.forward_trace(x, &mut trace);
        trace.activations.pop().unwrap()
    }

    pub fn forward_trace(&self, x: &[f64], trace: &mut Trace) {
        debug_assert_eq!(x.len(), self.inputs());
        trace.activations.clear();
        trace.activations.push(x.to_vec());
        let last = self.layer_count() - 1;
        for l in 0..self.layer_count() {
            let (w, b) = self.layer(l);
            let input = &trace.activations[l];
            let inputs = input.len();
            let mut out: Vec<f64> = b
                .iter()
                .zip(w.chunks_exact(inputs))
                .map(|(bias, row)| bias + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if l != last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            trace.activations.push(out);
        }
    }

    /// Accumulate `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let mut delta = grad_out.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (inputs, outputs) = (self.sizes[l], self.sizes[l + 1]);
            let start = self.offset(l);
            let input = &trace.activations[l];
            {
                let (gw, gb) = grads[start..start + inputs * outputs + outputs].split_at_mut(inputs * outputs);
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[j] += d;
                    gw[j * inputs..(j + 1) * inputs]
                        .iter_mut()
                        .zip(input)
                        .for_each(|(g, a)| *g += d * a);
                }
            }
            if l == 0 {
                break;
            }
            let (w, _) = self.layer(l);
            let mut prev = vec![0.0; inputs];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                prev.iter_mut()
                    .zip(&w[j * inputs..(j + 1) * inputs])
                    .for_each(|(p, wji)| *p += wji * d);
            }
            // ReLU derivative on the hidden activation feeding this layer
            prev.iter_mut().zip(input).for_each(|(p, &a)| {
                if a <= 0.0 {
                    *p = 0.0;
                }
            });
            delta = prev;
        }
    }
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Huber loss with unit threshold and its derivative.
pub fn huber(err: f64) -> (f64, f64) {
    if err.abs() <= 1.0 {
        (0.5 * err * err, err)
    } else {
        (err.abs() - 0.5, err.signum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: usize) -> Self {
        Self {
            kind,
            lr,
            first: vec![0.0; params],
            second: match kind {
                OptimizerKind::Adam { .. } => vec![0.0; params],
                OptimizerKind::SgdMomentum { .. } => Vec::new(),
            },
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for ((p, v), g) in params.iter_mut().zip(&mut self.first).zip(grads) {
                    *v = momentum * *v + g;
                    *p -= self.lr * *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (((p, m), v), g) in params
                    .iter_mut()
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                    .zip(grads)
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}
