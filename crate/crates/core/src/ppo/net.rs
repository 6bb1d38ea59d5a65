//! Fully connected tanh network with an explicit backward pass.
//!
//! Batches are column-major: an input batch is a `dim x batch` matrix, one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Dense>,
}

/// Layer inputs recorded by [`DenseNet::forward`]; entry `i` feeds layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<Dense>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
    }
}

/// Orthogonal matrix scaled by `gain`, as used for policy-gradient network initialisation.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let tall = rows >= cols;
    let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
    let g = DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let rdiag = qr.r().diagonal();
    for j in 0..c {
        if rdiag[j] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let q = if tall { q } else { q.transpose() };
    q * gain
}

impl DenseNet {
    /// `sizes` lists every layer width including input and output. Hidden layers use gain
    /// sqrt(2); the output layer uses `output_gain`. Biases start at zero.
    pub fn new(sizes: &[usize], output_gain: f64, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "a network needs at least an input and an output size");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { output_gain } else { 2f64.sqrt() };
                Dense { weight: orthogonal(w[1], w[0], gain, rng), bias: DVector::zeros(w[1]) }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        assert!(!layers.is_empty());
        for pair in layers.windows(2) {
            assert_eq!(pair[0].weight.nrows(), pair[1].weight.ncols(), "layer shapes do not chain");
        }
        for l in &layers {
            assert_eq!(l.weight.nrows(), l.bias.len());
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.nrows())
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.weight.nrows()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, input: &DMatrix<f64>) -> (DMatrix<f64>, ForwardCache) {
        assert_eq!(input.nrows(), self.input_dim(), "input dimension mismatch");
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = input.clone();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.weight * &a;
            for mut col in z.column_iter_mut() {
                col += &l.bias;
            }
            inputs.push(a);
            a = if i == last { z } else { z.map(f64::tanh) };
        }
        (a, ForwardCache { inputs })
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward(input).0
    }

    /// Single-sample convenience wrapper.
    pub fn predict_one(&self, x: &[f64]) -> Vec<f64> {
        let m = DMatrix::from_column_slice(x.len(), 1, x);
        self.predict(&m).as_slice().to_vec()
    }

    /// Gradients of a scalar loss given `d loss / d output`; also returns `d loss / d input`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &DMatrix<f64>) -> (NetGrads, DMatrix<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = d_output.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let a = &cache.inputs[i];
            let dw = &dz * a.transpose();
            let db = dz.column_sum();
            let da = l.weight.transpose() * &dz;
            grads.push(Dense { weight: dw, bias: db });
            dz = if i > 0 { da.zip_map(a, |g, act| g * (1.0 - act * act)) } else { da };
        }
        grads.reverse();
        (NetGrads { layers: grads }, dz)
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
    }

    /// Reads parameters in [`write_flat`](Self::write_flat) order; returns the count consumed.
    pub fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&src[k..k + n]);
            k += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&src[k..k + n]);
            k += n;
        }
        k
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Plain serializable form of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetState {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl From<&DenseNet> for NetState {
    fn from(net: &DenseNet) -> Self {
        let mut params = Vec::with_capacity(net.num_params());
        net.write_flat(&mut params);
        Self { sizes: net.sizes(), params }
    }
}

impl TryFrom<&NetState> for DenseNet {
    type Error = String;

    fn try_from(s: &NetState) -> Result<Self, String> {
        if s.sizes.len() < 2 {
            return Err("network needs at least two layer sizes".into());
        }
        let layers: Vec<Dense> = s
            .sizes
            .windows(2)
            .map(|w| Dense { weight: DMatrix::zeros(w[1], w[0]), bias: DVector::zeros(w[1]) })
            .collect();
        let mut net = DenseNet { layers };
        if net.num_params() != s.params.len() {
            return Err(format!("expected {} parameters, found {}", net.num_params(), s.params.len()));
        }
        net.read_flat(&s.params);
        Ok(net)
    }
}
