use std::sync::Arc;

use rand::distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;
use crate::nn::params::{GradVector, Layout, ParamVector};
use crate::nn::spec::{LayerSpec, NetworkSpec};
use crate::rng::SimRng;

/// A batch of network inputs with optional targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Matrix,
    targets: Option<Matrix>,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Option<Matrix>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::InvalidArgument("batch must contain at least one row".into()));
        }
        if !inputs.is_finite() {
            return Err(Error::NonFiniteValue("batch input"));
        }
        if let Some(t) = &targets {
            if t.rows() != inputs.rows() {
                return Err(Error::shape("batch targets", inputs.rows(), t.rows()));
            }
            if !t.is_finite() {
                return Err(Error::NonFiniteValue("batch target"));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn targets(&self) -> Option<&Matrix> {
        self.targets.as_ref()
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

/// Per-layer activations recorded during a forward pass. `values[0]` is the
/// input and `values[k + 1]` is the output of layer `k`.
#[derive(Debug, Clone)]
pub struct Trace {
    values: Vec<Matrix>,
}

impl Trace {
    pub fn output(&self) -> &Matrix {
        self.values.last().expect("trace holds the input at least")
    }

    pub fn into_output(mut self) -> Matrix {
        self.values.pop().expect("trace holds the input at least")
    }
}

/// Gradients returned by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: GradVector,
    pub input: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: ParamVector,
    seed: u64,
}

impl Network {
    /// Weights ~ U(-1/sqrt(in), 1/sqrt(in)) per dense layer, biases zero.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let layout = Arc::new(Layout::from_spec(&spec));
        let mut params = ParamVector::zeros(layout.clone());
        let mut rng: SimRng = rand::SeedableRng::seed_from_u64(seed);
        for block in layout.blocks() {
            let bound = 1.0 / (block.in_dim as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut params.values_mut()[block.weight_offset..block.bias_offset] {
                *w = dist.sample(&mut rng);
            }
        }
        Ok(Self { spec, params, seed })
    }

    pub fn from_params(spec: NetworkSpec, params: ParamVector, seed: u64) -> Result<Self> {
        if *params.layout().as_ref() != Layout::from_spec(&spec) {
            return Err(Error::Layout);
        }
        Ok(Self { spec, params, seed })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if !self.params.same_layout(&params) {
            return Err(Error::Layout);
        }
        self.params = params;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(inputs)?.into_output())
    }

    pub fn forward_trace(&self, inputs: &Matrix) -> Result<Trace> {
        if inputs.cols() != self.spec.input_dim() {
            return Err(Error::shape("forward input columns", self.spec.input_dim(), inputs.cols()));
        }
        let blocks = self.params.layout().blocks();
        let values = self.params.values();
        let mut trace = Vec::with_capacity(self.spec.layers().len() + 1);
        trace.push(inputs.clone());
        let mut dense = 0;
        for (k, layer) in self.spec.layers().iter().enumerate() {
            let x = trace.last().expect("non-empty");
            let y = match *layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    let b = &blocks[dense];
                    dense += 1;
                    let w = &values[b.weight_offset..b.bias_offset];
                    let bias = &values[b.bias_offset..b.bias_offset + out_dim];
                    let mut y = Matrix::zeros(x.rows(), out_dim);
                    for r in 0..x.rows() {
                        let xr = x.row(r);
                        let yr = y.row_mut(r);
                        for (o, out) in yr.iter_mut().enumerate() {
                            *out = bias[o] + dot(xr, &w[o * in_dim..(o + 1) * in_dim]);
                        }
                    }
                    y
                }
                LayerSpec::Activation(act) => {
                    let mut y = x.clone();
                    y.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
                    y
                }
            };
            if !y.is_finite() {
                return Err(Error::NonFinite { layer: k });
            }
            trace.push(y);
        }
        Ok(Trace { values: trace })
    }

    /// Gradient of `sum(upstream ⊙ forward(inputs))` with respect to the
    /// parameters and the inputs.
    pub fn backward(&self, inputs: &Matrix, upstream: &Matrix) -> Result<Gradients> {
        let trace = self.forward_trace(inputs)?;
        self.backward_from_trace(&trace, upstream)
    }

    pub fn backward_from_trace(&self, trace: &Trace, upstream: &Matrix) -> Result<Gradients> {
        let out = trace.output();
        if upstream.shape() != out.shape() {
            return Err(Error::shape(
                "backward upstream",
                format!("{:?}", out.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let blocks = self.params.layout().blocks();
        let values = self.params.values();
        let mut grad = ParamVector::zeros(self.params.layout().clone());
        let mut delta = upstream.clone();
        let mut dense = blocks.len();
        for (k, layer) in self.spec.layers().iter().enumerate().rev() {
            let x = &trace.values[k];
            match *layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    dense -= 1;
                    let b = &blocks[dense];
                    let w = &values[b.weight_offset..b.bias_offset];
                    let g = grad.values_mut();
                    let mut next = Matrix::zeros(x.rows(), in_dim);
                    for r in 0..x.rows() {
                        let xr = x.row(r);
                        let dr = delta.row(r);
                        let nr = next.row_mut(r);
                        for o in 0..out_dim {
                            let d = dr[o];
                            g[b.bias_offset + o] += d;
                            let gw = &mut g[b.weight_offset + o * in_dim..b.weight_offset + (o + 1) * in_dim];
                            let wo = &w[o * in_dim..(o + 1) * in_dim];
                            for i in 0..in_dim {
                                gw[i] += d * xr[i];
                                nr[i] += d * wo[i];
                            }
                        }
                    }
                    delta = next;
                }
                LayerSpec::Activation(act) => {
                    let y = &trace.values[k + 1];
                    for ((d, xv), yv) in delta
                        .as_mut_slice()
                        .iter_mut()
                        .zip(x.as_slice())
                        .zip(y.as_slice())
                    {
                        *d *= act.derivative(*xv, *yv);
                    }
                }
            }
        }
        Ok(Gradients {
            params: grad,
            input: delta,
        })
    }

    /// `params -= lr * grad`.
    pub fn sgd_step(&mut self, grad: &GradVector, lr: f64) -> Result<()> {
        self.params.axpy(-lr, grad)
    }
}

/// Dot product with four interleaved partial sums, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ac.zip(bc) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
