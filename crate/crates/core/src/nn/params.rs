//! Flat parameter storage.
//!
//! Dense layer `k` (counting dense layers only) owns a contiguous block: its
//! `out × in` weight matrix in row-major order followed by its `out` biases.
//! Blocks are laid out in layer order.

use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;
use crate::nn::spec::{LayerSpec, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseBlock {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl DenseBlock {
    pub fn len(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Address of a single parameter. For biases `col` is always 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamIndex {
    pub dense: usize,
    pub kind: ParamKind,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    blocks: Vec<DenseBlock>,
    len: usize,
}

impl Layout {
    pub fn from_spec(spec: &NetworkSpec) -> Self {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for layer in spec.layers() {
            if let LayerSpec::Dense { in_dim, out_dim } = *layer {
                let block = DenseBlock {
                    in_dim,
                    out_dim,
                    weight_offset: offset,
                    bias_offset: offset + in_dim * out_dim,
                };
                offset += block.len();
                blocks.push(block);
            }
        }
        Self { blocks, len: offset }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[DenseBlock] {
        &self.blocks
    }

    pub fn index(&self, at: ParamIndex) -> Option<usize> {
        let b = self.blocks.get(at.dense)?;
        match at.kind {
            ParamKind::Weight if at.row < b.out_dim && at.col < b.in_dim => {
                Some(b.weight_offset + at.row * b.in_dim + at.col)
            }
            ParamKind::Bias if at.row < b.out_dim && at.col == 0 => Some(b.bias_offset + at.row),
            _ => None,
        }
    }

    pub fn locate(&self, flat: usize) -> Option<ParamIndex> {
        let dense = self
            .blocks
            .iter()
            .position(|b| flat >= b.weight_offset && flat < b.weight_offset + b.len())?;
        let b = &self.blocks[dense];
        if flat < b.bias_offset {
            let local = flat - b.weight_offset;
            Some(ParamIndex {
                dense,
                kind: ParamKind::Weight,
                row: local / b.in_dim,
                col: local % b.in_dim,
            })
        } else {
            Some(ParamIndex {
                dense,
                kind: ParamKind::Bias,
                row: flat - b.bias_offset,
                col: 0,
            })
        }
    }
}

/// Per-layer view produced by [`ParamVector::unflatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `out × in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Flat parameter (or gradient) vector bound to a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type GradVector = ParamVector;

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let values = vec![0.0; layout.len()];
        Self { layout, values }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::shape("ParamVector", layout.len(), values.len()));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn get(&self, at: ParamIndex) -> Option<f64> {
        self.layout.index(at).map(|i| self.values[i])
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Layout);
        }
        for (v, g) in self.values.iter_mut().zip(&other.values) {
            *v += alpha * g;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// FNV-1a over the raw bit patterns; equal checksums mean bitwise-equal values
    /// with overwhelming probability.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for byte in v.to_bits().to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    pub fn unflatten(&self) -> Vec<DenseParams> {
        self.layout
            .blocks()
            .iter()
            .map(|b| DenseParams {
                weights: Matrix::new(
                    b.out_dim,
                    b.in_dim,
                    self.values[b.weight_offset..b.bias_offset].to_vec(),
                )
                .expect("block shape"),
                bias: self.values[b.bias_offset..b.bias_offset + b.out_dim].to_vec(),
            })
            .collect()
    }

    pub fn flatten(layout: Arc<Layout>, layers: &[DenseParams]) -> Result<Self> {
        if layers.len() != layout.blocks().len() {
            return Err(Error::Layout);
        }
        let mut values = Vec::with_capacity(layout.len());
        for (b, p) in layout.blocks().iter().zip(layers) {
            if p.weights.shape() != (b.out_dim, b.in_dim) || p.bias.len() != b.out_dim {
                return Err(Error::Layout);
            }
            values.extend_from_slice(p.weights.as_slice());
            values.extend_from_slice(&p.bias);
        }
        Ok(Self { layout, values })
    }

    /// Checkpoint blob: little-endian u64 element count, then little-endian f64 values.
    pub fn write_blob<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(8 + 8 * self.values.len());
        self.write_blob(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_blob<R: Read>(layout: Arc<Layout>, mut input: R) -> Result<Self> {
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        if n != layout.len() {
            return Err(Error::shape("parameter blob", layout.len(), n));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        Ok(Self { layout, values })
    }
}
