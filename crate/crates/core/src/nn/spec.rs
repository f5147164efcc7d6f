//! Layer-by-layer network descriptions and the stock presets.
//!
//! A spec serializes as a TOML document:
//!
//! ```toml
//! input_dim = 2
//! output_dim = 1
//!
//! [[layers]]
//! kind = "dense"
//! in = 2
//! out = 32
//!
//! [[layers]]
//! kind = "activation"
//! activation = "leaky_relu"
//! slope = 0.2
//! ```
//!
//! Activation names are `relu`, `leaky_relu`, `sigmoid`, `tanh` and
//! `identity`; `slope` is only read for `leaky_relu` (default 0.01).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub const fn leaky() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu { slope } = *self {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::Spec(format!(
                    "leaky_relu slope must lie in (0, 1), got {slope}"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => libm::tanh(x),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and the output `y = apply(x)`.
    #[inline]
    pub fn derivative(&self, x: f64, y: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Activation(Activation),
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            LayerSpec::Activation(_) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecDoc", into = "SpecDoc")]
pub struct NetworkSpec {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, output_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = Self {
            input_dim,
            output_dim,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Spec("input_dim and output_dim must be positive".into()));
        }
        if !self.layers.iter().any(|l| matches!(l, LayerSpec::Dense { .. })) {
            return Err(Error::Spec("at least one dense layer is required".into()));
        }
        let mut width = self.input_dim;
        for (k, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { in_dim, out_dim } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(Error::Spec(format!("layer {k}: dense dims must be positive")));
                    }
                    if in_dim != width {
                        return Err(Error::Spec(format!(
                            "layer {k}: dense input {in_dim} does not chain with preceding width {width}"
                        )));
                    }
                    width = out_dim;
                }
                LayerSpec::Activation(act) => act
                    .validate()
                    .map_err(|e| Error::Spec(format!("layer {k}: {e}")))?,
            }
        }
        if width != self.output_dim {
            return Err(Error::Spec(format!(
                "final width {width} does not match output_dim {}",
                self.output_dim
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// The last activation in the stack, if the stack ends with one.
    pub fn final_activation(&self) -> Option<Activation> {
        match self.layers.last() {
            Some(LayerSpec::Activation(a)) => Some(*a),
            _ => None,
        }
    }

    /// `Linear -> act -> Linear -> act -> ... -> Linear -> out` with the given widths.
    pub fn mlp(widths: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Spec("an MLP needs at least input and output widths".into()));
        }
        let mut layers = Vec::new();
        for (k, pair) in widths.windows(2).enumerate() {
            layers.push(LayerSpec::dense(pair[0], pair[1]));
            let act = if k + 2 == widths.len() { output } else { hidden };
            layers.push(LayerSpec::Activation(act));
        }
        Self::new(widths[0], widths[widths.len() - 1], layers)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input({})", self.input_dim)?;
        for layer in &self.layers {
            match layer {
                LayerSpec::Dense { in_dim, out_dim } => write!(f, " -> Linear({in_dim}, {out_dim})")?,
                LayerSpec::Activation(Activation::LeakyRelu { slope }) => {
                    write!(f, " -> LeakyReLU({slope})")?
                }
                LayerSpec::Activation(a) => write!(f, " -> {}", a.name())?,
            }
        }
        Ok(())
    }
}

/// Named architectures. The MNIST pair follows the three-Linear stacks of the
/// reference MLPs (LeakyReLU/Sigmoid discriminator, ReLU/Tanh generator); the
/// ring pair is the same shape at desk scale with a linear generator output so
/// samples can reach radius 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Mnist,
    Ring,
}

pub const MNIST_HIDDEN: usize = 256;
pub const RING_HIDDEN: usize = 32;

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Mnist, Preset::Ring];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Mnist => "mnist",
            Preset::Ring => "ring",
        }
    }

    pub fn default_hidden(&self) -> usize {
        match self {
            Preset::Mnist => MNIST_HIDDEN,
            Preset::Ring => RING_HIDDEN,
        }
    }

    pub fn discriminator(&self, sample_dim: usize, hidden: usize, slope: f64) -> Result<NetworkSpec> {
        NetworkSpec::mlp(
            &[sample_dim, hidden, hidden, 1],
            Activation::LeakyRelu { slope },
            Activation::Sigmoid,
        )
    }

    pub fn generator(&self, noise_dim: usize, hidden: usize, sample_dim: usize) -> Result<NetworkSpec> {
        let output = match self {
            Preset::Mnist => Activation::Tanh,
            Preset::Ring => Activation::Identity,
        };
        NetworkSpec::mlp(&[noise_dim, hidden, hidden, sample_dim], Activation::Relu, output)
    }
}

// Serialized form: list of {kind, in, out, activation, slope}.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    input_dim: usize,
    output_dim: usize,
    layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LayerKindDoc {
    Dense,
    Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    kind: LayerKindDoc,
    #[serde(rename = "in", default, skip_serializing_if = "Option::is_none")]
    in_dim: Option<usize>,
    #[serde(rename = "out", default, skip_serializing_if = "Option::is_none")]
    out_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
}

impl TryFrom<LayerDoc> for LayerSpec {
    type Error = Error;

    fn try_from(doc: LayerDoc) -> Result<Self> {
        match doc.kind {
            LayerKindDoc::Dense => {
                if doc.activation.is_some() || doc.slope.is_some() {
                    return Err(Error::Spec("dense layer takes only `in` and `out`".into()));
                }
                match (doc.in_dim, doc.out_dim) {
                    (Some(i), Some(o)) => Ok(LayerSpec::dense(i, o)),
                    _ => Err(Error::Spec("dense layer requires `in` and `out`".into())),
                }
            }
            LayerKindDoc::Activation => {
                if doc.in_dim.is_some() || doc.out_dim.is_some() {
                    return Err(Error::Spec("activation layer takes no `in`/`out`".into()));
                }
                let name = doc
                    .activation
                    .ok_or_else(|| Error::Spec("activation layer requires `activation`".into()))?;
                let act = match name.as_str() {
                    "relu" => Activation::Relu,
                    "leaky_relu" => Activation::LeakyRelu {
                        slope: doc.slope.unwrap_or(DEFAULT_LEAKY_SLOPE),
                    },
                    "sigmoid" => Activation::Sigmoid,
                    "tanh" => Activation::Tanh,
                    "identity" => Activation::Identity,
                    other => return Err(Error::Spec(format!("unknown activation `{other}`"))),
                };
                if doc.slope.is_some() && !matches!(act, Activation::LeakyRelu { .. }) {
                    return Err(Error::Spec("`slope` only applies to leaky_relu".into()));
                }
                Ok(LayerSpec::Activation(act))
            }
        }
    }
}

impl From<LayerSpec> for LayerDoc {
    fn from(layer: LayerSpec) -> Self {
        match layer {
            LayerSpec::Dense { in_dim, out_dim } => LayerDoc {
                kind: LayerKindDoc::Dense,
                in_dim: Some(in_dim),
                out_dim: Some(out_dim),
                activation: None,
                slope: None,
            },
            LayerSpec::Activation(act) => LayerDoc {
                kind: LayerKindDoc::Activation,
                in_dim: None,
                out_dim: None,
                activation: Some(act.name().to_string()),
                slope: match act {
                    Activation::LeakyRelu { slope } => Some(slope),
                    _ => None,
                },
            },
        }
    }
}

impl TryFrom<SpecDoc> for NetworkSpec {
    type Error = Error;

    fn try_from(doc: SpecDoc) -> Result<Self> {
        let layers = doc
            .layers
            .into_iter()
            .map(LayerSpec::try_from)
            .collect::<Result<Vec<_>>>()?;
        NetworkSpec::new(doc.input_dim, doc.output_dim, layers)
    }
}

impl From<NetworkSpec> for SpecDoc {
    fn from(spec: NetworkSpec) -> Self {
        SpecDoc {
            input_dim: spec.input_dim,
            output_dim: spec.output_dim,
            layers: spec.layers.into_iter().map(LayerDoc::from).collect(),
        }
    }
}
