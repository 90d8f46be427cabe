//! Text model-spec format (JSON).
//!
//! ```json
//! {
//!   "input_shape": [16, 16, 4],
//!   "init_seed": 7,
//!   "layers": [
//!     { "kind": "conv2d", "in_channels": 4, "out_channels": 8, "kernel": 3 },
//!     { "kind": "relu" },
//!     { "kind": "flatten" },
//!     { "kind": "dense", "inputs": 2048, "outputs": 1,
//!       "weight": [ ... ], "bias": [ ... ] }
//!   ]
//! }
//! ```
//!
//! Dense weights are `[outputs, inputs]`; conv weights are
//! `[out_channels, kernel, kernel, in_channels]`, both row-major. Layers
//! without inline `weight`/`bias` are initialized from `init_seed`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{bias_name, weight_name};
use super::{Layer, ModelError, ModelGraph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_seed: Option<u64>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f32>>,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Self {
            kind: "dense".into(),
            inputs: Some(inputs),
            outputs: Some(outputs),
            ..Default::default()
        }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            kind: "conv2d".into(),
            in_channels: Some(in_channels),
            out_channels: Some(out_channels),
            kernel: Some(kernel),
            ..Default::default()
        }
    }

    pub fn activation(kind: &str) -> Self {
        Self {
            kind: kind.into(),
            ..Default::default()
        }
    }

    pub fn with_params(mut self, weight: Vec<f32>, bias: Vec<f32>) -> Self {
        self.weight = Some(weight);
        self.bias = Some(bias);
        self
    }

    fn to_layer(&self) -> Result<Layer, ModelError> {
        let need = |v: Option<usize>, field: &str| {
            v.ok_or_else(|| {
                ModelError::InvalidLayer(format!("{} layer needs `{field}`", self.kind))
            })
        };
        Ok(match self.kind.as_str() {
            "dense" => Layer::Dense {
                inputs: need(self.inputs, "inputs")?,
                outputs: need(self.outputs, "outputs")?,
            },
            "conv2d" => Layer::Conv2d {
                in_channels: need(self.in_channels, "in_channels")?,
                out_channels: need(self.out_channels, "out_channels")?,
                kernel: need(self.kernel, "kernel")?,
            },
            "relu" => Layer::Relu,
            "sigmoid" => Layer::Sigmoid,
            "flatten" => Layer::Flatten,
            other => return Err(ModelError::UnknownLayerKind(other.to_string())),
        })
    }
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Spec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// Validate a spec and materialize its parameters.
pub fn build_model(spec: &ModelSpec) -> Result<ModelGraph, ModelError> {
    let layers = spec
        .layers
        .iter()
        .map(LayerSpec::to_layer)
        .collect::<Result<Vec<_>, _>>()?;

    let mut params = match spec.init_seed {
        Some(seed) => ModelGraph::with_seed(spec.input_shape.clone(), layers.clone(), seed)?
            .params()
            .clone(),
        None => BTreeMap::new(),
    };
    for (i, (ls, layer)) in spec.layers.iter().zip(&layers).enumerate() {
        let Some((ws, bs, _)) = layer.param_shapes() else {
            if ls.weight.is_some() || ls.bias.is_some() {
                return Err(ModelError::InvalidLayer(format!(
                    "{} layer takes no parameters",
                    ls.kind
                )));
            }
            continue;
        };
        if let Some(w) = &ls.weight {
            params.insert(weight_name(i), Tensor::new(ws, w.clone())?);
        }
        if let Some(b) = &ls.bias {
            params.insert(bias_name(i), Tensor::new(bs, b.clone())?);
        }
    }
    ModelGraph::new(spec.input_shape.clone(), layers, params)
}

impl ModelGraph {
    /// Spec with every parameter inlined.
    pub fn to_spec(&self) -> ModelSpec {
        let layers = self
            .layers()
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let mut ls = match *layer {
                    Layer::Dense { inputs, outputs } => LayerSpec::dense(inputs, outputs),
                    Layer::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                    } => LayerSpec::conv2d(in_channels, out_channels, kernel),
                    ref other => LayerSpec::activation(other.kind()),
                };
                if layer.param_shapes().is_some() {
                    ls.weight = self.param(&weight_name(i)).map(|t| t.data().to_vec());
                    ls.bias = self.param(&bias_name(i)).map(|t| t.data().to_vec());
                }
                ls
            })
            .collect();
        ModelSpec {
            input_shape: self.input_shape().to_vec(),
            init_seed: None,
            layers,
        }
    }
}
