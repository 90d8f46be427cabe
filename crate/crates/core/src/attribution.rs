//! Gradient-based attribution maps for one (prediction, class) output.
//!
//! Three methods are provided:
//!
//! * backprop saliency: the raw input gradient of the target score;
//! * integrated gradients: the path-averaged gradient from a baseline to the
//!   input, multiplied elementwise by `input - baseline`;
//! * integrated gradients without the input multiplication.
//!
//! Path integration uses the midpoint rule by default. When several targets
//! share one input, each path point is traced once and back-propagated per
//! target. Path points are evaluated in parallel and summed in a fixed order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ModelError, ModelGraph, Tensor};
use crate::par;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttributionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("integrated gradients needs at least one step")]
    ZeroSteps,
    #[error("baseline shape {baseline:?} differs from input shape {input:?}")]
    BaselineShape {
        baseline: Vec<usize>,
        input: Vec<usize>,
    },
    #[error("unknown attribution method `{0}`")]
    UnknownMethod(String),
}

/// Which model output an attribution map explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionTarget {
    /// Prediction index within its frame.
    pub box_index: u32,
    /// Class whose score is explained.
    pub class_index: u32,
    /// Flat index of that score in the model output.
    pub output: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "backprop")]
    Backprop,
    #[serde(rename = "ig")]
    IntegratedGradients,
    #[serde(rename = "ig-nomult")]
    IgNoInputMult,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Backprop => "backprop",
            Method::IntegratedGradients => "ig",
            Method::IgNoInputMult => "ig-nomult",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Method::Backprop => 0,
            Method::IntegratedGradients => 1,
            Method::IgNoInputMult => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Method::Backprop),
            1 => Some(Method::IntegratedGradients),
            2 => Some(Method::IgNoInputMult),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = AttributionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "backprop" => Ok(Method::Backprop),
            "ig" => Ok(Method::IntegratedGradients),
            "ig-nomult" | "ig-no-input-mult" => Ok(Method::IgNoInputMult),
            _ => Err(AttributionError::UnknownMethod(s.to_string())),
        }
    }
}

/// Where on each of the `steps` sub-intervals the gradient is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathRule {
    /// alpha_k = (k - 0.5) / steps
    #[default]
    Midpoint,
    /// alpha_k = k / steps; with one step this samples the input itself.
    RightEndpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IgOptions {
    pub steps: u32,
    pub rule: PathRule,
}

impl Default for IgOptions {
    fn default() -> Self {
        Self {
            steps: 32,
            rule: PathRule::Midpoint,
        }
    }
}

impl IgOptions {
    pub fn with_steps(steps: u32) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    fn alpha(&self, k: u32) -> f64 {
        let steps = f64::from(self.steps);
        match self.rule {
            PathRule::Midpoint => (f64::from(k) + 0.5) / steps,
            PathRule::RightEndpoint => f64::from(k + 1) / steps,
        }
    }
}

/// Signed attribution grid with the same shape as the model input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    pub values: Tensor,
    pub target: AttributionTarget,
    pub method: Method,
    /// Path steps for the IG variants, 0 for backprop.
    pub ig_steps: u32,
    /// Identifies the baseline; 0 is the all-zero input.
    pub baseline_id: u32,
}

impl AttributionMap {
    /// `(height, width, channels)` view of the value tensor.
    pub fn dims(&self) -> (usize, usize, usize) {
        grid_dims(self.values.shape())
    }
}

pub(crate) fn grid_dims(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [h, w, c] => (h, w, c),
        [h, w] => (h, w, 1),
        [n] => (1, n, 1),
        _ => (1, shape.iter().product(), 1),
    }
}

fn check_target(model: &ModelGraph, t: &AttributionTarget) -> Result<(), AttributionError> {
    let outputs = model.output_len();
    if t.output >= outputs {
        return Err(ModelError::TargetOutOfRange {
            target: t.output,
            outputs,
        }
        .into());
    }
    Ok(())
}

pub fn backprop_saliency(
    model: &ModelGraph,
    image: &Tensor,
    target: AttributionTarget,
) -> Result<AttributionMap, AttributionError> {
    Ok(backprop_saliency_many(model, image, &[target])?.remove(0))
}

/// Saliency maps for several targets of one input, sharing a forward pass.
pub fn backprop_saliency_many(
    model: &ModelGraph,
    image: &Tensor,
    targets: &[AttributionTarget],
) -> Result<Vec<AttributionMap>, AttributionError> {
    for t in targets {
        check_target(model, t)?;
    }
    let trace = model.trace(image)?;
    targets
        .iter()
        .map(|&target| {
            let g = trace.input_gradient(target.output)?;
            Ok(AttributionMap {
                values: g.input_grad,
                target,
                method: Method::Backprop,
                ig_steps: 0,
                baseline_id: 0,
            })
        })
        .collect()
}

/// Average input gradient along the straight path from `baseline` to `image`,
/// one buffer per target, accumulated in `f64`.
fn path_average_gradients(
    model: &ModelGraph,
    image: &Tensor,
    baseline: &Tensor,
    opts: IgOptions,
    targets: &[AttributionTarget],
) -> Result<Vec<Vec<f64>>, AttributionError> {
    if opts.steps == 0 {
        return Err(AttributionError::ZeroSteps);
    }
    if baseline.shape() != image.shape() {
        return Err(AttributionError::BaselineShape {
            baseline: baseline.shape().to_vec(),
            input: image.shape().to_vec(),
        });
    }
    for t in targets {
        check_target(model, t)?;
    }
    let per_step: Vec<Result<Vec<Vec<f64>>, ModelError>> =
        par::map_range(opts.steps as usize, |k| {
            let alpha = opts.alpha(k as u32);
            let point: Vec<f32> = baseline
                .data()
                .iter()
                .zip(image.data())
                .map(|(&b, &x)| (f64::from(b) + alpha * (f64::from(x) - f64::from(b))) as f32)
                .collect();
            let point = Tensor::new(image.shape().to_vec(), point)?;
            let trace = model.trace(&point)?;
            Ok(targets
                .iter()
                .map(|t| trace.input_gradient_f64(t.output))
                .collect())
        });

    let mut sums = vec![vec![0.0f64; image.len()]; targets.len()];
    for step in per_step {
        for (sum, g) in sums.iter_mut().zip(step?) {
            for (s, v) in sum.iter_mut().zip(g) {
                *s += v;
            }
        }
    }
    let inv = 1.0 / f64::from(opts.steps);
    for sum in &mut sums {
        sum.iter_mut().for_each(|s| *s *= inv);
    }
    Ok(sums)
}

/// Path-averaged gradients without the input multiplication, for many targets.
pub fn modified_ig_many(
    model: &ModelGraph,
    image: &Tensor,
    baseline: &Tensor,
    opts: IgOptions,
    targets: &[AttributionTarget],
) -> Result<Vec<AttributionMap>, AttributionError> {
    let avgs = path_average_gradients(model, image, baseline, opts, targets)?;
    avgs.into_iter()
        .zip(targets)
        .map(|(avg, &target)| {
            Ok(AttributionMap {
                values: Tensor::from_f64(image.shape().to_vec(), &avg)?,
                target,
                method: Method::IgNoInputMult,
                ig_steps: opts.steps,
                baseline_id: 0,
            })
        })
        .collect()
}

/// Integrated gradients for many targets of one input.
///
/// Each value is the `f32` product of the rounded average gradient and
/// `input - baseline`, so it equals the modified-IG map times the input
/// difference exactly.
pub fn integrated_gradients_many(
    model: &ModelGraph,
    image: &Tensor,
    baseline: &Tensor,
    opts: IgOptions,
    targets: &[AttributionTarget],
) -> Result<Vec<AttributionMap>, AttributionError> {
    let diff: Vec<f32> = image
        .data()
        .iter()
        .zip(baseline.data())
        .map(|(&x, &b)| x - b)
        .collect();
    modified_ig_many(model, image, baseline, opts, targets)?
        .into_iter()
        .map(|m| {
            let values: Vec<f32> = m
                .values
                .data()
                .iter()
                .zip(&diff)
                .map(|(&g, &d)| g * d)
                .collect();
            Ok(AttributionMap {
                values: Tensor::new(image.shape().to_vec(), values)?,
                method: Method::IntegratedGradients,
                ..m
            })
        })
        .collect()
}

pub fn integrated_gradients(
    model: &ModelGraph,
    image: &Tensor,
    baseline: &Tensor,
    opts: IgOptions,
    target: AttributionTarget,
) -> Result<AttributionMap, AttributionError> {
    Ok(integrated_gradients_many(model, image, baseline, opts, &[target])?.remove(0))
}

pub fn modified_ig(
    model: &ModelGraph,
    image: &Tensor,
    baseline: &Tensor,
    opts: IgOptions,
    target: AttributionTarget,
) -> Result<AttributionMap, AttributionError> {
    Ok(modified_ig_many(model, image, baseline, opts, &[target])?.remove(0))
}

/// Dispatch on `method`; IG variants use the all-zero baseline.
pub fn attribute(
    model: &ModelGraph,
    image: &Tensor,
    method: Method,
    opts: IgOptions,
    targets: &[AttributionTarget],
) -> Result<Vec<AttributionMap>, AttributionError> {
    let baseline = Tensor::zeros(image.shape().to_vec());
    match method {
        Method::Backprop => backprop_saliency_many(model, image, targets),
        Method::IntegratedGradients => {
            integrated_gradients_many(model, image, &baseline, opts, targets)
        }
        Method::IgNoInputMult => modified_ig_many(model, image, &baseline, opts, targets),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Positive,
    Negative,
}

/// Per-pixel magnitude of one sign, summed over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedMap {
    pub height: usize,
    pub width: usize,
    pub sign: Sign,
    /// Row-major, all values >= 0.
    pub values: Vec<f64>,
}

/// Sum `max(v, 0)` (positive) or `max(-v, 0)` (negative) over channels.
pub fn aggregate_signed(map: &AttributionMap, sign: Sign) -> AggregatedMap {
    let (height, width, channels) = map.dims();
    let values = map
        .values
        .data()
        .chunks(channels)
        .map(|px| {
            px.iter()
                .map(|&v| {
                    let v = f64::from(v);
                    match sign {
                        Sign::Positive => v.max(0.0),
                        Sign::Negative => (-v).max(0.0),
                    }
                })
                .sum()
        })
        .collect();
    AggregatedMap {
        height,
        width,
        sign,
        values,
    }
}
