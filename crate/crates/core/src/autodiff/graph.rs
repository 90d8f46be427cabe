use std::collections::BTreeMap;

use rand::Rng as _;

use super::{ModelError, Tensor};
use crate::rng;

/// One layer of a feed-forward grid model.
///
/// Convolutions operate on `[height, width, channels]` tensors with stride 1
/// and zero "same" padding, so the spatial size is preserved. Dense layers
/// take a rank-1 input.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    Sigmoid,
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Flatten => "flatten",
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, ModelError> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(ModelError::ShapeMismatch {
                        expected: vec![inputs],
                        found: input.to_vec(),
                    });
                }
                Ok(vec![outputs])
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                if kernel == 0 || kernel % 2 == 0 {
                    return Err(ModelError::InvalidLayer(format!(
                        "conv2d kernel must be odd, got {kernel}"
                    )));
                }
                match input {
                    [h, w, c] if *c == in_channels => Ok(vec![*h, *w, out_channels]),
                    _ => Err(ModelError::ShapeMismatch {
                        expected: vec![0, 0, in_channels],
                        found: input.to_vec(),
                    }),
                }
            }
            Layer::Relu | Layer::Sigmoid => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// (weight shape, bias shape, fan-in) for parameterized layers.
    pub(crate) fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>, usize)> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                Some((vec![outputs, inputs], vec![outputs], inputs))
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![out_channels, kernel, kernel, in_channels],
                vec![out_channels],
                kernel * kernel * in_channels,
            )),
            _ => None,
        }
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("{layer}.bias")
}

/// Immutable feed-forward model: validated layer stack plus named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, Tensor>,
}

/// Gradient of one scalar output with respect to the model input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult {
    pub input_grad: Tensor,
    pub output_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Binary cross entropy on raw logits; targets must be 0 or 1.
    BinaryCrossEntropyWithLogits,
}

/// Mean-over-batch loss and parameter gradients.
#[derive(Debug, Clone)]
pub struct ParamGradients {
    pub loss: f64,
    pub grads: BTreeMap<String, Vec<f64>>,
}

impl ModelGraph {
    /// Validate shapes and parameters.
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        params: BTreeMap<String, Tensor>,
    ) -> Result<Self, ModelError> {
        let mut shapes = vec![input_shape];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        for (i, layer) in layers.iter().enumerate() {
            if let Some((ws, bs, _)) = layer.param_shapes() {
                for (name, shape) in [(weight_name(i), ws), (bias_name(i), bs)] {
                    let t = params
                        .get(&name)
                        .ok_or_else(|| ModelError::MissingParameter(name.clone()))?;
                    if t.shape() != shape.as_slice() {
                        return Err(ModelError::ShapeMismatch {
                            expected: shape,
                            found: t.shape().to_vec(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            layers,
            shapes,
            params,
        })
    }

    /// Build with parameters drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn with_seed(
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut rng = rng::rng_for(seed, &[0x1417]);
        let mut params = BTreeMap::new();
        for (i, layer) in layers.iter().enumerate() {
            if let Some((ws, bs, fan_in)) = layer.param_shapes() {
                let bound = 1.0 / (fan_in as f64).sqrt();
                for (name, shape) in [(weight_name(i), ws), (bias_name(i), bs)] {
                    let n: usize = shape.iter().product();
                    let data = (0..n)
                        .map(|_| rng.gen_range(-bound..bound) as f32)
                        .collect();
                    params.insert(name, Tensor::new(shape, data)?);
                }
            }
        }
        Self::new(input_shape, layers, params)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Apply `f` to every parameter buffer. Values must stay finite.
    pub(crate) fn update_params(&mut self, mut f: impl FnMut(&str, &mut [f32])) {
        for (name, t) in self.params.iter_mut() {
            f(name, t.data_mut());
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        let trace = self.trace(input)?;
        Tensor::new(self.output_shape().to_vec(), trace.output().to_vec())
    }

    /// Run the model, keeping every intermediate activation for backward passes.
    pub fn trace(&self, input: &Tensor) -> Result<Trace<'_>, ModelError> {
        if input.shape() != self.input_shape() {
            return Err(ModelError::ShapeMismatch {
                expected: self.input_shape().to_vec(),
                found: input.shape().to_vec(),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.data().to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = acts.last().expect("non-empty");
            let y = self.layer_forward(i, layer, x);
            acts.push(y);
        }
        if let Some(index) = acts
            .last()
            .expect("non-empty")
            .iter()
            .position(|v| !v.is_finite())
        {
            return Err(ModelError::NonFinite { index });
        }
        Ok(Trace { model: self, acts })
    }

    pub fn input_gradient(
        &self,
        input: &Tensor,
        target: usize,
    ) -> Result<GradientResult, ModelError> {
        self.trace(input)?.input_gradient(target)
    }

    /// Mean-over-batch parameter gradients of `loss`.
    pub fn param_gradients(
        &self,
        batch: &[(Tensor, Tensor)],
        loss: Loss,
    ) -> Result<ParamGradients, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let Loss::BinaryCrossEntropyWithLogits = loss;
        let n = batch.len() as f64;
        let mut grads: BTreeMap<String, Vec<f64>> = self
            .params
            .iter()
            .map(|(k, t)| (k.clone(), vec![0.0; t.len()]))
            .collect();
        let mut total = 0.0;
        for (input, target) in batch {
            if target.shape() != self.output_shape() {
                return Err(ModelError::ShapeMismatch {
                    expected: self.output_shape().to_vec(),
                    found: target.shape().to_vec(),
                });
            }
            let trace = self.trace(input)?;
            let m = target.len() as f64;
            let mut upstream = vec![0.0; target.len()];
            for (j, (&z, &y)) in trace.output().iter().zip(target.data()).enumerate() {
                if y != 0.0 && y != 1.0 {
                    return Err(ModelError::InvalidTarget(f64::from(y)));
                }
                let (z, y) = (f64::from(z), f64::from(y));
                total += (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()) / m;
                upstream[j] = (sigmoid(z) - y) / (m * n);
            }
            trace.backward(upstream, Some(&mut grads));
        }
        Ok(ParamGradients {
            loss: total / n,
            grads,
        })
    }

    fn weights(&self, layer: usize) -> (&[f32], &[f32]) {
        (
            self.params[&weight_name(layer)].data(),
            self.params[&bias_name(layer)].data(),
        )
    }

    fn layer_forward(&self, i: usize, layer: &Layer, x: &[f32]) -> Vec<f32> {
        match *layer {
            Layer::Dense { inputs, outputs } => {
                let (w, b) = self.weights(i);
                (0..outputs)
                    .map(|j| {
                        let row = &w[j * inputs..(j + 1) * inputs];
                        let acc = row.iter().zip(x).fold(f64::from(b[j]), |acc, (&wi, &xi)| {
                            acc + f64::from(wi) * f64::from(xi)
                        });
                        acc as f32
                    })
                    .collect()
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let (w, b) = self.weights(i);
                let (h, wd) = (self.shapes[i][0], self.shapes[i][1]);
                conv_forward(x, h, wd, in_channels, w, b, out_channels, kernel)
            }
            Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            Layer::Sigmoid => x.iter().map(|&v| sigmoid(f64::from(v)) as f32).collect(),
            Layer::Flatten => x.to_vec(),
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Scatter form: all-zero input pixels are skipped, so sparse grids are cheap.
#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f32],
    h: usize,
    w: usize,
    cin: usize,
    weight: &[f32],
    bias: &[f32],
    cout: usize,
    k: usize,
) -> Vec<f32> {
    let r = k / 2;
    let mut acc: Vec<f64> = (0..h * w)
        .flat_map(|_| bias.iter().map(|&b| f64::from(b)))
        .collect();
    for iy in 0..h {
        for ix in 0..w {
            let xi = &x[(iy * w + ix) * cin..][..cin];
            if xi.iter().all(|&v| v == 0.0) {
                continue;
            }
            // output (oy, ox) sees this pixel through tap (iy - oy + r, ix - ox + r)
            for oy in iy.saturating_sub(r)..(iy + r + 1).min(h) {
                let ky = iy + r - oy;
                for ox in ix.saturating_sub(r)..(ix + r + 1).min(w) {
                    let kx = ix + r - ox;
                    let out = &mut acc[(oy * w + ox) * cout..][..cout];
                    for (co, o) in out.iter_mut().enumerate() {
                        let wi = &weight[((co * k + ky) * k + kx) * cin..][..cin];
                        let mut s = 0.0f64;
                        for c in 0..cin {
                            s += f64::from(xi[c]) * f64::from(wi[c]);
                        }
                        *o += s;
                    }
                }
            }
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

/// Activations recorded by one forward pass.
#[derive(Debug)]
pub struct Trace<'m> {
    model: &'m ModelGraph,
    acts: Vec<Vec<f32>>,
}

impl<'m> Trace<'m> {
    pub fn output(&self) -> &[f32] {
        self.acts.last().expect("non-empty")
    }

    /// Reverse-mode gradient of `output[target]` with respect to the input.
    pub fn input_gradient(&self, target: usize) -> Result<GradientResult, ModelError> {
        let n = self.model.output_len();
        if target >= n {
            return Err(ModelError::TargetOutOfRange { target, outputs: n });
        }
        let grad = self.input_gradient_f64(target);
        Ok(GradientResult {
            input_grad: Tensor::from_f64(self.model.input_shape().to_vec(), &grad)?,
            output_value: f64::from(self.output()[target]),
        })
    }

    /// Unrounded input gradient, for callers that keep accumulating in `f64`.
    pub(crate) fn input_gradient_f64(&self, target: usize) -> Vec<f64> {
        let mut upstream = vec![0.0; self.model.output_len()];
        upstream[target] = 1.0;
        self.backward(upstream, None)
    }

    /// Propagate `upstream` (d loss / d output) back to the input. When
    /// `param_grads` is given, parameter gradients are accumulated into it.
    pub(crate) fn backward(
        &self,
        mut grad: Vec<f64>,
        mut param_grads: Option<&mut BTreeMap<String, Vec<f64>>>,
    ) -> Vec<f64> {
        let model = self.model;
        for (i, layer) in model.layers.iter().enumerate().rev() {
            let x = &self.acts[i];
            let y = &self.acts[i + 1];
            grad = match *layer {
                Layer::Relu => {
                    for (g, &v) in grad.iter_mut().zip(y) {
                        // subgradient 0 at the kink
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    grad
                }
                Layer::Sigmoid => {
                    for (g, &v) in grad.iter_mut().zip(y) {
                        let s = f64::from(v);
                        *g *= s * (1.0 - s);
                    }
                    grad
                }
                Layer::Flatten => grad,
                Layer::Dense { inputs, outputs } => {
                    let (w, _) = model.weights(i);
                    let mut gin = vec![0.0; inputs];
                    let mut pg = param_grads.as_deref_mut().map(|pg| take_pair(pg, i));
                    for j in 0..outputs {
                        let g = grad[j];
                        if g == 0.0 {
                            continue;
                        }
                        let row = &w[j * inputs..(j + 1) * inputs];
                        for (gi, &wi) in gin.iter_mut().zip(row) {
                            *gi += g * f64::from(wi);
                        }
                        if let Some((gw, gb)) = pg.as_mut() {
                            gb[j] += g;
                            for (gwi, &xi) in gw[j * inputs..(j + 1) * inputs].iter_mut().zip(x) {
                                *gwi += g * f64::from(xi);
                            }
                        }
                    }
                    if let (Some(all), Some((gw, gb))) = (param_grads.as_deref_mut(), pg) {
                        all.insert(weight_name(i), gw);
                        all.insert(bias_name(i), gb);
                    }
                    gin
                }
                Layer::Conv2d {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: k,
                } => {
                    let (w, _) = model.weights(i);
                    let (h, wd) = (model.shapes[i][0], model.shapes[i][1]);
                    let r = (k / 2) as isize;
                    let mut gin = vec![0.0; h * wd * cin];
                    let mut pg = param_grads.as_deref_mut().map(|pg| take_pair(pg, i));
                    for yy in 0..h {
                        for xx in 0..wd {
                            for co in 0..cout {
                                let g = grad[(yy * wd + xx) * cout + co];
                                if g == 0.0 {
                                    continue;
                                }
                                if let Some((_, gb)) = pg.as_mut() {
                                    gb[co] += g;
                                }
                                for ky in 0..k {
                                    let iy = yy as isize + ky as isize - r;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = xx as isize + kx as isize - r;
                                        if ix < 0 || ix >= wd as isize {
                                            continue;
                                        }
                                        let base_in = (iy as usize * wd + ix as usize) * cin;
                                        let base_w = ((co * k + ky) * k + kx) * cin;
                                        for c in 0..cin {
                                            gin[base_in + c] += g * f64::from(w[base_w + c]);
                                        }
                                        if let Some((gw, _)) = pg.as_mut() {
                                            for c in 0..cin {
                                                gw[base_w + c] += g * f64::from(x[base_in + c]);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if let (Some(all), Some((gw, gb))) = (param_grads.as_deref_mut(), pg) {
                        all.insert(weight_name(i), gw);
                        all.insert(bias_name(i), gb);
                    }
                    gin
                }
            };
        }
        grad
    }
}

fn take_pair(all: &mut BTreeMap<String, Vec<f64>>, layer: usize) -> (Vec<f64>, Vec<f64>) {
    (
        all.remove(&weight_name(layer)).unwrap_or_default(),
        all.remove(&bias_name(layer)).unwrap_or_default(),
    )
}
