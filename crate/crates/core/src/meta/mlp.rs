use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::MetaError;
use crate::autodiff::{sigmoid, Layer, Loss, ModelGraph, Tensor};
use crate::rng;

/// One feature vector with its TP label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub duplication_factor: usize,
    pub noise_half_width: f64,
    pub folds: usize,
    pub repeats: usize,
    pub hidden_width: usize,
    /// Append each XC column's validity flag as an extra input.
    pub include_validity_flags: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for MetaTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 16,
            learning_rate: 0.001,
            duplication_factor: 4,
            noise_half_width: 0.05,
            folds: 5,
            repeats: 5,
            hidden_width: 3,
            include_validity_flags: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl MetaTrainConfig {
    pub fn validate(&self) -> Result<(), MetaError> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("duplication_factor", self.duplication_factor),
            ("folds", self.folds),
            ("repeats", self.repeats),
            ("hidden_width", self.hidden_width),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(MetaError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.folds < 2 {
            return Err(MetaError::InvalidConfig("folds must be at least 2".into()));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.noise_half_width.is_nan()
            || self.noise_half_width < 0.0
        {
            return Err(MetaError::InvalidConfig(
                "learning_rate must be positive and noise_half_width non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit(samples: &[Sample]) -> Result<Self, MetaError> {
        if samples.len() < 2 {
            return Err(MetaError::InsufficientRows {
                needed: 2,
                n_pos: samples.iter().filter(|s| s.label).count(),
                n_neg: samples.iter().filter(|s| !s.label).count(),
            });
        }
        let d = samples[0].features.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            check_width(s, d)?;
            for (m, v) in mean.iter_mut().zip(&s.features) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(&s.features).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        if let Some(j) = std.iter().position(|&s| s.is_nan() || s <= 1e-12) {
            return Err(MetaError::ConstantFeature(j));
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, samples: &[Sample]) -> Result<Vec<Sample>, MetaError> {
        samples
            .iter()
            .map(|s| {
                check_width(s, self.mean.len())?;
                Ok(Sample {
                    features: s
                        .features
                        .iter()
                        .zip(&self.mean)
                        .zip(&self.std)
                        .map(|((v, m), sd)| (v - m) / sd)
                        .collect(),
                    label: s.label,
                })
            })
            .collect()
    }
}

fn check_width(s: &Sample, d: usize) -> Result<(), MetaError> {
    if s.features.len() != d {
        return Err(MetaError::FeatureWidth {
            expected: d,
            found: s.features.len(),
        });
    }
    Ok(())
}

/// Z-score `samples`. Supplied stats are applied as-is; otherwise they are
/// fitted on `samples`.
pub fn normalize(
    samples: &[Sample],
    stats: Option<&NormalizationStats>,
) -> Result<(Vec<Sample>, NormalizationStats), MetaError> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormalizationStats::fit(samples)?,
    };
    Ok((stats.apply(samples)?, stats))
}

/// `duplication_factor` copies of every sample, each feature jittered by
/// independent U(-w, w) noise. Labels are untouched.
pub fn augment(samples: &[Sample], cfg: &MetaTrainConfig, seed: u64) -> Vec<Sample> {
    let mut rng = rng::rng_for(seed, &[rng::str_key("augment")]);
    let w = cfg.noise_half_width;
    let mut out = Vec::with_capacity(samples.len() * cfg.duplication_factor);
    for _ in 0..cfg.duplication_factor {
        for s in samples {
            let features = if w > 0.0 {
                s.features
                    .iter()
                    .map(|v| v + (2.0 * rng.gen::<f64>() - 1.0) * w)
                    .collect()
            } else {
                s.features.clone()
            };
            out.push(Sample {
                features,
                label: s.label,
            });
        }
    }
    out
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut ModelGraph, grads: &BTreeMap<String, Vec<f64>>) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.update_params(|name, data| {
            let Some(g) = grads.get(name) else { return };
            let m = ms
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; data.len()]);
            let v = vs
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; data.len()]);
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                data[i] = (f64::from(data[i]) - update) as f32;
            }
        });
    }
}

/// Two-layer perceptron: `d -> hidden` dense, ReLU, `hidden -> 1` dense.
/// Scores are the sigmoid of the output logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub model: ModelGraph,
}

impl Mlp {
    pub fn new(inputs: usize, hidden: usize, seed: u64) -> Result<Self, MetaError> {
        let layers = vec![
            Layer::Dense {
                inputs,
                outputs: hidden,
            },
            Layer::Relu,
            Layer::Dense {
                inputs: hidden,
                outputs: 1,
            },
        ];
        Ok(Self {
            model: ModelGraph::with_seed(vec![inputs], layers, seed)?,
        })
    }

    pub fn inputs(&self) -> usize {
        self.model.input_shape()[0]
    }

    pub fn score(&self, features: &[f64]) -> Result<f64, MetaError> {
        let x = Tensor::from_f64(vec![features.len()], features)?;
        let logit = self.model.forward(&x)?.data()[0];
        Ok(sigmoid(f64::from(logit)))
    }

    pub fn scores(&self, samples: &[Sample]) -> Result<Vec<f64>, MetaError> {
        samples.iter().map(|s| self.score(&s.features)).collect()
    }
}

/// Train on `samples` with mini-batch Adam on binary cross entropy.
/// Deterministic given `seed`.
pub fn train_mlp(samples: &[Sample], cfg: &MetaTrainConfig, seed: u64) -> Result<Mlp, MetaError> {
    cfg.validate()?;
    let d = samples.first().map_or(0, |s| s.features.len());
    if d == 0 {
        return Err(MetaError::EmptyFeatureSubset);
    }
    let n_pos = samples.iter().filter(|s| s.label).count();
    if n_pos == 0 || n_pos == samples.len() {
        return Err(MetaError::SingleClassTrainingSet);
    }
    let pairs: Vec<(Tensor, Tensor)> = samples
        .iter()
        .map(|s| {
            check_width(s, d)?;
            Ok((
                Tensor::from_f64(vec![d], &s.features)?,
                Tensor::new(vec![1], vec![if s.label { 1.0 } else { 0.0 }])?,
            ))
        })
        .collect::<Result<_, MetaError>>()?;

    let mut mlp = Mlp::new(
        d,
        cfg.hidden_width,
        rng::derive_seed(seed, &[rng::str_key("init")]),
    )?;
    let mut adam = Adam::new(
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut order_rng = rng::rng_for(seed, &[rng::str_key("batches")]);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i].clone()));
            let pg = mlp
                .model
                .param_gradients(&batch, Loss::BinaryCrossEntropyWithLogits)?;
            adam.step(&mut mlp.model, &pg.grads);
        }
    }
    Ok(mlp)
}
