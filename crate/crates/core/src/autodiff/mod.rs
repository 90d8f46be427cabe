//! Minimal reverse-mode differentiation for small feed-forward grid models.
//!
//! Activations are stored as `f32`; reductions and backward buffers use
//! `f64`. A [`ModelGraph`] is immutable and can be shared across threads.

mod graph;
mod spec;
mod tensor;

pub(crate) use graph::sigmoid;
pub use graph::{
    bias_name, weight_name, GradientResult, Layer, Loss, ModelGraph, ParamGradients, Trace,
};
pub use spec::{build_model, LayerSpec, ModelSpec};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("unknown layer kind `{0}`")]
    UnknownLayerKind(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("target {target} out of range for {outputs} outputs")]
    TargetOutOfRange { target: usize, outputs: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("loss target must be 0 or 1, got {0}")]
    InvalidTarget(f64),
    #[error("malformed model spec: {0}")]
    Spec(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> ModelGraph {
        let spec = ModelSpec {
            input_shape: vec![2],
            init_seed: None,
            layers: vec![LayerSpec::dense(2, 1).with_params(vec![2.0, 3.0], vec![0.0])],
        };
        build_model(&spec).unwrap()
    }

    fn t(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn linear_forward_and_gradient() {
        let m = linear();
        assert_eq!(m.output_shape(), &[1]);
        assert_eq!(
            m.forward(&t(vec![2], vec![1.0, 1.0])).unwrap().data(),
            &[5.0]
        );
        for x in [[1.0, 1.0], [-3.0, 0.5], [100.0, -7.0]] {
            let g = m.input_gradient(&t(vec![2], x.to_vec()), 0).unwrap();
            assert_eq!(g.input_grad.data(), &[2.0, 3.0]);
        }
    }

    #[test]
    fn activations() {
        let relu = ModelGraph::new(vec![2], vec![Layer::Relu], Default::default()).unwrap();
        assert_eq!(
            relu.forward(&t(vec![2], vec![-1.0, 2.0])).unwrap().data(),
            &[0.0, 2.0]
        );
        let sig = ModelGraph::new(vec![1], vec![Layer::Sigmoid], Default::default()).unwrap();
        assert_eq!(sig.forward(&t(vec![1], vec![0.0])).unwrap().data(), &[0.5]);
        let g = sig.input_gradient(&t(vec![1], vec![0.0]), 0).unwrap();
        assert_eq!(g.input_grad.data(), &[0.25]);
        // subgradient at the kink
        let g = relu.input_gradient(&t(vec![2], vec![0.0, 1.0]), 0).unwrap();
        assert_eq!(g.input_grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_composition() {
        let spec = ModelSpec {
            input_shape: vec![16, 16, 4],
            init_seed: Some(3),
            layers: vec![
                LayerSpec::conv2d(4, 8, 3),
                LayerSpec::activation("relu"),
                LayerSpec::activation("flatten"),
                LayerSpec::dense(16 * 16 * 8, 1),
            ],
        };
        let m = build_model(&spec).unwrap();
        assert_eq!(m.output_shape(), &[1]);
        assert_eq!(build_model(&spec).unwrap(), m, "deterministic under seed");

        let bad = ModelSpec {
            input_shape: vec![2],
            init_seed: Some(1),
            layers: vec![LayerSpec::dense(2, 3), LayerSpec::dense(4, 1)],
        };
        assert!(matches!(
            build_model(&bad),
            Err(ModelError::ShapeMismatch { .. })
        ));

        let unknown = ModelSpec {
            input_shape: vec![2],
            init_seed: Some(1),
            layers: vec![LayerSpec::activation("maxpool")],
        };
        assert_eq!(
            build_model(&unknown).unwrap_err(),
            ModelError::UnknownLayerKind("maxpool".into())
        );
    }

    #[test]
    fn spec_round_trip() {
        let spec = ModelSpec {
            input_shape: vec![4, 4, 2],
            init_seed: Some(9),
            layers: vec![
                LayerSpec::conv2d(2, 3, 3),
                LayerSpec::activation("sigmoid"),
                LayerSpec::activation("flatten"),
                LayerSpec::dense(48, 2),
            ],
        };
        let m = build_model(&spec).unwrap();
        let text = m.to_spec().to_json();
        let back = build_model(&ModelSpec::from_json(&text).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(matches!(
            ModelSpec::from_json("{\"layers\": 3}"),
            Err(ModelError::Spec(_))
        ));
    }

    #[test]
    fn target_and_input_checks() {
        let m = linear();
        assert!(matches!(
            m.input_gradient(&t(vec![2], vec![1.0, 1.0]), 1),
            Err(ModelError::TargetOutOfRange {
                target: 1,
                outputs: 1
            })
        ));
        assert!(matches!(
            m.forward(&t(vec![3], vec![1.0; 3])),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn logistic_bias_gradient_closed_form() {
        let b = 0.3f32;
        let spec = ModelSpec {
            input_shape: vec![2],
            init_seed: None,
            layers: vec![LayerSpec::dense(2, 1).with_params(vec![0.7, -1.2], vec![b])],
        };
        let m = build_model(&spec).unwrap();
        let batch = vec![(t(vec![2], vec![0.0, 0.0]), t(vec![1], vec![1.0]))];
        let pg = m
            .param_gradients(&batch, Loss::BinaryCrossEntropyWithLogits)
            .unwrap();
        let expected = sigmoid(f64::from(b)) - 1.0;
        assert!((pg.grads["0.bias"][0] - expected).abs() < 1e-7);
        assert_eq!(pg.grads["0.weight"], vec![0.0, 0.0]);
        assert!(matches!(
            m.param_gradients(&[], Loss::BinaryCrossEntropyWithLogits),
            Err(ModelError::EmptyBatch)
        ));
    }

    #[test]
    fn duplicated_batch_has_same_mean_gradient() {
        let spec = ModelSpec {
            input_shape: vec![3],
            init_seed: Some(11),
            layers: vec![
                LayerSpec::dense(3, 3),
                LayerSpec::activation("relu"),
                LayerSpec::dense(3, 1),
            ],
        };
        let m = build_model(&spec).unwrap();
        let batch: Vec<_> = (0..5)
            .map(|i| {
                let x = i as f32 * 0.3;
                (
                    t(vec![3], vec![x, 1.0 - x, 0.5 * x]),
                    t(vec![1], vec![(i % 2) as f32]),
                )
            })
            .collect();
        let doubled: Vec<_> = batch.iter().flat_map(|p| [p.clone(), p.clone()]).collect();
        let a = m
            .param_gradients(&batch, Loss::BinaryCrossEntropyWithLogits)
            .unwrap();
        let b = m
            .param_gradients(&doubled, Loss::BinaryCrossEntropyWithLogits)
            .unwrap();
        for (k, ga) in &a.grads {
            for (x, y) in ga.iter().zip(&b.grads[k]) {
                assert!((x - y).abs() < 1e-12, "{k}");
            }
        }
    }
}
