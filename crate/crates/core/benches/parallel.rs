//! Single-thread pool vs the default rayon pool on the data-parallel paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rayon::ThreadPoolBuilder;
use xckit::attribution::{integrated_gradients, IgOptions, Method};
use xckit::matching::MatchConfig;
use xckit::meta::{build_feature_dataset, cross_validate, Feature, FrameEvidence, MetaTrainConfig};
use xckit::synth::{attribute_predictions, generate_benchmark, SceneSpec};
use xckit::xc::XcConfig;
use xckit::{AttributionTarget, Tensor};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        (
            "1-thread",
            ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
        ),
        ("default", ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn bench(c: &mut Criterion) {
    let (frames, _) = generate_benchmark(&SceneSpec::default(), 20).unwrap();
    let maps: Vec<_> = frames
        .iter()
        .map(|f| {
            attribute_predictions(
                &f.model,
                &f.image,
                &f.preds,
                Method::IntegratedGradients,
                IgOptions::default(),
                0.1,
            )
            .unwrap()
        })
        .collect();
    let evidence: Vec<_> = frames
        .iter()
        .zip(&maps)
        .map(|(f, m)| FrameEvidence {
            frame_id: f.frame_id,
            grid: f.image.grid,
            preds: &f.preds,
            gts: &f.gts,
            attributions: m,
        })
        .collect();
    let rows =
        build_feature_dataset(&evidence, &XcConfig::default(), &MatchConfig::default()).unwrap();
    let frame = &frames[0];
    let zero = Tensor::zeros(frame.image.features.shape().to_vec());
    let target = AttributionTarget {
        box_index: 0,
        class_index: 0,
        output: 0,
    };
    let cv_cfg = MetaTrainConfig {
        repeats: 1,
        ..MetaTrainConfig::default()
    };

    let mut g = c.benchmark_group("parallel");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::new("ig_32_steps", name), |b| {
            b.iter(|| {
                pool.install(|| {
                    integrated_gradients(
                        &frame.model,
                        &frame.image.features,
                        &zero,
                        IgOptions::default(),
                        target,
                    )
                    .unwrap()
                })
            })
        });
        g.bench_function(BenchmarkId::new("batch_xc", name), |b| {
            b.iter(|| {
                pool.install(|| {
                    build_feature_dataset(&evidence, &XcConfig::default(), &MatchConfig::default())
                })
            })
        });
        g.bench_function(BenchmarkId::new("cross_validate", name), |b| {
            b.iter(|| {
                pool.install(|| cross_validate(&rows, &Feature::META_FIVE, &cv_cfg, 1).unwrap())
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
