use std::sync::Arc;

use xckit::attribution::{IgOptions, Method};
use xckit::geometry::iou_3d;
use xckit::matching::{categorize, MatchConfig, MatchTag};
use xckit::synth::{
    anchor_output, attribute_predictions, generate_benchmark, generate_frame, toy_detector,
    ClassCounts, PlantedKind, SceneSpec, SynthError, SyntheticFrame,
};
use xckit::xc::{xc_scores, XcConfig};
use xckit::ObjectClass;

fn frame(spec: &SceneSpec, id: u64) -> SyntheticFrame {
    let g = spec.grid;
    generate_frame(spec, id, Arc::new(toy_detector(g.height, g.width).unwrap())).unwrap()
}

#[test]
fn frames_are_deterministic() {
    let spec = SceneSpec {
        rng_seed: 42,
        ..SceneSpec::default()
    };
    let (a, b) = (frame(&spec, 3), frame(&spec, 3));
    assert_eq!(a.image, b.image);
    assert_eq!(a.gts, b.gts);
    assert_eq!(a.preds, b.preds);
    assert_eq!(a.kinds, b.kinds);
    assert_ne!(frame(&spec, 4).preds, a.preds);
}

#[test]
fn empty_spec_gives_empty_frame() {
    let spec = SceneSpec {
        objects: ClassCounts {
            car: 0,
            pedestrian: 0,
            cyclist: 0,
        },
        fp_rate: 0.0,
        ignored_per_frame: 0,
        ..SceneSpec::default()
    };
    let f = frame(&spec, 0);
    assert!(f.gts.is_empty() && f.preds.is_empty());
}

#[test]
fn crowded_grid_fails_placement() {
    let spec = SceneSpec {
        objects: ClassCounts {
            car: 60,
            pedestrian: 0,
            cyclist: 0,
        },
        ..SceneSpec::default()
    };
    let g = spec.grid;
    let r = generate_frame(&spec, 0, Arc::new(toy_detector(g.height, g.width).unwrap()));
    assert!(matches!(r, Err(SynthError::PlacementFailure { .. })));
}

#[test]
fn stored_scores_reproduce_under_forward() {
    let (frames, _) = generate_benchmark(&SceneSpec::default(), 10).unwrap();
    for f in &frames {
        let out = f.model.forward(&f.image.features).unwrap();
        for p in &f.preds {
            for class in 0..ObjectClass::COUNT {
                let k = anchor_output(&f.image.grid, &p.bbox, class).unwrap();
                assert!((f64::from(out.data()[k]) - p.scores[class]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn planted_kinds_survive_matching() {
    let cfg = MatchConfig::default();
    let (frames, _) = generate_benchmark(&SceneSpec::default(), 30).unwrap();
    for f in &frames {
        let outcome = categorize(&f.preds, &f.gts, &cfg).unwrap();
        for ((p, kind), m) in f.preds.iter().zip(&f.kinds).zip(&outcome.matches) {
            let class = ObjectClass::ALL[p.label_index()];
            let thresh = cfg.iou_thresh[&class];
            match *kind {
                PlantedKind::Tp { gt_index } => {
                    assert!(iou_3d(&p.bbox, &f.gts[gt_index].bbox) >= thresh);
                    assert_eq!(m.tag, MatchTag::Tp);
                }
                PlantedKind::Fp => {
                    assert!(f.gts.iter().all(|g| iou_3d(&p.bbox, &g.bbox) < thresh));
                    assert_eq!(m.tag, MatchTag::Fp);
                }
                PlantedKind::Ignored => assert_eq!(m.tag, MatchTag::Ignore),
            }
        }
    }
}

#[test]
fn tp_attributions_concentrate_more() {
    let (frames, _) = generate_benchmark(&SceneSpec::default(), 50).unwrap();
    let (mut tp, mut fp) = (Vec::new(), Vec::new());
    for f in &frames {
        let maps = attribute_predictions(
            &f.model,
            &f.image,
            &f.preds,
            Method::IntegratedGradients,
            IgOptions::default(),
            0.1,
        )
        .unwrap();
        for ((p, kind), m) in f.preds.iter().zip(&f.kinds).zip(&maps) {
            let Some(m) = m else { continue };
            let c = xc_scores(m, &p.bbox, &f.image.grid, &XcConfig::default())
                .unwrap()
                .xc_c_plus()
                .unwrap_or(0.0);
            match kind {
                PlantedKind::Tp { .. } => tp.push(c),
                PlantedKind::Fp => fp.push(c),
                PlantedKind::Ignored => {}
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&tp) - mean(&fp) >= 0.2,
        "tp {} fp {}",
        mean(&tp),
        mean(&fp)
    );
}

#[test]
fn manifest_accounting() {
    let spec = SceneSpec::default();
    let (one, m1) = generate_benchmark(&spec, 1).unwrap();
    let f = &one[0];
    let t = m1.total();
    assert_eq!(
        t.tp,
        f.kinds
            .iter()
            .filter(|k| matches!(k, PlantedKind::Tp { .. }))
            .count()
    );
    assert_eq!(
        t.fp,
        f.kinds.iter().filter(|k| **k == PlantedKind::Fp).count()
    );
    assert_eq!(
        m1.ignored,
        f.kinds
            .iter()
            .filter(|k| **k == PlantedKind::Ignored)
            .count()
    );

    let (frames, m) = generate_benchmark(&spec, 100).unwrap();
    let mut tp_fp = (0, 0);
    for f in &frames {
        tp_fp.0 += f
            .kinds
            .iter()
            .filter(|k| matches!(k, PlantedKind::Tp { .. }))
            .count();
        tp_fp.1 += f.kinds.iter().filter(|k| **k == PlantedKind::Fp).count();
    }
    assert_eq!((m.total().tp, m.total().fp), tp_fp);
    assert_eq!(m.n_frames, 100);
    assert!(
        (m.fp_fraction() - 0.25).abs() <= 0.05,
        "{}",
        m.fp_fraction()
    );
}

#[test]
fn threshold_sensitivity() {
    use xckit::meta::{build_feature_dataset, Feature, FrameEvidence, Group};
    use xckit::metrics::evaluate_feature;

    let (frames, _) = generate_benchmark(&SceneSpec::default(), 30).unwrap();
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
    let xc = [
        Feature::XcCMinus,
        Feature::XcSMinus,
        Feature::XcCPlus,
        Feature::XcSPlus,
    ];
    let mut prev_valid = [usize::MAX; 4];
    for a_thresh in [0.05, 0.1, 0.2, 0.4] {
        let cfg = XcConfig {
            a_thresh,
            ..XcConfig::default()
        };
        let rows = build_feature_dataset(&evidence, &cfg, &MatchConfig::default()).unwrap();
        for (k, f) in xc.into_iter().enumerate() {
            let valid = rows.iter().filter(|r| r.is_valid(f)).count();
            assert!(valid <= prev_valid[k]);
            prev_valid[k] = valid;
            if a_thresh <= 0.1 {
                let a = evaluate_feature(&rows, f, &Group::all(), 0).unwrap().auroc;
                assert!(a >= 0.85, "{f} auroc {a} at a_thresh {a_thresh}");
            }
        }
        // above every aggregate magnitude nothing is significant
        if a_thresh == 0.4 {
            assert!(rows
                .iter()
                .all(|r| xc.iter().all(|&f| !r.is_valid(f) && r.value(f) == 0.0)));
        }
    }
}
