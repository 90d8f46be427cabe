//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use xckit::attribution::{AttributionMap, AttributionTarget, Method};
use xckit::autodiff::{bias_name, weight_name, Layer, ModelGraph, Tensor};
use xckit::geometry::{Box3D, GridMeta};
use xckit::xc::XcConfig;

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small random conv net ending in sigmoid scores: `[h, w, c] -> [outputs]`.
pub fn random_conv_net(seed: u64, h: usize, w: usize, c: usize, outputs: usize) -> ModelGraph {
    let layers = vec![
        Layer::Conv2d {
            in_channels: c,
            out_channels: 4,
            kernel: 3,
        },
        Layer::Relu,
        Layer::Conv2d {
            in_channels: 4,
            out_channels: 3,
            kernel: 3,
        },
        Layer::Relu,
        Layer::Flatten,
        Layer::Dense {
            inputs: h * w * 3,
            outputs,
        },
        Layer::Sigmoid,
    ];
    ModelGraph::with_seed(vec![h, w, c], layers, seed).unwrap()
}

pub fn random_input(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.gen_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

fn param(model: &ModelGraph, name: &str) -> Vec<f64> {
    model
        .param(name)
        .unwrap()
        .data()
        .iter()
        .map(|&v| f64::from(v))
        .collect()
}

/// Plain f64 forward pass, gather-form convolution. Also returns every relu
/// activation pattern so callers can detect kink crossings.
pub fn naive_forward(model: &ModelGraph, x: &[f64]) -> (Vec<f64>, Vec<Vec<bool>>) {
    let mut shape = model.input_shape().to_vec();
    let mut v = x.to_vec();
    let mut patterns = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        match *layer {
            Layer::Dense { inputs, outputs } => {
                let (w, b) = (param(model, &weight_name(i)), param(model, &bias_name(i)));
                v = (0..outputs)
                    .map(|o| b[o] + (0..inputs).map(|j| w[o * inputs + j] * v[j]).sum::<f64>())
                    .collect();
                shape = vec![outputs];
            }
            Layer::Conv2d {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
            } => {
                let (w, b) = (param(model, &weight_name(i)), param(model, &bias_name(i)));
                let (h, wd) = (shape[0], shape[1]);
                let r = (k / 2) as i64;
                let mut out = vec![0.0; h * wd * cout];
                for y in 0..h as i64 {
                    for xx in 0..wd as i64 {
                        for co in 0..cout {
                            let mut acc = b[co];
                            for ky in 0..k as i64 {
                                for kx in 0..k as i64 {
                                    let (iy, ix) = (y + ky - r, xx + kx - r);
                                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                        continue;
                                    }
                                    for ci in 0..cin {
                                        let wi =
                                            ((co * k + ky as usize) * k + kx as usize) * cin + ci;
                                        acc +=
                                            w[wi] * v[(iy as usize * wd + ix as usize) * cin + ci];
                                    }
                                }
                            }
                            out[(y as usize * wd + xx as usize) * cout + co] = acc;
                        }
                    }
                }
                v = out;
                shape = vec![h, wd, cout];
            }
            Layer::Relu => {
                patterns.push(v.iter().map(|&a| a > 0.0).collect());
                v = v.iter().map(|&a| a.max(0.0)).collect();
            }
            Layer::Sigmoid => v = v.iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect(),
            Layer::Flatten => shape = vec![v.len()],
        }
    }
    (v, patterns)
}

/// Central difference of output `target` along input coordinate `coord`, or
/// `None` when the probe crosses a relu kink.
pub fn central_difference(
    model: &ModelGraph,
    x: &[f64],
    target: usize,
    coord: usize,
    h: f64,
) -> Option<f64> {
    let (_, base) = naive_forward(model, x);
    let mut plus = x.to_vec();
    plus[coord] += h;
    let mut minus = x.to_vec();
    minus[coord] -= h;
    let (fp, pp) = naive_forward(model, &plus);
    let (fm, pm) = naive_forward(model, &minus);
    (pp == base && pm == base).then(|| (fp[target] - fm[target]) / (2.0 * h))
}

/// Brute-force XC: enumerate every pixel, test its center in the box frame.
/// Returns `(s_plus, c_plus, s_minus, c_minus)`.
pub fn brute_xc(
    values: &[f32],
    channels: usize,
    bbox: &Box3D,
    grid: &GridMeta,
    a_thresh: f64,
    margin: f64,
) -> [Option<f64>; 4] {
    let (hx, hy) = (
        (bbox.dx + 2.0 * margin) / 2.0,
        (bbox.dy + 2.0 * margin) / 2.0,
    );
    let (s, c) = bbox.yaw.sin_cos();
    let mut acc = [[0.0f64; 2]; 2];
    let mut cnt = [[0u64; 2]; 2];
    for row in 0..grid.height {
        for col in 0..grid.width {
            let px = grid.origin_x + (col as f64 + 0.5) * grid.pixel_size - bbox.cx;
            let py = grid.origin_y + (row as f64 + 0.5) * grid.pixel_size - bbox.cy;
            let (lx, ly) = (c * px + s * py, -s * px + c * py);
            let inside = lx.abs() <= hx && ly.abs() <= hy;
            let px_vals = &values[(row * grid.width + col) * channels..][..channels];
            for (k, sign) in [1.0f64, -1.0].into_iter().enumerate() {
                let a: f64 = px_vals
                    .iter()
                    .map(|&v| (sign * f64::from(v)).max(0.0))
                    .sum();
                if a >= a_thresh {
                    acc[k][1] += a;
                    cnt[k][1] += 1;
                    if inside {
                        acc[k][0] += a;
                        cnt[k][0] += 1;
                    }
                }
            }
        }
    }
    let sum = |k: usize| (acc[k][1] > 0.0).then(|| (acc[k][0] / acc[k][1]).min(1.0));
    let count = |k: usize| (cnt[k][1] > 0).then(|| cnt[k][0] as f64 / cnt[k][1] as f64);
    [sum(0), count(0), sum(1), count(1)]
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counted half.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            den += 1.0;
            num += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

/// Two-sample KS: sup over all pooled points of the ECDF difference.
pub fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |xs: &[f64], t: f64| xs.iter().filter(|&&v| v <= t).count() as f64 / xs.len() as f64;
    a.iter()
        .chain(b)
        .map(|&t| (ecdf(a, t) - ecdf(b, t)).abs())
        .fold(0.0, f64::max)
}

/// Like [`random_conv_net`] with sigmoid hidden activations (smooth paths).
pub fn random_smooth_conv_net(
    seed: u64,
    h: usize,
    w: usize,
    c: usize,
    outputs: usize,
) -> ModelGraph {
    let layers = vec![
        Layer::Conv2d {
            in_channels: c,
            out_channels: 4,
            kernel: 3,
        },
        Layer::Sigmoid,
        Layer::Conv2d {
            in_channels: 4,
            out_channels: 3,
            kernel: 3,
        },
        Layer::Sigmoid,
        Layer::Flatten,
        Layer::Dense {
            inputs: h * w * 3,
            outputs,
        },
        Layer::Sigmoid,
    ];
    ModelGraph::with_seed(vec![h, w, c], layers, seed).unwrap()
}

pub fn map(h: usize, w: usize, c: usize, values: Vec<f32>) -> AttributionMap {
    AttributionMap {
        values: Tensor::new(vec![h, w, c], values).unwrap(),
        target: AttributionTarget {
            box_index: 0,
            class_index: 0,
            output: 0,
        },
        method: Method::IntegratedGradients,
        ig_steps: 32,
        baseline_id: 0,
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub map: AttributionMap,
    pub bbox: Box3D,
    pub grid: GridMeta,
    pub cfg: XcConfig,
}

pub fn random_instance(r: &mut ChaCha8Rng) -> Instance {
    let (h, w, c) = (r.gen_range(4..40), r.gen_range(4..40), r.gen_range(1..4));
    let ps = r.gen_range(0.1..0.8);
    let grid = GridMeta::new(h, w, r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0), ps).unwrap();
    let values: Vec<f32> = (0..h * w * c)
        .map(|_| {
            if r.gen_bool(0.6) {
                0.0
            } else {
                r.gen_range(-0.5f32..0.5)
            }
        })
        .collect();
    let bbox = Box3D::new(
        grid.origin_x + r.gen_range(0.0..w as f64 * ps),
        grid.origin_y + r.gen_range(0.0..h as f64 * ps),
        0.8,
        r.gen_range(0.3..6.0),
        r.gen_range(0.3..3.0),
        1.6,
        r.gen_range(-3.1..3.1),
    )
    .unwrap();
    let cfg = XcConfig {
        a_thresh: r.gen_range(0.0..0.4),
        margin_m: r.gen_range(0.0..0.5),
    };
    Instance {
        map: map(h, w, c, values),
        bbox,
        grid,
        cfg,
    }
}

/// A frame of loosely clustered predictions and ground truths, so that IoUs
/// span the whole [0, 1] range.
pub fn random_frame(
    r: &mut ChaCha8Rng,
    frame_id: u64,
) -> (Vec<xckit::scene::Detection>, Vec<xckit::scene::GroundTruth>) {
    use xckit::scene::{Detection, GroundTruth, ObjectClass};
    let n_gt = r.gen_range(0..5);
    let gts: Vec<GroundTruth> = (0..n_gt)
        .map(|_| GroundTruth {
            frame_id,
            bbox: Box3D::new(
                r.gen_range(0.0..12.0),
                r.gen_range(-3.0..3.0),
                0.8,
                r.gen_range(0.6..4.5),
                r.gen_range(0.6..2.0),
                1.6,
                r.gen_range(-3.1..3.1),
            )
            .unwrap(),
            label: ObjectClass::ALL[r.gen_range(0..3)],
        })
        .collect();
    let n_pred = r.gen_range(0..7);
    let preds = (0..n_pred)
        .map(|_| {
            let bbox = match gts.get(r.gen_range(0..gts.len().max(1))) {
                Some(g) if r.gen_bool(0.7) => Box3D::new(
                    g.bbox.cx + r.gen_range(-0.8..0.8),
                    g.bbox.cy + r.gen_range(-0.5..0.5),
                    g.bbox.cz + r.gen_range(-0.3..0.3),
                    g.bbox.dx * r.gen_range(0.8..1.2),
                    g.bbox.dy * r.gen_range(0.8..1.2),
                    g.bbox.dz,
                    xckit::geometry::wrap_angle(g.bbox.yaw + r.gen_range(-0.4..0.4)),
                )
                .unwrap(),
                _ => Box3D::new(
                    r.gen_range(0.0..12.0),
                    r.gen_range(-3.0..3.0),
                    0.8,
                    2.0,
                    1.0,
                    1.6,
                    0.0,
                )
                .unwrap(),
            };
            Detection {
                frame_id,
                bbox,
                scores: (0..3).map(|_| r.gen_range(0.0..1.0)).collect(),
                n_points: r.gen_range(0..300),
                distance: None,
            }
        })
        .collect();
    (preds, gts)
}

/// Direct transcription of the TP/FP/Ignore rule, first-maximum on ties.
pub fn naive_categorize(
    preds: &[xckit::scene::Detection],
    gts: &[xckit::scene::GroundTruth],
    cfg: &xckit::matching::MatchConfig,
) -> Vec<xckit::matching::MatchTag> {
    use xckit::matching::MatchTag;
    preds
        .iter()
        .map(|p| {
            let mut label = 0;
            for c in 1..p.scores.len() {
                if p.scores[c] > p.scores[label] {
                    label = c;
                }
            }
            if p.scores[label] < cfg.score_thresh {
                return MatchTag::Ignore;
            }
            let mut best: Option<(usize, f64)> = None;
            for (i, g) in gts.iter().enumerate() {
                let iou = xckit::geometry::iou_3d(&p.bbox, &g.bbox);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((i, iou));
                }
            }
            let class = xckit::scene::ObjectClass::ALL[label];
            match best {
                Some((i, iou)) if iou >= cfg.iou_thresh[&class] && gts[i].label == class => {
                    MatchTag::Tp
                }
                _ => MatchTag::Fp,
            }
        })
        .collect()
}

pub fn feature_row(
    frame_id: u64,
    values: [f64; 5],
    n_points: u32,
    is_tp: bool,
) -> xckit::meta::FeatureRow {
    let [top_score, xc_c_minus, xc_c_plus, xc_s_minus, xc_s_plus] = values;
    xckit::meta::FeatureRow {
        frame_id,
        pred_index: 0,
        pred_label: xckit::scene::ObjectClass::Pedestrian,
        top_score,
        xc_c_minus,
        xc_c_plus,
        xc_s_minus,
        xc_s_plus,
        xc_c_minus_valid: true,
        xc_c_plus_valid: true,
        xc_s_minus_valid: true,
        xc_s_plus_valid: true,
        n_points,
        distance: 10.0,
        is_tp,
    }
}

/// Noisy AND: a box is TP when both a latent confidence `a` and a latent
/// concentration `b` exceed 0.4 (5% of labels flipped). The class score sees
/// `a`, each XC score sees `b`, all with independent noise, so no single
/// column can recover the label.
pub fn noisy_and_rows(n: usize, seed: u64) -> Vec<xckit::meta::FeatureRow> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let (a, b): (f64, f64) = (r.gen(), r.gen());
            let mut tp = a > 0.4 && b > 0.4;
            if r.gen_bool(0.05) {
                tp = !tp;
            }
            let mut noisy = |v: f64| (v + r.gen_range(-0.1..0.1)).clamp(0.0, 1.0);
            let values = [noisy(a), noisy(b), noisy(b), noisy(b), noisy(b)];
            feature_row(i as u64, values, 50, tp)
        })
        .collect()
}
