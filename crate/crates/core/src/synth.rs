//! Synthetic scenes and a hand-built toy detector.
//!
//! The detector reads a 4-channel pseudo image (car, pedestrian, cyclist,
//! density) and emits one sigmoid score per class at every pixel ("anchor").
//! Its receptive field is a `(2R+1)^2` window, so each prediction's score and
//! attributions depend only on the pixels planted inside its own window.
//!
//! Every prediction gets `hot_pixels` equally weighted signal pixels. The
//! fraction placed inside the (enlarged) predicted box follows the
//! concentration profile: high for TP-like predictions, low for FP-like ones.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    attribute, AttributionError, AttributionMap, AttributionTarget, IgOptions, Method,
};
use crate::autodiff::{build_model, LayerSpec, ModelError, ModelGraph, ModelSpec, Tensor};
use crate::geometry::{iou_3d, wrap_angle, Box3D, GeometryError, GridMeta};
use crate::matching::MatchConfig;
use crate::par;
use crate::rng::{rng_for, str_key, Rng};
use crate::scene::{Detection, GroundTruth, ObjectClass, PseudoImage};

pub const CHANNELS: usize = 4;
pub const DENSITY_CHANNEL: usize = 3;
/// Head kernel radius in pixels.
pub const HEAD_RADIUS: usize = 8;
pub const HEAD_BIAS: f32 = -3.0;
const CLASS_WEIGHT: f32 = 2.0;
const DENSITY_WEIGHT: f32 = 1.0;
const DENSITY_MIX: f32 = 0.5;
const FEATURE_BIAS: f32 = -0.005;
/// Hot pixels carry this much of the next class's channel, which shows up as
/// negative attribution.
const CONFUSER_RATIO: f64 = 0.8;
const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("could not place {what} after {attempts} attempts; grid too crowded")]
    PlacementFailure { what: String, attempts: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeRange {
    pub length: [f64; 2],
    pub width: [f64; 2],
    pub height: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub car: u32,
    pub pedestrian: u32,
    pub cyclist: u32,
}

impl ClassCounts {
    pub fn get(&self, c: ObjectClass) -> u32 {
        match c {
            ObjectClass::Car => self.car,
            ObjectClass::Pedestrian => self.pedestrian,
            ObjectClass::Cyclist => self.cyclist,
        }
    }

    pub fn total(&self) -> u32 {
        self.car + self.pedestrian + self.cyclist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationProfile {
    /// Expected fraction of hot pixels inside TP-like boxes.
    pub tp_inside: f64,
    /// Expected fraction of hot pixels inside FP-like boxes.
    pub fp_inside: f64,
    /// Per-prediction uniform jitter on the fraction.
    pub jitter: f64,
}

impl Default for ConcentrationProfile {
    fn default() -> Self {
        Self {
            tp_inside: 0.9,
            fp_inside: 0.3,
            jitter: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsSpec {
    /// Correlation between the log point count and TP-ness.
    pub correlation: f64,
    pub median: f64,
    pub log_sd: f64,
}

impl Default for PointsSpec {
    fn default() -> Self {
        Self {
            correlation: 0.4,
            median: 80.0,
            log_sd: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub grid: GridMeta,
    pub objects: ClassCounts,
    pub car_size: SizeRange,
    pub pedestrian_size: SizeRange,
    pub cyclist_size: SizeRange,
    /// Probability that an object slot becomes a false positive.
    pub fp_rate: f64,
    pub concentration: ConcentrationProfile,
    pub hot_pixels: u32,
    /// Target logit ranges for the predicted class.
    pub tp_logit: [f64; 2],
    pub fp_logit: [f64; 2],
    pub points: PointsSpec,
    /// Fraction of pixels carrying low-level clutter, and its maximum value.
    pub clutter_density: f64,
    pub clutter_level: f64,
    /// Low-score predictions over empty windows.
    pub ignored_per_frame: u32,
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let (h, w, ps) = (80, 80, 0.4);
        Self {
            grid: GridMeta {
                height: h,
                width: w,
                origin_x: 0.0,
                origin_y: -(h as f64) * ps / 2.0,
                pixel_size: ps,
            },
            objects: ClassCounts {
                car: 2,
                pedestrian: 1,
                cyclist: 1,
            },
            car_size: SizeRange {
                length: [3.5, 4.5],
                width: [1.5, 1.9],
                height: [1.4, 1.7],
            },
            pedestrian_size: SizeRange {
                length: [0.6, 0.9],
                width: [0.6, 0.8],
                height: [1.5, 1.9],
            },
            cyclist_size: SizeRange {
                length: [1.5, 1.9],
                width: [0.6, 0.8],
                height: [1.5, 1.8],
            },
            fp_rate: 0.25,
            concentration: ConcentrationProfile::default(),
            hot_pixels: 4,
            tp_logit: [0.8, 2.5],
            fp_logit: [0.0, 2.0],
            points: PointsSpec::default(),
            clutter_density: 0.01,
            clutter_level: 0.03,
            ignored_per_frame: 1,
            rng_seed: 0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64) -> Result<(), SynthError> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= lo && r[0] <= r[1]) {
        return Err(SynthError::InvalidSpec(format!("{name} range {r:?}")));
    }
    Ok(())
}

fn check_fraction(name: &str, v: f64) -> Result<(), SynthError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(SynthError::InvalidSpec(format!(
            "{name} = {v} not in [0, 1]"
        )));
    }
    Ok(())
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: SceneSpec =
            serde_json::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn size_range(&self, c: ObjectClass) -> &SizeRange {
        match c {
            ObjectClass::Car => &self.car_size,
            ObjectClass::Pedestrian => &self.pedestrian_size,
            ObjectClass::Cyclist => &self.cyclist_size,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.grid.validate()?;
        for c in ObjectClass::ALL {
            let s = self.size_range(c);
            check_range(&format!("{c} length"), s.length, 1e-3)?;
            check_range(&format!("{c} width"), s.width, 1e-3)?;
            check_range(&format!("{c} height"), s.height, 1e-3)?;
            let half_diag = 0.5 * (s.length[1].powi(2) + s.width[1].powi(2)).sqrt();
            if half_diag + 0.2 > HEAD_RADIUS as f64 * self.grid.pixel_size {
                return Err(SynthError::InvalidSpec(format!(
                    "{c} boxes do not fit the detector window at this pixel size"
                )));
            }
        }
        check_fraction("fp_rate", self.fp_rate)?;
        check_fraction("tp_inside", self.concentration.tp_inside)?;
        check_fraction("fp_inside", self.concentration.fp_inside)?;
        check_fraction("jitter", self.concentration.jitter)?;
        check_fraction("clutter_density", self.clutter_density)?;
        if !(-1.0..=1.0).contains(&self.points.correlation) {
            return Err(SynthError::InvalidSpec(
                "points correlation not in [-1, 1]".into(),
            ));
        }
        if !(self.points.median > 0.0 && self.points.log_sd >= 0.0) {
            return Err(SynthError::InvalidSpec("points median/log_sd".into()));
        }
        if self.hot_pixels < 1 {
            return Err(SynthError::InvalidSpec("hot_pixels must be >= 1".into()));
        }
        if !(self.clutter_level >= 0.0 && self.clutter_level.is_finite()) {
            return Err(SynthError::InvalidSpec("clutter_level".into()));
        }
        check_range("tp_logit", self.tp_logit, f64::from(HEAD_BIAS) + 1e-3)?;
        check_range("fp_logit", self.fp_logit, f64::from(HEAD_BIAS) + 1e-3)?;
        Ok(())
    }
}

fn falloff(dy: usize, dx: usize) -> f32 {
    1.0 - 0.5 * dy.max(dx) as f32 / HEAD_RADIUS as f32
}

/// Logit contribution of one unit of hot-pixel signal for its own class.
fn unit_logit() -> f64 {
    let feature = 1.0 + f64::from(DENSITY_MIX) - CONFUSER_RATIO;
    f64::from(CLASS_WEIGHT) * feature + f64::from(DENSITY_WEIGHT)
}

/// The fixed toy detector: 1x1 conv, relu, 1x1 conv, relu, windowed head
/// conv, sigmoid, flatten. Output `(row * W + col) * 3 + class`.
pub fn toy_detector(height: usize, width: usize) -> Result<ModelGraph, ModelError> {
    let nc = ObjectClass::COUNT;
    let mut w1 = vec![0.0f32; CHANNELS * CHANNELS];
    for co in 0..CHANNELS {
        if co == DENSITY_CHANNEL {
            w1[co * CHANNELS + DENSITY_CHANNEL] = 1.0;
            continue;
        }
        for ci in 0..nc {
            w1[co * CHANNELS + ci] = if ci == co { 1.0 } else { -1.0 };
        }
        w1[co * CHANNELS + DENSITY_CHANNEL] = DENSITY_MIX;
    }
    let mut w2 = vec![0.0f32; CHANNELS * CHANNELS];
    for c in 0..CHANNELS {
        w2[c * CHANNELS + c] = 1.0;
    }
    let k = 2 * HEAD_RADIUS + 1;
    let mut wh = vec![0.0f32; nc * k * k * CHANNELS];
    for co in 0..nc {
        for ky in 0..k {
            for kx in 0..k {
                let f = falloff(ky.abs_diff(HEAD_RADIUS), kx.abs_diff(HEAD_RADIUS));
                let base = ((co * k + ky) * k + kx) * CHANNELS;
                wh[base + co] = CLASS_WEIGHT * f;
                wh[base + DENSITY_CHANNEL] = DENSITY_WEIGHT * f;
            }
        }
    }
    let spec = ModelSpec {
        input_shape: vec![height, width, CHANNELS],
        init_seed: None,
        layers: vec![
            LayerSpec::conv2d(CHANNELS, CHANNELS, 1).with_params(w1, vec![FEATURE_BIAS; CHANNELS]),
            LayerSpec::activation("relu"),
            LayerSpec::conv2d(CHANNELS, CHANNELS, 1).with_params(w2, vec![FEATURE_BIAS; CHANNELS]),
            LayerSpec::activation("relu"),
            LayerSpec::conv2d(CHANNELS, nc, k).with_params(wh, vec![HEAD_BIAS; nc]),
            LayerSpec::activation("sigmoid"),
            LayerSpec::activation("flatten"),
        ],
    };
    build_model(&spec)
}

/// Model output index for class `class` at the anchor under the box center.
pub fn anchor_output(grid: &GridMeta, bbox: &Box3D, class: usize) -> Option<usize> {
    let (row, col) = grid.pixel_of(bbox.cx, bbox.cy)?;
    Some((row * grid.width + col) * ObjectClass::COUNT + class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PlantedKind {
    Tp { gt_index: usize },
    Fp,
    Ignored,
}

#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub frame_id: u64,
    pub image: PseudoImage,
    pub gts: Vec<GroundTruth>,
    pub preds: Vec<Detection>,
    /// Parallel to `preds`.
    pub kinds: Vec<PlantedKind>,
    /// Parallel to `preds`: anchor pixel `(row, col)`.
    pub anchors: Vec<(usize, usize)>,
    pub model: Arc<ModelGraph>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedCounts {
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_frames: usize,
    pub per_class: BTreeMap<ObjectClass, PlantedCounts>,
    pub ignored: usize,
}

impl Manifest {
    pub fn add_frame(&mut self, frame: &SyntheticFrame) {
        self.n_frames += 1;
        for (kind, pred) in frame.kinds.iter().zip(&frame.preds) {
            let class = ObjectClass::ALL[pred.label_index()];
            match kind {
                PlantedKind::Tp { .. } => self.per_class.entry(class).or_default().tp += 1,
                PlantedKind::Fp => self.per_class.entry(class).or_default().fp += 1,
                PlantedKind::Ignored => self.ignored += 1,
            }
        }
    }

    pub fn total(&self) -> PlantedCounts {
        self.per_class
            .values()
            .fold(PlantedCounts::default(), |a, c| PlantedCounts {
                tp: a.tp + c.tp,
                fp: a.fp + c.fp,
            })
    }

    pub fn fp_fraction(&self) -> f64 {
        let t = self.total();
        t.fp as f64 / (t.tp + t.fp).max(1) as f64
    }
}

fn uniform(rng: &mut Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

struct Planner<'a> {
    spec: &'a SceneSpec,
    windows: Vec<(usize, usize)>,
}

impl Planner<'_> {
    /// Reserve an anchor whose window is inside the grid and disjoint from all others.
    fn reserve(&mut self, rng: &mut Rng, what: &str) -> Result<(usize, usize), SynthError> {
        let (h, w, r) = (self.spec.grid.height, self.spec.grid.width, HEAD_RADIUS);
        if h < 2 * r + 1 || w < 2 * r + 1 {
            return Err(SynthError::PlacementFailure {
                what: what.to_string(),
                attempts: 0,
            });
        }
        for _ in 0..MAX_ATTEMPTS {
            let a = (rng.gen_range(r..h - r), rng.gen_range(r..w - r));
            let free = self
                .windows
                .iter()
                .all(|b| a.0.abs_diff(b.0) > 2 * r || a.1.abs_diff(b.1) > 2 * r);
            if free {
                self.windows.push(a);
                return Ok(a);
            }
        }
        Err(SynthError::PlacementFailure {
            what: what.to_string(),
            attempts: MAX_ATTEMPTS,
        })
    }
}

fn random_box(
    rng: &mut Rng,
    spec: &SceneSpec,
    class: ObjectClass,
    anchor: (usize, usize),
) -> Result<Box3D, SynthError> {
    let s = spec.size_range(class);
    let (x, y) = spec.grid.pixel_center(anchor.0, anchor.1);
    let q = 0.25 * spec.grid.pixel_size;
    let dz = uniform(rng, s.height);
    Ok(Box3D::new(
        x + rng.gen_range(-q..q),
        y + rng.gen_range(-q..q),
        dz / 2.0,
        uniform(rng, s.length),
        uniform(rng, s.width),
        dz,
        rng.gen_range(-PI..PI),
    )?)
}

/// Small perturbation of a ground truth that stays inside the anchor pixel.
fn perturb(rng: &mut Rng, gt: &Box3D, pixel_size: f64) -> Result<Box3D, SynthError> {
    let q = 0.1 * pixel_size;
    let mut scale = || 1.0 + rng.gen_range(-0.03..0.03);
    let (sx, sy, sz) = (scale(), scale(), scale());
    Ok(Box3D::new(
        gt.cx + rng.gen_range(-q..q),
        gt.cy + rng.gen_range(-q..q),
        gt.cz + rng.gen_range(-0.05..0.05),
        gt.dx * sx,
        gt.dy * sy,
        gt.dz * sz,
        wrap_angle(gt.yaw + rng.gen_range(-0.03..0.03)),
    )?)
}

fn window_pixels(grid: &GridMeta, anchor: (usize, usize)) -> Vec<(usize, usize)> {
    let r = HEAD_RADIUS;
    let rows = anchor.0.saturating_sub(r)..(anchor.0 + r + 1).min(grid.height);
    rows.flat_map(|y| {
        let cols = anchor.1.saturating_sub(r)..(anchor.1 + r + 1).min(grid.width);
        cols.map(move |x| (y, x))
    })
    .collect()
}

struct Plant {
    anchor: (usize, usize),
    class: ObjectClass,
    /// Pixels and their planted intensity.
    hot: Vec<((usize, usize), f64)>,
}

/// Choose hot pixels for one prediction and scale them so the class logit
/// (ignoring clutter and the small feature biases) equals `logit`.
fn plan_hot_pixels(
    rng: &mut Rng,
    spec: &SceneSpec,
    anchor: (usize, usize),
    inside_boxes: &[Box3D],
    inside_fraction: f64,
    logit: f64,
) -> Option<Vec<((usize, usize), f64)>> {
    let grid = &spec.grid;
    let margin = crate::xc::XcConfig::default().margin_m;
    let masks: Vec<Vec<bool>> = inside_boxes
        .iter()
        .map(|b| {
            b.enlarge(margin)
                .map(|e| e.project_to_bev().membership_mask(grid))
        })
        .collect::<Result<_, _>>()
        .ok()?;
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for p in window_pixels(grid, anchor) {
        let idx = p.0 * grid.width + p.1;
        let n_in = masks.iter().filter(|m| m[idx]).count();
        if n_in == masks.len() {
            inside.push(p);
        } else if n_in == 0 {
            outside.push(p);
        }
    }
    let n = spec.hot_pixels as usize;
    let n_in = ((inside_fraction * n as f64).round() as usize).min(n);
    if inside.len() < n_in || outside.len() < n - n_in {
        return None;
    }
    inside.shuffle(rng);
    outside.shuffle(rng);
    let share = (logit - f64::from(HEAD_BIAS)) / n as f64 / unit_logit();
    Some(
        inside[..n_in]
            .iter()
            .chain(&outside[..n - n_in])
            .map(|&p| {
                let f = f64::from(falloff(p.0.abs_diff(anchor.0), p.1.abs_diff(anchor.1)));
                (p, share / f)
            })
            .collect(),
    )
}

fn jittered(rng: &mut Rng, center: f64, jitter: f64) -> f64 {
    let j = if jitter > 0.0 {
        rng.gen_range(-jitter..jitter)
    } else {
        0.0
    };
    (center + j).clamp(0.0, 1.0)
}

fn planted_points(rng: &mut Rng, spec: &SceneSpec, is_tp: bool) -> u32 {
    let p = 1.0 - spec.fp_rate;
    let z = if p > 0.0 && p < 1.0 {
        (f64::from(u8::from(is_tp)) - p) / (p * (1.0 - p)).sqrt()
    } else {
        0.0
    };
    let rho = spec.points.correlation;
    let latent = rho * z + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
    (spec.points.median * (spec.points.log_sd * latent).exp())
        .round()
        .max(0.0) as u32
}

/// Generate frame `frame_id` of the scene. Deterministic in `(spec, frame_id)`.
pub fn generate_frame(
    spec: &SceneSpec,
    frame_id: u64,
    model: Arc<ModelGraph>,
) -> Result<SyntheticFrame, SynthError> {
    spec.validate()?;
    let grid = spec.grid;
    if model.input_shape() != [grid.height, grid.width, CHANNELS] {
        return Err(SynthError::InvalidSpec(
            "model input does not match the scene grid".into(),
        ));
    }
    let mut rng = rng_for(spec.rng_seed, &[str_key("synth-frame"), frame_id]);
    let match_cfg = MatchConfig::default();
    let mut planner = Planner {
        spec,
        windows: Vec::new(),
    };
    let mut gts = Vec::new();
    let mut plants = Vec::new();
    let mut planted: Vec<(Box3D, PlantedKind)> = Vec::new();

    for class in ObjectClass::ALL {
        for _ in 0..spec.objects.get(class) {
            let is_fp = rng.gen_bool(spec.fp_rate);
            let logit = uniform(&mut rng, if is_fp { spec.fp_logit } else { spec.tp_logit });
            let c = &spec.concentration;
            let frac = jittered(
                &mut rng,
                if is_fp { c.fp_inside } else { c.tp_inside },
                c.jitter,
            );
            let mut attempts = 0;
            loop {
                attempts += 1;
                if attempts > MAX_ATTEMPTS {
                    return Err(SynthError::PlacementFailure {
                        what: format!("{class} object"),
                        attempts: MAX_ATTEMPTS,
                    });
                }
                let anchor = planner.reserve(&mut rng, &format!("{class} window"))?;
                let gt_box = random_box(&mut rng, spec, class, anchor)?;
                let (pred_box, boxes) = if is_fp {
                    (gt_box, vec![gt_box])
                } else {
                    let p = perturb(&mut rng, &gt_box, grid.pixel_size)?;
                    if iou_3d(&p, &gt_box) < match_cfg.iou_thresh[&class]
                        || grid.pixel_of(p.cx, p.cy) != Some(anchor)
                    {
                        planner.windows.pop();
                        continue;
                    }
                    (p, vec![p, gt_box])
                };
                let Some(hot) = plan_hot_pixels(&mut rng, spec, anchor, &boxes, frac, logit) else {
                    planner.windows.pop();
                    continue;
                };
                let kind = if is_fp {
                    PlantedKind::Fp
                } else {
                    gts.push(GroundTruth {
                        frame_id,
                        bbox: gt_box,
                        label: class,
                    });
                    PlantedKind::Tp {
                        gt_index: gts.len() - 1,
                    }
                };
                plants.push(Plant { anchor, class, hot });
                planted.push((pred_box, kind));
                break;
            }
        }
    }
    for _ in 0..spec.ignored_per_frame {
        let anchor = planner.reserve(&mut rng, "ignored window")?;
        let class = ObjectClass::ALL[rng.gen_range(0..ObjectClass::COUNT)];
        planted.push((
            random_box(&mut rng, spec, class, anchor)?,
            PlantedKind::Ignored,
        ));
        plants.push(Plant {
            anchor,
            class,
            hot: Vec::new(),
        });
    }

    // FPs must not match any ground truth.
    for (b, kind) in &planted {
        if *kind == PlantedKind::Fp {
            for g in &gts {
                if iou_3d(b, &g.bbox) >= match_cfg.iou_thresh[&g.label] {
                    return Err(SynthError::PlacementFailure {
                        what: "false positive clear of ground truth".into(),
                        attempts: 1,
                    });
                }
            }
        }
    }

    let mut pixels = vec![0.0f64; grid.num_pixels() * CHANNELS];
    for i in 0..grid.num_pixels() {
        if spec.clutter_density > 0.0 && rng.gen_bool(spec.clutter_density) {
            let c = rng.gen_range(0..ObjectClass::COUNT);
            pixels[i * CHANNELS + c] += rng.gen::<f64>() * spec.clutter_level;
            pixels[i * CHANNELS + DENSITY_CHANNEL] += rng.gen::<f64>() * spec.clutter_level;
        }
    }
    for plant in &plants {
        let k = plant.class.index();
        let j = (k + 1) % ObjectClass::COUNT;
        for &((y, x), v) in &plant.hot {
            let base = (y * grid.width + x) * CHANNELS;
            pixels[base + k] += v;
            pixels[base + DENSITY_CHANNEL] += v;
            pixels[base + j] += CONFUSER_RATIO * v;
        }
    }
    let features = Tensor::from_f64(vec![grid.height, grid.width, CHANNELS], &pixels)?;
    let out = model.forward(&features)?;
    let out = out.data();

    let mut preds = Vec::with_capacity(planted.len());
    let mut kinds = Vec::with_capacity(planted.len());
    let mut anchors = Vec::with_capacity(planted.len());
    for ((bbox, kind), plant) in planted.into_iter().zip(&plants) {
        let base = (plant.anchor.0 * grid.width + plant.anchor.1) * ObjectClass::COUNT;
        let scores: Vec<f64> = (0..ObjectClass::COUNT)
            .map(|c| f64::from(out[base + c]))
            .collect();
        let is_tp = matches!(kind, PlantedKind::Tp { .. });
        let n_points = planted_points(&mut rng, spec, is_tp);
        preds.push(Detection {
            frame_id,
            bbox,
            scores,
            n_points,
            distance: None,
        });
        kinds.push(kind);
        anchors.push(plant.anchor);
    }
    Ok(SyntheticFrame {
        frame_id,
        image: PseudoImage { features, grid },
        gts,
        preds,
        kinds,
        anchors,
        model,
    })
}

/// `n_frames` frames generated in parallel, plus their planted-count manifest.
pub fn generate_benchmark(
    spec: &SceneSpec,
    n_frames: usize,
) -> Result<(Vec<SyntheticFrame>, Manifest), SynthError> {
    if n_frames == 0 {
        return Err(SynthError::InvalidSpec("n_frames must be >= 1".into()));
    }
    spec.validate()?;
    let model = Arc::new(toy_detector(spec.grid.height, spec.grid.width)?);
    let frames = par::map_range(n_frames, |i| {
        generate_frame(spec, i as u64, Arc::clone(&model))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let mut manifest = Manifest::default();
    for f in &frames {
        manifest.add_frame(f);
    }
    Ok((frames, manifest))
}

/// Top-class attribution target for each prediction scoring at least `min_score`.
pub fn top_class_targets(
    grid: &GridMeta,
    preds: &[Detection],
    min_score: f64,
) -> Vec<Option<AttributionTarget>> {
    preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (label, score) = p.top();
            if score < min_score {
                return None;
            }
            anchor_output(grid, &p.bbox, label).map(|output| AttributionTarget {
                box_index: i as u32,
                class_index: label as u32,
                output,
            })
        })
        .collect()
}

/// Attribution maps for the top class of each prediction at or above `min_score`.
pub fn attribute_predictions(
    model: &ModelGraph,
    image: &PseudoImage,
    preds: &[Detection],
    method: Method,
    opts: IgOptions,
    min_score: f64,
) -> Result<Vec<Option<AttributionMap>>, AttributionError> {
    let targets = top_class_targets(&image.grid, preds, min_score);
    let wanted: Vec<AttributionTarget> = targets.iter().flatten().copied().collect();
    let mut maps = attribute(model, &image.features, method, opts, &wanted)?.into_iter();
    Ok(targets
        .iter()
        .map(|t| t.and_then(|_| maps.next()))
        .collect())
}
