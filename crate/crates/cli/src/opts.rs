use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use xckit::matching::MatchConfig;
use xckit::meta::{Feature, Group, MetaTrainConfig};
use xckit::xc::XcConfig;
use xckit::{IgOptions, Method, ObjectClass};

use crate::{usage, CliResult};

/// Value of a flag that is required but may come from `--config`.
pub fn req<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| {
        usage(format!(
            "--{flag} is required (on the command line or in --config)"
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Backprop,
    Ig,
    IgNomult,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Backprop => Method::Backprop,
            MethodArg::Ig => Method::IntegratedGradients,
            MethodArg::IgNomult => Method::IgNoInputMult,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetsArg {
    TopClass,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AttrOpts {
    #[arg(long, value_enum, default_value = "ig")]
    pub method: MethodArg,
    /// Riemann steps for the IG variants.
    #[arg(long, default_value_t = 32)]
    pub steps: u32,
    #[arg(long, value_enum, default_value = "top-class")]
    pub targets: TargetsArg,
    /// Predictions with a lower top score get no map.
    #[arg(long, default_value_t = 0.1)]
    pub min_score: f64,
}

impl AttrOpts {
    pub fn ig(&self) -> IgOptions {
        IgOptions::with_steps(self.steps)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct XcOpts {
    #[arg(long, default_value_t = 0.1)]
    pub a_thresh: f64,
    /// Box enlargement in meters.
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
}

impl XcOpts {
    pub fn config(&self) -> CliResult<XcConfig> {
        let cfg = XcConfig {
            a_thresh: self.a_thresh,
            margin_m: self.margin,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MatchOpts {
    #[arg(long, default_value_t = 0.1)]
    pub score_thresh: f64,
    /// Per-class IoU thresholds; unnamed classes keep their defaults.
    #[arg(long, default_value = "car=0.5,pedestrian=0.25,cyclist=0.25")]
    pub iou: String,
}

impl MatchOpts {
    pub fn config(&self) -> CliResult<MatchConfig> {
        let mut iou_thresh: BTreeMap<ObjectClass, f64> = MatchConfig::default().iou_thresh;
        for part in self.iou.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| usage(format!("--iou: expected class=value, got {part:?}")))?;
            let class: ObjectClass = name
                .trim()
                .parse()
                .map_err(|e| usage(format!("--iou: {e}")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| usage(format!("--iou: bad value {value:?}")))?;
            iou_thresh.insert(class, v);
        }
        let cfg = MatchConfig {
            score_thresh: self.score_thresh,
            iou_thresh,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MetaOpts {
    #[arg(long, default_value_t = 12)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Training-set size multiplier (copies replace the original).
    #[arg(long, default_value_t = 4)]
    pub duplication: usize,
    /// Half width of the uniform feature noise on training copies.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 3)]
    pub hidden: usize,
    /// Feed XC validity flags to the MLP as extra inputs.
    #[arg(long)]
    pub validity_flags: bool,
}

impl MetaOpts {
    pub fn config(&self) -> CliResult<MetaTrainConfig> {
        let cfg = MetaTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            duplication_factor: self.duplication,
            noise_half_width: self.noise,
            folds: self.folds,
            repeats: self.repeats,
            hidden_width: self.hidden,
            include_validity_flags: self.validity_flags,
            ..MetaTrainConfig::default()
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

pub fn parse_features(list: &str) -> CliResult<Vec<Feature>> {
    let f = Feature::parse_list(list).map_err(|e| usage(e.to_string()))?;
    if f.is_empty() {
        return Err(usage("empty feature list"));
    }
    Ok(f)
}

/// `class`, `points100`, both, or neither (empty string).
pub fn parse_group_by(list: &str) -> CliResult<Vec<Group>> {
    let (mut by_class, mut by_points) = (false, false);
    for tok in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok {
            "class" => by_class = true,
            "points100" => by_points = true,
            other => return Err(usage(format!("--group-by: unknown grouping {other:?}"))),
        }
    }
    Ok(Group::expand(by_class, by_points))
}

const META_FIVE: &str = "top_score,xc_c_minus,xc_c_plus,xc_s_minus,xc_s_plus";
const TABLE: &str = "random,distance,n_points,xc_s_plus,xc_c_plus,xc_s_minus,xc_c_minus,top_score";

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    /// Scene spec JSON; built-in defaults when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub n_frames: usize,
    /// Overrides the spec's rng_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AttributeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Frames directory written by `synth`.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub attr: AttrOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct XcArgs {
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Directory written by `attribute`.
    #[arg(long)]
    pub attribs: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub xc: XcOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub matching: MatchOpts,
    /// Feature table (CSV).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MatchArgs {
    #[arg(long)]
    pub preds: Option<PathBuf>,
    #[arg(long)]
    pub gts: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub matching: MatchOpts,
    /// Match records (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value = "class")]
    pub group_by: String,
    #[arg(long, default_value = TABLE)]
    pub columns: String,
    /// Seed for the random baseline column.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics table (TSV); `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainMetaArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value = META_FIVE)]
    pub subset: String,
    /// Run cross validation per group as well (see `eval --group-by`).
    #[arg(long, default_value = "")]
    pub group_by: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub meta: MetaOpts,
    /// Report (JSON); `-` for stdout.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PipelineArgs {
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub n_frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub attr: AttrOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub xc: XcOpts,
    #[command(flatten)]
    #[serde(flatten)]
    pub matching: MatchOpts,
    #[arg(long, default_value = "class")]
    pub group_by: String,
    #[arg(long, default_value = TABLE)]
    pub columns: String,
    #[arg(long, default_value = META_FIVE)]
    pub subset: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub meta: MetaOpts,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
