use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::MetaError;
use crate::attribution::AttributionMap;
use crate::geometry::GridMeta;
use crate::matching::{categorize, MatchConfig, MatchTag};
use crate::par;
use crate::scene::{Detection, GroundTruth, ObjectClass};
use crate::xc::{xc_scores, XcConfig};

/// One non-ignored prediction. Undefined XC values are stored as 0.0 with
/// the matching `*_valid` flag cleared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub frame_id: u64,
    pub pred_index: u32,
    pub pred_label: ObjectClass,
    pub top_score: f64,
    pub xc_c_minus: f64,
    pub xc_c_plus: f64,
    pub xc_s_minus: f64,
    pub xc_s_plus: f64,
    pub xc_c_minus_valid: bool,
    pub xc_c_plus_valid: bool,
    pub xc_s_minus_valid: bool,
    pub xc_s_plus_valid: bool,
    pub n_points: u32,
    pub distance: f64,
    pub is_tp: bool,
}

/// A per-box scalar column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    TopScore,
    XcCMinus,
    XcCPlus,
    XcSMinus,
    XcSPlus,
    NPoints,
    Distance,
    /// Seeded U(0, 1) per row.
    Random,
}

impl Feature {
    /// Top class score followed by the four XC scores.
    pub const META_FIVE: [Feature; 5] = [
        Feature::TopScore,
        Feature::XcCMinus,
        Feature::XcCPlus,
        Feature::XcSMinus,
        Feature::XcSPlus,
    ];

    /// Column order of the evaluation table.
    pub const TABLE: [Feature; 8] = [
        Feature::Random,
        Feature::Distance,
        Feature::NPoints,
        Feature::XcSPlus,
        Feature::XcCPlus,
        Feature::XcSMinus,
        Feature::XcCMinus,
        Feature::TopScore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::TopScore => "top_score",
            Feature::XcCMinus => "xc_c_minus",
            Feature::XcCPlus => "xc_c_plus",
            Feature::XcSMinus => "xc_s_minus",
            Feature::XcSPlus => "xc_s_plus",
            Feature::NPoints => "n_points",
            Feature::Distance => "distance",
            Feature::Random => "random",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Feature>, MetaError> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = MetaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "top_score" => Feature::TopScore,
            "xc_c_minus" => Feature::XcCMinus,
            "xc_c_plus" => Feature::XcCPlus,
            "xc_s_minus" => Feature::XcSMinus,
            "xc_s_plus" => Feature::XcSPlus,
            "n_points" | "points" => Feature::NPoints,
            "distance" => Feature::Distance,
            "random" => Feature::Random,
            other => return Err(MetaError::UnknownFeature(other.to_string())),
        })
    }
}

impl FeatureRow {
    /// Column value; panics on [`Feature::Random`], which is not stored.
    pub fn value(&self, f: Feature) -> f64 {
        match f {
            Feature::TopScore => self.top_score,
            Feature::XcCMinus => self.xc_c_minus,
            Feature::XcCPlus => self.xc_c_plus,
            Feature::XcSMinus => self.xc_s_minus,
            Feature::XcSPlus => self.xc_s_plus,
            Feature::NPoints => f64::from(self.n_points),
            Feature::Distance => self.distance,
            Feature::Random => panic!("the random feature has no stored value"),
        }
    }

    /// Validity flag for XC columns; other columns are always valid.
    pub fn is_valid(&self, f: Feature) -> bool {
        match f {
            Feature::XcCMinus => self.xc_c_minus_valid,
            Feature::XcCPlus => self.xc_c_plus_valid,
            Feature::XcSMinus => self.xc_s_minus_valid,
            Feature::XcSPlus => self.xc_s_plus_valid,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PointsBucket {
    /// Fewer than 100 points.
    Below100,
    /// 100 points or more.
    AtLeast100,
}

impl PointsBucket {
    pub fn of(n_points: u32) -> Self {
        if n_points < 100 {
            PointsBucket::Below100
        } else {
            PointsBucket::AtLeast100
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PointsBucket::Below100 => "<100",
            PointsBucket::AtLeast100 => ">=100",
        }
    }
}

/// Row filter by predicted class and/or point-count bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Group {
    pub class: Option<ObjectClass>,
    pub points: Option<PointsBucket>,
}

impl Group {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn class(class: ObjectClass) -> Self {
        Self {
            class: Some(class),
            points: None,
        }
    }

    pub fn contains(&self, row: &FeatureRow) -> bool {
        self.class.is_none_or(|c| c == row.pred_label)
            && self
                .points
                .is_none_or(|p| p == PointsBucket::of(row.n_points))
    }

    pub fn name(&self) -> String {
        match (self.class, self.points) {
            (None, None) => "all".into(),
            (Some(c), None) => c.name().into(),
            (None, Some(p)) => p.name().into(),
            (Some(c), Some(p)) => format!("{}{}", c.name(), p.name()),
        }
    }

    /// Groups for a `--group-by` style list: subsets of {"class", "points100"}.
    pub fn expand(by_class: bool, by_points: bool) -> Vec<Group> {
        let mut out = vec![Group::all()];
        let classes: Vec<Option<ObjectClass>> = if by_class {
            ObjectClass::ALL.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        let buckets: Vec<Option<PointsBucket>> = if by_points {
            vec![Some(PointsBucket::Below100), Some(PointsBucket::AtLeast100)]
        } else {
            vec![None]
        };
        for &class in &classes {
            for &points in &buckets {
                let g = Group { class, points };
                if g != Group::all() {
                    out.push(g);
                }
            }
        }
        out
    }
}

/// The six {class} x {points bucket} subsets, in class-major order.
pub fn split_groups(rows: &[FeatureRow]) -> Vec<(Group, Vec<FeatureRow>)> {
    let mut out: Vec<(Group, Vec<FeatureRow>)> = ObjectClass::ALL
        .iter()
        .flat_map(|&c| {
            [PointsBucket::Below100, PointsBucket::AtLeast100].map(|p| {
                (
                    Group {
                        class: Some(c),
                        points: Some(p),
                    },
                    Vec::new(),
                )
            })
        })
        .collect();
    for row in rows {
        let slot = row.pred_label.index() * 2
            + match PointsBucket::of(row.n_points) {
                PointsBucket::Below100 => 0,
                PointsBucket::AtLeast100 => 1,
            };
        out[slot].1.push(row.clone());
    }
    out
}

/// Everything needed to featurize one frame. `attributions[i]` is the map
/// for prediction `i` and its top class.
#[derive(Debug, Clone, Copy)]
pub struct FrameEvidence<'a> {
    pub frame_id: u64,
    pub grid: GridMeta,
    pub preds: &'a [Detection],
    pub gts: &'a [GroundTruth],
    pub attributions: &'a [Option<AttributionMap>],
}

fn frame_rows(
    frame: &FrameEvidence<'_>,
    xc_cfg: &XcConfig,
    match_cfg: &MatchConfig,
) -> Result<Vec<FeatureRow>, MetaError> {
    let outcome = categorize(frame.preds, frame.gts, match_cfg)?;
    let mut rows = Vec::new();
    for (i, (pred, m)) in frame.preds.iter().zip(&outcome.matches).enumerate() {
        if m.tag == MatchTag::Ignore {
            continue;
        }
        let (label, top_score) = pred.top();
        let map = frame
            .attributions
            .get(i)
            .and_then(Option::as_ref)
            .filter(|a| a.target.class_index as usize == label)
            .ok_or(MetaError::MissingAttribution {
                frame_id: frame.frame_id,
                pred_index: i,
            })?;
        let xc = xc_scores(map, &pred.bbox, &frame.grid, xc_cfg)?;
        let (c_minus, c_plus, s_minus, s_plus) = (
            xc.xc_c_minus(),
            xc.xc_c_plus(),
            xc.xc_s_minus(),
            xc.xc_s_plus(),
        );
        rows.push(FeatureRow {
            frame_id: frame.frame_id,
            pred_index: i as u32,
            pred_label: ObjectClass::from_index(label).expect("validated by matching"),
            top_score,
            xc_c_minus: c_minus.unwrap_or(0.0),
            xc_c_plus: c_plus.unwrap_or(0.0),
            xc_s_minus: s_minus.unwrap_or(0.0),
            xc_s_plus: s_plus.unwrap_or(0.0),
            xc_c_minus_valid: c_minus.is_some(),
            xc_c_plus_valid: c_plus.is_some(),
            xc_s_minus_valid: s_minus.is_some(),
            xc_s_plus_valid: s_plus.is_some(),
            n_points: pred.n_points,
            distance: pred.distance_or_range(),
            is_tp: m.tag == MatchTag::Tp,
        });
    }
    Ok(rows)
}

/// One row per non-ignored prediction across all frames, in frame order.
pub fn build_feature_dataset(
    frames: &[FrameEvidence<'_>],
    xc_cfg: &XcConfig,
    match_cfg: &MatchConfig,
) -> Result<Vec<FeatureRow>, MetaError> {
    let per_frame = par::map(frames, |f| frame_rows(f, xc_cfg, match_cfg));
    let mut rows = Vec::new();
    for r in per_frame {
        rows.extend(r?);
    }
    Ok(rows)
}
