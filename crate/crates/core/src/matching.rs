//! TP / FP / Ignore categorization of the predictions in one frame.
//!
//! A prediction whose top class score is below `score_thresh` is ignored.
//! Otherwise it is a TP when the ground truth with the highest 3D IoU meets
//! the threshold for the predicted class and carries the same label, and an
//! FP in every other case. Ground truths are not claimed exclusively, so
//! several predictions may match the same object.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::iou_3d;
use crate::scene::{Detection, GroundTruth, ObjectClass};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchError {
    #[error("no per-class IoU thresholds configured")]
    EmptyClassThresholds,
    #[error("no IoU threshold for label index {0}")]
    UnknownLabel(usize),
    #[error("invalid match config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub score_thresh: f64,
    pub iou_thresh: BTreeMap<ObjectClass, f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            score_thresh: 0.1,
            iou_thresh: [
                (ObjectClass::Car, 0.5),
                (ObjectClass::Pedestrian, 0.25),
                (ObjectClass::Cyclist, 0.25),
            ]
            .into_iter()
            .collect(),
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.iou_thresh.is_empty() {
            return Err(MatchError::EmptyClassThresholds);
        }
        if !(0.0..=1.0).contains(&self.score_thresh) {
            return Err(MatchError::InvalidConfig(format!(
                "score_thresh {} outside [0, 1]",
                self.score_thresh
            )));
        }
        for (class, &t) in &self.iou_thresh {
            if !(t > 0.0 && t <= 1.0) {
                return Err(MatchError::InvalidConfig(format!(
                    "IoU threshold {t} for {class} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    fn threshold(&self, label: usize) -> Result<f64, MatchError> {
        ObjectClass::from_index(label)
            .and_then(|c| self.iou_thresh.get(&c).copied())
            .ok_or(MatchError::UnknownLabel(label))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchTag {
    Tp,
    Fp,
    Ignore,
}

impl MatchTag {
    pub fn name(self) -> &'static str {
        match self {
            MatchTag::Tp => "tp",
            MatchTag::Fp => "fp",
            MatchTag::Ignore => "ignore",
        }
    }
}

/// Tag of one prediction, plus the best-IoU ground truth when it was considered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatch {
    pub tag: MatchTag,
    /// Index into the frame's ground truths; set for TPs.
    pub gt_index: Option<usize>,
    pub top_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub matches: Vec<PredictionMatch>,
}

impl MatchOutcome {
    pub fn count(&self, tag: MatchTag) -> usize {
        self.matches.iter().filter(|m| m.tag == tag).count()
    }
}

fn match_one(
    pred: &Detection,
    gts: &[GroundTruth],
    cfg: &MatchConfig,
) -> Result<PredictionMatch, MatchError> {
    let (label, top_score) = pred.top();
    let thresh = cfg.threshold(label)?;
    if top_score < cfg.score_thresh {
        return Ok(PredictionMatch {
            tag: MatchTag::Ignore,
            gt_index: None,
            top_iou: 0.0,
        });
    }
    // strict `>` keeps the lowest index on ties
    let best = gts
        .iter()
        .enumerate()
        .map(|(i, gt)| (i, iou_3d(&pred.bbox, &gt.bbox)))
        .fold(None, |best: Option<(usize, f64)>, (i, iou)| match best {
            Some((_, b)) if iou <= b => best,
            _ => Some((i, iou)),
        });
    Ok(match best {
        Some((i, iou)) if iou >= thresh && gts[i].label.index() == label => PredictionMatch {
            tag: MatchTag::Tp,
            gt_index: Some(i),
            top_iou: iou,
        },
        Some((_, iou)) => PredictionMatch {
            tag: MatchTag::Fp,
            gt_index: None,
            top_iou: iou,
        },
        None => PredictionMatch {
            tag: MatchTag::Fp,
            gt_index: None,
            top_iou: 0.0,
        },
    })
}

pub fn categorize(
    preds: &[Detection],
    gts: &[GroundTruth],
    cfg: &MatchConfig,
) -> Result<MatchOutcome, MatchError> {
    cfg.validate()?;
    let matches = preds
        .iter()
        .map(|p| match_one(p, gts, cfg))
        .collect::<Result<_, _>>()?;
    Ok(MatchOutcome { matches })
}
