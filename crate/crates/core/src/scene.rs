//! Frame-level data: pseudo images, detections and ground truth.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::geometry::{Box3D, GridMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [
        ObjectClass::Car,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
    ];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown object class `{0}`")]
pub struct UnknownClass(pub String);

impl FromStr for ObjectClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "car" | "vehicle" => Ok(ObjectClass::Car),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            "cyclist" => Ok(ObjectClass::Cyclist),
            _ => Err(UnknownClass(s.to_string())),
        }
    }
}

/// A predicted box with per-class sigmoid scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: u64,
    pub bbox: Box3D,
    /// One score per [`ObjectClass`], indexed by `ObjectClass::index`.
    pub scores: Vec<f64>,
    pub n_points: u32,
    pub distance: Option<f64>,
}

impl Detection {
    /// (argmax class, max score); ties resolve to the lowest class index.
    pub fn top(&self) -> (usize, f64) {
        self.scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &s)| {
                if s > best.1 {
                    (i, s)
                } else {
                    best
                }
            })
    }

    pub fn top_score(&self) -> f64 {
        self.top().1
    }

    pub fn label_index(&self) -> usize {
        self.top().0
    }

    /// Stored distance, else the 3D norm of the box center.
    pub fn distance_or_range(&self) -> f64 {
        self.distance.unwrap_or_else(|| self.bbox.range())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub frame_id: u64,
    pub bbox: Box3D,
    pub label: ObjectClass,
}

/// `height x width x channels` BEV feature grid with its metric placement.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage {
    pub features: Tensor,
    pub grid: GridMeta,
}

impl PseudoImage {
    pub fn channels(&self) -> usize {
        self.features.shape()[2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_parsing_and_argmax() {
        assert_eq!("Vehicle".parse::<ObjectClass>().unwrap(), ObjectClass::Car);
        assert!("truck".parse::<ObjectClass>().is_err());
        let d = Detection {
            frame_id: 0,
            bbox: Box3D::new(3.0, 4.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap(),
            scores: vec![0.2, 0.7, 0.7],
            n_points: 0,
            distance: None,
        };
        assert_eq!(d.top(), (1, 0.7));
        assert!((d.distance_or_range() - 5.0).abs() < 1e-12);
    }
}
