//! Explanation concentration (XC) scores.
//!
//! For each sign, with `A` the aggregated attribution magnitude, `I` the
//! significance indicator `A >= a_thresh` and `M` the membership mask of the
//! margin-enlarged predicted box:
//!
//! ```text
//! s = sum(A * I * M)    S = sum(A * I)    XC_s = s / S
//! c = sum(I * M)        C = sum(I)        XC_c = c / C
//! ```
//!
//! A ratio with a zero denominator is undefined and reported as `None`.

use serde::{Deserialize, Serialize};

use crate::attribution::{aggregate_signed, AggregatedMap, AttributionMap, Sign};
use crate::geometry::{Box3D, GeometryError, GridMeta};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum XcError {
    #[error("attribution map is {map_h}x{map_w}, grid is {grid_h}x{grid_w}")]
    GridMismatch {
        map_h: usize,
        map_w: usize,
        grid_h: usize,
        grid_w: usize,
    },
    #[error("invalid XC config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XcConfig {
    pub a_thresh: f64,
    pub margin_m: f64,
}

impl Default for XcConfig {
    fn default() -> Self {
        Self {
            a_thresh: 0.1,
            margin_m: 0.2,
        }
    }
}

impl XcConfig {
    pub fn validate(&self) -> Result<(), XcError> {
        if !(self.a_thresh >= 0.0 && self.a_thresh.is_finite()) {
            return Err(XcError::InvalidConfig(format!(
                "a_thresh {} must be >= 0",
                self.a_thresh
            )));
        }
        if !(self.margin_m >= 0.0 && self.margin_m.is_finite()) {
            return Err(XcError::InvalidConfig(format!(
                "margin {} must be >= 0",
                self.margin_m
            )));
        }
        Ok(())
    }
}

/// Accumulators for one attribution sign.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SignAccumulators {
    /// Significant magnitude inside the box.
    pub sum_in: f64,
    /// Significant magnitude over the whole grid.
    pub sum_total: f64,
    /// Significant pixels inside the box.
    pub count_in: u64,
    /// Significant pixels over the whole grid.
    pub count_total: u64,
}

impl SignAccumulators {
    pub fn xc_sum(&self) -> Option<f64> {
        (self.sum_total > 0.0).then(|| (self.sum_in / self.sum_total).min(1.0))
    }

    pub fn xc_count(&self) -> Option<f64> {
        (self.count_total > 0).then(|| self.count_in as f64 / self.count_total as f64)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct XcScores {
    pub positive: SignAccumulators,
    pub negative: SignAccumulators,
}

impl XcScores {
    pub fn xc_s_plus(&self) -> Option<f64> {
        self.positive.xc_sum()
    }
    pub fn xc_c_plus(&self) -> Option<f64> {
        self.positive.xc_count()
    }
    pub fn xc_s_minus(&self) -> Option<f64> {
        self.negative.xc_sum()
    }
    pub fn xc_c_minus(&self) -> Option<f64> {
        self.negative.xc_count()
    }
}

/// `agg >= a_thresh`, per pixel.
pub fn significance_mask(agg: &AggregatedMap, a_thresh: f64) -> Vec<bool> {
    agg.values.iter().map(|&v| v >= a_thresh).collect()
}

/// Accumulate one sign given a precomputed box membership mask.
pub fn accumulate(agg: &AggregatedMap, membership: &[bool], a_thresh: f64) -> SignAccumulators {
    let mut acc = SignAccumulators::default();
    for (&v, &inside) in agg.values.iter().zip(membership) {
        if v >= a_thresh {
            acc.sum_total += v;
            acc.count_total += 1;
            if inside {
                acc.sum_in += v;
                acc.count_in += 1;
            }
        }
    }
    acc
}

pub fn xc_scores(
    map: &AttributionMap,
    bbox: &Box3D,
    grid: &GridMeta,
    cfg: &XcConfig,
) -> Result<XcScores, XcError> {
    cfg.validate()?;
    let (h, w, _) = map.dims();
    if (h, w) != (grid.height, grid.width) {
        return Err(XcError::GridMismatch {
            map_h: h,
            map_w: w,
            grid_h: grid.height,
            grid_w: grid.width,
        });
    }
    let membership = bbox
        .enlarge(cfg.margin_m)?
        .project_to_bev()
        .membership_mask(grid);
    Ok(XcScores {
        positive: accumulate(
            &aggregate_signed(map, Sign::Positive),
            &membership,
            cfg.a_thresh,
        ),
        negative: accumulate(
            &aggregate_signed(map, Sign::Negative),
            &membership,
            cfg.a_thresh,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{AttributionTarget, Method};
    use crate::autodiff::Tensor;

    fn map(h: usize, w: usize, c: usize, data: Vec<f32>) -> AttributionMap {
        AttributionMap {
            values: Tensor::new(vec![h, w, c], data).unwrap(),
            target: AttributionTarget {
                box_index: 0,
                class_index: 0,
                output: 0,
            },
            method: Method::Backprop,
            ig_steps: 0,
            baseline_id: 0,
        }
    }

    fn agg(values: Vec<f64>) -> AggregatedMap {
        AggregatedMap {
            height: 1,
            width: values.len(),
            sign: Sign::Positive,
            values,
        }
    }

    #[test]
    fn significance_is_inclusive() {
        assert_eq!(significance_mask(&agg(vec![0.1]), 0.1), vec![true]);
        assert_eq!(
            significance_mask(&agg(vec![0.05, 0.5, 0.1, 0.0]), 0.1),
            vec![false, true, true, false]
        );
        assert!(significance_mask(&agg(vec![0.0, 0.3]), 0.0)
            .iter()
            .all(|&b| b));
    }

    /// 4x4 grid, 1 m pixels; the box covers the 2x2 block of rows 1..3, cols 1..3.
    fn hand_case() -> (AttributionMap, Box3D, GridMeta) {
        let grid = GridMeta::new(4, 4, 0.0, 0.0, 1.0).unwrap();
        let mut v = vec![0.0f32; 16];
        v[4 + 1] = 0.5;
        v[4 + 2] = 0.3;
        v[2 * 4 + 1] = 0.2;
        v[2 * 4 + 2] = 0.05;
        v[3 * 4 + 3] = 0.4;
        let bbox = Box3D::new(2.0, 2.0, 0.0, 2.0, 2.0, 1.0, 0.0).unwrap();
        (map(4, 4, 1, v), bbox, grid)
    }

    #[test]
    fn hand_derived_example() {
        let (m, bbox, grid) = hand_case();
        let cfg = XcConfig {
            a_thresh: 0.1,
            margin_m: 0.2,
        };
        let xc = xc_scores(&m, &bbox, &grid, &cfg).unwrap();
        assert!((xc.positive.sum_in - 1.0).abs() < 1e-7);
        assert!((xc.positive.sum_total - 1.4).abs() < 1e-7);
        assert_eq!((xc.positive.count_in, xc.positive.count_total), (3, 4));
        assert!((xc.xc_s_plus().unwrap() - 1.0 / 1.4).abs() < 1e-7);
        assert_eq!(xc.xc_c_plus(), Some(0.75));
        assert_eq!(xc.xc_c_minus(), None);
        assert_eq!(xc.xc_s_minus(), None);
    }

    #[test]
    fn all_inside_and_all_zero() {
        let (m, _, grid) = hand_case();
        let big = Box3D::new(2.0, 2.0, 0.0, 4.0, 4.0, 1.0, 0.0).unwrap();
        let xc = xc_scores(&m, &big, &grid, &XcConfig::default()).unwrap();
        assert_eq!((xc.xc_s_plus(), xc.xc_c_plus()), (Some(1.0), Some(1.0)));
        let zero = map(4, 4, 1, vec![0.0; 16]);
        let xc = xc_scores(&zero, &big, &grid, &XcConfig::default()).unwrap();
        assert!([
            xc.xc_s_plus(),
            xc.xc_c_plus(),
            xc.xc_s_minus(),
            xc.xc_c_minus()
        ]
        .iter()
        .all(Option::is_none));
    }

    #[test]
    fn rejects_mismatch_and_bad_config() {
        let (m, bbox, _) = hand_case();
        let grid = GridMeta::new(5, 4, 0.0, 0.0, 1.0).unwrap();
        assert!(matches!(
            xc_scores(&m, &bbox, &grid, &XcConfig::default()),
            Err(XcError::GridMismatch { .. })
        ));
        let (m, bbox, grid) = hand_case();
        let bad = XcConfig {
            a_thresh: -1.0,
            margin_m: 0.2,
        };
        assert!(xc_scores(&m, &bbox, &grid, &bad).is_err());
    }
}
