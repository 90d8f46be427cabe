//! JSON-lines records for detections, ground truth and match tags.
//!
//! ```text
//! {"frame_id":0,"box":[cx,cy,cz,dx,dy,dz,yaw],"label":"car","scores":[0.91,0.02,0.03],"n_points":120,"distance":14.2}
//! {"frame_id":0,"box":[cx,cy,cz,dx,dy,dz,yaw],"label":"car"}
//! ```
//!
//! Blank lines are skipped. Floats are written in shortest round-trip form.

use std::io::{BufRead, Write};
use std::marker::PhantomData;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::geometry::Box3D;
use crate::matching::{MatchTag, PredictionMatch};
use crate::scene::{Detection, GroundTruth, ObjectClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame_id: u64,
    #[serde(rename = "box")]
    pub bbox: Vec<f64>,
    /// Optional on input; must agree with the top score when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ObjectClass>,
    pub scores: Vec<f64>,
    #[serde(default)]
    pub n_points: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub frame_id: u64,
    #[serde(rename = "box")]
    pub bbox: Vec<f64>,
    pub label: ObjectClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchRecord {
    pub frame_id: u64,
    pub pred_index: u32,
    pub tag: MatchTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_index: Option<usize>,
    pub top_iou: f64,
}

impl MatchRecord {
    pub fn new(frame_id: u64, pred_index: u32, m: &PredictionMatch) -> Self {
        MatchRecord {
            frame_id,
            pred_index,
            tag: m.tag,
            gt_index: m.gt_index,
            top_iou: m.top_iou,
        }
    }
}

fn parse_box(v: &[f64]) -> Result<Box3D, String> {
    let arr: [f64; 7] = v
        .try_into()
        .map_err(|_| format!("box must have 7 values, found {}", v.len()))?;
    Box3D::from_array(arr).map_err(|e| e.to_string())
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection) -> Self {
        DetectionRecord {
            frame_id: d.frame_id,
            bbox: d.bbox.to_array().to_vec(),
            label: ObjectClass::from_index(d.label_index()),
            scores: d.scores.clone(),
            n_points: d.n_points,
            distance: d.distance,
        }
    }

    pub fn into_detection(self) -> Result<Detection, String> {
        let bbox = parse_box(&self.bbox)?;
        if self.scores.len() != ObjectClass::COUNT {
            return Err(format!(
                "scores must have {} values, found {}",
                ObjectClass::COUNT,
                self.scores.len()
            ));
        }
        if let Some(i) = self.scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(format!("score {} out of [0, 1]", self.scores[i]));
        }
        if let Some(d) = self.distance {
            if !d.is_finite() || d < 0.0 {
                return Err(format!("invalid distance {d}"));
            }
        }
        let det = Detection {
            frame_id: self.frame_id,
            bbox,
            scores: self.scores,
            n_points: self.n_points,
            distance: self.distance,
        };
        if let Some(label) = self.label {
            if label.index() != det.label_index() {
                return Err(format!(
                    "label {label} disagrees with top score class {}",
                    ObjectClass::ALL[det.label_index()]
                ));
            }
        }
        Ok(det)
    }
}

impl GroundTruthRecord {
    pub fn from_ground_truth(g: &GroundTruth) -> Self {
        GroundTruthRecord {
            frame_id: g.frame_id,
            bbox: g.bbox.to_array().to_vec(),
            label: g.label,
        }
    }

    pub fn into_ground_truth(self) -> Result<GroundTruth, String> {
        Ok(GroundTruth {
            frame_id: self.frame_id,
            bbox: parse_box(&self.bbox)?,
            label: self.label,
        })
    }
}

/// Streaming JSON-lines reader. Yields one parsed record per non-blank line.
pub struct RecordReader<R, T> {
    lines: std::io::Lines<R>,
    line: usize,
    _marker: PhantomData<T>,
}

impl<R: BufRead, T: DeserializeOwned> RecordReader<R, T> {
    pub fn new(reader: R) -> Self {
        RecordReader {
            lines: reader.lines(),
            line: 0,
            _marker: PhantomData,
        }
    }

    /// Line number of the most recently returned record (1-based).
    pub fn line(&self) -> usize {
        self.line
    }
}

impl<R: BufRead, T: DeserializeOwned> Iterator for RecordReader<R, T> {
    type Item = Result<T, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&text).map_err(|e| FormatError::Parse {
                line: self.line,
                message: e.to_string(),
            }));
        }
    }
}

/// Detections with box and score validation.
pub struct DetectionReader<R> {
    inner: RecordReader<R, DetectionRecord>,
}

impl<R: BufRead> DetectionReader<R> {
    pub fn new(reader: R) -> Self {
        DetectionReader {
            inner: RecordReader::new(reader),
        }
    }
}

impl<R: BufRead> Iterator for DetectionReader<R> {
    type Item = Result<Detection, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.inner.next()?;
        let line = self.inner.line();
        Some(rec.and_then(|r| {
            r.into_detection()
                .map_err(|message| FormatError::Parse { line, message })
        }))
    }
}

pub fn read_detections<R: BufRead>(reader: R) -> Result<Vec<Detection>, FormatError> {
    DetectionReader::new(reader).collect()
}

pub fn read_ground_truths<R: BufRead>(reader: R) -> Result<Vec<GroundTruth>, FormatError> {
    let mut it = RecordReader::<R, GroundTruthRecord>::new(reader);
    let mut out = Vec::new();
    while let Some(rec) = it.next() {
        let line = it.line();
        out.push(
            rec?.into_ground_truth()
                .map_err(|message| FormatError::Parse { line, message })?,
        );
    }
    Ok(out)
}

pub fn read_matches<R: BufRead>(reader: R) -> Result<Vec<MatchRecord>, FormatError> {
    RecordReader::new(reader).collect()
}

fn write_lines<W: Write, T: Serialize>(
    mut w: W,
    items: impl IntoIterator<Item = T>,
) -> Result<(), FormatError> {
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_detections<'a, W: Write>(
    w: W,
    dets: impl IntoIterator<Item = &'a Detection>,
) -> Result<(), FormatError> {
    write_lines(w, dets.into_iter().map(DetectionRecord::from_detection))
}

pub fn write_ground_truths<'a, W: Write>(
    w: W,
    gts: impl IntoIterator<Item = &'a GroundTruth>,
) -> Result<(), FormatError> {
    write_lines(w, gts.into_iter().map(GroundTruthRecord::from_ground_truth))
}

pub fn write_matches<'a, W: Write>(
    w: W,
    recs: impl IntoIterator<Item = &'a MatchRecord>,
) -> Result<(), FormatError> {
    write_lines(w, recs)
}
