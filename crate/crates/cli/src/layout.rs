//! On-disk layout shared by the stages.
//!
//! ```text
//! <frames>/model.json          toy detector, parameters inline
//! <frames>/images/000007.xcpi  pseudo image of frame 7
//! <frames>/predictions.jsonl
//! <frames>/ground_truth.jsonl
//! <frames>/manifest.json       planted TP / FP counts
//! <attribs>/000007_0002.xcam   map for prediction 2 of frame 7
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use xckit::io::{read_detections, read_ground_truths, read_pseudo_image, read_xcam};
use xckit::{AttributionMap, Detection, GroundTruth, PseudoImage};

pub const MODEL: &str = "model.json";
pub const IMAGES: &str = "images";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const GROUND_TRUTH: &str = "ground_truth.jsonl";
pub const MANIFEST: &str = "manifest.json";

pub fn image_path(frames: &Path, frame_id: u64) -> PathBuf {
    frames.join(IMAGES).join(format!("{frame_id:06}.xcpi"))
}

pub fn xcam_path(attribs: &Path, frame_id: u64, pred_index: usize) -> PathBuf {
    attribs.join(format!("{frame_id:06}_{pred_index:04}.xcam"))
}

pub fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_preds(path: &Path) -> anyhow::Result<Vec<Detection>> {
    read_detections(open(path)?).with_context(|| format!("reading {}", path.display()))
}

pub fn read_gts(path: &Path) -> anyhow::Result<Vec<GroundTruth>> {
    read_ground_truths(open(path)?).with_context(|| format!("reading {}", path.display()))
}

/// Records grouped by frame, keeping file order within a frame.
pub fn by_frame<T>(items: Vec<T>, frame_of: impl Fn(&T) -> u64) -> BTreeMap<u64, Vec<T>> {
    let mut out: BTreeMap<u64, Vec<T>> = BTreeMap::new();
    for it in items {
        out.entry(frame_of(&it)).or_default().push(it);
    }
    out
}

pub struct Frame {
    pub frame_id: u64,
    pub image: PseudoImage,
    pub preds: Vec<Detection>,
    pub gts: Vec<GroundTruth>,
}

fn frame_ids(frames: &Path) -> anyhow::Result<Vec<u64>> {
    let dir = frames.join(IMAGES);
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        let Some(stem) = name.strip_suffix(".xcpi") else {
            continue;
        };
        ids.push(
            stem.parse()
                .with_context(|| format!("bad image name {name}"))?,
        );
    }
    ids.sort_unstable();
    Ok(ids)
}

pub fn load_frames(frames: &Path) -> anyhow::Result<Vec<Frame>> {
    let ids = frame_ids(frames)?;
    let mut preds = by_frame(read_preds(&frames.join(PREDICTIONS))?, |d| d.frame_id);
    let mut gts = by_frame(read_gts(&frames.join(GROUND_TRUTH))?, |g| g.frame_id);
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let path = image_path(frames, id);
        out.push(Frame {
            frame_id: id,
            image: read_pseudo_image(&path)
                .with_context(|| format!("reading {}", path.display()))?,
            preds: preds.remove(&id).unwrap_or_default(),
            gts: gts.remove(&id).unwrap_or_default(),
        });
    }
    if let Some(id) = preds.keys().chain(gts.keys()).next() {
        bail!("records reference frame {id}, which has no image");
    }
    Ok(out)
}

/// One slot per prediction; `None` where no map file exists.
pub fn load_maps(attribs: &Path, frame: &Frame) -> anyhow::Result<Vec<Option<AttributionMap>>> {
    (0..frame.preds.len())
        .map(|i| {
            let path = xcam_path(attribs, frame.frame_id, i);
            if path.exists() {
                read_xcam(&path)
                    .map(Some)
                    .with_context(|| format!("reading {}", path.display()))
            } else {
                Ok(None)
            }
        })
        .collect()
}
