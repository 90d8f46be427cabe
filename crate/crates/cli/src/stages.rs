use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;
use xckit::autodiff::{build_model, ModelSpec};
use xckit::io::{
    read_features, write_detections, write_features, write_ground_truths, write_matches,
    write_pseudo_image, write_xcam, MatchRecord,
};
use xckit::matching::{categorize, MatchConfig};
use xckit::meta::{
    build_feature_dataset, cross_validate, CvReport, FeatureRow, FrameEvidence, Group,
    MetaTrainConfig,
};
use xckit::metrics::{evaluate_table, MetricTable};
use xckit::synth::{attribute_predictions, generate_benchmark, toy_detector, SceneSpec};
use xckit::xc::XcConfig;
use xckit::{Method, ModelGraph};

use crate::layout::{self, Frame};
use crate::opts::{
    parse_features, parse_group_by, req, AttrOpts, AttributeArgs, EvalArgs, MatchArgs,
    PipelineArgs, SynthArgs, TrainMetaArgs, XcArgs,
};
use crate::{usage, CliError, CliResult};

fn load_spec(path: Option<&Path>) -> CliResult<SceneSpec> {
    let Some(path) = path else {
        return Ok(SceneSpec::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SceneSpec::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn run_synth(spec: &SceneSpec, n_frames: usize, out: &Path) -> CliResult<()> {
    if n_frames == 0 {
        return Err(usage("--n-frames must be positive"));
    }
    let (frames, manifest) = generate_benchmark(spec, n_frames)?;
    let model = frames.first().map_or_else(
        || toy_detector(spec.grid.height, spec.grid.width).map(Arc::new),
        |f| Ok(Arc::clone(&f.model)),
    )?;
    layout::write_json(&out.join(layout::MODEL), &model.to_spec())?;
    let images = out.join(layout::IMAGES);
    fs::create_dir_all(&images).with_context(|| format!("creating {}", images.display()))?;
    frames.par_iter().try_for_each(|f| {
        let path = layout::image_path(out, f.frame_id);
        write_pseudo_image(&path, &f.image).with_context(|| format!("writing {}", path.display()))
    })?;
    let mut w = layout::create(&out.join(layout::PREDICTIONS))?;
    write_detections(&mut w, frames.iter().flat_map(|f| &f.preds))?;
    let mut w = layout::create(&out.join(layout::GROUND_TRUTH))?;
    write_ground_truths(&mut w, frames.iter().flat_map(|f| &f.gts))?;
    layout::write_json(&out.join(layout::MANIFEST), &manifest)?;
    eprintln!(
        "synth: {} frames, {} TP / {} FP planted -> {}",
        n_frames,
        manifest.total().tp,
        manifest.total().fp,
        out.display()
    );
    Ok(())
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let mut spec = load_spec(a.spec.as_deref())?;
    if let Some(seed) = a.seed {
        spec.rng_seed = seed;
    }
    run_synth(&spec, a.n_frames, req(&a.out, "out")?)
}

fn load_model(path: &Path) -> CliResult<ModelGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec =
        ModelSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(build_model(&spec).with_context(|| format!("building {}", path.display()))?)
}

fn run_attribute(
    model: &ModelGraph,
    frames: &[Frame],
    opts: &AttrOpts,
    out: &Path,
) -> CliResult<usize> {
    let method = Method::from(opts.method);
    if method != Method::Backprop && opts.steps == 0 {
        return Err(usage("--steps must be positive"));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let counts = frames
        .par_iter()
        .map(|f| -> anyhow::Result<usize> {
            let maps =
                attribute_predictions(model, &f.image, &f.preds, method, opts.ig(), opts.min_score)
                    .with_context(|| format!("frame {}", f.frame_id))?;
            let mut n = 0;
            for (i, m) in maps.iter().enumerate() {
                let path = layout::xcam_path(out, f.frame_id, i);
                match m {
                    Some(m) => {
                        write_xcam(&path, m)?;
                        n += 1;
                    }
                    // stale maps from an earlier run would be picked up by `xc`
                    None if path.exists() => fs::remove_file(&path)?,
                    None => {}
                }
            }
            Ok(n)
        })
        .collect::<anyhow::Result<Vec<usize>>>()?;
    Ok(counts.iter().sum())
}

pub fn attribute(a: &AttributeArgs) -> CliResult<()> {
    let model = load_model(req(&a.model, "model")?)?;
    let frames = layout::load_frames(req(&a.frames, "frames")?)?;
    let n = run_attribute(&model, &frames, &a.attr, req(&a.out, "out")?)?;
    eprintln!("attribute: {n} maps over {} frames", frames.len());
    Ok(())
}

fn run_match(
    preds: Vec<xckit::Detection>,
    gts: Vec<xckit::GroundTruth>,
    cfg: &MatchConfig,
    out: &Path,
) -> CliResult<()> {
    let mut gts = layout::by_frame(gts, |g| g.frame_id);
    let mut records = Vec::with_capacity(preds.len());
    for (frame_id, preds) in layout::by_frame(preds, |d| d.frame_id) {
        let gts = gts.remove(&frame_id).unwrap_or_default();
        let outcome = categorize(&preds, &gts, cfg).with_context(|| format!("frame {frame_id}"))?;
        records.extend(
            outcome
                .matches
                .iter()
                .enumerate()
                .map(|(i, m)| MatchRecord::new(frame_id, i as u32, m)),
        );
    }
    let mut w = layout::create(out)?;
    write_matches(&mut w, &records)?;
    eprintln!("match: {} predictions tagged", records.len());
    Ok(())
}

pub fn match_frames(a: &MatchArgs) -> CliResult<()> {
    let cfg = a.matching.config()?;
    let preds = layout::read_preds(req(&a.preds, "preds")?)?;
    let gts = layout::read_gts(req(&a.gts, "gts")?)?;
    run_match(preds, gts, &cfg, req(&a.out, "out")?)
}

fn run_xc(
    frames: &[Frame],
    attribs: &Path,
    xc: &XcConfig,
    m: &MatchConfig,
    out: &Path,
) -> CliResult<Vec<FeatureRow>> {
    let maps = frames
        .par_iter()
        .map(|f| layout::load_maps(attribs, f))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let evidence: Vec<FrameEvidence<'_>> = frames
        .iter()
        .zip(&maps)
        .map(|(f, maps)| FrameEvidence {
            frame_id: f.frame_id,
            grid: f.image.grid,
            preds: &f.preds,
            gts: &f.gts,
            attributions: maps,
        })
        .collect();
    let rows = build_feature_dataset(&evidence, xc, m)?;
    let mut w = layout::create(out)?;
    write_features(&mut w, &rows)?;
    eprintln!("xc: {} feature rows", rows.len());
    Ok(rows)
}

pub fn xc(a: &XcArgs) -> CliResult<()> {
    let (xc, m) = (a.xc.config()?, a.matching.config()?);
    let frames = layout::load_frames(req(&a.frames, "frames")?)?;
    run_xc(
        &frames,
        req(&a.attribs, "attribs")?,
        &xc,
        &m,
        req(&a.out, "out")?,
    )?;
    Ok(())
}

fn read_rows(path: &Path) -> CliResult<Vec<FeatureRow>> {
    Ok(
        read_features(layout::open(path)?)
            .with_context(|| format!("reading {}", path.display()))?,
    )
}

/// Write to `path`, or stdout for `-`.
fn emit(path: &Path, f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> CliResult<()> {
    if path == Path::new("-") {
        let mut out = std::io::stdout().lock();
        f(&mut out)?;
        out.flush()?;
    } else {
        let mut w = layout::create(path)?;
        f(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn run_eval(
    rows: &[FeatureRow],
    columns: &str,
    group_by: &str,
    seed: u64,
) -> CliResult<MetricTable> {
    let features = parse_features(columns)?;
    let groups = parse_group_by(group_by)?;
    if rows.is_empty() {
        return Err(CliError::Data(anyhow::anyhow!("feature table is empty")));
    }
    Ok(evaluate_table(rows, &features, &groups, seed))
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let rows = read_rows(req(&a.features, "features")?)?;
    let table = run_eval(&rows, &a.columns, &a.group_by, a.seed)?;
    emit(&a.out, |w| Ok(table.write_tsv(w)?))
}

#[derive(Debug, Serialize)]
struct MetaReport {
    seed: u64,
    config: MetaTrainConfig,
    groups: Vec<GroupReport>,
}

#[derive(Debug, Serialize)]
struct GroupReport {
    group: String,
    rows: usize,
    /// Absent when the group has too few rows of either class.
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<CvReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
}

fn run_train_meta(
    rows: &[FeatureRow],
    subset: &str,
    group_by: &str,
    cfg: &MetaTrainConfig,
    seed: u64,
) -> CliResult<MetaReport> {
    let features = parse_features(subset)?;
    let groups = parse_group_by(group_by)?;
    let mut out = Vec::with_capacity(groups.len());
    for g in &groups {
        let members: Vec<FeatureRow> = rows.iter().filter(|r| g.contains(r)).cloned().collect();
        let res = cross_validate(&members, &features, cfg, seed);
        // the whole-dataset run must succeed; subgroups may be too small
        if *g == Group::all() {
            if let Err(e) = &res {
                return Err(CliError::Data(anyhow::anyhow!("cross validation: {e}")));
            }
        }
        let (report, skipped) = match res {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(GroupReport {
            group: g.name(),
            rows: members.len(),
            report,
            skipped,
        });
    }
    Ok(MetaReport {
        seed,
        config: cfg.clone(),
        groups: out,
    })
}

pub fn train_meta(a: &TrainMetaArgs) -> CliResult<()> {
    let cfg = a.meta.config()?;
    let rows = read_rows(req(&a.features, "features")?)?;
    let report = run_train_meta(&rows, &a.subset, &a.group_by, &cfg, a.seed)?;
    emit(&a.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn pipeline(a: &PipelineArgs) -> CliResult<()> {
    let out = req(&a.out, "out")?;
    let (xc_cfg, match_cfg, meta_cfg) = (a.xc.config()?, a.matching.config()?, a.meta.config()?);
    parse_features(&a.columns)?;
    parse_features(&a.subset)?;
    parse_group_by(&a.group_by)?;
    let mut spec = load_spec(a.spec.as_deref())?;
    spec.rng_seed = a.seed;

    let frames_dir = out.join("frames");
    run_synth(&spec, a.n_frames, &frames_dir)?;
    let model = load_model(&frames_dir.join(layout::MODEL))?;
    let frames = layout::load_frames(&frames_dir)?;
    let attribs = out.join("attribs");
    let n = run_attribute(&model, &frames, &a.attr, &attribs)?;
    eprintln!("attribute: {n} maps over {} frames", frames.len());
    run_match(
        layout::read_preds(&frames_dir.join(layout::PREDICTIONS))?,
        layout::read_gts(&frames_dir.join(layout::GROUND_TRUTH))?,
        &match_cfg,
        &out.join("matches.jsonl"),
    )?;
    let rows = run_xc(
        &frames,
        &attribs,
        &xc_cfg,
        &match_cfg,
        &out.join("features.csv"),
    )?;
    let table = run_eval(&rows, &a.columns, &a.group_by, a.seed)?;
    emit(&out.join("table.tsv"), |w| Ok(table.write_tsv(w)?))?;
    let report = run_train_meta(&rows, &a.subset, &a.group_by, &meta_cfg, a.seed)?;
    layout::write_json(&out.join("meta.json"), &report)?;
    table
        .write_tsv(std::io::stdout().lock())
        .context("writing table")?;
    Ok(())
}
