//! Threshold-free binary classification metrics over per-box scores.
//!
//! Both curves group tied scores into a single threshold step, so results do
//! not depend on sample order. ROC area uses the trapezoid rule (equal to the
//! Mann-Whitney statistic with ties counted as one half); precision-recall
//! area uses the average-precision step rule `sum (R_k - R_{k-1}) * P_k`.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::meta::{Feature, FeatureRow, Group};
use crate::rng;
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("need both classes, got {n_pos} positives and {n_neg} negatives")]
    DegenerateClassBalance { n_pos: usize, n_neg: usize },
    #[error("no samples of the positive class")]
    NoPositives,
    #[error("empty sample")]
    EmptySample,
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub is_positive: bool,
}

impl ScoredSample {
    pub fn new(score: f64, is_positive: bool) -> Self {
        Self { score, is_positive }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositiveClass {
    /// TP boxes are the positive instances (AUPR).
    TpAsPositive,
    /// FP boxes are positive and low scores rank first (AUPR_op).
    FpAsPositive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub aupr: f64,
    pub aupr_op: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check_finite(samples: &[ScoredSample]) -> Result<(), MetricError> {
    match samples.iter().position(|s| !s.score.is_finite()) {
        Some(i) => Err(MetricError::NonFiniteScore(i)),
        None => Ok(()),
    }
}

/// (positives, negatives) per distinct score, highest score first.
fn tie_groups(samples: &[ScoredSample]) -> Vec<(u64, u64)> {
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last: Option<f64> = None;
    for s in sorted {
        if last != Some(s.score) {
            groups.push((0, 0));
            last = Some(s.score);
        }
        let g = groups.last_mut().expect("pushed");
        if s.is_positive {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

pub fn auroc(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    check_finite(samples)?;
    let n_pos = samples.iter().filter(|s| s.is_positive).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::DegenerateClassBalance { n_pos, n_neg });
    }
    // twice the trapezoid area, in integer units
    let (mut tp, mut fp, mut twice_area) = (0u128, 0u128, 0u128);
    for (p, n) in tie_groups(samples) {
        let (p, n) = (u128::from(p), u128::from(n));
        twice_area += n * (2 * tp + p);
        tp += p;
        fp += n;
    }
    debug_assert_eq!(fp as usize, n_neg);
    Ok(twice_area as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

pub fn aupr(samples: &[ScoredSample], positive: PositiveClass) -> Result<f64, MetricError> {
    check_finite(samples)?;
    let owned: Vec<ScoredSample>;
    let samples = match positive {
        PositiveClass::TpAsPositive => samples,
        PositiveClass::FpAsPositive => {
            owned = samples
                .iter()
                .map(|s| ScoredSample::new(-s.score, !s.is_positive))
                .collect();
            &owned
        }
    };
    let n_pos = samples.iter().filter(|s| s.is_positive).count();
    if n_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let (mut tp, mut fp, mut ap) = (0u64, 0u64, 0.0f64);
    for (p, n) in tie_groups(samples) {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / n_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap.min(1.0))
}

/// AUROC, AUPR and AUPR_op together.
pub fn report(samples: &[ScoredSample]) -> Result<MetricReport, MetricError> {
    let n_pos = samples.iter().filter(|s| s.is_positive).count();
    Ok(MetricReport {
        auroc: auroc(samples)?,
        aupr: aupr(samples, PositiveClass::TpAsPositive)?,
        aupr_op: aupr(samples, PositiveClass::FpAsPositive)?,
        n_pos,
        n_neg: samples.len() - n_pos,
    })
}

/// Two-sample Kolmogorov-Smirnov statistic: `sup_t |F_a(t) - F_b(t)|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySample);
    }
    for (i, v) in a.iter().chain(b).enumerate() {
        if !v.is_finite() {
            return Err(MetricError::NonFiniteScore(i));
        }
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = 0.0f64;
    while i < na && j < nb {
        let t = match a[i].partial_cmp(&b[j]) {
            Some(Ordering::Greater) => b[j],
            _ => a[i],
        };
        while i < na && a[i] <= t {
            i += 1;
        }
        while j < nb && b[j] <= t {
            j += 1;
        }
        sup = sup.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    // once one sample is exhausted the gap only shrinks toward zero
    Ok(sup)
}

/// Feature values for the rows of `group`. The random column draws
/// U(0, 1) per row from a stream keyed by `seed`.
pub fn feature_samples(
    rows: &[FeatureRow],
    feature: Feature,
    group: &Group,
    seed: u64,
) -> Vec<ScoredSample> {
    let mut random = rng::rng_for(seed, &[rng::str_key("random-feature")]);
    rows.iter()
        .filter_map(|r| {
            // draw for every row so the random column does not depend on the group
            let u: f64 = random.gen();
            group.contains(r).then(|| {
                let score = match feature {
                    Feature::Random => u,
                    f => r.value(f),
                };
                ScoredSample::new(score, r.is_tp)
            })
        })
        .collect()
}

pub fn evaluate_feature(
    rows: &[FeatureRow],
    feature: Feature,
    group: &Group,
    seed: u64,
) -> Result<MetricReport, MetricError> {
    report(&feature_samples(rows, feature, group, seed))
}

/// Metrics for several features across several groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub features: Vec<Feature>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub group: Group,
    pub n_pos: usize,
    pub n_neg: usize,
    /// One entry per feature; `None` when the group is degenerate.
    pub reports: Vec<Option<MetricReport>>,
}

pub fn evaluate_table(
    rows: &[FeatureRow],
    features: &[Feature],
    groups: &[Group],
    seed: u64,
) -> MetricTable {
    let table_rows = crate::par::map(groups, |g| {
        let members: Vec<&FeatureRow> = rows.iter().filter(|r| g.contains(r)).collect();
        let n_pos = members.iter().filter(|r| r.is_tp).count();
        TableRow {
            group: g.clone(),
            n_pos,
            n_neg: members.len() - n_pos,
            reports: features
                .iter()
                .map(|&f| evaluate_feature(rows, f, g, seed).ok())
                .collect(),
        }
    });
    MetricTable {
        features: features.to_vec(),
        rows: table_rows,
    }
}

impl MetricTable {
    /// Tab-separated layout: one line per (metric, group), one column per feature.
    ///
    /// ```text
    /// metric  group  n_pos  n_neg  <feature>...
    /// ```
    ///
    /// Metrics are `auroc`, `aupr`, `aupr_op`; values use 6 decimals and `NA`
    /// marks degenerate groups.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "metric\tgroup\tn_pos\tn_neg")?;
        for f in &self.features {
            write!(out, "\t{}", f.name())?;
        }
        writeln!(out)?;
        type Column = (&'static str, fn(&MetricReport) -> f64);
        let metrics: [Column; 3] = [
            ("auroc", |r| r.auroc),
            ("aupr", |r| r.aupr),
            ("aupr_op", |r| r.aupr_op),
        ];
        for (name, get) in metrics {
            for row in &self.rows {
                write!(
                    out,
                    "{name}\t{}\t{}\t{}",
                    row.group.name(),
                    row.n_pos,
                    row.n_neg
                )?;
                for r in &row.reports {
                    match r {
                        Some(r) => write!(out, "\t{:.6}", get(r))?,
                        None => write!(out, "\tNA")?,
                    }
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}
