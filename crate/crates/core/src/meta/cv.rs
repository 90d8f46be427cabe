use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    augment, normalize, train_mlp, Feature, FeatureRow, MetaError, MetaTrainConfig, Sample,
};
use crate::metrics::{report, MetricReport, ScoredSample};
use crate::{par, rng};

/// Bookkeeping that lets tests assert the validation fold never leaks
/// into normalization statistics or augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub train_rows: usize,
    pub val_rows: usize,
    /// Rows that contributed to the normalization statistics.
    pub stats_rows: usize,
    /// Rows that received augmentation noise.
    pub noised_rows: usize,
    /// Validation rows whose index also appears in the training split.
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub repeat: usize,
    pub fold: usize,
    pub report: MetricReport,
    pub audit: FoldAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub features: Vec<Feature>,
    /// Average over all (repeat, fold) runs; counts describe the full dataset.
    pub mean: MetricReport,
    pub runs: Vec<FoldResult>,
}

/// Feature matrix in canonical column order, so permuting `subset` never
/// changes the result.
fn materialize(
    rows: &[FeatureRow],
    subset: &[Feature],
    cfg: &MetaTrainConfig,
    seed: u64,
) -> Result<(Vec<Feature>, Vec<Sample>), MetaError> {
    let mut features = subset.to_vec();
    features.sort();
    features.dedup();
    if features.is_empty() {
        return Err(MetaError::EmptyFeatureSubset);
    }
    let mut random = rng::rng_for(seed, &[rng::str_key("random-feature")]);
    let samples = rows
        .iter()
        .map(|r| {
            let u: f64 = random.gen();
            let mut x: Vec<f64> = features
                .iter()
                .map(|&f| if f == Feature::Random { u } else { r.value(f) })
                .collect();
            if cfg.include_validity_flags {
                x.extend(
                    features
                        .iter()
                        .filter(|f| {
                            matches!(
                                f,
                                Feature::XcCMinus
                                    | Feature::XcCPlus
                                    | Feature::XcSMinus
                                    | Feature::XcSPlus
                            )
                        })
                        .map(|&f| if r.is_valid(f) { 1.0 } else { 0.0 }),
                );
            }
            Sample {
                features: x,
                label: r.is_tp,
            }
        })
        .collect();
    Ok((features, samples))
}

/// Stratified fold id per row for one repeat.
fn assign_folds(samples: &[Sample], folds: usize, seed: u64, repeat: usize) -> Vec<usize> {
    let mut rng = rng::rng_for(seed, &[rng::str_key("folds"), repeat as u64]);
    let mut fold_of = vec![0; samples.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..samples.len())
            .filter(|&i| samples[i].label == class)
            .collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            fold_of[i] = k % folds;
        }
    }
    fold_of
}

fn run_fold(
    samples: &[Sample],
    fold_of: &[usize],
    fold: usize,
    repeat: usize,
    cfg: &MetaTrainConfig,
    seed: u64,
) -> Result<FoldResult, MetaError> {
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) =
        (0..samples.len()).partition(|&i| fold_of[i] != fold);
    let train: Vec<Sample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let val: Vec<Sample> = val_idx.iter().map(|&i| samples[i].clone()).collect();

    let (train_z, stats) = normalize(&train, None)?;
    let (val_z, _) = normalize(&val, Some(&stats))?;
    let run_seed = rng::derive_seed(seed, &[repeat as u64, fold as u64]);
    let augmented = augment(&train_z, cfg, run_seed);
    let mlp = train_mlp(&augmented, cfg, run_seed)?;
    let scored: Vec<ScoredSample> = mlp
        .scores(&val_z)?
        .into_iter()
        .zip(&val_z)
        .map(|(score, s)| ScoredSample::new(score, s.label))
        .collect();

    let train_set: std::collections::HashSet<usize> = train_idx.iter().copied().collect();
    Ok(FoldResult {
        repeat,
        fold,
        report: report(&scored)?,
        audit: FoldAudit {
            train_rows: train.len(),
            val_rows: val.len(),
            stats_rows: train.len(),
            noised_rows: augmented.len(),
            overlap: val_idx.iter().filter(|i| train_set.contains(i)).count(),
        },
    })
}

/// Repeated stratified k-fold cross-validation of the MLP on `subset`.
///
/// Each repeat reshuffles the fold assignment. Within a fold the training
/// split is z-scored with its own statistics, duplicated with noise and used
/// to train; the validation split is z-scored with the training statistics
/// and scored untouched. Every (repeat, fold) run draws from its own keyed
/// stream, so parallel and serial execution agree.
pub fn cross_validate(
    rows: &[FeatureRow],
    subset: &[Feature],
    cfg: &MetaTrainConfig,
    seed: u64,
) -> Result<CvReport, MetaError> {
    cfg.validate()?;
    let (features, samples) = materialize(rows, subset, cfg, seed)?;
    let n_pos = samples.iter().filter(|s| s.label).count();
    let n_neg = samples.len() - n_pos;
    if n_pos < cfg.folds || n_neg < cfg.folds {
        return Err(MetaError::InsufficientRows {
            needed: cfg.folds,
            n_pos,
            n_neg,
        });
    }
    let subset_key = features.iter().fold(0u64, |acc, f| {
        acc.wrapping_mul(31).wrapping_add(rng::str_key(f.name()))
    });
    let seed = rng::derive_seed(seed, &[subset_key]);

    let assignments: Vec<Vec<usize>> = (0..cfg.repeats)
        .map(|r| assign_folds(&samples, cfg.folds, seed, r))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.repeats)
        .flat_map(|r| (0..cfg.folds).map(move |f| (r, f)))
        .collect();
    let runs = par::map(&jobs, |&(r, f)| {
        run_fold(&samples, &assignments[r], f, r, cfg, seed)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let k = runs.len() as f64;
    let mean = MetricReport {
        auroc: runs.iter().map(|r| r.report.auroc).sum::<f64>() / k,
        aupr: runs.iter().map(|r| r.report.aupr).sum::<f64>() / k,
        aupr_op: runs.iter().map(|r| r.report.aupr_op).sum::<f64>() / k,
        n_pos,
        n_neg,
    };
    Ok(CvReport {
        features,
        mean,
        runs,
    })
}
