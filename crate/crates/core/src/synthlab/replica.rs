//! End-to-end experiments on generated cohorts: impostor-distribution
//! comparison, information equalization with re-scoring, and face-space
//! dimensionality with low-error selection.

use serde::Serialize;

use crate::corpus::{Dataset, DatasetView, Filter, Gender};
use crate::equalize::{match_images, pairing_report, EqualizationReport, MatchMode, MatchOptions, Pairing};
use crate::error::Result;
use crate::facespace::{
    best_image_per_subject, components_for_variance, fit_pca, sample_to_count, select_low_error, variance_curve,
    PcaOptions, ReconError, SelectOptions, VarianceCurve,
};
use crate::maskmetrics::{heatmap, level_mask, BinaryMask, LabelSet, DEFAULT_LEVEL};
use crate::scorekit::{d_prime, score_distributions, PairPolicy, ScoreDistributions, ScoreOptions};

use super::{regenerate, SynthConfig};

pub const EQUALIZATION_BUDGET: f64 = 0.05;
pub const FACE_SPACE_TARGET: f64 = 0.95;
pub const SELECTION_TARGET: f64 = 0.80;

/// Within-group score summary.
#[derive(Clone, Debug, Serialize)]
pub struct GroupScores {
    pub genuine_mean: f64,
    pub impostor_mean: f64,
    /// Genuine vs impostor separation; `None` when undefined.
    pub d_prime: Option<f64>,
    pub genuine_pairs: u64,
    pub impostor_pairs: u64,
}

impl GroupScores {
    pub fn from_distributions(d: &ScoreDistributions) -> Self {
        GroupScores {
            genuine_mean: d.genuine.mean(),
            impostor_mean: d.impostor.mean(),
            d_prime: d_prime(&d.genuine, &d.impostor).ok(),
            genuine_pairs: d.genuine.n(),
            impostor_pairs: d.impostor.n(),
        }
    }
}

pub fn group_distributions(ds: &Dataset, gender: Gender, workers: usize) -> Result<ScoreDistributions> {
    score_distributions(
        &ds.select(&Filter::gender(gender)),
        PairPolicy::default(),
        ScoreOptions::default().with_workers(workers),
    )
}

pub fn group_scores(ds: &Dataset, gender: Gender, workers: usize) -> Result<GroupScores> {
    Ok(GroupScores::from_distributions(&group_distributions(ds, gender, workers)?))
}

#[derive(Clone, Debug, Serialize)]
pub struct ImpostorReplica {
    pub female: GroupScores,
    pub male: GroupScores,
}

pub fn impostor_replica(ds: &Dataset, workers: usize) -> Result<ImpostorReplica> {
    Ok(ImpostorReplica {
        female: group_scores(ds, Gender::F, workers)?,
        male: group_scores(ds, Gender::M, workers)?,
    })
}

/// Level mask of the female face heatmap.
pub fn female_stencil(ds: &Dataset, level: f64, workers: usize) -> Result<BinaryMask> {
    let hf = heatmap(&ds.select(&Filter::gender(Gender::F)), LabelSet::default(), workers)?;
    level_mask(&hf, level)
}

pub struct EqualizationReplica {
    pub stencil: BinaryMask,
    pub pairing: Pairing,
    pub report: EqualizationReport,
    pub before_female: GroupScores,
    pub before_male: GroupScores,
    pub after_female: GroupScores,
    pub after_male: GroupScores,
    /// Paired images regenerated under the stencil.
    pub masked: Dataset,
}

pub fn equalization_replica(cfg: &SynthConfig, ds: &Dataset, mode: MatchMode, workers: usize) -> Result<EqualizationReplica> {
    let female = ds.select(&Filter::gender(Gender::F));
    let male = ds.select(&Filter::gender(Gender::M));
    let stencil = female_stencil(ds, DEFAULT_LEVEL, workers)?;
    let opts = MatchOptions {
        mode,
        workers,
        ..MatchOptions::default()
    };
    let pairing = match_images(&female, &male, &stencil, opts)?;
    let report = pairing_report(&female, &male, &pairing, &stencil, LabelSet::default(), EQUALIZATION_BUDGET)?;
    let masked = regenerate(cfg, &stencil, &pairing)?;
    Ok(EqualizationReplica {
        before_female: group_scores(ds, Gender::F, workers)?,
        before_male: group_scores(ds, Gender::M, workers)?,
        after_female: group_scores(&masked, Gender::F, workers)?,
        after_male: group_scores(&masked, Gender::M, workers)?,
        stencil,
        pairing,
        report,
        masked,
    })
}

pub struct FaceSpaceReplica<'a> {
    pub stencil: BinaryMask,
    pub female: DatasetView<'a>,
    pub male: DatasetView<'a>,
    pub female_curve: VarianceCurve,
    pub male_curve: VarianceCurve,
    pub k95_female: usize,
    pub k95_male: usize,
    /// Components at the selection target on the full male candidate set.
    pub selection_k: usize,
    pub errors: Vec<ReconError>,
    pub survivors: DatasetView<'a>,
    pub survivor_curve: VarianceCurve,
    pub k95_survivors: usize,
}

/// One best image per subject; males subsampled to the female count for the
/// comparison and, separately, filtered down to that count by low
/// reconstruction error.
pub fn facespace_replica(ds: &Dataset, seed: u64, workers: usize) -> Result<FaceSpaceReplica<'_>> {
    let stencil = female_stencil(ds, DEFAULT_LEVEL, workers)?;
    let labels = LabelSet::default();
    let female = best_image_per_subject(&ds.select(&Filter::gender(Gender::F)), labels);
    let male_pool = best_image_per_subject(&ds.select(&Filter::gender(Gender::M)), labels);
    let male = sample_to_count(&male_pool, female.len(), seed)?;
    let pca = PcaOptions {
        workers,
        ..PcaOptions::default()
    };
    let fs_f = fit_pca(&female, &stencil, pca)?;
    let fs_m = fit_pca(&male, &stencil, pca)?;
    let sel = select_low_error(
        &male_pool,
        female.len(),
        SELECTION_TARGET,
        &stencil,
        SelectOptions {
            pca,
            ranking_basis: None,
        },
    )?;
    Ok(FaceSpaceReplica {
        female_curve: variance_curve(&fs_f)?,
        male_curve: variance_curve(&fs_m)?,
        k95_female: components_for_variance(&fs_f, FACE_SPACE_TARGET)?,
        k95_male: components_for_variance(&fs_m, FACE_SPACE_TARGET)?,
        selection_k: sel.k,
        errors: sel.errors,
        survivor_curve: variance_curve(&sel.refit)?,
        k95_survivors: components_for_variance(&sel.refit, FACE_SPACE_TARGET)?,
        survivors: sel.selected,
        stencil,
        female,
        male,
    })
}
