//! Synthetic replica of the full analysis: impostor distributions,
//! information equalization and face-space dimensionality.

use faceaudit::equalize::{export_selection, MatchMode};
use faceaudit::facespace::{recon_errors_csv, selection_jsonl, variance_curve_csv};
use faceaudit::maskmetrics::diff_heatmap_csv;
use faceaudit::scorekit::{dprime_csv, scores_hist_csv, DPrimeRow, HistogramSeries, ScoreDistributions};
use faceaudit::synthlab::replica::{
    equalization_replica, facespace_replica, group_distributions, GroupScores, EQUALIZATION_BUDGET,
    FACE_SPACE_TARGET, SELECTION_TARGET,
};
use faceaudit::synthlab::{build, SynthConfig};
use faceaudit::Gender;
use serde_json::json;

use crate::args::{PlotKind, ReproArgs};
use crate::commands::emit;
use crate::output::{say, CliResult, OutDir, RunRecord};

fn hist_and_dprime(
    out: &OutDir,
    plots: bool,
    dir: &str,
    groups: &[(&str, &ScoreDistributions)],
    title: &str,
) -> CliResult<()> {
    let mut series = Vec::new();
    let mut rows = Vec::new();
    for (g, d) in groups {
        series.push(HistogramSeries {
            series: "genuine",
            group: g,
            hist: &d.genuine,
        });
        series.push(HistogramSeries {
            series: "impostor",
            group: g,
            hist: &d.impostor,
        });
        rows.push(DPrimeRow::compare(format!("{g} genuine vs impostor"), &d.genuine, &d.impostor));
    }
    for pair in groups.chunks(2) {
        if let [(a, da), (b, db)] = pair {
            rows.push(DPrimeRow::compare(format!("impostor {a} vs {b}"), &da.impostor, &db.impostor));
            rows.push(DPrimeRow::compare(format!("genuine {a} vs {b}"), &da.genuine, &db.genuine));
        }
    }
    emit(
        out,
        plots,
        &format!("{dir}/scores_hist.csv"),
        &scores_hist_csv(&series),
        PlotKind::HistOverlay,
        title,
    )?;
    out.write(&format!("{dir}/dprime.csv"), dprime_csv(&rows))
}

pub fn run(name: &str, a: &ReproArgs) -> CliResult<()> {
    let out = OutDir::create(&a.run.out, a.run.force)?;
    let workers = a.run.workers;
    let plots = a.run.plots;

    let mut imp_cfg = SynthConfig::preset("impostor")?;
    imp_cfg.seed = a.seed;
    let imp_ds = build(&imp_cfg)?;
    let imp_f = group_distributions(&imp_ds, Gender::F, workers)?;
    let imp_m = group_distributions(&imp_ds, Gender::M, workers)?;
    out.write("impostor/synth.cfg", imp_cfg.to_text())?;
    hist_and_dprime(
        &out,
        plots,
        "impostor",
        &[("F", &imp_f), ("M", &imp_m)],
        "Impostor and genuine distributions",
    )?;
    let (sf, sm) = (GroupScores::from_distributions(&imp_f), GroupScores::from_distributions(&imp_m));
    drop(imp_ds);

    let mut occ_cfg = SynthConfig::preset("occluded")?;
    occ_cfg.seed = a.seed;
    let occ_ds = build(&occ_cfg)?;
    out.write("equalization/synth.cfg", occ_cfg.to_text())?;
    let eq = equalization_replica(&occ_cfg, &occ_ds, MatchMode::GreedyGlobal, workers)?;
    let before_f = group_distributions(&occ_ds, Gender::F, workers)?;
    let before_m = group_distributions(&occ_ds, Gender::M, workers)?;
    let after_f = group_distributions(&eq.masked, Gender::F, workers)?;
    let after_m = group_distributions(&eq.masked, Gender::M, workers)?;
    hist_and_dprime(
        &out,
        plots,
        "equalization",
        &[
            ("F_before", &before_f),
            ("M_before", &before_m),
            ("F_after", &after_f),
            ("M_after", &after_m),
        ],
        "Distributions before and after information equalization",
    )?;
    export_selection(&eq.pairing, &eq.stencil, &out.path("equalization")?)?;
    emit(
        &out,
        plots,
        "equalization/diff_heatmap.csv",
        &diff_heatmap_csv(&eq.report.diff),
        PlotKind::DiffHeatmap,
        "Residual face frequency difference (M - F)",
    )?;

    let fsr = facespace_replica(&occ_ds, a.seed, workers)?;
    emit(
        &out,
        plots,
        "facespace/variance_curve.csv",
        &variance_curve_csv(&[
            ("F", &fsr.female_curve),
            ("M", &fsr.male_curve),
            ("M_selected", &fsr.survivor_curve),
        ]),
        PlotKind::Curve,
        "PCA on eigenfaces",
    )?;
    out.write("facespace/recon_errors.csv", recon_errors_csv(&fsr.errors, fsr.selection_k))?;
    out.write("facespace/selection.jsonl", selection_jsonl(&fsr.survivors))?;

    let summary = json!({
        "seed": a.seed,
        "impostor": {
            "F": sf,
            "M": sm,
            "female_impostor_mean_higher": sf.impostor_mean > sm.impostor_mean,
            "female_dprime_lower": matches!((sf.d_prime, sm.d_prime), (Some(f), Some(m)) if f < m),
        },
        "equalization": {
            "pairs": eq.pairing.len(),
            "total_iou": eq.pairing.total_iou(),
            "stencil_pixels": eq.stencil.count_ones(),
            "max_abs": eq.report.max_abs,
            "mean_abs": eq.report.mean_abs,
            "budget": EQUALIZATION_BUDGET,
            "before": { "F": eq.before_female, "M": eq.before_male },
            "after": { "F": eq.after_female, "M": eq.after_male },
            "female_genuine_lower_before": eq.before_female.genuine_mean < eq.before_male.genuine_mean,
            "female_genuine_at_least_male_after": eq.after_female.genuine_mean >= eq.after_male.genuine_mean,
            "residual_within_budget": eq.report.max_abs <= EQUALIZATION_BUDGET,
        },
        "facespace": {
            "target": FACE_SPACE_TARGET,
            "images": { "F": fsr.female.len(), "M": fsr.male.len(), "M_selected": fsr.survivors.len() },
            "components": { "F": fsr.k95_female, "M": fsr.k95_male, "M_selected": fsr.k95_survivors },
            "selection_target": SELECTION_TARGET,
            "selection_components": fsr.selection_k,
            "female_fewer_components": fsr.k95_female < fsr.k95_male,
            "selected_at_most_female": fsr.k95_survivors <= fsr.k95_female,
        },
    });
    out.write_json("summary.json", &summary)?;
    RunRecord::new(name, a).seed("synth", a.seed).seed("facespace_sampling", a.seed).write(&out)?;
    let path = out.finish()?;
    say(format!("wrote {}", path.display()));
    Ok(())
}
