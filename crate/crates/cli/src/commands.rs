use std::fmt::Write as _;
use std::path::Path;

use faceaudit::corpus::{load_dataset, Dataset, DatasetView, Filter, Gender};
use faceaudit::equalize::{export_selection, match_images, pairing_report, read_stencil, stencil_hash, write_stencil, MatchOptions};
use faceaudit::facespace::{
    age_histogram, best_image_per_subject, components_for_variance, face_fractions, fit_pca, match_demographics,
    parse_age_bins, recon_errors_csv, sample_to_count, select_low_error, selection_jsonl, variance_curve,
    variance_curve_csv, PcaOptions, SelectOptions,
};
use faceaudit::maskmetrics::{
    diff_heatmap, diff_heatmap_csv, heatmap, heatmap_csv, level_mask, percent_face_histogram, pface_hist_csv,
    BinaryMask, LabelSet,
};
use faceaudit::scorekit::{
    dprime_csv, score_distributions, scores_hist_csv, DPrimeRow, HistogramSeries, PairPolicy, ScoreDistributions,
    ScoreOptions,
};
use faceaudit::synthlab::{generate, SynthConfig};
use serde_json::json;

use crate::args::*;
use crate::output::{say, CliResult, Failure, OutDir, RunRecord};
use crate::plot;
use crate::repro;

pub fn run(cmd: Command) -> CliResult<()> {
    let name = cmd.name();
    match &cmd {
        Command::IngestCheck(a) => ingest_check(a),
        Command::Scores(a) => scores(name, a, false),
        Command::Dprime(a) => scores(name, a, true),
        Command::Heatmap(a) => heatmaps(name, a),
        Command::Pface(a) => pface(name, a),
        Command::LevelMask(a) => level_mask_cmd(name, a),
        Command::Equalize(a) => equalize(name, a),
        Command::Facespace(a) => facespace(name, a),
        Command::FlipSelect(a) => flip_select(name, a),
        Command::DemoMatch(a) => demo_match(name, a),
        Command::Synth(a) => synth(name, a),
        Command::Plot(a) => plot_cmd(a),
        Command::Repro(a) => repro::run(name, a),
    }
}

pub fn load(path: &Path) -> CliResult<Dataset> {
    let (ds, report) = load_dataset(path)?;
    if report.normalization_events() > 0 {
        eprintln!(
            "note: re-normalized {} embeddings in {}",
            report.normalization_events(),
            path.display()
        );
    }
    for w in report.validation.warnings() {
        eprintln!("warning: {} ({} images)", w.name, w.offenders.len());
    }
    Ok(ds)
}

/// Writes `name` and, when plots are on, an SVG of it next to it.
pub fn emit(out: &OutDir, plots: bool, name: &str, csv: &str, kind: PlotKind, title: &str) -> CliResult<()> {
    out.write(name, csv)?;
    if plots {
        let svg_name = format!("{}.svg", name.trim_end_matches(".csv"));
        let source = Path::new(name).file_name().and_then(|s| s.to_str()).unwrap_or(name);
        out.write(&svg_name, plot::render(kind, csv, Some(title), source)?)?;
    }
    Ok(())
}

fn finish(out: OutDir) -> CliResult<()> {
    let path = out.finish()?;
    say(format!("wrote {}", path.display()));
    Ok(())
}

/// Gender groups to report: the one requested, or both.
fn genders(g: Option<Gender>) -> Vec<Gender> {
    match g {
        Some(g) => vec![g],
        None => vec![Gender::F, Gender::M],
    }
}

fn ingest_check(a: &IngestArgs) -> CliResult<()> {
    let result = load_dataset(&a.dataset);
    let (report, ds) = match result {
        Ok((ds, report)) => (report, Some(ds)),
        Err(faceaudit::Error::Validation(v)) => {
            say(serde_json::to_string_pretty(&*v).expect("report serializes"));
            if let Some(dir) = &a.out {
                let out = OutDir::create(dir, a.force)?;
                out.write_json("validation.json", &*v)?;
                RunRecord::new("ingest-check", a).dataset("dataset", &a.dataset)?.write(&out)?;
                finish(out)?;
            }
            return Err(faceaudit::Error::Validation(v).into());
        }
        Err(e) => return Err(e.into()),
    };
    let ds = ds.expect("loaded");
    let summary = json!({
        "images": ds.len(),
        "subjects": ds.view().subject_count(),
        "female_images": ds.select(&Filter::gender(Gender::F)).len(),
        "male_images": ds.select(&Filter::gender(Gender::M)).len(),
        "dim": ds.dim(),
        "height": ds.height(),
        "width": ds.width(),
        "has_images": ds.has_images(),
        "normalized": report.normalized,
        "minor_normalizations": report.minor_normalizations,
        "validation": report.validation,
    });
    say(serde_json::to_string_pretty(&summary).expect("summary serializes"));
    if let Some(dir) = &a.out {
        let out = OutDir::create(dir, a.force)?;
        out.write_json("validation.json", &summary)?;
        RunRecord::new("ingest-check", a).dataset("dataset", &a.dataset)?.write(&out)?;
        finish(out)?;
    }
    Ok(())
}

fn scores(name: &str, a: &ScoresArgs, dprime_only: bool) -> CliResult<()> {
    let out = OutDir::create(&a.run.out, a.run.force)?;
    let ds = load(&a.dataset)?;
    let base = ds.select(&a.filter.without_gender());
    let mut policy = PairPolicy {
        impostor_scope: a.impostor_scope.into(),
        ..PairPolicy::default()
    };
    if let Some(m) = a.max_pairs {
        policy = policy.sampled(m, a.seed);
    }
    let opts = ScoreOptions {
        workers: a.run.workers,
        lo: a.lo,
        hi: a.hi,
        bins: a.bins,
    };
    let groups: Vec<(String, DatasetView<'_>)> = match a.impostor_scope {
        ScopeArg::Within => genders(a.filter.gender)
            .into_iter()
            .map(|g| (g.to_string(), base.select(&Filter::gender(g))))
            .collect(),
        ScopeArg::Cross => {
            if a.filter.gender.is_some() {
                return Err(Failure::Usage("--gender cannot be combined with --impostor-scope cross".into()));
            }
            vec![("FxM".to_string(), base.clone())]
        }
    };
    let mut dists: Vec<(String, ScoreDistributions)> = Vec::new();
    for (g, view) in &groups {
        dists.push((g.clone(), score_distributions(view, policy, opts)?));
    }

    let mut rows: Vec<DPrimeRow> = dists
        .iter()
        .map(|(g, d)| DPrimeRow::compare(format!("{g} genuine vs impostor"), &d.genuine, &d.impostor))
        .collect();
    if dists.len() == 2 {
        let (a0, d0) = &dists[0];
        let (a1, d1) = &dists[1];
        rows.push(DPrimeRow::compare(format!("impostor {a0} vs {a1}"), &d0.impostor, &d1.impostor));
        rows.push(DPrimeRow::compare(format!("genuine {a0} vs {a1}"), &d0.genuine, &d1.genuine));
    }
    out.write("dprime.csv", dprime_csv(&rows))?;
    if !dprime_only {
        let mut series = Vec::new();
        for (g, d) in &dists {
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
        }
        emit(
            &out,
            a.run.plots,
            "scores_hist.csv",
            &scores_hist_csv(&series),
            PlotKind::HistOverlay,
            "Impostor and genuine distributions",
        )?;
    }
    for (g, d) in &dists {
        if d.no_genuine {
            eprintln!("warning: group {g} has no genuine pairs");
        }
    }
    RunRecord::new(name, a)
        .dataset("dataset", &a.dataset)?
        .seed("pair_sampling", a.seed)
        .write(&out)?;
    finish(out)
}

fn heatmaps(name: &str, a: &HeatmapArgs) -> CliResult<()> {
    let out = OutDir::create(&a.run.out, a.run.force)?;
    let ds = load(&a.dataset)?;
    let base = ds.select(&a.filter.without_gender());
    let mut maps = Vec::new();
    for g in genders(a.filter.gender) {
        let h = heatmap(&base.select(&Filter::gender(g)), a.labels, a.run.workers)?;
        emit(
            &out,
            a.run.plots,
            &format!("heatmap_{g}.csv"),
            &heatmap_csv(&h),
            PlotKind::Heatmap,
            &format!("Face frequency, {g} (n={})", h.n()),
        )?;
        maps.push((g, h));
    }
    let mut summary = serde_json::Map::new();
    for (g, h) in &maps {
        summary.insert(format!("images_{g}"), json!(h.n()));
    }
    if let [(_, hf), (_, hm)] = maps.as_slice() {
        let d = diff_heatmap(hm, hf)?;
        emit(
            &out,
            a.run.plots,
            "diff_heatmap.csv",
            &diff_heatmap_csv(&d),
            PlotKind::DiffHeatmap,
            "Face frequency difference (M - F)",
        )?;
        summary.insert("max_abs".into(), json!(d.max_abs()));
        summary.insert("mean_abs".into(), json!(d.mean_abs()));
    }
    out.write_json("summary.json", &summary)?;
    RunRecord::new(name, a).dataset("dataset", &a.dataset)?.write(&out)?;
    finish(out)
}

fn pface(name: &str, a: &PfaceArgs) -> CliResult<()> {
    let out = OutDir::create(&a.run.out, a.run.force)?;
    let ds = load(&a.dataset)?;
    let base = ds.select(&a.filter.without_gender());
    let mut hists = Vec::new();
    let mut summary = serde_json::Map::new();
    for g in genders(a.filter.gender) {
        let view = base.select(&Filter::gender(g));
        let fr = face_fractions(&view, a.labels);
        let mean = if fr.is_empty() {
            None
        } else {
            Some(fr.iter().sum::<f64>() / fr.len() as f64)
        };
        summary.insert(format!("mean_face_fraction_{g}"), json!(mean));
        summary.insert(format!("images_{g}"), json!(view.len()));
        hists.push((g.to_string(), percent_face_histogram(&view, a.labels, a.bins)?));
    }
    let groups: Vec<(&str, _)> = hists.iter().map(|(g, h)| (g.as_str(), h)).collect();
    emit(
        &out,
        a.run.plots,
        "pface_hist.csv",
        &pface_hist_csv(&groups),
        PlotKind::HistOverlay,
        "Per-image face fraction",
    )?;
    out.write_json("summary.json", &summary)?;
    RunRecord::new(name, a).dataset("dataset", &a.dataset)?.write(&out)?;
    finish(out)
}

fn stencil_csv(m: &BinaryMask) -> String {
    let mut s = String::from("row,col,value\n");
    for r in 0..m.height() {
        for c in 0..m.width() {
            let _ = writeln!(s, "{r},{c},{}", u8::from(m.at(r, c)));
        }
    }
    s
}

fn level_mask_cmd(name: &str, a: &LevelMaskArgs) -> CliResult<()> {
    let out = OutDir::create(&a.run.out, a.run.force)?;
    let ds = load(&a.dataset)?;
    let mut filter = a.filter.to_filter();
    filter.gender = Some(a.filter.gender.unwrap_or(Gender::F));
    let view = ds.select(&filter);
    let h = heatmap(&view, a.labels, a.run.workers)?;
    let m = level_mask(&h, a.level)?;
    write_stencil(&out.path("stencil.msk")?, &m)?;
    emit(&out, a.run.plots, "heatmap.csv", &heatmap_csv(&h), PlotKind::Heatmap, &format!("Face frequency, {}", filter.label()))?;
    emit(
        &out,
        a.run.plots,
        "stencil.csv",
        &stencil_csv(&m),
        PlotKind::Heatmap,
        &format!("Level mask at {}", a.level),
    )?;
    out.write_json(
        "summary.json",
        &json!({
            "group": filter.label(),
            "images": h.n(),
            "level": a.level,
            "pixels": m.count_ones(),
            "fraction": m.count_ones() as f64 / m.len() as f64,
            "stencil_sha256": stencil_hash(&m)?,
        }),
    )?;
    RunRecord::new(name, a).dataset("dataset", &a.dataset)?.write(&out)?;
    finish(out)
}

/// Stencil from a file, or the level mask of the female heatmap.
fn resolve_stencil(s: &StencilArgs, ds: &Dataset, female: &DatasetView<'_>, labels: LabelSet, workers: usize) -> CliResult<BinaryMask> {
    match &s.stencil {
        Some(p) => {
            let m = read_stencil(p)?;
            if m.height() != ds.height() || m.width() != ds.width() {
                return Err(faceaudit::Error::DimensionMismatch {
                    expected: format!("{}x{} stencil", ds.height(), ds.width()),
                    got: format!("{}x{}", m.height(), m.width()),
                }
                .into());
            }
            Ok(m)
        }
        None => Ok(level_mask(&heatmap(female, labels, workers)?, s.level)?),
    }
}

fn add_stencil_input(rec: RunRecord, s: &StencilArgs) -> CliResult<RunRecord> {
    match &s.stencil {
        Some(p) => rec.file("stencil", p),
        None => Ok(rec),
    }
}

fn equalize(name: &str, a: &EqualizeArgs) -> CliResult<()> {
    let out = OutDir::create(&a.run.out, a.run.force)?;
    let ds = load(&a.dataset)?;
    let base = ds.select(&a.group_filter().to_filter());
    let female = base.select(&Filter::gender(Gender::F));
    let male = base.select(&Filter::gender(Gender::M));
    let stencil = resolve_stencil(&a.stencil, &ds, &female, a.labels, a.run.workers)?;
    let opts = MatchOptions {
        mode: a.mode.into(),
        face_labels: a.labels,
        with_replacement: a.with_replacement,
        workers: a.run.workers,
    };
    let pairing = match_images(&female, &male, &stencil, opts)?;
    let report = pairing_report(&female, &male, &pairing, &stencil, a.labels, a.budget)?;
    export_selection(&pairing, &stencil, out.dir())?;
    emit(
        &out,
        a.run.plots,
        "diff_heatmap.csv",
        &diff_heatmap_csv(&report.diff),
        PlotKind::DiffHeatmap,
        "Residual face frequency difference after equalization (M - F)",
    )?;
    out.write_json(
        "report.json",
        &json!({
            "pairs": pairing.len(),
            "female_images": female.len(),
            "male_candidates": male.len(),
            "total_iou": pairing.total_iou(),
            "mean_iou": if pairing.is_empty() { 0.0 } else { pairing.total_iou() / pairing.len() as f64 },
            "males_distinct": pairing.males_distinct(),
            "stencil_pixels": stencil.count_ones(),
            "max_abs": report.max_abs,
            "mean_abs": report.mean_abs,
            "budget": report.budget,
            "pass": report.pass,
        }),
    )?;
    if !report.pass {
        eprintln!(
            "warning: residual max |diff| {} exceeds budget {}",
            report.max_abs, report.budget
        );
    }
    let rec = add_stencil_input(RunRecord::new(name, a).dataset("dataset", &a.dataset)?, &a.stencil)?;
    rec.write(&out)?;
    finish(out)
}

fn per_subject<'a>(view: DatasetView<'a>, on: bool, labels: LabelSet) -> DatasetView<'a> {
    if on {
        best_image_per_subject(&view, labels)
    } else {
        view
    }
}

fn require_images(ds: &Dataset) -> CliResult<()> {
    if ds.has_images() {
        Ok(())
    } else {
        Err(Failure::Data("dataset has no pixel data (images.bin)".into()))
    }
}

fn facespace(name: &str, a: &FacespaceArgs) -> CliResult<()> {
    let out = OutDir::create(&a.run.out, a.run.force)?;
    let ds = load(&a.dataset)?;
    require_images(&ds)?;
    let base = ds.select(
        &FilterArgs {
            gender: None,
            cohort: a.cohort.clone(),
            age_min: a.age_min,
            age_max: a.age_max,
        }
        .to_filter(),
    );
    let female_all = base.select(&Filter::gender(Gender::F));
    let stencil = resolve_stencil(&a.stencil, &ds, &female_all, a.labels, a.run.workers)?;
    let mut female = per_subject(female_all, a.per_subject, a.labels);
    let mut male = per_subject(base.select(&Filter::gender(Gender::M)), a.per_subject, a.labels);
    if a.balance {
        let n = female.len().min(male.len());
        female = sample_to_count(&female, n, a.seed)?;
        male = sample_to_count(&male, n, a.seed)?;
    }
    let pca = PcaOptions {
        route: a.route.into(),
        workers: a.run.workers,
        ..PcaOptions::default()
    };
    let fs_f = fit_pca(&female, &stencil, pca)?;
    let fs_m = fit_pca(&male, &stencil, pca)?;
    let (cf, cm) = (variance_curve(&fs_f)?, variance_curve(&fs_m)?);
    let (kf, km) = (
        components_for_variance(&fs_f, a.target)?,
        components_for_variance(&fs_m, a.target)?,
    );
    emit(
        &out,
        a.run.plots,
        "variance_curve.csv",
        &variance_curve_csv(&[("F", &cf), ("M", &cm)]),
        PlotKind::Curve,
        "PCA on eigenfaces",
    )?;
    write_stencil(&out.path("stencil.msk")?, &stencil)?;
    out.write_json(
        "summary.json",
        &json!({
            "target": a.target,
            "components": { "F": kf, "M": km },
            "images": { "F": female.len(), "M": male.len() },
            "rank": { "F": fs_f.k(), "M": fs_m.k() },
            "total_variance": { "F": fs_f.total_variance(), "M": fs_m.total_variance() },
            "route": { "F": fs_f.route(), "M": fs_m.route() },
            "stencil_pixels": stencil.count_ones(),
        }),
    )?;
    let rec = add_stencil_input(RunRecord::new(name, a).dataset("dataset", &a.dataset)?, &a.stencil)?;
    rec.seed("balance", a.seed).write(&out)?;
    finish(out)
}

fn flip_select(name: &str, a: &FlipSelectArgs) -> CliResult<()> {
    let out = OutDir::create(&a.run.out, a.run.force)?;
    let ds = load(&a.dataset)?;
    require_images(&ds)?;
    let base = ds.select(
        &FilterArgs {
            gender: None,
            cohort: a.cohort.clone(),
            age_min: a.age_min,
            age_max: a.age_max,
        }
        .to_filter(),
    );
    let female_all = base.select(&Filter::gender(Gender::F));
    let stencil = resolve_stencil(&a.stencil, &ds, &female_all, a.labels, a.run.workers)?;
    let female = per_subject(female_all, a.per_subject, a.labels);
    let male = per_subject(base.select(&Filter::gender(Gender::M)), a.per_subject, a.labels);
    let keep = a.keep.unwrap_or(female.len());
    let pca = PcaOptions {
        workers: a.run.workers,
        ..PcaOptions::default()
    };
    let joint = female.union(&male);
    let sel = select_low_error(
        &male,
        keep,
        a.target,
        &stencil,
        SelectOptions {
            pca,
            ranking_basis: a.joint_basis.then_some(&joint),
        },
    )?;
    let fs_f = fit_pca(&female, &stencil, pca)?;
    let (cf, cs) = (variance_curve(&fs_f)?, variance_curve(&sel.refit)?);
    let (kf, ks) = (
        components_for_variance(&fs_f, a.report_target)?,
        components_for_variance(&sel.refit, a.report_target)?,
    );
    out.write("recon_errors.csv", recon_errors_csv(&sel.errors, sel.k))?;
    out.write("selection.jsonl", selection_jsonl(&sel.selected))?;
    emit(
        &out,
        a.run.plots,
        "variance_curve.csv",
        &variance_curve_csv(&[("F", &cf), ("M_selected", &cs)]),
        PlotKind::Curve,
        "PCA on eigenfaces after low-error selection",
    )?;
    write_stencil(&out.path("stencil.msk")?, &stencil)?;
    out.write_json(
        "summary.json",
        &json!({
            "ranking_target": a.target,
            "ranking_components": sel.k,
            "candidates": male.len(),
            "kept": sel.selected.len(),
            "report_target": a.report_target,
            "components": { "F": kf, "M_selected": ks },
            "images": { "F": female.len(), "M_selected": sel.selected.len() },
        }),
    )?;
    let rec = add_stencil_input(RunRecord::new(name, a).dataset("dataset", &a.dataset)?, &a.stencil)?;
    rec.write(&out)?;
    finish(out)
}

fn demo_match(name: &str, a: &DemoMatchArgs) -> CliResult<()> {
    let out = OutDir::create(&a.run.out, a.run.force)?;
    let bins = parse_age_bins(&a.bins)?;
    let ds = load(&a.dataset)?;
    let ref_ds = match &a.reference_dataset {
        Some(p) => Some(load(p)?),
        None => None,
    };
    let group = |g: Option<Gender>, c: &Option<String>| Filter {
        gender: g,
        cohort: c.clone(),
        ..Filter::default()
    };
    let source = ds.select(&group(a.source_gender, &a.source_cohort));
    let reference = ref_ds
        .as_ref()
        .unwrap_or(&ds)
        .select(&group(a.reference_gender, &a.reference_cohort));
    let matched = match_demographics(&source, &reference, &bins, a.seed)?;
    out.write("selection.jsonl", selection_jsonl(&matched))?;
    let mut csv = String::from("group,bin,count\n");
    for (label, view) in [("reference", &reference), ("source", &source), ("matched", &matched)] {
        let h = age_histogram(view, &bins);
        for b in &bins {
            let _ = writeln!(csv, "{label},{b},{}", h.get(b).copied().unwrap_or(0));
        }
    }
    out.write("age_hist.csv", csv)?;
    out.write_json(
        "summary.json",
        &json!({
            "source_images": source.len(),
            "reference_images": reference.len(),
            "matched_images": matched.len(),
            "matched_subjects": matched.subject_count(),
        }),
    )?;
    let mut rec = RunRecord::new(name, a).dataset("dataset", &a.dataset)?;
    if let Some(p) = &a.reference_dataset {
        rec = rec.dataset("reference_dataset", p)?;
    }
    rec.seed("sampling", a.seed).write(&out)?;
    finish(out)
}

pub fn synth_config(a: &SynthArgs) -> CliResult<SynthConfig> {
    let mut cfg = SynthConfig::preset(&a.preset)?;
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth(name: &str, a: &SynthArgs) -> CliResult<()> {
    let cfg = synth_config(a)?;
    let out = OutDir::create(&a.out, a.force)?;
    let ds = generate(&cfg, out.dir())?;
    out.write("synth.cfg", cfg.to_text())?;
    let mut rec = RunRecord::new(name, a);
    if let Some(p) = &a.config {
        rec = rec.file("config", p)?;
    }
    rec.seed("synth", cfg.seed).write(&out)?;
    eprintln!("generated {} images", ds.len());
    finish(out)
}

fn plot_cmd(a: &PlotArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.input)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", a.input.display())))?;
    let source = a
        .input
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("input");
    let svg = plot::render(a.kind, &text, a.title.as_deref(), source)?;
    std::fs::write(&a.out, svg).map_err(|e| Failure::Data(format!("cannot write {}: {e}", a.out.display())))?;
    say(format!("wrote {}", a.out.display()));
    Ok(())
}
