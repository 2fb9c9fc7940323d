use faceaudit::equalize::{export_selection, load_selection, match_images, MatchOptions};
use faceaudit::facespace::{best_image_per_subject, fit_pca, select_low_error, PcaOptions, SelectOptions};
use faceaudit::maskmetrics::{heatmap, level_mask, LabelSet};
use faceaudit::scorekit::{score_distributions, PairPolicy, ScoreOptions};
use faceaudit::synthlab::{generate, regenerate_masked, SynthConfig};
use faceaudit::{load_dataset, DatasetView, Filter, Gender};

fn small_config() -> SynthConfig {
    let mut cfg = SynthConfig::preset("occluded").unwrap();
    cfg.female.subjects = 30;
    cfg.male.subjects = 60;
    cfg.female.images_per_subject = 3;
    cfg.male.images_per_subject = 3;
    cfg.seed = 21;
    cfg
}

#[test]
fn generated_directory_loads_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let built = generate(&small_config(), tmp.path()).unwrap();
    let (ds, report) = load_dataset(tmp.path()).unwrap();
    assert!(report.validation.is_ok());
    assert!(report.normalized.is_empty());
    assert_eq!(ds.len(), built.len());
    assert_eq!(ds.records(), built.records());
    assert_eq!(ds.embeddings().data, built.embeddings().data);
    assert!(ds.has_images());
}

#[test]
fn heatmap_matches_hand_count() {
    let tmp = tempfile::tempdir().unwrap();
    generate(&small_config(), tmp.path()).unwrap();
    let (ds, _) = load_dataset(tmp.path()).unwrap();
    let female = ds.select(&Filter::gender(Gender::F));
    let face = LabelSet::default();
    let h = heatmap(&female, face, 1).unwrap();
    let px = ds.height() * ds.width();
    for i in (0..px).step_by(37) {
        let hits = female.rows().iter().filter(|&&r| face.contains(ds.labels(r)[i])).count();
        assert!((h.value(i) - hits as f64 / female.len() as f64).abs() < 1e-12, "pixel {i}");
    }
}

#[test]
fn equalization_hand_off_through_disk() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    generate(&cfg, &tmp.path().join("raw")).unwrap();
    let (ds, _) = load_dataset(&tmp.path().join("raw")).unwrap();
    let female = ds.select(&Filter::gender(Gender::F));
    let male = ds.select(&Filter::gender(Gender::M));
    let stencil = level_mask(&heatmap(&female, LabelSet::default(), 0).unwrap(), 0.10).unwrap();
    let pairing = match_images(&female, &male, &stencil, MatchOptions::default()).unwrap();
    assert_eq!(pairing.len(), female.len());
    assert!(pairing.males_distinct());

    export_selection(&pairing, &stencil, &tmp.path().join("sel")).unwrap();
    let (pairing2, stencil2) = load_selection(&tmp.path().join("sel")).unwrap();
    assert_eq!(pairing2, pairing);
    assert_eq!(stencil2, stencil);

    regenerate_masked(&cfg, &stencil2, &pairing2, &tmp.path().join("masked")).unwrap();
    let (masked, _) = load_dataset(&tmp.path().join("masked")).unwrap();
    assert_eq!(masked.len(), 2 * pairing.len());
    for r in 0..masked.len() {
        for (i, &l) in masked.labels(r).iter().enumerate() {
            assert!(stencil.get(i) || l == 0, "label outside stencil");
        }
    }
    // female images fit inside the stencil, so their embeddings do not move
    for id in pairing.female_ids() {
        let a = ds.embedding(ds.row_of(&id).unwrap());
        let b = masked.embedding(masked.row_of(&id).unwrap());
        assert_eq!(a, b, "{id}");
    }
    let ids = pairing.male_ids();
    let sel = DatasetView::from_image_ids(&masked, &ids).unwrap();
    let d = score_distributions(&sel, PairPolicy::default(), ScoreOptions::default()).unwrap();
    assert_eq!(d.genuine.n() + d.impostor.n(), (ids.len() * (ids.len() - 1) / 2) as u64);
}

#[test]
fn low_error_selection_keeps_the_requested_count() {
    let tmp = tempfile::tempdir().unwrap();
    generate(&small_config(), tmp.path()).unwrap();
    let (ds, _) = load_dataset(tmp.path()).unwrap();
    let face = LabelSet::default();
    let female = best_image_per_subject(&ds.select(&Filter::gender(Gender::F)), face);
    let male = best_image_per_subject(&ds.select(&Filter::gender(Gender::M)), face);
    assert_eq!(female.len(), 30);
    assert_eq!(male.len(), 60);
    let stencil = level_mask(&heatmap(&female, face, 0).unwrap(), 0.10).unwrap();
    let sel = select_low_error(&male, female.len(), 0.8, &stencil, SelectOptions::default()).unwrap();
    assert_eq!(sel.selected.len(), female.len());
    assert_eq!(sel.errors.len(), male.len());
    let cut = sel
        .selected
        .rows()
        .iter()
        .map(|r| sel.errors.iter().find(|e| e.row == *r).unwrap().rmse)
        .fold(0.0, f64::max);
    let dropped_min = sel
        .errors
        .iter()
        .filter(|e| !sel.selected.rows().contains(&e.row))
        .map(|e| e.rmse)
        .fold(f64::INFINITY, f64::min);
    assert!(cut <= dropped_min);
    let refit = fit_pca(&sel.selected, &stencil, PcaOptions::default()).unwrap();
    assert_eq!(refit.eigenvalues(), sel.refit.eigenvalues());
}
