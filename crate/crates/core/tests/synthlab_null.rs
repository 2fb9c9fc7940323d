//! With identical group parameters the generator must not separate the
//! groups: face-fraction distributions pass a two-sample KS test.

use faceaudit::facespace::face_fractions;
use faceaudit::maskmetrics::LabelSet;
use faceaudit::synthlab::{build, replica::impostor_replica, SynthConfig};
use faceaudit::{Filter, Gender};

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

#[test]
fn ks_helper_matches_hand_cases() {
    assert_eq!(ks(vec![1.0, 2.0], vec![1.0, 2.0]), 0.0);
    assert_eq!(ks(vec![0.0, 0.0], vec![1.0, 1.0]), 1.0);
    assert!((ks(vec![0.0, 1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0, 5.0]) - 0.5).abs() < 1e-12);
}

fn null_config(seed: u64) -> SynthConfig {
    let mut cfg = SynthConfig::preset("default").unwrap();
    cfg.seed = seed;
    cfg.male = cfg.female.clone();
    cfg
}

#[test]
fn null_configuration_face_fractions_match() {
    for seed in 0..5 {
        let ds = build(&null_config(seed)).unwrap();
        let f = face_fractions(&ds.select(&Filter::gender(Gender::F)), LabelSet::default());
        let m = face_fractions(&ds.select(&Filter::gender(Gender::M)), LabelSet::default());
        let (n, k) = (f.len() as f64, m.len() as f64);
        // alpha = 0.01
        let critical = 1.628 * ((n + k) / (n * k)).sqrt();
        let d = ks(f, m);
        assert!(d < critical, "seed {seed}: KS {d} >= {critical}");
    }
}

#[test]
fn null_configuration_has_no_impostor_gap() {
    let mut gaps = Vec::new();
    for seed in 0..5 {
        let ds = build(&null_config(seed)).unwrap();
        let r = impostor_replica(&ds, 0).unwrap();
        gaps.push(r.female.impostor_mean - r.male.impostor_mean);
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean.abs() < 0.02, "mean impostor gap {mean} over {gaps:?}");
}

#[test]
fn occlusion_shifts_face_fraction() {
    let mut cfg = SynthConfig::preset("occluded").unwrap();
    cfg.female.subjects = 40;
    cfg.male.subjects = 40;
    let ds = build(&cfg).unwrap();
    let mean = |g| {
        let v = face_fractions(&ds.select(&Filter::gender(g)), LabelSet::default());
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(mean(Gender::F) < mean(Gender::M));
}
