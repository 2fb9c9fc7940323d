//! Seeded synthetic cohorts.
//!
//! Each subject gets an identity vector `z`; each image an embedding
//! `normalize(m + σ_b·z/√d + σ_w·(1 + λ·occ)·ε/√d)` around a shared
//! population mean `m`, a label grid (elliptical skin region under a
//! full-width hair band of `rows ± jitter` rows) and a grayscale picture
//! whose identity patterns are weighted by `z`. `occ` is the fraction of the
//! face ellipse hidden by the band (or, after [`regenerate_masked`], by the
//! band and the stencil together).
//!
//! Every subject and image draws from its own ChaCha8 stream, so any image
//! can be regenerated on its own with identical noise.

mod config;
pub mod replica;

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use config::{GroupParams, ImageModel, SynthConfig, PRESETS};

use crate::corpus::{save_dataset, Dataset, EmbeddingMatrix, Gender, GridStack, ImageRecord};
use crate::equalize::Pairing;
use crate::error::{Error, Result};
use crate::maskmetrics::BinaryMask;

pub const SKIN_LABEL: u8 = 1;
pub const HAIR_LABEL: u8 = 17;

const AGE_RANGE: (u32, u32) = (18, 70);

const STREAM_MEAN: u64 = 1;
const STREAM_SUBJECT: u64 = 2;
const STREAM_IMAGE: u64 = 3;

fn rng_for(seed: u64, purpose: u64, gender: Gender, subject: usize, image: usize) -> ChaCha8Rng {
    let g = match gender {
        Gender::F => 0u64,
        Gender::M => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose << 60 | g << 56 | (subject as u64) << 16 | image as u64);
    rng
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn image_id(gender: Gender, subject: usize, image: usize) -> String {
    format!("{gender}{subject:05}_{image:02}")
}

pub fn subject_id(gender: Gender, subject: usize) -> String {
    format!("{gender}{subject:05}")
}

/// Inverse of [`image_id`].
pub fn parse_image_id(id: &str) -> Option<(Gender, usize, usize)> {
    let (subj, img) = id.split_once('_')?;
    let gender = match subj.get(..1)? {
        "F" => Gender::F,
        "M" => Gender::M,
        _ => return None,
    };
    let digits = &subj[1..];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || !img.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((gender, digits.parse().ok()?, img.parse().ok()?))
}

/// Grid geometry shared by all images of a config.
struct Geometry {
    height: usize,
    width: usize,
    ellipse: BinaryMask,
    /// Normalized ellipse coordinates per pixel.
    uv: Vec<(f64, f64)>,
    /// Identity patterns, `patterns × H·W`, already weighted by decay.
    patterns: Vec<Vec<f64>>,
}

impl Geometry {
    fn new(cfg: &SynthConfig) -> Self {
        let (h, w) = (cfg.height, cfg.width);
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let ry = 0.46 * h as f64;
        let rx = 0.36 * w as f64;
        let uv: Vec<(f64, f64)> = (0..h * w)
            .map(|i| (((i % w) as f64 - cx) / rx, ((i / w) as f64 - cy) / ry))
            .collect();
        let ellipse = BinaryMask::from_fn(h, w, |r, c| {
            let (u, v) = uv[r * w + c];
            u * u + v * v <= 1.0
        });
        let count = cfg.image.patterns.min(cfg.dim);
        let mut patterns = Vec::with_capacity(count);
        let mut total = 1;
        'outer: loop {
            // cosine products with frequency sum `total`, low frequencies first
            for p in 0..=total {
                if patterns.len() == count {
                    break 'outer;
                }
                let q = total - p;
                let weight = cfg.image.decay.powi(patterns.len() as i32);
                patterns.push(
                    uv.iter()
                        .map(|&(u, v)| {
                            weight
                                * (std::f64::consts::PI * p as f64 * (u + 1.0) / 2.0).cos()
                                * (std::f64::consts::PI * q as f64 * (v + 1.0) / 2.0).cos()
                        })
                        .collect(),
                );
            }
            total += 1;
        }
        Geometry {
            height: h,
            width: w,
            ellipse,
            uv,
            patterns,
        }
    }

    /// Face pixels left visible by a band of `band` rows.
    fn visible(&self, band: usize) -> BinaryMask {
        let w = self.width;
        BinaryMask::from_fn(self.height, w, |r, c| r >= band && self.ellipse.at(r, c))
    }

    fn labels(&self, band: usize) -> Vec<u8> {
        (0..self.height * self.width)
            .map(|i| {
                if i / self.width < band {
                    HAIR_LABEL
                } else if self.ellipse.get(i) {
                    SKIN_LABEL
                } else {
                    0
                }
            })
            .collect()
    }

    /// Fraction of the ellipse not covered by `visible ∩ stencil`.
    fn occluded_fraction(&self, visible: &BinaryMask, stencil: Option<&BinaryMask>) -> f64 {
        let seen = match stencil {
            Some(s) => visible.intersection_count(s),
            None => visible.count_ones(),
        };
        1.0 - seen as f64 / self.ellipse.count_ones().max(1) as f64
    }
}

struct Subject {
    z: Vec<f64>,
    age: u32,
    /// Identity pattern image (without base or illumination).
    identity_image: Vec<f64>,
}

fn subject(cfg: &SynthConfig, geo: &Geometry, gender: Gender, s: usize) -> Subject {
    let mut rng = rng_for(cfg.seed, STREAM_SUBJECT, gender, s, 0);
    let z = normals(&mut rng, cfg.dim);
    let age = rng.random_range(AGE_RANGE.0..=AGE_RANGE.1);
    let spread: f64 = rng.sample(StandardNormal);
    let amp = cfg.image.contrast * cfg.group(gender).sigma_between * (cfg.image.distinctiveness * spread).exp();
    let mut identity_image = vec![0.0; geo.uv.len()];
    for (j, pat) in geo.patterns.iter().enumerate() {
        let c = amp * z[j];
        for (px, p) in identity_image.iter_mut().zip(pat) {
            *px += c * p;
        }
    }
    Subject { z, age, identity_image }
}

fn population_mean(cfg: &SynthConfig) -> Vec<f64> {
    let mut rng = rng_for(cfg.seed, STREAM_MEAN, Gender::F, 0, 0);
    let mut m = normals(&mut rng, cfg.dim);
    let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    m.iter_mut().for_each(|v| *v /= norm);
    m
}

/// One generated image.
struct Sample {
    labels: Vec<u8>,
    pixels: Vec<u8>,
    embedding: Vec<f32>,
}

#[allow(clippy::too_many_arguments)]
fn sample(
    cfg: &SynthConfig,
    geo: &Geometry,
    mean: &[f64],
    gender: Gender,
    s: usize,
    subj: &Subject,
    i: usize,
    stencil: Option<&BinaryMask>,
) -> Sample {
    let g = cfg.group(gender);
    let mut rng = rng_for(cfg.seed, STREAM_IMAGE, gender, s, i);
    let lo = g.occlusion_rows.saturating_sub(g.occlusion_jitter);
    let hi = (g.occlusion_rows + g.occlusion_jitter).min(cfg.height);
    let band = rng.random_range(lo..=hi);
    let ill = cfg.image.illumination;
    let brightness = ill * rng.sample::<f64, _>(StandardNormal);
    let grad_u = ill * rng.sample::<f64, _>(StandardNormal);
    let grad_v = ill * rng.sample::<f64, _>(StandardNormal);
    let eps = normals(&mut rng, cfg.dim);

    let visible = geo.visible(band);
    let occ = geo.occluded_fraction(&visible, stencil);
    let root = (cfg.dim as f64).sqrt();
    let noise = g.sigma_within * (1.0 + cfg.lambda * occ);
    let raw: Vec<f64> = (0..cfg.dim)
        .map(|k| mean[k] + g.sigma_between * subj.z[k] / root + noise * eps[k] / root)
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let embedding = raw.iter().map(|v| (v / norm) as f32).collect();

    let mut labels = geo.labels(band);
    let pixels = (0..labels.len())
        .map(|px| {
            let inside = stencil.is_none_or(|st| st.get(px));
            if !inside {
                labels[px] = 0;
            }
            if !visible.get(px) || !inside {
                return 0;
            }
            let (u, v) = geo.uv[px];
            let base = 0.55 - 0.2 * (u * u + v * v);
            let value = base + brightness + grad_u * u + grad_v * v + subj.identity_image[px];
            (value.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect();
    Sample {
        labels,
        pixels,
        embedding,
    }
}

struct Builder {
    records: Vec<ImageRecord>,
    embeddings: Vec<f32>,
    labels: Vec<u8>,
    pixels: Vec<u8>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            records: Vec::new(),
            embeddings: Vec::new(),
            labels: Vec::new(),
            pixels: Vec::new(),
        }
    }

    fn push(&mut self, cfg: &SynthConfig, gender: Gender, s: usize, i: usize, age: u32, smp: Sample) {
        self.records.push(ImageRecord {
            image_id: image_id(gender, s, i),
            subject_id: subject_id(gender, s),
            gender,
            cohort: cfg.cohort.clone(),
            age: Some(age),
            row: self.records.len(),
        });
        self.embeddings.extend(smp.embedding);
        self.labels.extend(smp.labels);
        self.pixels.extend(smp.pixels);
    }

    fn finish(self, cfg: &SynthConfig) -> Result<Dataset> {
        let n = self.records.len();
        let grid = |data| GridStack {
            n,
            height: cfg.height,
            width: cfg.width,
            data,
        };
        Dataset::from_parts(
            self.records,
            EmbeddingMatrix {
                n,
                dim: cfg.dim,
                data: self.embeddings,
            },
            grid(self.labels),
            Some(grid(self.pixels)),
        )
    }
}

/// Generates the dataset in memory: all female subjects, then all male ones.
pub fn build(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let geo = Geometry::new(cfg);
    let mean = population_mean(cfg);
    let mut out = Builder::new();
    for gender in [Gender::F, Gender::M] {
        let g = cfg.group(gender);
        for s in 0..g.subjects {
            let subj = subject(cfg, &geo, gender, s);
            for i in 0..g.images_per_subject {
                let smp = sample(cfg, &geo, &mean, gender, s, &subj, i, None);
                out.push(cfg, gender, s, i, subj.age, smp);
            }
        }
    }
    out.finish(cfg)
}

/// [`build`] and write the four corpus files to `out_dir`.
pub fn generate(cfg: &SynthConfig, out_dir: &Path) -> Result<Dataset> {
    let ds = build(cfg)?;
    save_dataset(&ds, out_dir)?;
    Ok(ds)
}

/// Re-emits the paired images with the stencil applied to labels and pixels
/// and with embedding noise recomputed from the stenciled visible face.
/// Identities and per-image noise draws are the generator's own. Records
/// come in pairing order, females first; repeated males appear once.
pub fn regenerate(cfg: &SynthConfig, stencil: &BinaryMask, pairing: &Pairing) -> Result<Dataset> {
    cfg.validate()?;
    if (stencil.height(), stencil.width()) != (cfg.height, cfg.width) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", cfg.height, cfg.width),
            got: format!("{}x{}", stencil.height(), stencil.width()),
        });
    }
    let geo = Geometry::new(cfg);
    let mean = population_mean(cfg);
    let ids = pairing
        .pairs
        .iter()
        .map(|p| &p.female_image_id)
        .chain(pairing.pairs.iter().map(|p| &p.male_image_id));
    let mut seen = HashSet::new();
    let mut out = Builder::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            continue;
        }
        let (gender, s, i) = parse_image_id(id)
            .filter(|&(g, s, i)| s < cfg.group(g).subjects && i < cfg.group(g).images_per_subject)
            .ok_or_else(|| Error::UnknownImage(id.clone()))?;
        let subj = subject(cfg, &geo, gender, s);
        let smp = sample(cfg, &geo, &mean, gender, s, &subj, i, Some(stencil));
        out.push(cfg, gender, s, i, subj.age, smp);
    }
    out.finish(cfg)
}

/// [`regenerate`] and write the result to `out_dir`.
pub fn regenerate_masked(cfg: &SynthConfig, stencil: &BinaryMask, pairing: &Pairing, out_dir: &Path) -> Result<Dataset> {
    let ds = regenerate(cfg, stencil, pairing)?;
    save_dataset(&ds, out_dir)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_dataset, validate, Filter};
    use crate::equalize::{MatchMode, PairedImage};
    use crate::maskmetrics::{face_mask, LabelSet};
    use crate::scorekit::{score_distributions, PairPolicy, ScoreOptions};

    fn small() -> SynthConfig {
        let mut cfg = SynthConfig::default();
        cfg.female.subjects = 6;
        cfg.male.subjects = 7;
        cfg.female.images_per_subject = 3;
        cfg.male.images_per_subject = 2;
        cfg.height = 24;
        cfg.width = 20;
        cfg.female.occlusion_rows = 5;
        cfg.male.occlusion_rows = 5;
        cfg.dim = 16;
        cfg.seed = 5;
        cfg
    }

    fn pairing_of(ds: &Dataset) -> Pairing {
        let f: Vec<_> = ds.select(&Filter::gender(Gender::F)).image_ids();
        let m: Vec<_> = ds.select(&Filter::gender(Gender::M)).image_ids();
        Pairing {
            mode: MatchMode::GreedyGlobal,
            with_replacement: false,
            pairs: f
                .iter()
                .zip(&m)
                .map(|(a, b)| PairedImage {
                    female_image_id: a.clone(),
                    male_image_id: b.clone(),
                    iou: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn ids_round_trip() {
        assert_eq!(image_id(Gender::M, 12, 3), "M00012_03");
        assert_eq!(parse_image_id("M00012_03"), Some((Gender::M, 12, 3)));
        assert_eq!(parse_image_id("F1234567_123"), Some((Gender::F, 1234567, 123)));
        for bad in ["X00001_01", "F_01", "F00001", "F0000a_01", "F00001_x"] {
            assert_eq!(parse_image_id(bad), None);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        generate(&cfg, &dir.path().join("a")).unwrap();
        generate(&cfg, &dir.path().join("b")).unwrap();
        for f in ["manifest.jsonl", "embeddings.bin", "masks.bin", "images.bin"] {
            let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
            let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
        let (ds, report) = load_dataset(&dir.path().join("a")).unwrap();
        assert_eq!(report.normalization_events(), 0);
        assert!(validate(&ds).is_ok());
        assert_eq!(ds.len(), 6 * 3 + 7 * 2);
        let mut other = cfg.clone();
        other.seed = 6;
        assert_ne!(build(&other).unwrap().embeddings().data, ds.embeddings().data);
    }

    #[test]
    fn masks_follow_the_band() {
        let cfg = small();
        let ds = build(&cfg).unwrap();
        let geo = Geometry::new(&cfg);
        for rec in ds.records() {
            let labels = ds.labels(rec.row);
            let hair_rows = (0..cfg.height).take_while(|&r| labels[r * cfg.width] == HAIR_LABEL).count();
            let g = cfg.group(rec.gender);
            assert!(hair_rows + g.occlusion_jitter >= g.occlusion_rows);
            assert!(hair_rows <= g.occlusion_rows + g.occlusion_jitter);
            let face = face_mask(labels, cfg.height, cfg.width, LabelSet::default()).unwrap();
            assert_eq!(face, geo.visible(hair_rows));
            // zero pixels under hair and outside the face
            let img = ds.image(rec.row).unwrap();
            assert!((0..img.len()).all(|i| face.get(i) || img[i] == 0));
        }
    }

    #[test]
    fn full_stencil_regeneration_is_identity() {
        let cfg = small();
        let ds = build(&cfg).unwrap();
        let pairing = pairing_of(&ds);
        let full = BinaryMask::full(cfg.height, cfg.width);
        let re = regenerate(&cfg, &full, &pairing).unwrap();
        for rec in re.records() {
            let orig = ds.row_of(&rec.image_id).unwrap();
            assert_eq!(re.embedding(rec.row), ds.embedding(orig));
            assert_eq!(re.labels(rec.row), ds.labels(orig));
            assert_eq!(re.image(rec.row), ds.image(orig));
        }
    }

    #[test]
    fn stencil_inflates_only_the_clipped_side() {
        let mut cfg = small();
        cfg.female.occlusion_rows = 10;
        cfg.female.occlusion_jitter = 0;
        cfg.male.occlusion_rows = 2;
        cfg.male.occlusion_jitter = 0;
        let geo = Geometry::new(&cfg);
        let mean = population_mean(&cfg);
        // stencil removes exactly the rows hidden from every female
        let stencil = BinaryMask::from_fn(cfg.height, cfg.width, |r, _| r >= 10);
        for (gender, changes) in [(Gender::F, false), (Gender::M, true)] {
            let subj = subject(&cfg, &geo, gender, 0);
            let a = sample(&cfg, &geo, &mean, gender, 0, &subj, 0, None);
            let b = sample(&cfg, &geo, &mean, gender, 0, &subj, 0, Some(&stencil));
            assert_eq!(a.embedding != b.embedding, changes);
        }
        let visible_m = geo.visible(2);
        assert!(geo.occluded_fraction(&visible_m, Some(&stencil)) > geo.occluded_fraction(&visible_m, None));
        let mut pairing = pairing_of(&build(&cfg).unwrap());
        pairing.pairs[0].male_image_id = "M99999_00".into();
        assert!(matches!(regenerate(&cfg, &stencil, &pairing), Err(Error::UnknownImage(_))));
    }

    #[test]
    fn genuine_pairs_beat_impostors() {
        let cfg = small();
        let ds = build(&cfg).unwrap();
        for g in [Gender::F, Gender::M] {
            let v = ds.select(&Filter::gender(g));
            let d = score_distributions(&v, PairPolicy::default(), ScoreOptions::default()).unwrap();
            assert!(d.genuine.mean() > d.impostor.mean());
        }
    }
}
