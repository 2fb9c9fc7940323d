//! Generator configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Gender;
use crate::error::{Error, Result};

/// Per-group generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub subjects: usize,
    pub images_per_subject: usize,
    /// Spread of subject identities around the population mean.
    pub sigma_between: f64,
    /// Per-image embedding noise before occlusion inflation.
    pub sigma_within: f64,
    /// Nominal hair-band height in pixel rows.
    pub occlusion_rows: usize,
    /// Per-image band height is uniform in `rows ± jitter` (clamped to the grid).
    pub occlusion_jitter: usize,
}

/// Pixel-generation constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageModel {
    /// Number of smooth identity patterns (capped at `dim`).
    pub patterns: usize,
    /// Amplitude ratio between consecutive patterns.
    pub decay: f64,
    /// Identity pattern amplitude per unit `sigma_between`.
    pub contrast: f64,
    /// Std of per-image brightness and gradient offsets.
    pub illumination: f64,
    /// Log-std of the per-subject identity amplitude.
    pub distinctiveness: f64,
}

impl Default for ImageModel {
    fn default() -> Self {
        ImageModel {
            patterns: 128,
            decay: 1.0,
            contrast: 0.015,
            illumination: 0.15,
            distinctiveness: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    /// Inflation of within-subject noise per unit occluded fraction.
    pub lambda: f64,
    pub seed: u64,
    pub cohort: String,
    pub female: GroupParams,
    pub male: GroupParams,
    pub image: ImageModel,
}

impl Default for SynthConfig {
    /// Two identical groups with a light occlusion band.
    fn default() -> Self {
        let group = GroupParams {
            subjects: 50,
            images_per_subject: 4,
            sigma_between: 1.0,
            sigma_within: 0.6,
            occlusion_rows: 10,
            occlusion_jitter: 3,
        };
        SynthConfig {
            dim: 128,
            height: 48,
            width: 48,
            lambda: 1.0,
            seed: 0,
            cohort: "synthetic".into(),
            female: group.clone(),
            male: group,
            image: ImageModel::default(),
        }
    }
}

pub const PRESETS: [&str; 3] = ["default", "impostor", "occluded"];

impl SynthConfig {
    /// Named parameter sets.
    ///
    /// - `impostor`: 200 subjects × 5 images per group, female identities
    ///   0.8 times as spread out, identical occlusion.
    /// - `occluded`: females carry a taller hair band and both their spreads
    ///   are 0.8 times the male ones; the male pool is five times larger with
    ///   a wide band jitter so that every female band height has male
    ///   counterparts.
    pub fn preset(name: &str) -> Result<Self> {
        let base = SynthConfig::default();
        match name {
            "default" => Ok(base),
            "impostor" => {
                let male = GroupParams {
                    subjects: 200,
                    images_per_subject: 5,
                    sigma_between: 1.0,
                    sigma_within: 0.6,
                    occlusion_rows: 12,
                    occlusion_jitter: 4,
                };
                let female = GroupParams {
                    sigma_between: 0.8,
                    ..male.clone()
                };
                Ok(SynthConfig {
                    female,
                    male,
                    ..base
                })
            }
            "occluded" => {
                let male = GroupParams {
                    subjects: 1000,
                    images_per_subject: 5,
                    sigma_between: 1.0,
                    sigma_within: 0.6,
                    occlusion_rows: 13,
                    occlusion_jitter: 14,
                };
                let female = GroupParams {
                    subjects: 200,
                    images_per_subject: 5,
                    sigma_between: 0.8,
                    sigma_within: 0.48,
                    occlusion_rows: 24,
                    occlusion_jitter: 3,
                };
                Ok(SynthConfig {
                    female,
                    male,
                    ..base
                })
            }
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (known: {})",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn group(&self, g: Gender) -> &GroupParams {
        match g {
            Gender::F => &self.female,
            Gender::M => &self.male,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim < 2 {
            return fail(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.height == 0 || self.width == 0 || self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return fail(format!("grid {}x{} out of range", self.height, self.width));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.cohort.is_empty() {
            return fail("cohort name is empty".into());
        }
        for (name, g) in [("female", &self.female), ("male", &self.male)] {
            if !(g.sigma_between > 0.0 && g.sigma_between.is_finite()) {
                return fail(format!("{name}.sigma_between must be > 0"));
            }
            if !(g.sigma_within > 0.0 && g.sigma_within.is_finite()) {
                return fail(format!("{name}.sigma_within must be > 0"));
            }
            if g.occlusion_rows >= self.height {
                return fail(format!(
                    "{name}.occlusion_rows = {} must be below the grid height {}",
                    g.occlusion_rows, self.height
                ));
            }
            if g.images_per_subject == 0 || g.images_per_subject > u16::MAX as usize {
                return fail(format!("{name}.images_per_subject out of range"));
            }
            if g.subjects >= 1 << 40 {
                return fail(format!("{name}.subjects out of range"));
            }
        }
        let m = &self.image;
        if !(m.decay > 0.0 && m.decay <= 1.0) {
            return fail(format!("image.decay must be in (0, 1], got {}", m.decay));
        }
        for (k, v) in [
            ("image.contrast", m.contrast),
            ("image.illumination", m.illumination),
            ("image.distinctiveness", m.distinctiveness),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{k} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Sets one key; group keys are `female.<field>` / `male.<field>`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        let value = value.trim();
        if let Some((group, field)) = key.split_once('.') {
            let g = match group {
                "female" => &mut self.female,
                "male" => &mut self.male,
                "image" => return self.set_image(field, value),
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            };
            match field {
                "subjects" => g.subjects = num(key, value)?,
                "images_per_subject" => g.images_per_subject = num(key, value)?,
                "sigma_between" => g.sigma_between = num(key, value)?,
                "sigma_within" => g.sigma_within = num(key, value)?,
                "occlusion_rows" => g.occlusion_rows = num(key, value)?,
                "occlusion_jitter" => g.occlusion_jitter = num(key, value)?,
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
            return Ok(());
        }
        match key {
            "dim" => self.dim = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "cohort" => self.cohort = value.to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn set_image(&mut self, field: &str, value: &str) -> Result<()> {
        let parse = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("image.{field}: cannot parse {v:?}")))
        };
        let m = &mut self.image;
        match field {
            "patterns" => {
                m.patterns = value
                    .parse()
                    .map_err(|_| Error::Config(format!("image.patterns: cannot parse {value:?}")))?
            }
            "decay" => m.decay = parse(value)?,
            "contrast" => m.contrast = parse(value)?,
            "illumination" => m.illumination = parse(value)?,
            "distinctiveness" => m.distinctiveness = parse(value)?,
            _ => return Err(Error::Config(format!("unknown key \"image.{field}\""))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    /// A `preset = name` line must come first and resets every key.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let k = k.trim();
            if k == "preset" {
                *self = SynthConfig::preset(v.trim())?;
            } else {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SynthConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key in a fixed order; [`parse`](Self::parse) reads it back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dim = {}", self.dim);
        let _ = writeln!(out, "height = {}", self.height);
        let _ = writeln!(out, "width = {}", self.width);
        let _ = writeln!(out, "lambda = {}", self.lambda);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "cohort = {}", self.cohort);
        for (name, g) in [("female", &self.female), ("male", &self.male)] {
            let _ = writeln!(out, "{name}.subjects = {}", g.subjects);
            let _ = writeln!(out, "{name}.images_per_subject = {}", g.images_per_subject);
            let _ = writeln!(out, "{name}.sigma_between = {}", g.sigma_between);
            let _ = writeln!(out, "{name}.sigma_within = {}", g.sigma_within);
            let _ = writeln!(out, "{name}.occlusion_rows = {}", g.occlusion_rows);
            let _ = writeln!(out, "{name}.occlusion_jitter = {}", g.occlusion_jitter);
        }
        let m = &self.image;
        let _ = writeln!(out, "image.patterns = {}", m.patterns);
        let _ = writeln!(out, "image.decay = {}", m.decay);
        let _ = writeln!(out, "image.contrast = {}", m.contrast);
        let _ = writeln!(out, "image.illumination = {}", m.illumination);
        let _ = writeln!(out, "image.distinctiveness = {}", m.distinctiveness);
        out
    }
}
