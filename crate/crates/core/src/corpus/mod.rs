//! On-disk datasets, validation and filtered views.
//!
//! A dataset directory holds a JSON-lines manifest plus packed tensors
//! (`embeddings.bin`, `masks.bin`, optionally `images.bin`). Manifest order
//! is the canonical record order; every record's `row` points into the
//! tensors.

mod format;
mod validate;
mod view;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use format::{
    decode_embeddings, decode_grids, encode_embeddings, encode_grids, read_embeddings,
    read_grids, read_manifest, write_manifest, EmbeddingMatrix, GridStack, EMBEDDINGS_FILE,
    EMBEDDINGS_MAGIC, IMAGES_FILE, IMAGES_MAGIC, MANIFEST_FILE, MASKS_FILE, MASKS_MAGIC,
};
pub use validate::{validate, Check, Severity, ValidationReport};
pub use view::{DatasetView, Filter};

use crate::error::{Error, Result};

/// Largest valid segmentation label (19-class face parsing convention).
pub const MAX_LABEL: u8 = 18;

/// Rows whose norm deviates from 1 by more than this are counted as
/// normalization events in the [`LoadReport`].
pub const NORMALIZATION_EVENT_TOLERANCE: f64 = 1e-4;

/// Rows within this distance of unit norm are left byte-for-byte untouched.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" | "f" => Ok(Gender::F),
            "M" | "m" => Ok(Gender::M),
            other => Err(Error::InvalidInput(format!("unknown gender {other:?}"))),
        }
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub subject_id: String,
    pub gender: Gender,
    pub cohort: String,
    pub age: Option<u32>,
    pub row: usize,
}

/// A fully materialized dataset. Immutable once built.
#[derive(Clone, Debug)]
pub struct Dataset {
    records: Vec<ImageRecord>,
    position_of_row: Vec<usize>,
    embeddings: EmbeddingMatrix,
    masks: GridStack,
    images: Option<GridStack>,
}

/// What happened while loading a dataset directory.
#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    /// Image ids whose embedding norm was off by more than
    /// [`NORMALIZATION_EVENT_TOLERANCE`] and got re-normalized.
    pub normalized: Vec<String>,
    /// Rows re-normalized for drift below the event tolerance.
    pub minor_normalizations: usize,
    pub validation: ValidationReport,
}

impl LoadReport {
    pub fn normalization_events(&self) -> usize {
        self.normalized.len()
    }
}

impl Dataset {
    /// Assembles a dataset after structural checks only: matching counts,
    /// matching grid sizes and a `row` column that is a permutation of
    /// `0..n`. Content checks live in [`validate`].
    pub fn from_parts(
        records: Vec<ImageRecord>,
        embeddings: EmbeddingMatrix,
        masks: GridStack,
        images: Option<GridStack>,
    ) -> Result<Self> {
        let n = records.len();
        if embeddings.n != n {
            return Err(Error::Inconsistent(format!(
                "manifest has {n} records but embeddings hold {} rows",
                embeddings.n
            )));
        }
        if embeddings.data.len() != embeddings.n * embeddings.dim {
            return Err(Error::Inconsistent(format!(
                "embedding buffer holds {} values, expected {}",
                embeddings.data.len(),
                embeddings.n * embeddings.dim
            )));
        }
        if masks.n != n {
            return Err(Error::Inconsistent(format!(
                "manifest has {n} records but masks hold {} grids",
                masks.n
            )));
        }
        if masks.data.len() != masks.n * masks.height * masks.width {
            return Err(Error::Inconsistent("mask buffer length mismatch".into()));
        }
        if let Some(img) = &images {
            if img.n != n {
                return Err(Error::Inconsistent(format!(
                    "manifest has {n} records but images hold {} grids",
                    img.n
                )));
            }
            if (img.height, img.width) != (masks.height, masks.width) {
                return Err(Error::Inconsistent(format!(
                    "image grids are {}x{} but masks are {}x{}",
                    img.height, img.width, masks.height, masks.width
                )));
            }
            if img.data.len() != img.n * img.height * img.width {
                return Err(Error::Inconsistent("image buffer length mismatch".into()));
            }
        }
        let mut position_of_row = vec![usize::MAX; n];
        for (pos, rec) in records.iter().enumerate() {
            if rec.row >= n {
                return Err(Error::InvalidRecord {
                    image_id: rec.image_id.clone(),
                    reason: format!("row {} out of range for {n} records", rec.row),
                });
            }
            if position_of_row[rec.row] != usize::MAX {
                return Err(Error::InvalidRecord {
                    image_id: rec.image_id.clone(),
                    reason: format!("row {} already used", rec.row),
                });
            }
            position_of_row[rec.row] = pos;
        }
        Ok(Dataset {
            records,
            position_of_row,
            embeddings,
            masks,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in manifest order.
    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn record_at_row(&self, row: usize) -> &ImageRecord {
        &self.records[self.position_of_row[row]]
    }

    /// Manifest position of a tensor row.
    pub fn position_of_row(&self, row: usize) -> usize {
        self.position_of_row[row]
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim
    }

    pub fn height(&self) -> usize {
        self.masks.height
    }

    pub fn width(&self) -> usize {
        self.masks.width
    }

    pub fn embedding(&self, row: usize) -> &[f32] {
        let d = self.embeddings.dim;
        &self.embeddings.data[row * d..(row + 1) * d]
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn labels(&self, row: usize) -> &[u8] {
        self.masks.grid(row)
    }

    pub fn masks(&self) -> &GridStack {
        &self.masks
    }

    pub fn has_images(&self) -> bool {
        self.images.is_some()
    }

    pub fn image(&self, row: usize) -> Option<&[u8]> {
        self.images.as_ref().map(|g| g.grid(row))
    }

    pub fn images(&self) -> Option<&GridStack> {
        self.images.as_ref()
    }

    /// View over every record in manifest order.
    pub fn view(&self) -> DatasetView<'_> {
        DatasetView::all(self)
    }

    pub fn select(&self, filter: &Filter) -> DatasetView<'_> {
        self.view().select(filter)
    }

    /// Looks up a record's row by image id.
    pub fn row_of(&self, image_id: &str) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.image_id == image_id)
            .map(|r| r.row)
    }

    /// Re-normalizes embedding rows in place. Zero-norm rows are an error;
    /// non-finite rows are left for [`validate`] to report.
    fn normalize_embeddings(&mut self) -> Result<(Vec<String>, usize)> {
        let d = self.embeddings.dim;
        let mut events = Vec::new();
        let mut minor = 0;
        for row in 0..self.embeddings.n {
            let v = &mut self.embeddings.data[row * d..(row + 1) * d];
            let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
            if !norm.is_finite() {
                continue;
            }
            if norm == 0.0 {
                return Err(Error::InvalidRecord {
                    image_id: self.records[self.position_of_row[row]].image_id.clone(),
                    reason: "zero-norm embedding".into(),
                });
            }
            let deviation = (norm - 1.0).abs();
            if deviation > UNIT_NORM_TOLERANCE {
                for x in v.iter_mut() {
                    *x = (*x as f64 / norm) as f32;
                }
                if deviation > NORMALIZATION_EVENT_TOLERANCE {
                    events.push(self.records[self.position_of_row[row]].image_id.clone());
                } else {
                    minor += 1;
                }
            }
        }
        Ok((events, minor))
    }
}

/// Reads a dataset directory with structural checks only (no validation,
/// no normalization).
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let records = read_manifest(&root.join(MANIFEST_FILE))?;
    let embeddings = read_embeddings(&root.join(EMBEDDINGS_FILE))?;
    let masks = read_grids(&root.join(MASKS_FILE), MASKS_MAGIC)?;
    let images_path = root.join(IMAGES_FILE);
    let images = if images_path.exists() {
        Some(read_grids(&images_path, IMAGES_MAGIC)?)
    } else {
        None
    };
    Dataset::from_parts(records, embeddings, masks, images)
}

/// Loads, normalizes and validates a dataset directory. Fails if any fatal
/// validation check fails; warnings are returned in the report.
pub fn load_dataset(root: &Path) -> Result<(Dataset, LoadReport)> {
    let mut ds = read_dataset(root)?;
    let (normalized, minor_normalizations) = ds.normalize_embeddings()?;
    let validation = validate(&ds);
    if !validation.is_ok() {
        return Err(Error::Validation(Box::new(validation)));
    }
    Ok((
        ds,
        LoadReport {
            normalized,
            minor_normalizations,
            validation,
        },
    ))
}

/// Writes all corpus files for `ds` into `root` (created if missing).
pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_manifest(&root.join(MANIFEST_FILE), &ds.records)?;
    format::write_file(
        &root.join(EMBEDDINGS_FILE),
        &encode_embeddings(&ds.embeddings),
    )?;
    format::write_file(&root.join(MASKS_FILE), &encode_grids(&ds.masks, MASKS_MAGIC)?)?;
    if let Some(img) = &ds.images {
        format::write_file(&root.join(IMAGES_FILE), &encode_grids(img, IMAGES_MAGIC)?)?;
    }
    Ok(())
}

pub(crate) fn distinct_subjects<'a>(records: impl Iterator<Item = &'a ImageRecord>) -> usize {
    records
        .map(|r| r.subject_id.as_str())
        .collect::<HashSet<_>>()
        .len()
}
