use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{Dataset, Gender, ImageRecord};
use crate::error::{Error, Result};

/// Conjunction of optional record predicates. An empty filter matches all.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub gender: Option<Gender>,
    pub cohort: Option<String>,
    /// Inclusive `[min, max]` age in years; records without an age never match.
    pub age_range: Option<(u32, u32)>,
    pub image_ids: Option<BTreeSet<String>>,
}

impl Filter {
    pub fn gender(g: Gender) -> Self {
        Filter {
            gender: Some(g),
            ..Filter::default()
        }
    }

    pub fn with_cohort(mut self, cohort: impl Into<String>) -> Self {
        self.cohort = Some(cohort.into());
        self
    }

    pub fn with_age_range(mut self, min: u32, max: u32) -> Self {
        self.age_range = Some((min, max));
        self
    }

    pub fn matches(&self, rec: &ImageRecord) -> bool {
        if let Some(g) = self.gender {
            if rec.gender != g {
                return false;
            }
        }
        if let Some(c) = &self.cohort {
            if &rec.cohort != c {
                return false;
            }
        }
        if let Some((lo, hi)) = self.age_range {
            match rec.age {
                Some(a) if a >= lo && a <= hi => {}
                _ => return false,
            }
        }
        if let Some(ids) = &self.image_ids {
            if !ids.contains(&rec.image_id) {
                return false;
            }
        }
        true
    }

    /// Short human label such as `F/caucasian`, used to name groups in output.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(g) = self.gender {
            parts.push(g.to_string());
        }
        if let Some(c) = &self.cohort {
            parts.push(c.clone());
        }
        if let Some((lo, hi)) = self.age_range {
            parts.push(format!("age{lo}-{hi}"));
        }
        if self.image_ids.is_some() {
            parts.push("subset".into());
        }
        if parts.is_empty() {
            "all".into()
        } else {
            parts.join("/")
        }
    }
}

/// An ordered selection of dataset rows. Cheap to clone, never mutates the
/// parent dataset.
#[derive(Clone, Debug)]
pub struct DatasetView<'a> {
    dataset: &'a Dataset,
    rows: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    pub(crate) fn all(dataset: &'a Dataset) -> Self {
        DatasetView {
            dataset,
            rows: dataset.records().iter().map(|r| r.row).collect(),
        }
    }

    /// View over explicit rows, kept in the given order.
    pub fn from_rows(dataset: &'a Dataset, rows: Vec<usize>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(rows.len());
        for &r in &rows {
            if r >= dataset.len() {
                return Err(Error::InvalidInput(format!(
                    "row {r} out of range for {} records",
                    dataset.len()
                )));
            }
            if !seen.insert(r) {
                return Err(Error::InvalidInput(format!("row {r} repeated in view")));
            }
        }
        Ok(DatasetView { dataset, rows })
    }

    /// View over the given image ids, in manifest order.
    pub fn from_image_ids<S: AsRef<str>>(dataset: &'a Dataset, ids: &[S]) -> Result<Self> {
        let wanted: HashSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
        let view = DatasetView::all(dataset).retain(|r| wanted.contains(r.image_id.as_str()));
        if view.len() != wanted.len() {
            let have: HashSet<&str> = view.records().map(|r| r.image_id.as_str()).collect();
            let missing = ids
                .iter()
                .map(|s| s.as_ref())
                .find(|s| !have.contains(s))
                .unwrap_or_default();
            return Err(Error::UnknownImage(missing.to_string()));
        }
        Ok(view)
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &'a ImageRecord> + '_ {
        let ds = self.dataset;
        self.rows.iter().map(move |&r| ds.record_at_row(r))
    }

    pub fn select(&self, filter: &Filter) -> DatasetView<'a> {
        self.retain(|r| filter.matches(r))
    }

    pub fn retain(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> DatasetView<'a> {
        let ds = self.dataset;
        DatasetView {
            dataset: ds,
            rows: self
                .rows
                .iter()
                .copied()
                .filter(|&r| keep(ds.record_at_row(r)))
                .collect(),
        }
    }

    /// Like [`retain`](Self::retain) but keyed on the dataset row.
    pub fn retain_rows(&self, mut keep: impl FnMut(usize) -> bool) -> DatasetView<'a> {
        DatasetView {
            dataset: self.dataset,
            rows: self.rows.iter().copied().filter(|&r| keep(r)).collect(),
        }
    }

    /// Rows re-sorted into manifest order.
    pub fn in_manifest_order(&self) -> DatasetView<'a> {
        let ds = self.dataset;
        let mut rows = self.rows.clone();
        rows.sort_by_key(|&r| ds.position_of_row(r));
        DatasetView { dataset: ds, rows }
    }

    /// Union with another view of the same dataset, in manifest order.
    pub fn union(&self, other: &DatasetView<'a>) -> DatasetView<'a> {
        let mut set: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &r in self.rows.iter().chain(other.rows.iter()) {
            set.insert((self.dataset.position_of_row(r), r));
        }
        DatasetView {
            dataset: self.dataset,
            rows: set.into_iter().map(|(_, r)| r).collect(),
        }
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.records().map(|r| r.image_id.clone()).collect()
    }

    pub fn subject_count(&self) -> usize {
        super::distinct_subjects(self.records())
    }
}
