use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::{Dataset, Gender, MAX_LABEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// Failing this check makes the dataset unusable.
    Fatal,
    /// Reported but tolerated.
    Warning,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub severity: Severity,
    pub passed: bool,
    /// Image ids that triggered the check, in manifest order.
    pub offenders: Vec<String>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    /// True when no fatal check failed.
    pub fn is_ok(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c.passed || c.severity == Severity::Warning)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Check> {
        self.checks
            .iter()
            .filter(|c| !c.passed && c.severity == Severity::Warning)
    }

    pub fn summary(&self) -> String {
        let failed: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| {
                let mut names = c.offenders.iter().take(3).cloned().collect::<Vec<_>>().join(", ");
                if c.offenders.len() > 3 {
                    names.push_str(", ...");
                }
                format!("{} ({} offenders: {names})", c.name, c.offenders.len())
            })
            .collect();
        if failed.is_empty() {
            "all checks passed".to_string()
        } else {
            failed.join("; ")
        }
    }
}

pub const LABEL_RANGE: &str = "label_range";
pub const EMBEDDING_FINITE: &str = "embedding_finite";
pub const DUPLICATE_IMAGE_IDS: &str = "duplicate_image_ids";
pub const COHORT_NONEMPTY: &str = "cohort_nonempty";
pub const CROSS_GENDER_SUBJECTS: &str = "cross_gender_subjects";

fn check(name: &str, severity: Severity, offenders: Vec<String>) -> Check {
    Check {
        name: name.to_string(),
        severity,
        passed: offenders.is_empty(),
        offenders,
    }
}

/// Content checks over a dataset. Never fails; returns one entry per check.
pub fn validate(ds: &Dataset) -> ValidationReport {
    let records = ds.records();

    let label_bad: Vec<String> = records
        .iter()
        .filter(|r| ds.labels(r.row).iter().any(|&l| l > MAX_LABEL))
        .map(|r| r.image_id.clone())
        .collect();

    let emb_bad: Vec<String> = records
        .iter()
        .filter(|r| {
            let v = ds.embedding(r.row);
            let norm2: f64 = v.iter().map(|&x| x as f64 * x as f64).sum();
            v.iter().any(|x| !x.is_finite()) || !norm2.is_finite()
        })
        .map(|r| r.image_id.clone())
        .collect();

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *seen.entry(r.image_id.as_str()).or_default() += 1;
    }
    let dup: Vec<String> = records
        .iter()
        .filter(|r| seen[r.image_id.as_str()] > 1)
        .map(|r| r.image_id.clone())
        .collect();

    let cohort_bad: Vec<String> = records
        .iter()
        .filter(|r| r.cohort.trim().is_empty())
        .map(|r| r.image_id.clone())
        .collect();

    let mut genders: BTreeMap<&str, BTreeSet<Gender>> = BTreeMap::new();
    for r in records {
        genders.entry(r.subject_id.as_str()).or_default().insert(r.gender);
    }
    let cross: Vec<String> = records
        .iter()
        .filter(|r| genders[r.subject_id.as_str()].len() > 1)
        .map(|r| r.image_id.clone())
        .collect();

    ValidationReport {
        checks: vec![
            check(LABEL_RANGE, Severity::Fatal, label_bad),
            check(EMBEDDING_FINITE, Severity::Fatal, emb_bad),
            check(DUPLICATE_IMAGE_IDS, Severity::Fatal, dup),
            check(COHORT_NONEMPTY, Severity::Fatal, cohort_bad),
            check(CROSS_GENDER_SUBJECTS, Severity::Warning, cross),
        ],
    }
}
