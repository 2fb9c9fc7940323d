use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_LO: f64 = -1.0;
pub const DEFAULT_HI: f64 = 1.0;
pub const DEFAULT_BINS: usize = 1000;

/// Fixed-range histogram that also tracks exact streaming moments.
///
/// Values outside `[lo, hi]` are counted in the first/last bin; the moments
/// always see the raw value, so statistics derived from them do not depend
/// on the binning.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreHistogram {
    lo: f64,
    hi: f64,
    counts: Vec<u64>,
    n: u64,
    mean: f64,
    m2: f64,
}

impl Default for ScoreHistogram {
    fn default() -> Self {
        ScoreHistogram::new(DEFAULT_LO, DEFAULT_HI, DEFAULT_BINS).unwrap()
    }
}

impl ScoreHistogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || bins == 0 {
            return Err(Error::InvalidInput(format!(
                "histogram needs lo < hi and at least one bin (got [{lo}, {hi}], {bins} bins)"
            )));
        }
        Ok(ScoreHistogram {
            lo,
            hi,
            counts: vec![0; bins],
            n: 0,
            mean: 0.0,
            m2: 0.0,
        })
    }

    /// Empty histogram with the same binning as `self`.
    pub fn empty_like(&self) -> Self {
        ScoreHistogram {
            lo: self.lo,
            hi: self.hi,
            counts: vec![0; self.counts.len()],
            n: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = ScoreHistogram::default();
        h.extend(values);
        h
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sum of squared deviations from the mean.
    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Unbiased sample variance, `m2 / (n - 1)`; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Lower edge of bin `k`; `edge(bins())` is `hi`.
    pub fn edge(&self, k: usize) -> f64 {
        if k == self.counts.len() {
            self.hi
        } else {
            self.lo + k as f64 * self.bin_width()
        }
    }

    pub fn bin_index(&self, x: f64) -> usize {
        let bins = self.counts.len();
        let t = (x - self.lo) / (self.hi - self.lo) * bins as f64;
        if t.is_nan() || t <= 0.0 {
            0
        } else {
            (t as usize).min(bins - 1)
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        let k = self.bin_index(x);
        self.counts[k] += 1;
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn extend(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.push(v);
        }
    }

    pub fn same_binning(&self, other: &ScoreHistogram) -> bool {
        self.lo == other.lo && self.hi == other.hi && self.counts.len() == other.counts.len()
    }

    /// Folds `other` into `self` (parallel-variance combination of moments).
    pub fn merge(&mut self, other: &ScoreHistogram) -> Result<()> {
        if !self.same_binning(other) {
            return Err(Error::DimensionMismatch {
                expected: format!("[{}, {}] x {}", self.lo, self.hi, self.bins()),
                got: format!("[{}, {}] x {}", other.lo, other.hi, other.bins()),
            });
        }
        if other.n == 0 {
            return Ok(());
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        if self.n == 0 {
            self.n = other.n;
            self.mean = other.mean;
            self.m2 = other.m2;
            return Ok(());
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.n += other.n;
        Ok(())
    }

    /// Total count in bins `k..`.
    pub fn count_from(&self, k: usize) -> u64 {
        self.counts[k.min(self.counts.len())..].iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn moments_match_two_pass() {
        let xs = [0.1, -0.4, 0.9, 0.3, 0.3, -1.0, 1.0];
        let h = ScoreHistogram::from_values(xs);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((h.mean() - mean).abs() < 1e-15);
        assert!((h.variance() - var).abs() < 1e-15);
        assert_eq!(h.counts().iter().sum::<u64>(), 7);
    }

    #[test]
    fn extremes_land_in_edge_bins() {
        let mut h = ScoreHistogram::default();
        h.extend([-1.0, 1.0, -3.0, 7.0]);
        assert_eq!(h.counts()[0], 2);
        assert_eq!(h.counts()[999], 2);
    }

    #[test]
    fn mismatched_binning_refuses_merge() {
        let mut a = ScoreHistogram::default();
        let b = ScoreHistogram::new(-1.0, 1.0, 10).unwrap();
        assert!(a.merge(&b).is_err());
    }

    #[test]
    fn invalid_range_rejected() {
        assert!(ScoreHistogram::new(1.0, -1.0, 10).is_err());
        assert!(ScoreHistogram::new(-1.0, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn merge_preserves_moments(
            a in prop::collection::vec(-1.0f64..1.0, 0..200),
            b in prop::collection::vec(-1.0f64..1.0, 0..200),
        ) {
            let mut ha = ScoreHistogram::from_values(a.iter().copied());
            let hb = ScoreHistogram::from_values(b.iter().copied());
            let whole = ScoreHistogram::from_values(a.iter().chain(&b).copied());
            ha.merge(&hb).unwrap();
            prop_assert_eq!(ha.n(), whole.n());
            prop_assert_eq!(ha.counts(), whole.counts());
            let scale = whole.mean().abs().max(1e-3);
            prop_assert!((ha.mean() - whole.mean()).abs() <= 1e-9 * scale);
            let scale = whole.m2().abs().max(1e-3);
            prop_assert!((ha.m2() - whole.m2()).abs() <= 1e-9 * scale);
            prop_assert!(ha.variance() >= 0.0);
        }
    }
}
