//! Face masks from segmentation labels and the per-group statistics built
//! on them: face-visibility heatmaps, their male-minus-female difference,
//! level masks and percent-face distributions.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetView, MAX_LABEL};
use crate::error::{Error, Result};
use crate::with_workers;

/// Images per parallel accumulation task.
const CHUNK: usize = 64;

/// Set of segmentation labels that count as face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSet(u32);

impl Default for LabelSet {
    /// Labels 1 through 13: skin, brows, eyes, eyeglasses, ears, earring,
    /// nose, mouth and lips. Neck, clothing, hair and hat are excluded.
    fn default() -> Self {
        LabelSet::range(1, 13)
    }
}

impl LabelSet {
    pub fn empty() -> Self {
        LabelSet(0)
    }

    pub fn range(lo: u8, hi: u8) -> Self {
        (lo..=hi).fold(LabelSet(0), |s, l| s.with(l))
    }

    pub fn from_labels(labels: &[u8]) -> Self {
        labels.iter().fold(LabelSet(0), |s, &l| s.with(l))
    }

    pub fn union(self, other: LabelSet) -> Self {
        LabelSet(self.0 | other.0)
    }

    pub fn with(self, label: u8) -> Self {
        if label < 32 {
            LabelSet(self.0 | (1 << label))
        } else {
            self
        }
    }

    #[inline]
    pub fn contains(self, label: u8) -> bool {
        label < 32 && self.0 & (1 << label) != 0
    }

    pub fn labels(self) -> Vec<u8> {
        (0..32u8).filter(|&l| self.contains(l)).collect()
    }
}

impl std::str::FromStr for LabelSet {
    type Err = Error;

    /// Comma-separated labels and inclusive ranges, e.g. `"1-13"` or `"1,2,10-13"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("label set {s:?}: expected e.g. 1-13 or 1,2,10-13"));
        let mut set = LabelSet::empty();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (lo, hi) = match part.split_once('-') {
                Some((a, b)) => (a.trim().parse::<u8>().map_err(|_| bad())?, b.trim().parse::<u8>().map_err(|_| bad())?),
                None => {
                    let v = part.parse::<u8>().map_err(|_| bad())?;
                    (v, v)
                }
            };
            if lo > hi || hi > MAX_LABEL {
                return Err(bad());
            }
            set = set.union(LabelSet::range(lo, hi));
        }
        if set == LabelSet::empty() {
            return Err(bad());
        }
        Ok(set)
    }
}

impl std::fmt::Display for LabelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let labels: Vec<String> = self.labels().iter().map(u8::to_string).collect();
        f.write_str(&labels.join(","))
    }
}

/// Packed `height × width` bitmap, row-major, 64 pixels per word.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    words: Vec<u64>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            words: vec![0; (height * width).div_ceil(64)],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        let mut m = BinaryMask::empty(height, width);
        for i in 0..m.len() {
            m.set(i, true);
        }
        m
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = BinaryMask::empty(height, width);
        for r in 0..height {
            for c in 0..width {
                if f(r, c) {
                    m.set(r * width + c, true);
                }
            }
        }
        m
    }

    pub fn from_bools(height: usize, width: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: format!("{} pixels", height * width),
                got: format!("{} pixels", bits.len()),
            });
        }
        Ok(BinaryMask::from_fn(height, width, |r, c| bits[r * width + c]))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Pixel count, `height * width`.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.count_ones() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn at(&self, row: usize, col: usize) -> bool {
        self.get(row * self.width + col)
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        let bit = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.height, self.width),
                got: format!("{}x{}", other.height, other.width),
            })
        }
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_shape(other)?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        })
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.check_shape(other)?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect(),
        })
    }

    /// `|self ∧ other|` without allocating. Shapes must match.
    #[inline]
    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        debug_assert!(self.same_shape(other));
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_shape(other) && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.get(i))
    }

    /// Label grid with `on` where set and `off` elsewhere.
    pub fn to_labels(&self, on: u8, off: u8) -> Vec<u8> {
        (0..self.len()).map(|i| if self.get(i) { on } else { off }).collect()
    }
}

/// Bit set iff the pixel's label is in `face_labels`.
pub fn face_mask(labels: &[u8], height: usize, width: usize, face_labels: LabelSet) -> Result<BinaryMask> {
    if labels.len() != height * width {
        return Err(Error::DimensionMismatch {
            expected: format!("{} labels", height * width),
            got: format!("{} labels", labels.len()),
        });
    }
    let mut m = BinaryMask::empty(height, width);
    for (i, &l) in labels.iter().enumerate() {
        if face_labels.contains(l) {
            m.set(i, true);
        }
    }
    Ok(m)
}

/// Face mask of one dataset row.
pub fn row_face_mask(view: &DatasetView<'_>, row: usize, face_labels: LabelSet) -> BinaryMask {
    let ds = view.dataset();
    face_mask(ds.labels(row), ds.height(), ds.width(), face_labels).expect("grid sizes are dataset invariants")
}

/// Face masks of every image in the view, in view order.
pub fn view_face_masks(view: &DatasetView<'_>, face_labels: LabelSet, workers: usize) -> Vec<BinaryMask> {
    with_workers(workers, || {
        view.rows()
            .par_iter()
            .map(|&r| row_face_mask(view, r, face_labels))
            .collect()
    })
}

pub fn percent_face(m: &BinaryMask) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.count_ones() as f64 / m.len() as f64
}

/// Per-pixel face frequency, stored as exact counts over `n` images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    counts: Vec<u32>,
    n: u32,
}

impl Heatmap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Heatmap {
            height,
            width,
            counts: vec![0; height * width],
            n: 0,
        }
    }

    pub fn from_masks<'m>(height: usize, width: usize, masks: impl IntoIterator<Item = &'m BinaryMask>) -> Result<Self> {
        let mut h = Heatmap::zeros(height, width);
        for m in masks {
            h.add_mask(m)?;
        }
        Ok(h)
    }

    pub fn add_mask(&mut self, m: &BinaryMask) -> Result<()> {
        if (m.height, m.width) != (self.height, self.width) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.height, self.width),
                got: format!("{}x{}", m.height, m.width),
            });
        }
        for (wi, &word) in m.words.iter().enumerate() {
            let mut w = word;
            while w != 0 {
                let b = w.trailing_zeros() as usize;
                self.counts[wi * 64 + b] += 1;
                w &= w - 1;
            }
        }
        self.n += 1;
        Ok(())
    }

    /// Integer addition of counts; the result covers both image sets.
    pub fn merge(&mut self, other: &Heatmap) -> Result<()> {
        if (other.height, other.width) != (self.height, self.width) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.height, self.width),
                got: format!("{}x{}", other.height, other.width),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.counts[i] as f64 / self.n as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| self.value(i)).collect()
    }

    pub fn max_value(&self) -> f64 {
        self.values().into_iter().fold(0.0, f64::max)
    }
}

/// Face-visibility heatmap of a view.
pub fn heatmap(view: &DatasetView<'_>, face_labels: LabelSet, workers: usize) -> Result<Heatmap> {
    if view.is_empty() {
        return Err(Error::EmptyView("heatmap of an empty view".into()));
    }
    let ds = view.dataset();
    let (h, w) = (ds.height(), ds.width());
    let parts: Vec<Heatmap> = with_workers(workers, || {
        view.rows()
            .par_chunks(CHUNK)
            .map(|rows| {
                let mut hm = Heatmap::zeros(h, w);
                for &r in rows {
                    hm.add_mask(&row_face_mask(view, r, face_labels)).expect("shape");
                }
                hm
            })
            .collect()
    });
    let mut total = Heatmap::zeros(h, w);
    for p in &parts {
        total.merge(p)?;
    }
    Ok(total)
}

/// Male minus female face frequency per pixel, in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffHeatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DiffHeatmap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Mean absolute difference over the pixels set in `region`.
    pub fn mean_abs_in(&self, region: &BinaryMask) -> f64 {
        let k = region.count_ones();
        if k == 0 {
            return 0.0;
        }
        region.ones().map(|i| self.values[i].abs()).sum::<f64>() / k as f64
    }

    pub fn mean_abs(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }
}

pub fn diff_heatmap(male: &Heatmap, female: &Heatmap) -> Result<DiffHeatmap> {
    if (male.height, male.width) != (female.height, female.width) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", male.height, male.width),
            got: format!("{}x{}", female.height, female.width),
        });
    }
    Ok(DiffHeatmap {
        height: male.height,
        width: male.width,
        values: (0..male.counts.len())
            .map(|i| male.value(i) - female.value(i))
            .collect(),
    })
}

pub const DEFAULT_LEVEL: f64 = 0.10;

/// Pixels whose heatmap frequency is at least `p`.
pub fn level_mask(h: &Heatmap, p: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("level {p} outside [0, 1]")));
    }
    let mut m = BinaryMask::empty(h.height, h.width);
    for i in 0..h.counts.len() {
        if h.value(i) >= p {
            m.set(i, true);
        }
    }
    Ok(m)
}

/// Distribution of per-image face fractions over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FractionHistogram {
    pub counts: Vec<u64>,
}

impl FractionHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edge(&self, k: usize) -> f64 {
        k as f64 / self.counts.len() as f64
    }

    /// Bin of a fraction `ones / total`, computed in integers so fractions
    /// that sit exactly on an edge land in the upper bin.
    pub fn bin_of(&self, ones: usize, total: usize) -> usize {
        if total == 0 {
            return 0;
        }
        ((ones * self.counts.len()) / total).min(self.counts.len() - 1)
    }
}

pub fn percent_face_histogram(view: &DatasetView<'_>, face_labels: LabelSet, bins: usize) -> Result<FractionHistogram> {
    if bins == 0 {
        return Err(Error::InvalidInput("at least one bin required".into()));
    }
    let mut hist = FractionHistogram { counts: vec![0; bins] };
    for &r in view.rows() {
        let m = row_face_mask(view, r, face_labels);
        let k = hist.bin_of(m.count_ones(), m.len());
        hist.counts[k] += 1;
    }
    Ok(hist)
}

/// `row,col,value,n`
pub fn heatmap_csv(h: &Heatmap) -> String {
    let mut out = String::from("row,col,value,n\n");
    for r in 0..h.height {
        for c in 0..h.width {
            let _ = writeln!(out, "{r},{c},{},{}", h.value(r * h.width + c), h.n);
        }
    }
    out
}

/// `row,col,value` (male minus female).
pub fn diff_heatmap_csv(d: &DiffHeatmap) -> String {
    let mut out = String::from("row,col,value\n");
    for r in 0..d.height {
        for c in 0..d.width {
            let _ = writeln!(out, "{r},{c},{}", d.values[r * d.width + c]);
        }
    }
    out
}

/// `group,bin_lo,bin_hi,count`
pub fn pface_hist_csv(groups: &[(&str, &FractionHistogram)]) -> String {
    let mut out = String::from("group,bin_lo,bin_hi,count\n");
    for (g, h) in groups {
        for (k, c) in h.counts.iter().enumerate() {
            let _ = writeln!(out, "{g},{},{},{c}", h.edge(k), h.edge(k + 1));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::{Dataset, EmbeddingMatrix, Gender, GridStack};
    use proptest::prelude::*;

    fn masks_dataset(h: usize, w: usize, grids: Vec<Vec<u8>>) -> Dataset {
        let n = grids.len();
        let records = (0..n)
            .map(|i| record(&format!("i{i}"), &format!("s{i}"), Gender::F, None, i))
            .collect();
        Dataset::from_parts(
            records,
            EmbeddingMatrix {
                n,
                dim: 1,
                data: vec![1.0; n],
            },
            GridStack {
                n,
                height: h,
                width: w,
                data: grids.concat(),
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn label_sets_parse() {
        assert_eq!("1-13".parse::<LabelSet>().unwrap(), LabelSet::default());
        assert_eq!("1, 3,5-6".parse::<LabelSet>().unwrap().labels(), vec![1, 3, 5, 6]);
        assert_eq!(LabelSet::from_labels(&[1, 4]).to_string(), "1,4");
        for bad in ["", "x", "5-2", "1-40"] {
            assert!(bad.parse::<LabelSet>().is_err(), "{bad}");
        }
    }

    #[test]
    fn default_labels_are_one_through_thirteen() {
        let s = LabelSet::default();
        assert!(!s.contains(0));
        assert!(s.contains(1) && s.contains(13));
        assert!(!s.contains(14) && !s.contains(17));
        assert_eq!(s.labels().len(), 13);
    }

    #[test]
    fn face_mask_examples() {
        let zeros = face_mask(&[0; 9], 3, 3, LabelSet::default()).unwrap();
        assert!(zeros.is_empty());
        let ones = face_mask(&[1; 9], 3, 3, LabelSet::default()).unwrap();
        assert_eq!(ones.count_ones(), 9);
        let thirds = [1, 1, 1, 17, 17, 17, 14, 14, 14];
        let m = face_mask(&thirds, 3, 3, LabelSet::default()).unwrap();
        assert_eq!(m.ones().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(face_mask(&[1; 8], 3, 3, LabelSet::default()).is_err());
    }

    #[test]
    fn percent_face_examples() {
        let m = BinaryMask::from_fn(10, 10, |r, c| r < 5 && c < 5);
        assert_eq!(percent_face(&m), 0.25);
        assert_eq!(percent_face(&BinaryMask::empty(10, 10)), 0.0);
    }

    #[test]
    fn single_image_heatmap_is_its_mask() {
        let ds = masks_dataset(2, 2, vec![vec![1, 0, 0, 1]]);
        let h = heatmap(&ds.view(), LabelSet::default(), 1).unwrap();
        assert_eq!(h.values(), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn one_disagreeing_pixel_is_half() {
        let ds = masks_dataset(2, 2, vec![vec![1, 1, 0, 0], vec![1, 1, 1, 0]]);
        let h = heatmap(&ds.view(), LabelSet::default(), 1).unwrap();
        assert_eq!(h.values(), vec![1.0, 1.0, 0.5, 0.0]);
    }

    #[test]
    fn empty_view_heatmap_errors() {
        let ds = masks_dataset(1, 1, vec![vec![1]]);
        let v = ds.select(&crate::Filter::gender(Gender::M));
        assert!(matches!(heatmap(&v, LabelSet::default(), 1), Err(Error::EmptyView(_))));
    }

    #[test]
    fn diff_examples() {
        let full = Heatmap::from_masks(2, 2, [&BinaryMask::full(2, 2)]).unwrap();
        let none = Heatmap::from_masks(2, 2, [&BinaryMask::empty(2, 2)]).unwrap();
        assert_eq!(diff_heatmap(&full, &full).unwrap().max_abs(), 0.0);
        let d = diff_heatmap(&full, &none).unwrap();
        assert!(d.values().iter().all(|&v| v == 1.0));
        let small = Heatmap::zeros(1, 2);
        assert!(diff_heatmap(&full, &small).is_err());
    }

    #[test]
    fn level_mask_examples() {
        let masks: Vec<BinaryMask> = (0..20)
            .map(|k| BinaryMask::from_fn(1, 3, |_, c| match c {
                0 => k < 1,  // 0.05
                1 => k < 2,  // 0.10
                _ => k < 10, // 0.50
            }))
            .collect();
        let h = Heatmap::from_masks(1, 3, &masks).unwrap();
        assert_eq!(h.values(), vec![0.05, 0.10, 0.50]);
        let m = level_mask(&h, 0.10).unwrap();
        assert_eq!(m.ones().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(level_mask(&h, 0.0).unwrap().count_ones(), 3);
        assert!(level_mask(&h, 1.0).unwrap().is_empty());
        assert!(level_mask(&h, 1.5).is_err());
    }

    #[test]
    fn pface_histogram_examples() {
        // 10x1 grids with 2 and 6 face pixels
        let a: Vec<u8> = (0..10).map(|i| if i < 2 { 1 } else { 0 }).collect();
        let b: Vec<u8> = (0..10).map(|i| if i < 6 { 1 } else { 0 }).collect();
        let ds = masks_dataset(10, 1, vec![a, b]);
        let h = percent_face_histogram(&ds.view(), LabelSet::default(), 10).unwrap();
        assert_eq!(h.counts[2], 1);
        assert_eq!(h.counts[6], 1);
        assert_eq!(h.n(), 2);

        let ds = masks_dataset(2, 2, vec![vec![1, 0, 0, 0]; 3]);
        let h = percent_face_histogram(&ds.view(), LabelSet::default(), 10).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn csv_layouts() {
        let h = Heatmap::from_masks(1, 2, [&BinaryMask::from_fn(1, 2, |_, c| c == 0)]).unwrap();
        assert_eq!(heatmap_csv(&h), "row,col,value,n\n0,0,1,1\n0,1,0,1\n");
        let f = FractionHistogram { counts: vec![1, 0] };
        assert_eq!(pface_hist_csv(&[("F", &f)]), "group,bin_lo,bin_hi,count\nF,0,0.5,1\nF,0.5,1,0\n");
    }

    fn arb_grids() -> impl Strategy<Value = (usize, usize, Vec<Vec<u8>>)> {
        (1usize..6, 1usize..6, 1usize..8).prop_flat_map(|(h, w, n)| {
            (
                Just(h),
                Just(w),
                prop::collection::vec(prop::collection::vec(0u8..19, h * w), n),
            )
        })
    }

    proptest! {
        #[test]
        fn heatmap_is_exact_mean_of_masks((h, w, grids) in arb_grids()) {
            let ds = masks_dataset(h, w, grids.clone());
            let hm = heatmap(&ds.view(), LabelSet::default(), 2).unwrap();
            let n = grids.len() as u32;
            prop_assert_eq!(hm.n(), n);
            for p in 0..h * w {
                let count = grids.iter().filter(|g| (1..=13).contains(&g[p])).count() as u32;
                prop_assert_eq!(hm.counts()[p], count);
                let v = hm.value(p);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!((v * n as f64 - (v * n as f64).round()).abs() < 1e-9);
            }
            // mean percent_face equals mean heatmap value
            let masks = view_face_masks(&ds.view(), LabelSet::default(), 1);
            let mean_pf = masks.iter().map(percent_face).sum::<f64>() / n as f64;
            let mean_hm = hm.values().iter().sum::<f64>() / (h * w) as f64;
            prop_assert!((mean_pf - mean_hm).abs() < 1e-12);
        }

        #[test]
        fn union_of_views_is_weighted_average((h, w, grids) in arb_grids(), split in 0usize..8) {
            let ds = masks_dataset(h, w, grids.clone());
            let split = split.min(grids.len());
            let all = ds.view();
            let a = crate::DatasetView::from_rows(&ds, (0..split).collect()).unwrap();
            let b = crate::DatasetView::from_rows(&ds, (split..grids.len()).collect()).unwrap();
            let whole = heatmap(&all, LabelSet::default(), 1).unwrap();
            let mut merged = Heatmap::zeros(h, w);
            for part in [&a, &b] {
                if !part.is_empty() {
                    merged.merge(&heatmap(part, LabelSet::default(), 1).unwrap()).unwrap();
                }
            }
            prop_assert_eq!(&merged, &whole);
            if !a.is_empty() && !b.is_empty() {
                let ha = heatmap(&a, LabelSet::default(), 1).unwrap();
                let hb = heatmap(&b, LabelSet::default(), 1).unwrap();
                for p in 0..h * w {
                    let avg = (ha.value(p) * a.len() as f64 + hb.value(p) * b.len() as f64) / grids.len() as f64;
                    prop_assert!((avg - whole.value(p)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn level_mask_is_antitone((h, w, grids) in arb_grids(), p1 in 0.0f64..1.0, p2 in 0.0f64..1.0) {
            let ds = masks_dataset(h, w, grids);
            let hm = heatmap(&ds.view(), LabelSet::default(), 1).unwrap();
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let m_lo = level_mask(&hm, lo).unwrap();
            let m_hi = level_mask(&hm, hi).unwrap();
            prop_assert!(m_hi.is_subset_of(&m_lo));
        }

        #[test]
        fn pface_histogram_matches_per_image_recount((h, w, grids) in arb_grids(), bins in 1usize..20) {
            let ds = masks_dataset(h, w, grids.clone());
            let hist = percent_face_histogram(&ds.view(), LabelSet::default(), bins).unwrap();
            let mut expect = vec![0u64; bins];
            for g in &grids {
                let ones = g.iter().filter(|&&l| (1..=13).contains(&l)).count();
                // brute force: last edge k/bins not exceeding the fraction
                let k = (0..bins).rev().find(|&k| k * g.len() <= ones * bins).unwrap();
                expect[k] += 1;
            }
            prop_assert_eq!(hist.counts, expect);
        }
    }
}
