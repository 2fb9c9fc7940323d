//! Information equalization: restrict every image to a common stencil, then
//! pair each female image with a distinct male image of maximal face IoU so
//! that both sides carry comparable visible-face information.

pub mod assignment;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{decode_grids, encode_grids, DatasetView, GridStack, MASKS_MAGIC};
use crate::error::{Error, Result};
use crate::maskmetrics::{diff_heatmap, view_face_masks, BinaryMask, DiffHeatmap, Heatmap, LabelSet};
use crate::with_workers;

pub const PAIRING_FILE: &str = "pairing.jsonl";
pub const STENCIL_FILE: &str = "stencil.msk";
pub const PAIRING_FORMAT: &str = "faceaudit-pairing/1";
pub const DEFAULT_BUDGET: f64 = 0.05;

/// Candidates kept per female image before a full rescan is needed.
const TOP_K: usize = 32;

/// Bitwise AND of a mask with the stencil.
pub fn apply_stencil(mask: &BinaryMask, stencil: &BinaryMask) -> Result<BinaryMask> {
    mask.and(stencil)
}

/// Zeroes intensities outside the stencil.
pub fn apply_stencil_image(pixels: &[u8], stencil: &BinaryMask) -> Result<Vec<u8>> {
    if pixels.len() != stencil.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} pixels", stencil.len()),
            got: format!("{} pixels", pixels.len()),
        });
    }
    Ok(pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| if stencil.get(i) { p } else { 0 })
        .collect())
}

/// Exact intersection-over-union as a ratio of pixel counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IouRatio {
    pub intersection: u32,
    pub union: u32,
}

impl IouRatio {
    pub fn of(a: &BinaryMask, b: &BinaryMask, ones_a: usize, ones_b: usize) -> Self {
        let inter = a.intersection_count(b);
        let union = ones_a + ones_b - inter;
        if union == 0 {
            IouRatio { intersection: 1, union: 1 }
        } else {
            IouRatio {
                intersection: inter as u32,
                union: union as u32,
            }
        }
    }

    pub fn value(self) -> f64 {
        self.intersection as f64 / self.union as f64
    }

    /// `round(iou · 2^40)`, used as an exact integer assignment weight.
    pub fn scaled(self) -> i64 {
        let num = (self.intersection as u128) << 40;
        let den = self.union as u128;
        ((num + den / 2) / den) as i64
    }
}

impl Ord for IouRatio {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.intersection as u64 * other.union as u64).cmp(&(other.intersection as u64 * self.union as u64))
    }
}

impl PartialOrd for IouRatio {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `|a ∧ b| / |a ∨ b|`, 1.0 when both masks are empty.
///
/// # Panics
/// If the masks differ in shape.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    assert!(a.same_shape(b), "iou of masks with different shapes");
    IouRatio::of(a, b, a.count_ones(), b.count_ones()).value()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Repeatedly commit the highest-IoU pair among unmatched images.
    #[default]
    GreedyGlobal,
    /// Maximize total IoU (Hungarian); meant for a few hundred images per side.
    ExactAssignment,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub mode: MatchMode,
    pub face_labels: LabelSet,
    /// Let several female images share one male image (each takes its own
    /// argmax). Off by default.
    pub with_replacement: bool,
    pub workers: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions {
            mode: MatchMode::GreedyGlobal,
            face_labels: LabelSet::default(),
            with_replacement: false,
            workers: 0,
        }
    }
}

impl MatchOptions {
    pub fn exact() -> Self {
        MatchOptions {
            mode: MatchMode::ExactAssignment,
            ..MatchOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedImage {
    pub female_image_id: String,
    pub male_image_id: String,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pairing {
    pub mode: MatchMode,
    pub with_replacement: bool,
    /// One entry per female image, in female view order.
    pub pairs: Vec<PairedImage>,
}

impl Pairing {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn total_iou(&self) -> f64 {
        self.pairs.iter().map(|p| p.iou).sum()
    }

    pub fn female_ids(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.female_image_id.clone()).collect()
    }

    /// Male ids in pairing order (repeats possible only with replacement).
    pub fn male_ids(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.male_image_id.clone()).collect()
    }

    pub fn males_distinct(&self) -> bool {
        let mut ids = self.male_ids();
        ids.sort();
        ids.windows(2).all(|w| w[0] != w[1])
    }
}

/// Stenciled face masks of a view plus their popcounts.
struct Side {
    masks: Vec<BinaryMask>,
    ones: Vec<usize>,
    /// Positions sorted by image id, for id-ordered tie breaking.
    by_id: Vec<usize>,
    ids: Vec<String>,
}

impl Side {
    fn new(view: &DatasetView<'_>, stencil: &BinaryMask, labels: LabelSet, workers: usize) -> Result<Self> {
        let ds = view.dataset();
        if (ds.height(), ds.width()) != (stencil.height(), stencil.width()) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} stencil", ds.height(), ds.width()),
                got: format!("{}x{}", stencil.height(), stencil.width()),
            });
        }
        let masks: Vec<BinaryMask> = view_face_masks(view, labels, workers)
            .into_iter()
            .map(|m| m.and(stencil).expect("shape checked"))
            .collect();
        let ones = masks.iter().map(BinaryMask::count_ones).collect();
        let ids = view.image_ids();
        let mut by_id: Vec<usize> = (0..ids.len()).collect();
        by_id.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        Ok(Side { masks, ones, by_id, ids })
    }

    fn iou(&self, i: usize, other: &Side, j: usize) -> IouRatio {
        IouRatio::of(&self.masks[i], &other.masks[j], self.ones[i], other.ones[j])
    }
}

/// Heap entry ordered by IoU, then smaller female rank, then smaller male rank.
#[derive(Clone, Copy, PartialEq, Eq)]
struct Candidate {
    iou: IouRatio,
    f: usize,
    m: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.iou
            .cmp(&other.iou)
            .then_with(|| other.f.cmp(&self.f))
            .then_with(|| other.m.cmp(&self.m))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Best `TOP_K` available male ranks for female rank `f`, best first.
fn top_candidates(female: &Side, male: &Side, f: usize, taken: Option<&[bool]>) -> Vec<Candidate> {
    let fi = female.by_id[f];
    let mut all: Vec<Candidate> = (0..male.by_id.len())
        .filter(|&m| taken.is_none_or(|t| !t[m]))
        .map(|m| Candidate {
            iou: female.iou(fi, male, male.by_id[m]),
            f,
            m,
        })
        .collect();
    let k = TOP_K.min(all.len());
    if k < all.len() {
        all.select_nth_unstable_by(k, |a, b| b.cmp(a));
        all.truncate(k);
    }
    all.sort_by(|a, b| b.cmp(a));
    all
}

fn greedy_global(female: &Side, male: &Side, workers: usize) -> Vec<(usize, IouRatio)> {
    let nf = female.by_id.len();
    let nm = male.by_id.len();
    let mut lists: Vec<Vec<Candidate>> = with_workers(workers, || {
        (0..nf)
            .into_par_iter()
            .map(|f| top_candidates(female, male, f, None))
            .collect()
    });
    let mut cursor = vec![0usize; nf];
    let mut taken = vec![false; nm];
    let mut heap: BinaryHeap<Candidate> = lists.iter().filter_map(|l| l.first().copied()).collect();
    let mut result = vec![(usize::MAX, IouRatio { intersection: 0, union: 1 }); nf];

    while let Some(c) = heap.pop() {
        if !taken[c.m] {
            taken[c.m] = true;
            result[female.by_id[c.f]] = (male.by_id[c.m], c.iou);
            continue;
        }
        // stale: move this female on to her best untaken male
        let f = c.f;
        let list = &lists[f];
        let mut k = cursor[f];
        while k < list.len() && taken[list[k].m] {
            k += 1;
        }
        cursor[f] = k;
        if k < list.len() {
            heap.push(list[k]);
        } else {
            let fresh = top_candidates(female, male, f, Some(&taken));
            if let Some(&first) = fresh.first() {
                heap.push(first);
            }
            lists[f] = fresh;
            cursor[f] = 0;
        }
    }
    result
}

fn with_replacement(female: &Side, male: &Side) -> Vec<(usize, IouRatio)> {
    (0..female.masks.len())
        .map(|fi| {
            let mut best: Option<(IouRatio, usize)> = None;
            for &mj in &male.by_id {
                let r = female.iou(fi, male, mj);
                if best.is_none_or(|(b, _)| r > b) {
                    best = Some((r, mj));
                }
            }
            let (r, mj) = best.expect("male pool checked non-empty");
            (mj, r)
        })
        .collect()
}

fn exact(female: &Side, male: &Side) -> Vec<(usize, IouRatio)> {
    let nf = female.masks.len();
    let nm = male.masks.len();
    let mut weights = vec![0i64; nf * nm];
    for fi in 0..nf {
        for mj in 0..nm {
            weights[fi * nm + mj] = female.iou(fi, male, mj).scaled();
        }
    }
    assignment::max_weight_assignment(&weights, nf, nm)
        .into_iter()
        .enumerate()
        .map(|(fi, mj)| (mj, female.iou(fi, male, mj)))
        .collect()
}

/// Pairs each female image with a male image of maximal stenciled face IoU.
pub fn match_images(
    female: &DatasetView<'_>,
    male: &DatasetView<'_>,
    stencil: &BinaryMask,
    opts: MatchOptions,
) -> Result<Pairing> {
    if male.len() < female.len() && !opts.with_replacement {
        return Err(Error::InsufficientPool {
            needed: female.len(),
            available: male.len(),
        });
    }
    if male.is_empty() && !female.is_empty() {
        return Err(Error::InsufficientPool {
            needed: 1,
            available: 0,
        });
    }
    let fs = Side::new(female, stencil, opts.face_labels, opts.workers)?;
    let ms = Side::new(male, stencil, opts.face_labels, opts.workers)?;
    let chosen = if opts.with_replacement {
        with_replacement(&fs, &ms)
    } else {
        match opts.mode {
            MatchMode::GreedyGlobal => greedy_global(&fs, &ms, opts.workers),
            MatchMode::ExactAssignment => exact(&fs, &ms),
        }
    };
    Ok(Pairing {
        mode: opts.mode,
        with_replacement: opts.with_replacement,
        pairs: chosen
            .into_iter()
            .enumerate()
            .map(|(fi, (mj, r))| PairedImage {
                female_image_id: fs.ids[fi].clone(),
                male_image_id: ms.ids[mj].clone(),
                iou: r.value(),
            })
            .collect(),
    })
}

#[derive(Clone, Debug)]
pub struct EqualizationReport {
    pub diff: DiffHeatmap,
    pub max_abs: f64,
    /// Mean absolute difference over stencil pixels.
    pub mean_abs: f64,
    pub budget: f64,
    pub pass: bool,
    pub n: usize,
}

/// Residual male-minus-female face frequency after stenciling two equally
/// sized mask sets.
pub fn equalization_report_from_masks(
    female: &[BinaryMask],
    male: &[BinaryMask],
    stencil: &BinaryMask,
    budget: f64,
) -> Result<EqualizationReport> {
    if female.len() != male.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} male images (one per female)", female.len()),
            got: format!("{}", male.len()),
        });
    }
    if female.is_empty() {
        return Err(Error::EmptyView("equalization report needs images".into()));
    }
    let (h, w) = (stencil.height(), stencil.width());
    let mut hf = Heatmap::zeros(h, w);
    let mut hm = Heatmap::zeros(h, w);
    for m in female {
        hf.add_mask(&apply_stencil(m, stencil)?)?;
    }
    for m in male {
        hm.add_mask(&apply_stencil(m, stencil)?)?;
    }
    let diff = diff_heatmap(&hm, &hf)?;
    let max_abs = diff.max_abs();
    let mean_abs = diff.mean_abs_in(stencil);
    Ok(EqualizationReport {
        max_abs,
        mean_abs,
        budget,
        pass: max_abs <= budget,
        n: female.len(),
        diff,
    })
}

pub fn equalization_report(
    female: &DatasetView<'_>,
    male_selected: &DatasetView<'_>,
    stencil: &BinaryMask,
    face_labels: LabelSet,
    budget: f64,
) -> Result<EqualizationReport> {
    let f = view_face_masks(female, face_labels, 0);
    let m = view_face_masks(male_selected, face_labels, 0);
    equalization_report_from_masks(&f, &m, stencil, budget)
}

/// Report for a pairing, counting each pair's male image (repeats included).
pub fn pairing_report(
    female: &DatasetView<'_>,
    male: &DatasetView<'_>,
    pairing: &Pairing,
    stencil: &BinaryMask,
    face_labels: LabelSet,
    budget: f64,
) -> Result<EqualizationReport> {
    let ds_f = female.dataset();
    let ds_m = male.dataset();
    let mask_of = |ds: &crate::Dataset, id: &str| -> Result<BinaryMask> {
        let row = ds.row_of(id).ok_or_else(|| Error::UnknownImage(id.to_string()))?;
        crate::maskmetrics::face_mask(ds.labels(row), ds.height(), ds.width(), face_labels)
    };
    let f = pairing
        .pairs
        .iter()
        .map(|p| mask_of(ds_f, &p.female_image_id))
        .collect::<Result<Vec<_>>>()?;
    let m = pairing
        .pairs
        .iter()
        .map(|p| mask_of(ds_m, &p.male_image_id))
        .collect::<Result<Vec<_>>>()?;
    equalization_report_from_masks(&f, &m, stencil, budget)
}

/// `masks.bin` encoding of a single stencil (label 1 inside, 0 outside).
pub fn encode_stencil(stencil: &BinaryMask) -> Result<Vec<u8>> {
    encode_grids(
        &GridStack {
            n: 1,
            height: stencil.height(),
            width: stencil.width(),
            data: stencil.to_labels(1, 0),
        },
        MASKS_MAGIC,
    )
}

pub fn decode_stencil(path: &Path, bytes: &[u8]) -> Result<BinaryMask> {
    let g = decode_grids(path, bytes, MASKS_MAGIC)?;
    if g.n != 1 {
        return Err(Error::corrupt(path, format!("stencil file holds {} grids, expected 1", g.n)));
    }
    let bits: Vec<bool> = g.data.iter().map(|&l| l != 0).collect();
    BinaryMask::from_bools(g.height, g.width, &bits)
}

pub fn write_stencil(path: &Path, stencil: &BinaryMask) -> Result<()> {
    fs::write(path, encode_stencil(stencil)?).map_err(|e| Error::io(path, e))
}

pub fn read_stencil(path: &Path) -> Result<BinaryMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stencil(path, &bytes)
}

pub fn stencil_hash(stencil: &BinaryMask) -> Result<String> {
    Ok(crate::sha256_hex(&encode_stencil(stencil)?))
}

#[derive(Serialize, Deserialize)]
struct PairingHeader {
    format: String,
    mode: MatchMode,
    with_replacement: bool,
    stencil_sha256: String,
    pairs: usize,
}

/// Writes `pairing.jsonl` (header line, then one pair per line) and
/// `stencil.msk` into `dir`.
pub fn export_selection(pairing: &Pairing, stencil: &BinaryMask, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = PairingHeader {
        format: PAIRING_FORMAT.into(),
        mode: pairing.mode,
        with_replacement: pairing.with_replacement,
        stencil_sha256: stencil_hash(stencil)?,
        pairs: pairing.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for p in &pairing.pairs {
        out.push_str(&serde_json::to_string(p).expect("pair serializes"));
        out.push('\n');
    }
    let path = dir.join(PAIRING_FILE);
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    write_stencil(&dir.join(STENCIL_FILE), stencil)
}

/// Reads back what [`export_selection`] wrote, checking the stencil hash.
pub fn load_selection(dir: &Path) -> Result<(Pairing, BinaryMask)> {
    let stencil = read_stencil(&dir.join(STENCIL_FILE))?;
    let path = dir.join(PAIRING_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::corrupt(&path, "missing header line"))?
        .map_err(|e| Error::io(&path, e))?;
    let header: PairingHeader =
        serde_json::from_str(&first).map_err(|e| Error::corrupt(&path, format!("header: {e}")))?;
    if header.format != PAIRING_FORMAT {
        return Err(Error::corrupt(&path, format!("unknown format {:?}", header.format)));
    }
    if header.stencil_sha256 != stencil_hash(&stencil)? {
        return Err(Error::corrupt(&path, "stencil hash does not match stencil.msk"));
    }
    let mut pairs = Vec::with_capacity(header.pairs);
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(
            serde_json::from_str(&line).map_err(|e| Error::corrupt(&path, format!("line {}: {e}", k + 2)))?,
        );
    }
    if pairs.len() != header.pairs {
        return Err(Error::corrupt(
            &path,
            format!("header announces {} pairs, found {}", header.pairs, pairs.len()),
        ));
    }
    Ok((
        Pairing {
            mode: header.mode,
            with_replacement: header.with_replacement,
            pairs,
        },
        stencil,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::{Dataset, EmbeddingMatrix, Gender};
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, on: &[usize]) -> BinaryMask {
        let mut m = BinaryMask::empty(h, w);
        for &i in on {
            m.set(i, true);
        }
        m
    }

    /// Dataset whose label grids are the given masks (1 = skin, 0 = background).
    fn from_masks(h: usize, w: usize, female: &[BinaryMask], male: &[BinaryMask]) -> Dataset {
        let mut records = Vec::new();
        let mut data = Vec::new();
        for (g, set) in [(Gender::F, female), (Gender::M, male)] {
            for (k, m) in set.iter().enumerate() {
                let row = records.len();
                records.push(record(&format!("{g}{k:03}"), &format!("{g}s{k}"), g, None, row));
                data.extend(m.to_labels(1, 0));
            }
        }
        let n = records.len();
        Dataset::from_parts(
            records,
            EmbeddingMatrix {
                n,
                dim: 1,
                data: vec![1.0; n],
            },
            GridStack { n, height: h, width: w, data },
            None,
        )
        .unwrap()
    }

    #[test]
    fn stencil_examples() {
        let m = mask(2, 2, &[0, 1, 2, 3]);
        assert_eq!(apply_stencil(&m, &BinaryMask::full(2, 2)).unwrap(), m);
        assert!(apply_stencil(&m, &BinaryMask::empty(2, 2)).unwrap().is_empty());
        assert_eq!(apply_stencil(&m, &mask(2, 2, &[1, 2])).unwrap().count_ones(), 2);
        assert!(apply_stencil(&m, &BinaryMask::empty(3, 2)).is_err());
        assert_eq!(
            apply_stencil_image(&[9, 8, 7, 6], &BinaryMask::empty(2, 2)).unwrap(),
            vec![0; 4]
        );
        assert_eq!(apply_stencil_image(&[9, 8, 7, 6], &mask(2, 2, &[3])).unwrap(), vec![0, 0, 0, 6]);
    }

    #[test]
    fn iou_examples() {
        let a = mask(4, 4, &[0, 1, 2, 3]);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &mask(4, 4, &[8, 9])), 0.0);
        let b = mask(4, 4, &[2, 3, 4, 5, 6, 7]);
        assert_eq!(iou(&a, &b), 0.25);
        let e = BinaryMask::empty(4, 4);
        assert_eq!(iou(&e, &e), 1.0);
    }

    #[test]
    fn single_female_takes_the_argmax() {
        // female covers 0..10; males overlap with IoU 0.2, 0.9, 0.4
        let f = mask(4, 5, &(0..10).collect::<Vec<_>>());
        let m0 = mask(4, 5, &[0, 1]);
        let m1 = mask(4, 5, &(0..9).collect::<Vec<_>>());
        let m2 = mask(4, 5, &[0, 1, 2, 3]);
        assert!((iou(&f, &m0) - 0.2).abs() < 1e-12);
        assert!((iou(&f, &m1) - 0.9).abs() < 1e-12);
        assert!((iou(&f, &m2) - 0.4).abs() < 1e-12);
        let ds = from_masks(4, 5, &[f], &[m0, m1, m2]);
        let fv = ds.select(&crate::Filter::gender(Gender::F));
        let mv = ds.select(&crate::Filter::gender(Gender::M));
        for opts in [MatchOptions::default(), MatchOptions::exact()] {
            let p = match_images(&fv, &mv, &BinaryMask::full(4, 5), opts).unwrap();
            assert_eq!(p.pairs[0].male_image_id, "M001");
            assert!((p.pairs[0].iou - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn small_pool_is_rejected() {
        let m = mask(2, 2, &[0]);
        let ds = from_masks(2, 2, &[m.clone(), m.clone()], &[m]);
        let fv = ds.select(&crate::Filter::gender(Gender::F));
        let mv = ds.select(&crate::Filter::gender(Gender::M));
        assert!(matches!(
            match_images(&fv, &mv, &BinaryMask::full(2, 2), MatchOptions::default()),
            Err(Error::InsufficientPool { needed: 2, available: 1 })
        ));
        let opts = MatchOptions {
            with_replacement: true,
            ..MatchOptions::default()
        };
        let p = match_images(&fv, &mv, &BinaryMask::full(2, 2), opts).unwrap();
        assert_eq!(p.male_ids(), vec!["M000", "M000"]);
        assert!(!p.males_distinct());
    }

    #[test]
    fn greedy_ties_follow_id_order() {
        let m = mask(2, 2, &[0, 1]);
        let ds = from_masks(2, 2, &[m.clone(), m.clone()], &[m.clone(), m.clone(), m]);
        let fv = ds.select(&crate::Filter::gender(Gender::F));
        let mv = ds.select(&crate::Filter::gender(Gender::M));
        let p = match_images(&fv, &mv, &BinaryMask::full(2, 2), MatchOptions::default()).unwrap();
        assert_eq!(p.male_ids(), vec!["M000", "M001"]);
    }

    #[test]
    fn self_pairing_report_is_zero() {
        let f = [mask(3, 3, &[0, 1, 4]), mask(3, 3, &[4, 5, 8])];
        let r = equalization_report_from_masks(&f, &f, &BinaryMask::full(3, 3), DEFAULT_BUDGET).unwrap();
        assert_eq!(r.max_abs, 0.0);
        assert!(r.pass);
        let short = equalization_report_from_masks(&f, &f[..1], &BinaryMask::full(3, 3), DEFAULT_BUDGET);
        assert!(short.is_err());
    }

    #[test]
    fn selection_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let stencil = mask(3, 4, &[1, 2, 5, 6, 9]);
        let pairing = Pairing {
            mode: MatchMode::GreedyGlobal,
            with_replacement: false,
            pairs: vec![
                PairedImage {
                    female_image_id: "f1".into(),
                    male_image_id: "m7".into(),
                    iou: 0.8125,
                },
                PairedImage {
                    female_image_id: "f2".into(),
                    male_image_id: "m3".into(),
                    iou: 1.0 / 3.0,
                },
            ],
        };
        export_selection(&pairing, &stencil, tmp.path()).unwrap();
        let (p, s) = load_selection(tmp.path()).unwrap();
        assert_eq!(p, pairing);
        assert_eq!(s, stencil);
        let g = crate::corpus::read_grids(&tmp.path().join(STENCIL_FILE), MASKS_MAGIC).unwrap();
        assert_eq!((g.n, g.height, g.width), (1, 3, 4));
    }

    #[test]
    fn tampered_stencil_is_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let pairing = Pairing {
            mode: MatchMode::ExactAssignment,
            with_replacement: false,
            pairs: vec![],
        };
        export_selection(&pairing, &mask(2, 2, &[0]), tmp.path()).unwrap();
        write_stencil(&tmp.path().join(STENCIL_FILE), &mask(2, 2, &[1])).unwrap();
        assert!(matches!(load_selection(tmp.path()), Err(Error::Corrupt { .. })));
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<BinaryMask>, Vec<BinaryMask>)> {
        let m = prop::collection::vec(any::<bool>(), 16)
            .prop_map(|b| BinaryMask::from_bools(4, 4, &b).unwrap());
        (1usize..6).prop_flat_map(move |nf| {
            (
                prop::collection::vec(m.clone(), nf),
                prop::collection::vec(m.clone(), nf..nf + 4),
            )
        })
    }

    proptest! {
        #[test]
        fn pairing_invariants((female, male) in arb_instance()) {
            let ds = from_masks(4, 4, &female, &male);
            let fv = ds.select(&crate::Filter::gender(Gender::F));
            let mv = ds.select(&crate::Filter::gender(Gender::M));
            let full = BinaryMask::full(4, 4);
            let greedy = match_images(&fv, &mv, &full, MatchOptions::default()).unwrap();
            let exact = match_images(&fv, &mv, &full, MatchOptions::exact()).unwrap();
            for p in [&greedy, &exact] {
                prop_assert_eq!(p.len(), female.len());
                prop_assert!(p.males_distinct());
                for pair in &p.pairs {
                    let fi: usize = pair.female_image_id[1..].parse().unwrap();
                    let mi: usize = pair.male_image_id[1..].parse().unwrap();
                    prop_assert_eq!(pair.iou, iou(&female[fi], &male[mi]));
                    prop_assert!((0.0..=1.0).contains(&pair.iou));
                }
            }
            prop_assert!(exact.total_iou() >= greedy.total_iou() - 1e-9);
            prop_assert!(greedy.total_iou() >= 0.5 * exact.total_iou() - 1e-9);
        }

        #[test]
        fn larger_pool_never_lowers_exact_total((female, male) in arb_instance(), extra in prop::collection::vec(any::<bool>(), 16)) {
            let full = BinaryMask::full(4, 4);
            let small = from_masks(4, 4, &female, &male);
            let mut bigger_pool = male.clone();
            bigger_pool.push(BinaryMask::from_bools(4, 4, &extra).unwrap());
            let big = from_masks(4, 4, &female, &bigger_pool);
            let total = |ds: &Dataset| {
                let fv = ds.select(&crate::Filter::gender(Gender::F));
                let mv = ds.select(&crate::Filter::gender(Gender::M));
                let p = match_images(&fv, &mv, &full, MatchOptions::exact()).unwrap();
                p.pairs.iter().map(|q| (q.iou * (1u64 << 40) as f64).round() as i64).sum::<i64>()
            };
            prop_assert!(total(&big) >= total(&small));
        }

        #[test]
        fn stencil_idempotent_and_iou_symmetric(
            a in prop::collection::vec(any::<bool>(), 20),
            b in prop::collection::vec(any::<bool>(), 20),
            s in prop::collection::vec(any::<bool>(), 20),
        ) {
            let a = BinaryMask::from_bools(4, 5, &a).unwrap();
            let b = BinaryMask::from_bools(4, 5, &b).unwrap();
            let s = BinaryMask::from_bools(4, 5, &s).unwrap();
            let once = apply_stencil(&a, &s).unwrap();
            prop_assert_eq!(apply_stencil(&once, &s).unwrap(), once);
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            if !a.is_empty() {
                prop_assert_eq!(iou(&a, &a), 1.0);
            }
        }
    }
}
