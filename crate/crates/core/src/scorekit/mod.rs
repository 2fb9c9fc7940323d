//! Genuine/impostor pair enumeration, similarity scoring and distribution
//! summaries (d-prime, FMR/FNMR, ROC points).

mod histogram;
mod rates;

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use histogram::{ScoreHistogram, DEFAULT_BINS, DEFAULT_HI, DEFAULT_LO};
pub use rates::{d_prime, d_prime_from_moments, fmr_fnmr, roc_points, Rates, RocPoint, D_PRIME_FORMULA};

use crate::corpus::{DatasetView, Gender};
use crate::error::{Error, Result};
use crate::with_workers;

/// Rows of the outer loop handled by one scoring task.
const BLOCK_ROWS: usize = 32;
/// Inner-loop tile width, sized so a tile of embeddings stays cache resident.
const TILE_COLS: usize = 256;
/// Sampled impostor pairs scored per task.
const SAMPLE_CHUNK: usize = 1 << 16;

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len().to_string(),
            got: b.len().to_string(),
        });
    }
    Ok(unit_cosine(a, b))
}

#[inline]
fn unit_cosine(a: &[f32], b: &[f32]) -> f64 {
    (dot(a, b) as f64).clamp(-1.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpostorScope {
    /// Every pair of different subjects inside the view.
    WithinGroup,
    /// Only pairs whose two images carry different gender labels.
    CrossGender,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    Exhaustive,
    /// Uniform sample of impostor pairs without replacement. Genuine pairs
    /// are always enumerated in full.
    Sampled { max_pairs: u64, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPolicy {
    pub impostor_scope: ImpostorScope,
    pub mode: PairMode,
}

impl Default for PairPolicy {
    fn default() -> Self {
        PairPolicy {
            impostor_scope: ImpostorScope::WithinGroup,
            mode: PairMode::Exhaustive,
        }
    }
}

impl PairPolicy {
    pub fn cross_gender() -> Self {
        PairPolicy {
            impostor_scope: ImpostorScope::CrossGender,
            mode: PairMode::Exhaustive,
        }
    }

    pub fn sampled(mut self, max_pairs: u64, seed: u64) -> Self {
        self.mode = PairMode::Sampled { max_pairs, seed };
        self
    }

    fn check(&self) -> Result<()> {
        if let PairMode::Sampled { max_pairs: 0, .. } = self.mode {
            return Err(Error::InvalidInput("sampled mode needs max_pairs >= 1".into()));
        }
        Ok(())
    }
}

/// View contents laid out for the pair loops: compact subject codes,
/// genders and a packed copy of the embeddings.
struct Packed<'a> {
    rows: &'a [usize],
    subject: Vec<u32>,
    gender: Vec<Gender>,
    dim: usize,
    emb: Vec<f32>,
}

impl<'a> Packed<'a> {
    fn new(view: &'a DatasetView<'_>, with_embeddings: bool) -> Self {
        let ds = view.dataset();
        let mut codes: HashMap<&str, u32> = HashMap::new();
        let mut subject = Vec::with_capacity(view.len());
        let mut gender = Vec::with_capacity(view.len());
        for rec in view.records() {
            let next = codes.len() as u32;
            subject.push(*codes.entry(rec.subject_id.as_str()).or_insert(next));
            gender.push(rec.gender);
        }
        let dim = ds.dim();
        let emb = if with_embeddings {
            let mut emb = Vec::with_capacity(view.len() * dim);
            for &r in view.rows() {
                emb.extend_from_slice(ds.embedding(r));
            }
            emb
        } else {
            Vec::new()
        };
        Packed {
            rows: view.rows(),
            subject,
            gender,
            dim,
            emb,
        }
    }

    fn len(&self) -> usize {
        self.subject.len()
    }

    #[inline]
    fn vector(&self, i: usize) -> &[f32] {
        &self.emb[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    fn is_genuine(&self, i: usize, j: usize) -> bool {
        self.subject[i] == self.subject[j]
    }

    #[inline]
    fn is_impostor(&self, scope: ImpostorScope, i: usize, j: usize) -> bool {
        self.subject[i] != self.subject[j]
            && (scope == ImpostorScope::WithinGroup || self.gender[i] != self.gender[j])
    }

    fn genuine_count(&self) -> u64 {
        let mut per: HashMap<u32, u64> = HashMap::new();
        for &s in &self.subject {
            *per.entry(s).or_default() += 1;
        }
        per.values().map(|&c| c * (c - 1) / 2).sum()
    }

    fn impostor_population(&self, scope: ImpostorScope) -> u64 {
        let n = self.len() as u64;
        match scope {
            ImpostorScope::WithinGroup => n * n.saturating_sub(1) / 2 - self.genuine_count(),
            ImpostorScope::CrossGender => {
                let mut per: HashMap<u32, (u64, u64)> = HashMap::new();
                let (mut nf, mut nm) = (0u64, 0u64);
                for (s, g) in self.subject.iter().zip(&self.gender) {
                    let e = per.entry(*s).or_default();
                    match g {
                        Gender::F => {
                            e.0 += 1;
                            nf += 1;
                        }
                        Gender::M => {
                            e.1 += 1;
                            nm += 1;
                        }
                    }
                }
                nf * nm - per.values().map(|(f, m)| f * m).sum::<u64>()
            }
        }
    }

    /// In-scope impostor pairs `(i, j)`, `i < j`, in canonical order.
    fn impostor_positions(&self, scope: ImpostorScope) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.len();
        (0..n).flat_map(move |i| {
            (i + 1..n)
                .filter(move |&j| self.is_impostor(scope, i, j))
                .map(move |j| (i, j))
        })
    }

    fn genuine_positions(&self) -> Vec<(usize, usize)> {
        let mut by_subject: HashMap<u32, Vec<usize>> = HashMap::new();
        for (i, &s) in self.subject.iter().enumerate() {
            by_subject.entry(s).or_default().push(i);
        }
        let mut pairs = Vec::new();
        for members in by_subject.values() {
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    pairs.push((i, j));
                }
            }
        }
        pairs.sort_unstable();
        pairs
    }

    fn sample_impostors(&self, scope: ImpostorScope, population: u64, max_pairs: u64, seed: u64) -> Vec<(u32, u32)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = rand::seq::index::sample(&mut rng, population as usize, max_pairs as usize).into_vec();
        picks.sort_unstable();
        let mut out = Vec::with_capacity(picks.len());
        let mut next = picks.iter().peekable();
        for (idx, (i, j)) in self.impostor_positions(scope).enumerate() {
            match next.peek() {
                Some(&&p) if p == idx => {
                    out.push((i as u32, j as u32));
                    next.next();
                }
                Some(_) => {}
                None => break,
            }
        }
        out
    }
}

/// Pairs selected from a view under a policy. Pairs are reported as
/// `(row_a, row_b)` tensor rows with `row_a` earlier in view order.
pub struct PairSet<'a> {
    packed: Packed<'a>,
    scope: ImpostorScope,
    pub genuine_count: u64,
    /// Number of impostor pairs in the stream (the sample size in sampled mode).
    pub impostor_count: u64,
    /// Number of in-scope impostor pairs before any sampling.
    pub impostor_population: u64,
    /// Set when the view holds no same-subject pair.
    pub no_genuine: bool,
    sampled: Option<Vec<(u32, u32)>>,
}

impl<'a> PairSet<'a> {
    pub fn genuine_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let rows = self.packed.rows;
        self.packed
            .genuine_positions()
            .into_iter()
            .map(move |(i, j)| (rows[i], rows[j]))
    }

    pub fn impostor_pairs(&self) -> Box<dyn Iterator<Item = (usize, usize)> + '_> {
        let rows = self.packed.rows;
        match &self.sampled {
            Some(list) => Box::new(list.iter().map(move |&(i, j)| (rows[i as usize], rows[j as usize]))),
            None => Box::new(
                self.packed
                    .impostor_positions(self.scope)
                    .map(move |(i, j)| (rows[i], rows[j])),
            ),
        }
    }
}

fn plan<'a>(view: &'a DatasetView<'_>, policy: PairPolicy, with_embeddings: bool) -> Result<PairSet<'a>> {
    policy.check()?;
    if view.is_empty() {
        return Err(Error::EmptyView("pair enumeration needs at least one image".into()));
    }
    let packed = Packed::new(view, with_embeddings);
    let genuine_count = packed.genuine_count();
    let population = packed.impostor_population(policy.impostor_scope);
    let sampled = match policy.mode {
        PairMode::Sampled { max_pairs, seed } if max_pairs < population => {
            Some(packed.sample_impostors(policy.impostor_scope, population, max_pairs, seed))
        }
        _ => None,
    };
    let impostor_count = sampled.as_ref().map_or(population, |s| s.len() as u64);
    Ok(PairSet {
        packed,
        scope: policy.impostor_scope,
        genuine_count,
        impostor_count,
        impostor_population: population,
        no_genuine: genuine_count == 0,
        sampled,
    })
}

pub fn enumerate_pairs<'a>(view: &'a DatasetView<'_>, policy: PairPolicy) -> Result<PairSet<'a>> {
    plan(view, policy, false)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Worker threads; 0 lets the runtime decide.
    pub workers: usize,
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            workers: 0,
            lo: DEFAULT_LO,
            hi: DEFAULT_HI,
            bins: DEFAULT_BINS,
        }
    }
}

impl ScoreOptions {
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScoreDistributions {
    pub genuine: ScoreHistogram,
    pub impostor: ScoreHistogram,
    pub impostor_population: u64,
    pub no_genuine: bool,
}

/// Scores every in-scope pair of `view` once.
///
/// The pair space is cut into fixed blocks independent of the worker count;
/// per-block histograms are merged in block order, so the output is the same
/// bit for bit whatever `opts.workers` is.
pub fn score_distributions(
    view: &DatasetView<'_>,
    policy: PairPolicy,
    opts: ScoreOptions,
) -> Result<ScoreDistributions> {
    let empty = ScoreHistogram::new(opts.lo, opts.hi, opts.bins)?;
    let pairs = plan(view, policy, true)?;
    let packed = &pairs.packed;
    let scope = policy.impostor_scope;
    let n = packed.len();

    let (genuine, impostor) = with_workers(opts.workers, || {
        let blocks: Vec<usize> = (0..n).step_by(BLOCK_ROWS).collect();
        let score_impostors = pairs.sampled.is_none();
        let parts: Vec<(ScoreHistogram, ScoreHistogram)> = blocks
            .par_iter()
            .map(|&start| {
                let mut g = empty.empty_like();
                let mut imp = empty.empty_like();
                let end = (start + BLOCK_ROWS).min(n);
                let mut tile = start + 1;
                while tile < n {
                    let tile_end = (tile + TILE_COLS).min(n);
                    for i in start..end {
                        let a = packed.vector(i);
                        for j in tile.max(i + 1)..tile_end {
                            if packed.is_genuine(i, j) {
                                g.push(unit_cosine(a, packed.vector(j)));
                            } else if score_impostors && packed.is_impostor(scope, i, j) {
                                imp.push(unit_cosine(a, packed.vector(j)));
                            }
                        }
                    }
                    tile = tile_end;
                }
                (g, imp)
            })
            .collect();
        let mut genuine = empty.empty_like();
        let mut impostor = empty.empty_like();
        for (g, i) in &parts {
            genuine.merge(g).expect("same binning");
            impostor.merge(i).expect("same binning");
        }
        if let Some(list) = &pairs.sampled {
            let chunks: Vec<ScoreHistogram> = list
                .par_chunks(SAMPLE_CHUNK)
                .map(|chunk| {
                    let mut h = empty.empty_like();
                    for &(i, j) in chunk {
                        h.push(unit_cosine(packed.vector(i as usize), packed.vector(j as usize)));
                    }
                    h
                })
                .collect();
            for h in &chunks {
                impostor.merge(h).expect("same binning");
            }
        }
        (genuine, impostor)
    });

    Ok(ScoreDistributions {
        genuine,
        impostor,
        impostor_population: pairs.impostor_population,
        no_genuine: pairs.no_genuine,
    })
}

/// One histogram tagged for `scores_hist.csv`.
pub struct HistogramSeries<'a> {
    pub series: &'a str,
    pub group: &'a str,
    pub hist: &'a ScoreHistogram,
}

/// `series,group,bin_lo,bin_hi,count`, one line per bin.
pub fn scores_hist_csv(series: &[HistogramSeries<'_>]) -> String {
    let mut out = String::from("series,group,bin_lo,bin_hi,count\n");
    for s in series {
        for (k, c) in s.hist.counts().iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.series,
                s.group,
                s.hist.edge(k),
                s.hist.edge(k + 1),
                c
            );
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DPrimeRow {
    pub comparison: String,
    /// `None` when the pooled variance is zero or a side has fewer than two samples.
    pub d_prime: Option<f64>,
    pub n1: u64,
    pub n2: u64,
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
}

impl DPrimeRow {
    pub fn compare(comparison: impl Into<String>, h1: &ScoreHistogram, h2: &ScoreHistogram) -> Self {
        DPrimeRow {
            comparison: comparison.into(),
            d_prime: d_prime(h1, h2).ok(),
            n1: h1.n(),
            n2: h2.n(),
            mean1: h1.mean(),
            mean2: h2.mean(),
            var1: h1.variance(),
            var2: h2.variance(),
        }
    }
}

/// `comparison,d_prime,n1,n2,mean1,mean2,var1,var2`; degenerate rows carry `nan`.
pub fn dprime_csv(rows: &[DPrimeRow]) -> String {
    let mut out = String::from("comparison,d_prime,n1,n2,mean1,mean2,var1,var2\n");
    for r in rows {
        let d = r.d_prime.map_or_else(|| "nan".to_string(), |d| d.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.comparison, d, r.n1, r.n2, r.mean1, r.mean2, r.var1, r.var2
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::*;
    use crate::corpus::{Dataset, EmbeddingMatrix, GridStack, ImageRecord};

    fn with_subjects(counts: &[usize]) -> Dataset {
        let mut records = Vec::new();
        for (s, &c) in counts.iter().enumerate() {
            for k in 0..c {
                let row = records.len();
                records.push(record(&format!("s{s}i{k}"), &format!("s{s}"), Gender::F, None, row));
            }
        }
        dataset(records, 4, 1, 1, 0)
    }

    fn with_embeddings(records: Vec<ImageRecord>, dim: usize, emb: Vec<f32>) -> Dataset {
        let n = records.len();
        Dataset::from_parts(
            records,
            EmbeddingMatrix { n, dim, data: emb },
            GridStack {
                n,
                height: 1,
                width: 1,
                data: vec![0; n],
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = [0.6f32, 0.8];
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-7);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&a, &[0.8, 0.6]).unwrap() - 0.96).abs() < 1e-7);
        assert!(cosine(&a, &[1.0]).is_err());
    }

    #[test]
    fn dot_matches_naive_for_odd_lengths() {
        let a: Vec<f32> = (0..19).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..19).map(|i| (i as f32 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!((dot(&a, &b) as f64 - naive).abs() < 1e-5);
    }

    #[test]
    fn genuine_count_sums_binomials() {
        let ds = with_subjects(&[2, 3, 4]);
        let v = ds.view();
        let p = enumerate_pairs(&v, PairPolicy::default()).unwrap();
        assert_eq!(p.genuine_count, 10);
        assert_eq!(p.genuine_pairs().count(), 10);
        assert_eq!(p.genuine_count + p.impostor_count, 9 * 8 / 2);
    }

    #[test]
    fn singletons_have_no_genuine_pairs() {
        let ds = with_subjects(&[1, 1, 1]);
        let v = ds.view();
        let p = enumerate_pairs(&v, PairPolicy::default()).unwrap();
        assert_eq!((p.genuine_count, p.impostor_count), (0, 3));
        assert!(p.no_genuine);
    }

    #[test]
    fn sampled_mode_is_seeded() {
        let ds = with_subjects(&[2; 10]);
        let v = ds.view();
        let policy = PairPolicy::default().sampled(50, 42);
        let a: Vec<_> = enumerate_pairs(&v, policy).unwrap().impostor_pairs().collect();
        let b: Vec<_> = enumerate_pairs(&v, policy).unwrap().impostor_pairs().collect();
        assert_eq!(a.len(), 50);
        assert_eq!(a, b);
        let c: Vec<_> = enumerate_pairs(&v, PairPolicy::default().sampled(50, 43))
            .unwrap()
            .impostor_pairs()
            .collect();
        assert_ne!(a, c);
        let mut dedup = a.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 50);
    }

    #[test]
    fn zero_max_pairs_rejected() {
        let ds = with_subjects(&[2, 2]);
        let v = ds.view();
        assert!(enumerate_pairs(&v, PairPolicy::default().sampled(0, 1)).is_err());
    }

    #[test]
    fn cross_gender_scope_counts() {
        let records = vec![
            record("f1", "a", Gender::F, None, 0),
            record("f2", "a", Gender::F, None, 1),
            record("m1", "b", Gender::M, None, 2),
            record("m2", "c", Gender::M, None, 3),
            record("x1", "d", Gender::F, None, 4),
            record("x2", "d", Gender::M, None, 5),
        ];
        let ds = dataset(records, 2, 1, 1, 0);
        let v = ds.view();
        let p = enumerate_pairs(&v, PairPolicy::cross_gender()).unwrap();
        // F = {f1,f2,x1}, M = {m1,m2,x2}; 9 cross pairs minus x1-x2 (same subject)
        assert_eq!(p.impostor_count, 8);
        assert_eq!(p.impostor_pairs().count(), 8);
        assert_eq!(p.genuine_count, 2);
    }

    #[test]
    fn identical_embeddings_fill_top_bin() {
        let records: Vec<_> = (0..4)
            .map(|i| record(&format!("i{i}"), &format!("s{}", i / 2), Gender::F, None, i))
            .collect();
        let ds = with_embeddings(records, 3, [0.0f32, 0.6, 0.8].repeat(4));
        let v = ds.view();
        let d = score_distributions(&v, PairPolicy::default(), ScoreOptions::default()).unwrap();
        assert_eq!(d.genuine.n(), 2);
        assert_eq!(d.impostor.n(), 4);
        assert_eq!(d.genuine.counts()[999], 2);
        assert_eq!(d.impostor.counts()[999], 4);
    }

    #[test]
    fn orthogonal_singletons_score_zero() {
        let records = vec![
            record("a", "s1", Gender::F, None, 0),
            record("b", "s2", Gender::F, None, 1),
        ];
        let ds = with_embeddings(records, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let v = ds.view();
        let d = score_distributions(&v, PairPolicy::default(), ScoreOptions::default()).unwrap();
        assert_eq!(d.impostor.n(), 1);
        assert_eq!(d.impostor.mean(), 0.0);
        assert_eq!(d.impostor.counts()[500], 1);
        assert!(d.no_genuine);
    }

    #[test]
    fn empty_view_is_rejected() {
        let ds = with_subjects(&[2]);
        let v = ds.select(&crate::corpus::Filter::gender(Gender::M));
        assert!(matches!(
            score_distributions(&v, PairPolicy::default(), ScoreOptions::default()),
            Err(Error::EmptyView(_))
        ));
    }

    #[test]
    fn csv_headers() {
        let h = ScoreHistogram::new(-1.0, 1.0, 2).unwrap();
        let csv = scores_hist_csv(&[HistogramSeries {
            series: "genuine",
            group: "F",
            hist: &h,
        }]);
        assert_eq!(csv, "series,group,bin_lo,bin_hi,count\ngenuine,F,-1,0,0\ngenuine,F,0,1,0\n");
        let row = DPrimeRow::compare("x", &h, &h);
        assert!(dprime_csv(&[row]).lines().nth(1).unwrap().starts_with("x,nan,0,0"));
    }
}
