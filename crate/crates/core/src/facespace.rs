//! Eigenface analysis: PCA over stenciled grayscale images, cumulative
//! variance curves, reconstruction error and the subset selections built on
//! top of them.
//!
//! Images are scaled to `[0, 1]`, zeroed outside the stencil and flattened
//! row-major to `D = H·W` values. With fewer samples than dimensions the
//! eigenproblem is solved on the `n × n` Gram matrix and the eigenfaces are
//! recovered from it; otherwise on the `D × D` covariance.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::DatasetView;
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, EigenSolver};
use crate::maskmetrics::{percent_face, row_face_mask, BinaryMask, LabelSet};
use crate::with_workers;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaRoute {
    /// Gram when `n − 1 < D`, covariance otherwise.
    #[default]
    Auto,
    Gram,
    Covariance,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PcaOptions {
    pub route: PcaRoute,
    pub solver: EigenSolver,
    pub workers: usize,
}

impl PcaOptions {
    pub fn with_route(route: PcaRoute) -> Self {
        PcaOptions {
            route,
            ..Self::default()
        }
    }
}

/// A fitted face space.
#[derive(Clone, Debug)]
pub struct FaceSpace {
    height: usize,
    width: usize,
    stencil: BinaryMask,
    mean: Vec<f64>,
    /// `k × D`, orthonormal rows.
    basis: Vec<f64>,
    eigenvalues: Vec<f64>,
    total_variance: f64,
    n: usize,
    route: PcaRoute,
}

impl FaceSpace {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stencil(&self) -> &BinaryMask {
        &self.stencil
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.basis[i * d..(i + 1) * d]
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Trace of the sample covariance, discarded directions included.
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Route actually taken (never `Auto`).
    pub fn route(&self) -> PcaRoute {
        self.route
    }

    /// All training samples identical: no basis, no variance.
    pub fn is_degenerate(&self) -> bool {
        self.k() == 0 || self.total_variance <= 0.0
    }

    /// Coefficients of `x − mean` on the first `k` eigenfaces.
    pub fn project(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        self.check_sample(x)?;
        self.check_k(k)?;
        let c: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok((0..k).map(|i| dot(self.basis_row(i), &c)).collect())
    }

    /// `mean + Σ coeffs[i] · basis_i`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check_k(coeffs.len())?;
        let mut x = self.mean.clone();
        for (i, &a) in coeffs.iter().enumerate() {
            for (xv, b) in x.iter_mut().zip(self.basis_row(i)) {
                *xv += a * b;
            }
        }
        Ok(x)
    }

    fn check_sample(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim().to_string(),
                got: x.len().to_string(),
            });
        }
        Ok(())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k > self.k() {
            return Err(Error::InvalidInput(format!(
                "k = {k} exceeds the {} fitted components",
                self.k()
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flattened image: `pixel / 255` inside the stencil, 0 outside.
pub fn image_vector(pixels: &[u8], stencil: &BinaryMask) -> Vec<f64> {
    pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| if stencil.get(i) { p as f64 / 255.0 } else { 0.0 })
        .collect()
}

/// PCA over the images of `view`.
pub fn fit_pca(view: &DatasetView<'_>, stencil: &BinaryMask, opts: PcaOptions) -> Result<FaceSpace> {
    let ds = view.dataset();
    let images = ds
        .images()
        .ok_or_else(|| Error::InvalidInput("dataset has no pixel data (images.bin)".into()))?;
    let (h, w) = (images.height, images.width);
    if (stencil.height(), stencil.width()) != (h, w) {
        return Err(Error::DimensionMismatch {
            expected: format!("{h}x{w}"),
            got: format!("{}x{}", stencil.height(), stencil.width()),
        });
    }
    let d = h * w;
    let mut data = Vec::with_capacity(view.len() * d);
    for &r in view.rows() {
        data.extend(image_vector(images.grid(r), stencil));
    }
    fit(data, view.len(), h, w, stencil.clone(), opts)
}

/// PCA over arbitrary samples (`n × d`, row-major); every dimension counts
/// as a stencil pixel.
pub fn fit_samples(data: &[f64], n: usize, d: usize, opts: PcaOptions) -> Result<FaceSpace> {
    if data.len() != n * d {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{d} = {}", n * d),
            got: data.len().to_string(),
        });
    }
    fit(data.to_vec(), n, 1, d, BinaryMask::full(1, d), opts)
}

fn fit(mut x: Vec<f64>, n: usize, h: usize, w: usize, stencil: BinaryMask, opts: PcaOptions) -> Result<FaceSpace> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("PCA needs at least two samples, got {n}")));
    }
    let d = h * w;
    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in x.chunks_exact_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let denom = (n - 1) as f64;
    let total_variance = x.iter().map(|v| v * v).sum::<f64>() / denom;
    let route = match opts.route {
        PcaRoute::Auto if n - 1 < d => PcaRoute::Gram,
        PcaRoute::Auto => PcaRoute::Covariance,
        r => r,
    };
    let mut fs = FaceSpace {
        height: h,
        width: w,
        stencil,
        mean,
        basis: Vec::new(),
        eigenvalues: Vec::new(),
        total_variance,
        n,
        route,
    };
    if total_variance == 0.0 {
        return Ok(fs);
    }
    let max_rank = (n - 1).min(d);
    let (eigenvalues, basis) = with_workers(opts.workers, || match route {
        PcaRoute::Covariance => covariance_route(&x, n, d, max_rank, opts.solver),
        _ => gram_route(&x, n, d, max_rank, opts.solver),
    });
    fs.eigenvalues = eigenvalues;
    fs.basis = basis;
    Ok(fs)
}

/// Eigenvalues below this fraction of the largest are numerical zeros.
fn rank_tolerance(size: usize) -> f64 {
    (size as f64 * f64::EPSILON * 64.0).max(1e-13)
}

fn gram_route(x: &[f64], n: usize, d: usize, max_rank: usize, solver: EigenSolver) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &x[i * d..(i + 1) * d];
            (i..n).map(|j| dot(xi, &x[j * d..(j + 1) * d])).collect()
        })
        .collect();
    let mut g = vec![0.0; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            g[i * n + i + off] = v;
            g[(i + off) * n + i] = v;
        }
    }
    let eig = symmetric_eigen(&g, n, solver);
    let cutoff = eig.values.first().copied().unwrap_or(0.0) * rank_tolerance(n);
    let keep = eig.values.iter().take(max_rank).take_while(|&&l| l > cutoff).count();
    let recovered: Vec<Vec<f64>> = (0..keep)
        .into_par_iter()
        .map(|c| {
            let v = eig.vector(c);
            let mut u = vec![0.0; d];
            for (i, &vi) in v.iter().enumerate() {
                for (uj, xj) in u.iter_mut().zip(&x[i * d..(i + 1) * d]) {
                    *uj += vi * xj;
                }
            }
            u
        })
        .collect();
    let mut basis = Vec::with_capacity(keep * d);
    for mut u in recovered {
        // modified Gram-Schmidt against earlier eigenfaces, then re-normalize
        for b in basis.chunks_exact(d) {
            let p = dot(&u, b);
            for (uj, bj) in u.iter_mut().zip(b) {
                *uj -= p * bj;
            }
        }
        let norm = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        basis.extend(u);
    }
    let eigenvalues = eig.values[..keep].iter().map(|l| l / (n - 1) as f64).collect();
    (eigenvalues, basis)
}

fn covariance_route(x: &[f64], n: usize, d: usize, max_rank: usize, solver: EigenSolver) -> (Vec<f64>, Vec<f64>) {
    let mut xt = vec![0.0; d * n];
    for i in 0..n {
        for j in 0..d {
            xt[j * n + i] = x[i * d + j];
        }
    }
    let denom = (n - 1) as f64;
    let rows: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|a| {
            let xa = &xt[a * n..(a + 1) * n];
            (a..d).map(|b| dot(xa, &xt[b * n..(b + 1) * n]) / denom).collect()
        })
        .collect();
    let mut c = vec![0.0; d * d];
    for (a, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            c[a * d + a + off] = v;
            c[(a + off) * d + a] = v;
        }
    }
    let eig = symmetric_eigen(&c, d, solver);
    let cutoff = eig.values.first().copied().unwrap_or(0.0) * rank_tolerance(d);
    let keep = eig.values.iter().take(max_rank).take_while(|&&l| l > cutoff).count();
    let mut basis = Vec::with_capacity(keep * d);
    for i in 0..keep {
        basis.extend_from_slice(eig.vector(i));
    }
    (eig.values[..keep].to_vec(), basis)
}

/// Cumulative explained-variance fractions `c_1 ≤ … ≤ c_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceCurve {
    pub fractions: Vec<f64>,
}

impl VarianceCurve {
    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }

    pub fn last(&self) -> f64 {
        self.fractions.last().copied().unwrap_or(0.0)
    }
}

pub fn variance_curve(fs: &FaceSpace) -> Result<VarianceCurve> {
    if fs.is_degenerate() {
        return Err(Error::Degenerate("face space has zero variance".into()));
    }
    let mut acc = 0.0;
    let mut fractions: Vec<f64> = fs
        .eigenvalues
        .iter()
        .map(|l| {
            acc += l;
            acc / fs.total_variance
        })
        .collect();
    // the full spectrum accounts for the whole trace up to rounding
    if let Some(last) = fractions.last_mut() {
        if (*last - 1.0).abs() <= 1e-9 {
            *last = 1.0;
        }
    }
    for i in 1..fractions.len() {
        if fractions[i] < fractions[i - 1] {
            fractions[i] = fractions[i - 1];
        }
    }
    Ok(VarianceCurve { fractions })
}

/// Smallest number of components whose cumulative fraction reaches `target`.
pub fn components_for_variance(fs: &FaceSpace, target: f64) -> Result<usize> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidInput(format!("variance target {target} outside (0, 1]")));
    }
    let curve = variance_curve(fs)?;
    curve
        .fractions
        .iter()
        .position(|&c| c >= target)
        .map(|j| j + 1)
        .ok_or(Error::UnreachableVariance {
            target,
            reached: curve.last(),
        })
}

/// RMSE between the sample `x` and its rank-`k` reconstruction, over stencil
/// pixels.
pub fn reconstruction_error(fs: &FaceSpace, k: usize, x: &[f64]) -> Result<f64> {
    let coeffs = fs.project(x, k)?;
    let mut r: Vec<f64> = x.iter().zip(&fs.mean).map(|(a, m)| a - m).collect();
    for (i, a) in coeffs.iter().enumerate() {
        for (rv, b) in r.iter_mut().zip(fs.basis_row(i)) {
            *rv -= a * b;
        }
    }
    let pixels = fs.stencil.count_ones();
    if pixels == 0 {
        return Ok(0.0);
    }
    let sq: f64 = fs.stencil.ones().map(|i| r[i] * r[i]).sum();
    Ok((sq / pixels as f64).sqrt())
}

/// [`reconstruction_error`] of a raw grayscale image.
pub fn image_reconstruction_error(fs: &FaceSpace, k: usize, pixels: &[u8]) -> Result<f64> {
    if pixels.len() != fs.dim() {
        return Err(Error::DimensionMismatch {
            expected: fs.dim().to_string(),
            got: pixels.len().to_string(),
        });
    }
    reconstruction_error(fs, k, &image_vector(pixels, &fs.stencil))
}

/// One image per subject: the highest face fraction, ties to the lower row.
/// Output keeps view order.
pub fn best_image_per_subject<'a>(view: &DatasetView<'a>, face_labels: LabelSet) -> DatasetView<'a> {
    let mut best: HashMap<&str, (usize, usize)> = HashMap::new();
    for &r in view.rows() {
        let rec = view.dataset().record_at_row(r);
        let face = row_face_mask(view, r, face_labels).count_ones();
        best.entry(rec.subject_id.as_str())
            .and_modify(|cur| {
                if face > cur.1 || (face == cur.1 && r < cur.0) {
                    *cur = (r, face);
                }
            })
            .or_insert((r, face));
    }
    let mut chosen: Vec<usize> = best.values().map(|&(r, _)| r).collect();
    chosen.sort_unstable();
    view.retain_rows(|r| chosen.binary_search(&r).is_ok())
}

/// Face fraction of each view image (view order); a convenience for reports.
pub fn face_fractions(view: &DatasetView<'_>, face_labels: LabelSet) -> Vec<f64> {
    view.rows()
        .iter()
        .map(|&r| percent_face(&row_face_mask(view, r, face_labels)))
        .collect()
}

/// Uniform sample of `count` images without replacement; view order kept.
pub fn sample_to_count<'a>(view: &DatasetView<'a>, count: usize, seed: u64) -> Result<DatasetView<'a>> {
    if count > view.len() {
        return Err(Error::InsufficientPool {
            needed: count,
            available: view.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pick(view, &(0..view.len()).collect::<Vec<_>>(), count, &mut rng))
}

fn pick<'a>(view: &DatasetView<'a>, positions: &[usize], count: usize, rng: &mut ChaCha8Rng) -> DatasetView<'a> {
    let mut idx: Vec<usize> = rand::seq::index::sample(rng, positions.len(), count)
        .into_iter()
        .map(|i| positions[i])
        .collect();
    idx.sort_unstable();
    let rows = idx.iter().map(|&p| view.rows()[p]).collect();
    DatasetView::from_rows(view.dataset(), rows).expect("subset of a valid view")
}

/// Inclusive age range; `hi = None` is open-ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeBin {
    pub lo: u32,
    pub hi: Option<u32>,
}

impl AgeBin {
    pub fn contains(&self, age: u32) -> bool {
        age >= self.lo && self.hi.is_none_or(|h| age <= h)
    }

    fn overlaps(&self, other: &AgeBin) -> bool {
        let a_hi = self.hi.unwrap_or(u32::MAX);
        let b_hi = other.hi.unwrap_or(u32::MAX);
        self.lo <= b_hi && other.lo <= a_hi
    }
}

impl fmt::Display for AgeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(h) => write!(f, "{}-{}", self.lo, h),
            None => write!(f, "{}+", self.lo),
        }
    }
}

impl FromStr for AgeBin {
    type Err = Error;

    /// `"18-29"` or `"40+"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("age bin {s:?}: expected LO-HI or LO+"));
        let s = s.trim();
        if let Some(lo) = s.strip_suffix('+') {
            return Ok(AgeBin {
                lo: lo.trim().parse().map_err(|_| bad())?,
                hi: None,
            });
        }
        let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        Ok(AgeBin { lo, hi: Some(hi) })
    }
}

/// Parses a comma-separated bin list such as `"18-29,30-39,40+"`.
pub fn parse_age_bins(s: &str) -> Result<Vec<AgeBin>> {
    let bins = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<AgeBin>>>()?;
    check_bins(&bins)?;
    Ok(bins)
}

fn check_bins(bins: &[AgeBin]) -> Result<()> {
    if bins.is_empty() {
        return Err(Error::InvalidInput("no age bins given".into()));
    }
    for (i, a) in bins.iter().enumerate() {
        for b in &bins[i + 1..] {
            if a.overlaps(b) {
                return Err(Error::InvalidInput(format!("age bins {a} and {b} overlap")));
            }
        }
    }
    Ok(())
}

fn bin_of(bins: &[AgeBin], age: Option<u32>) -> Option<usize> {
    let age = age?;
    bins.iter().position(|b| b.contains(age))
}

/// Images per age bin (ages outside every bin are skipped).
pub fn age_histogram(view: &DatasetView<'_>, bins: &[AgeBin]) -> BTreeMap<AgeBin, usize> {
    let mut h: BTreeMap<AgeBin, usize> = bins.iter().map(|&b| (b, 0)).collect();
    for rec in view.records() {
        if let Some(i) = bin_of(bins, rec.age) {
            *h.get_mut(&bins[i]).expect("bin present") += 1;
        }
    }
    h
}

/// Samples `source` so each age bin holds exactly as many images as in
/// `reference`. Bins are drawn in the order given from one seeded stream.
pub fn match_demographics<'a>(
    source: &DatasetView<'a>,
    reference: &DatasetView<'_>,
    bins: &[AgeBin],
    seed: u64,
) -> Result<DatasetView<'a>> {
    check_bins(bins)?;
    let mut needed = vec![0usize; bins.len()];
    for rec in reference.records() {
        let b = bin_of(bins, rec.age).ok_or_else(|| {
            Error::InvalidInput(format!(
                "reference image {} (age {:?}) falls in no age bin",
                rec.image_id, rec.age
            ))
        })?;
        needed[b] += 1;
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins.len()];
    for (pos, rec) in source.records().enumerate() {
        if let Some(b) = bin_of(bins, rec.age) {
            members[b].push(pos);
        }
    }
    for (b, bin) in bins.iter().enumerate() {
        if members[b].len() < needed[b] {
            return Err(Error::InfeasibleBin {
                bin: bin.to_string(),
                needed: needed[b],
                available: members[b].len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for b in 0..bins.len() {
        let part = pick(source, &members[b], needed[b], &mut rng);
        chosen.extend_from_slice(part.rows());
    }
    chosen.sort_unstable_by_key(|&r| source.rows().iter().position(|&x| x == r));
    DatasetView::from_rows(source.dataset(), chosen)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconError {
    pub row: usize,
    pub image_id: String,
    pub rmse: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SelectOptions<'v, 'a> {
    pub pca: PcaOptions,
    /// Fit the ranking basis on these images instead of the candidates
    /// themselves (e.g. a joint female+male set).
    pub ranking_basis: Option<&'v DatasetView<'a>>,
}

#[derive(Clone, Debug)]
pub struct LowErrorSelection<'a> {
    pub selected: DatasetView<'a>,
    /// Components used for ranking.
    pub k: usize,
    /// Every candidate's error, in candidate view order.
    pub errors: Vec<ReconError>,
    /// PCA refit on the survivors.
    pub refit: FaceSpace,
}

/// Keeps the `keep` candidates with the lowest reconstruction error at the
/// number of components reaching `variance_target`; ties go to the lower row.
pub fn select_low_error<'a>(
    male: &DatasetView<'a>,
    keep: usize,
    variance_target: f64,
    stencil: &BinaryMask,
    opts: SelectOptions<'_, 'a>,
) -> Result<LowErrorSelection<'a>> {
    if keep > male.len() {
        return Err(Error::InsufficientPool {
            needed: keep,
            available: male.len(),
        });
    }
    let basis_view = opts.ranking_basis.unwrap_or(male);
    let fs = fit_pca(basis_view, stencil, opts.pca)?;
    let k = components_for_variance(&fs, variance_target)?;
    let images = male
        .dataset()
        .images()
        .ok_or_else(|| Error::InvalidInput("dataset has no pixel data (images.bin)".into()))?;
    let errors: Vec<ReconError> = with_workers(opts.pca.workers, || {
        male.rows()
            .par_iter()
            .map(|&r| {
                let rmse = image_reconstruction_error(&fs, k, images.grid(r))?;
                Ok(ReconError {
                    row: r,
                    image_id: male.dataset().record_at_row(r).image_id.clone(),
                    rmse,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut ranked: Vec<&ReconError> = errors.iter().collect();
    ranked.sort_by(|a, b| a.rmse.total_cmp(&b.rmse).then(a.row.cmp(&b.row)));
    let mut survivors: Vec<usize> = ranked[..keep].iter().map(|e| e.row).collect();
    survivors.sort_unstable();
    let selected = male.retain_rows(|r| survivors.binary_search(&r).is_ok());
    let refit = fit_pca(&selected, stencil, opts.pca)?;
    Ok(LowErrorSelection {
        selected,
        k,
        errors,
        refit,
    })
}

/// `group,component_index,cumulative_fraction` with 1-based component index.
pub fn variance_curve_csv(series: &[(&str, &VarianceCurve)]) -> String {
    let mut out = String::from("group,component_index,cumulative_fraction\n");
    for (g, c) in series {
        for (i, f) in c.fractions.iter().enumerate() {
            let _ = writeln!(out, "{g},{},{f}", i + 1);
        }
    }
    out
}

/// `image_id,k,rmse`
pub fn recon_errors_csv(errors: &[ReconError], k: usize) -> String {
    let mut out = String::from("image_id,k,rmse\n");
    for e in errors {
        let _ = writeln!(out, "{},{k},{}", e.image_id, e.rmse);
    }
    out
}

/// One `{"image_id": ...}` object per line.
pub fn selection_jsonl(view: &DatasetView<'_>) -> String {
    let mut out = String::new();
    for rec in view.records() {
        let line = serde_json::json!({ "image_id": rec.image_id });
        let _ = writeln!(out, "{line}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::record;
    use crate::corpus::{Dataset, EmbeddingMatrix, Gender, GridStack};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    fn assert_orthonormal(fs: &FaceSpace) {
        for i in 0..fs.k() {
            for j in 0..fs.k() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(fs.basis_row(i), fs.basis_row(j)) - expect).abs() <= 1e-8);
            }
        }
    }

    fn image_dataset(images: Vec<Vec<u8>>, labels: Vec<Vec<u8>>, subjects: &[&str], h: usize, w: usize) -> Dataset {
        let n = images.len();
        let records = (0..n)
            .map(|i| record(&format!("img{i:03}"), subjects[i], Gender::M, Some(20 + i as u32), i))
            .collect();
        Dataset::from_parts(
            records,
            EmbeddingMatrix {
                n,
                dim: 2,
                data: (0..n).flat_map(|_| [1.0f32, 0.0]).collect(),
            },
            GridStack {
                n,
                height: h,
                width: w,
                data: labels.concat(),
            },
            Some(GridStack {
                n,
                height: h,
                width: w,
                data: images.concat(),
            }),
        )
        .unwrap()
    }

    #[test]
    fn dual_routes_agree() {
        for (n, d, seed) in [(30, 200, 1), (200, 30, 2), (12, 12, 3)] {
            let x = random_data(n, d, seed);
            let g = fit_samples(&x, n, d, PcaOptions::with_route(PcaRoute::Gram)).unwrap();
            let c = fit_samples(&x, n, d, PcaOptions::with_route(PcaRoute::Covariance)).unwrap();
            assert_eq!(g.k(), (n - 1).min(d));
            assert_eq!(g.k(), c.k());
            for (a, b) in g.eigenvalues().iter().zip(c.eigenvalues()) {
                assert!((a - b).abs() <= 1e-8 * b.abs(), "{a} vs {b}");
            }
            assert_orthonormal(&g);
            assert_orthonormal(&c);
            let sum: f64 = g.eigenvalues().iter().sum();
            assert!((sum - g.total_variance()).abs() <= 1e-8 * g.total_variance());
            for i in 0..n {
                let xi = &x[i * d..(i + 1) * d];
                for fs in [&g, &c] {
                    let rec = fs.reconstruct(&fs.project(xi, fs.k()).unwrap()).unwrap();
                    let err = rec.iter().zip(xi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(err < 1e-6);
                }
            }
        }
    }

    #[test]
    fn two_samples_span_their_difference() {
        let x = [1.0, 0.0, 0.0, 0.0, 3.0, 0.0];
        let fs = fit_samples(&x, 2, 3, PcaOptions::default()).unwrap();
        assert_eq!(fs.k(), 1);
        let b = fs.basis_row(0);
        let diff = [-1.0 / 10f64.sqrt(), 3.0 / 10f64.sqrt(), 0.0];
        assert!((dot(b, &diff).abs() - 1.0).abs() < 1e-12);
        assert_eq!(variance_curve(&fs).unwrap().fractions, vec![1.0]);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let fs = fit_samples(&[0.5; 8], 4, 2, PcaOptions::default()).unwrap();
        assert!(fs.is_degenerate());
        assert_eq!(fs.total_variance(), 0.0);
        assert!(matches!(variance_curve(&fs), Err(Error::Degenerate(_))));
        assert!(fit_samples(&[0.5; 2], 1, 2, PcaOptions::default()).is_err());
    }

    #[test]
    fn curve_and_component_counts() {
        let mut fs = fit_samples(&random_data(5, 4, 4), 5, 4, PcaOptions::default()).unwrap();
        fs.eigenvalues = vec![3.0, 1.0];
        fs.total_variance = 4.0;
        assert_eq!(variance_curve(&fs).unwrap().fractions, vec![0.75, 1.0]);
        assert_eq!(components_for_variance(&fs, 0.8).unwrap(), 2);
        assert_eq!(components_for_variance(&fs, 0.75).unwrap(), 1);
        assert_eq!(components_for_variance(&fs, 1.0).unwrap(), 2);
        assert!(components_for_variance(&fs, 0.0).is_err());
        fs.total_variance = 5.0;
        assert!(matches!(
            components_for_variance(&fs, 0.9),
            Err(Error::UnreachableVariance { reached, .. }) if (reached - 0.8).abs() < 1e-15
        ));
    }

    #[test]
    fn zero_components_leave_the_centered_sample() {
        let x = random_data(6, 5, 5);
        let fs = fit_samples(&x, 6, 5, PcaOptions::default()).unwrap();
        let xi = &x[5..10];
        let centered: f64 = xi.iter().zip(fs.mean()).map(|(a, m)| (a - m).powi(2)).sum::<f64>() / 5.0;
        assert!((reconstruction_error(&fs, 0, xi).unwrap() - centered.sqrt()).abs() < 1e-15);
        assert!(reconstruction_error(&fs, fs.k(), xi).unwrap() < 1e-6);
        assert!(reconstruction_error(&fs, fs.k() + 1, xi).is_err());
    }

    #[test]
    fn nalgebra_svd_oracle() {
        let (n, d) = (15, 40);
        let x = random_data(n, d, 6);
        let fs = fit_samples(&x, n, d, PcaOptions::default()).unwrap();
        let mut centered = nalgebra::DMatrix::from_row_slice(n, d, &x);
        for j in 0..d {
            let m = centered.column(j).mean();
            centered.column_mut(j).add_scalar_mut(-m);
        }
        let sv = centered.svd(false, false).singular_values;
        for (i, l) in fs.eigenvalues().iter().enumerate() {
            let expect = sv[i] * sv[i] / (n - 1) as f64;
            assert!((l - expect).abs() <= 1e-10 * expect);
        }
    }

    #[test]
    fn best_image_ties_and_argmax() {
        // 2x2 grids; face label 1, background 0
        let labels = vec![vec![1, 1, 0, 0], vec![1, 0, 0, 0], vec![1, 0, 0, 0], vec![1, 1, 1, 0]];
        let ds = image_dataset(vec![vec![0; 4]; 4], labels, &["a", "b", "b", "a"], 2, 2);
        let best = best_image_per_subject(&ds.view(), LabelSet::default());
        assert_eq!(best.rows(), &[1, 3]);
    }

    #[test]
    fn sampling_is_seeded() {
        let n = 1000;
        let ds = image_dataset(
            vec![vec![0; 1]; n],
            vec![vec![1; 1]; n],
            &(0..n).map(|_| "s").collect::<Vec<_>>(),
            1,
            1,
        );
        let v = ds.view();
        assert_eq!(sample_to_count(&v, n, 3).unwrap().rows(), v.rows());
        let a = sample_to_count(&v, 500, 11).unwrap();
        assert_eq!(a.rows(), sample_to_count(&v, 500, 11).unwrap().rows());
        for s in 0..10 {
            let x = sample_to_count(&v, 500, 100 + 2 * s).unwrap();
            let y = sample_to_count(&v, 500, 101 + 2 * s).unwrap();
            assert_ne!(x.rows(), y.rows());
        }
        assert!(matches!(sample_to_count(&v, n + 1, 0), Err(Error::InsufficientPool { .. })));
    }

    #[test]
    fn demographic_matching() {
        let n = 20;
        let ds = image_dataset(
            vec![vec![0; 1]; n],
            vec![vec![1; 1]; n],
            &(0..n).map(|_| "s").collect::<Vec<_>>(),
            1,
            1,
        );
        // ages 20..39
        let bins = parse_age_bins("18-29,30+").unwrap();
        let all = ds.view();
        assert_eq!(match_demographics(&all, &all, &bins, 9).unwrap().rows(), all.rows());
        let reference = DatasetView::from_rows(&ds, vec![0, 1, 15]).unwrap();
        let m = match_demographics(&all, &reference, &bins, 4).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(age_histogram(&m, &bins), age_histogram(&reference, &bins));
        let young = all.retain(|r| r.age.unwrap() < 22);
        let err = match_demographics(&young, &reference, &bins, 4).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBin { ref bin, needed: 1, available: 0 } if bin == "30+"));
        assert!(parse_age_bins("18-29,25-40").is_err());
        assert!(parse_age_bins("x").is_err());
    }

    #[test]
    fn planted_outlier_is_dropped() {
        // 9 images near a 2-dimensional pattern family plus one unrelated image
        let (h, w) = (6, 6);
        let d = h * w;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p1: Vec<f64> = (0..d).map(|i| ((i as f64) * 0.7).sin()).collect();
        let p2: Vec<f64> = (0..d).map(|i| ((i as f64) * 1.3).cos()).collect();
        let mut images = Vec::new();
        for _ in 0..9 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            images.push(
                (0..d)
                    .map(|i| {
                        let v = 128.0 + 60.0 * (a * p1[i] + b * p2[i]) + rng.random_range(-1.0..1.0);
                        v.round() as u8
                    })
                    .collect::<Vec<u8>>(),
            );
        }
        // off the plane, yet carrying too little variance to become a component
        images.push((0..d).map(|i| if i % 2 == 0 { 158 } else { 98 }).collect());
        let subjects: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let subjects: Vec<&str> = subjects.iter().map(String::as_str).collect();
        let ds = image_dataset(images, vec![vec![1; d]; 10], &subjects, h, w);
        let full = BinaryMask::full(h, w);
        let sel = select_low_error(&ds.view(), 9, 0.8, &full, SelectOptions::default()).unwrap();
        assert_eq!(sel.k, 2);
        assert_eq!(sel.selected.rows(), &(0..9).collect::<Vec<_>>()[..]);
        assert_eq!(sel.errors.len(), 10);
        assert_eq!(sel.refit.n(), 9);
        let all = select_low_error(&ds.view(), 10, 0.8, &full, SelectOptions::default()).unwrap();
        assert_eq!(all.selected.rows(), ds.view().rows());
    }

    #[test]
    fn stencil_limits_error_to_inside_pixels() {
        let (h, w) = (2, 2);
        let images = vec![vec![0, 10, 20, 200], vec![50, 60, 70, 0], vec![90, 80, 30, 100]];
        let ds = image_dataset(images, vec![vec![1; 4]; 3], &["a", "b", "c"], h, w);
        let stencil = BinaryMask::from_bools(h, w, &[true, true, true, false]).unwrap();
        let fs = fit_pca(&ds.view(), &stencil, PcaOptions::default()).unwrap();
        assert_eq!(fs.mean()[3], 0.0);
        for i in 0..fs.k() {
            assert_eq!(fs.basis_row(i)[3], 0.0);
        }
        let e = image_reconstruction_error(&fs, 0, &[255, 255, 255, 255]).unwrap();
        let x = image_vector(&[255; 4], &stencil);
        let expect = ((0..3).map(|i| (x[i] - fs.mean()[i]).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((e - expect).abs() < 1e-15);
    }

    #[test]
    fn csv_layouts() {
        let c = VarianceCurve { fractions: vec![0.75, 1.0] };
        assert_eq!(
            variance_curve_csv(&[("F", &c)]),
            "group,component_index,cumulative_fraction\nF,1,0.75\nF,2,1\n"
        );
        let e = ReconError {
            row: 0,
            image_id: "x".into(),
            rmse: 0.5,
        };
        assert_eq!(recon_errors_csv(&[e], 3), "image_id,k,rmse\nx,3,0.5\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fit_invariants(n in 2usize..9, d in 1usize..9, seed in any::<u64>()) {
            let x = random_data(n, d, seed);
            let fs = fit_samples(&x, n, d, PcaOptions::default()).unwrap();
            prop_assert!(fs.k() <= (n - 1).min(d));
            prop_assert!(fs.eigenvalues().windows(2).all(|p| p[0] >= p[1]));
            let sum: f64 = fs.eigenvalues().iter().sum();
            prop_assert!(sum <= fs.total_variance() + 1e-8);
            let curve = variance_curve(&fs).unwrap();
            prop_assert!(curve.fractions.windows(2).all(|p| p[0] <= p[1]));
            prop_assert!(curve.last() <= 1.0 + 1e-9);
            for i in 0..n {
                let xi = &x[i * d..(i + 1) * d];
                let errs: Vec<f64> = (0..=fs.k()).map(|k| reconstruction_error(&fs, k, xi).unwrap()).collect();
                prop_assert!(errs.windows(2).all(|p| p[1] <= p[0] + 1e-12));
            }
        }
    }
}
