use serde::Serialize;

use super::ScoreHistogram;
use crate::error::{Error, Result};

/// Identifier recorded in run metadata for the separation statistic below.
pub const D_PRIME_FORMULA: &str = "abs(mean1-mean2)/sqrt((var1+var2)/2); unbiased variances";

/// d' from summary moments (sample variances).
pub fn d_prime_from_moments(mean1: f64, var1: f64, mean2: f64, var2: f64) -> Result<f64> {
    let pooled = (var1 + var2) / 2.0;
    if !pooled.is_finite() || pooled <= 0.0 {
        return Err(Error::Degenerate(format!(
            "pooled variance {pooled} (var1={var1}, var2={var2})"
        )));
    }
    Ok((mean1 - mean2).abs() / pooled.sqrt())
}

/// Separation between two score distributions, from their streaming moments.
pub fn d_prime(h1: &ScoreHistogram, h2: &ScoreHistogram) -> Result<f64> {
    if h1.n() < 2 || h2.n() < 2 {
        return Err(Error::Degenerate(format!(
            "d-prime needs at least two samples per side (n1={}, n2={})",
            h1.n(),
            h2.n()
        )));
    }
    d_prime_from_moments(h1.mean(), h1.variance(), h2.mean(), h2.variance())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rates {
    pub requested_threshold: f64,
    /// Bin edge actually used.
    pub threshold: f64,
    pub snap_distance: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

fn check_pair(genuine: &ScoreHistogram, impostor: &ScoreHistogram) -> Result<()> {
    if !genuine.same_binning(impostor) {
        return Err(Error::DimensionMismatch {
            expected: format!("{} bins on [{}, {}]", genuine.bins(), genuine.lo(), genuine.hi()),
            got: format!("{} bins on [{}, {}]", impostor.bins(), impostor.lo(), impostor.hi()),
        });
    }
    if genuine.n() == 0 || impostor.n() == 0 {
        return Err(Error::UndefinedRate(format!(
            "genuine n={}, impostor n={}",
            genuine.n(),
            impostor.n()
        )));
    }
    Ok(())
}

fn rates_at_edge(genuine: &ScoreHistogram, impostor: &ScoreHistogram, k: usize) -> (f64, f64) {
    let fmr = impostor.count_from(k) as f64 / impostor.n() as f64;
    let fnmr = (genuine.n() - genuine.count_from(k)) as f64 / genuine.n() as f64;
    (fmr, fnmr)
}

/// FMR (impostor ≥ t) and FNMR (genuine < t) with `t` snapped to the
/// nearest bin edge.
pub fn fmr_fnmr(genuine: &ScoreHistogram, impostor: &ScoreHistogram, threshold: f64) -> Result<Rates> {
    check_pair(genuine, impostor)?;
    let bins = genuine.bins();
    let k = if threshold <= genuine.lo() {
        0
    } else if threshold > genuine.hi() {
        bins
    } else {
        let t = (threshold - genuine.lo()) / genuine.bin_width();
        (t.round() as usize).min(bins)
    };
    let edge = genuine.edge(k);
    let (fmr, fnmr) = rates_at_edge(genuine, impostor, k);
    Ok(Rates {
        requested_threshold: threshold,
        threshold: edge,
        snap_distance: (threshold - edge).abs(),
        fmr,
        fnmr,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub target_fmr: f64,
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

/// For each FMR target, the lowest bin edge whose FMR is closest to it.
pub fn roc_points(
    genuine: &ScoreHistogram,
    impostor: &ScoreHistogram,
    levels: &[f64],
) -> Result<Vec<RocPoint>> {
    check_pair(genuine, impostor)?;
    let bins = genuine.bins();
    // suffix[k] = impostor count in bins k.. ; gsuffix likewise for genuine
    let mut suffix = vec![0u64; bins + 1];
    let mut gsuffix = vec![0u64; bins + 1];
    for k in (0..bins).rev() {
        suffix[k] = suffix[k + 1] + impostor.counts()[k];
        gsuffix[k] = gsuffix[k + 1] + genuine.counts()[k];
    }
    let ni = impostor.n() as f64;
    let ng = genuine.n() as f64;
    levels
        .iter()
        .map(|&target| {
            if !(0.0..=1.0).contains(&target) {
                return Err(Error::InvalidInput(format!("FMR target {target} outside [0, 1]")));
            }
            let mut best = 0;
            let mut best_gap = f64::INFINITY;
            for (k, &s) in suffix.iter().enumerate() {
                let gap = (s as f64 / ni - target).abs();
                if gap < best_gap {
                    best_gap = gap;
                    best = k;
                }
            }
            Ok(RocPoint {
                target_fmr: target,
                threshold: genuine.edge(best),
                fmr: suffix[best] as f64 / ni,
                fnmr: (genuine.n() - gsuffix[best]) as f64 / ng,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_distributions_have_zero_separation() {
        let h = ScoreHistogram::from_values([0.1, 0.2, 0.4]);
        assert_eq!(d_prime(&h, &h).unwrap(), 0.0);
    }

    #[test]
    fn unit_moment_case_is_exactly_one() {
        assert_eq!(d_prime_from_moments(1.0, 1.0, 0.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        let flat = ScoreHistogram::from_values([0.5, 0.5, 0.5]);
        assert!(matches!(d_prime(&flat, &flat), Err(Error::Degenerate(_))));
        let one = ScoreHistogram::from_values([0.5]);
        assert!(d_prime(&one, &flat).is_err());
    }

    #[test]
    fn boundary_thresholds() {
        let g = ScoreHistogram::from_values([0.5, 0.9]);
        let i = ScoreHistogram::from_values([-0.2, 0.1]);
        let r = fmr_fnmr(&g, &i, -1.5).unwrap();
        assert_eq!((r.fmr, r.fnmr), (1.0, 0.0));
        let r = fmr_fnmr(&g, &i, 1.2).unwrap();
        assert_eq!((r.fmr, r.fnmr), (0.0, 1.0));
        assert!((r.snap_distance - 0.2).abs() < 1e-12);
    }

    #[test]
    fn counting_example() {
        let g = ScoreHistogram::from_values([0.9]);
        let i = ScoreHistogram::from_values([0.1, 0.3, 0.5, 0.7]);
        let r = fmr_fnmr(&g, &i, 0.4).unwrap();
        assert_eq!(r.fmr, 0.5);
        assert_eq!(r.fnmr, 0.0);
        assert!(r.snap_distance < 1e-9);
    }

    #[test]
    fn empty_side_is_undefined() {
        let g = ScoreHistogram::default();
        let i = ScoreHistogram::from_values([0.1]);
        assert!(matches!(fmr_fnmr(&g, &i, 0.0), Err(Error::UndefinedRate(_))));
    }

    #[test]
    fn full_fmr_target_sits_on_lowest_edge() {
        let g = ScoreHistogram::from_values([0.5, 0.9]);
        let i = ScoreHistogram::from_values([-0.2, 0.1]);
        let p = roc_points(&g, &i, &[1.0]).unwrap();
        assert_eq!(p[0].threshold, -1.0);
        assert_eq!(p[0].fmr, 1.0);
    }

    #[test]
    fn separated_distributions_reach_zero_error() {
        let g = ScoreHistogram::from_values([0.6, 0.7, 0.8]);
        let i = ScoreHistogram::from_values([-0.3, 0.0, 0.2]);
        let p = roc_points(&g, &i, &[0.0]).unwrap();
        assert_eq!((p[0].fmr, p[0].fnmr), (0.0, 0.0));
    }

    proptest! {
        #[test]
        fn rates_are_monotone_in_threshold(
            gs in prop::collection::vec(-1.0f64..1.0, 1..50),
            is in prop::collection::vec(-1.0f64..1.0, 1..50),
            t1 in -1.2f64..1.2,
            t2 in -1.2f64..1.2,
        ) {
            let g = ScoreHistogram::from_values(gs);
            let i = ScoreHistogram::from_values(is);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = fmr_fnmr(&g, &i, lo).unwrap();
            let b = fmr_fnmr(&g, &i, hi).unwrap();
            for r in [a, b] {
                prop_assert!((0.0..=1.0).contains(&r.fmr));
                prop_assert!((0.0..=1.0).contains(&r.fnmr));
            }
            prop_assert!(b.fmr <= a.fmr);
            prop_assert!(b.fnmr >= a.fnmr);
        }

        #[test]
        fn d_prime_symmetric_and_shift_invariant(
            a in prop::collection::vec(-0.5f64..0.5, 3..40),
            b in prop::collection::vec(-0.5f64..0.5, 3..40),
            shift in -0.4f64..0.4,
        ) {
            let ha = ScoreHistogram::from_values(a.iter().copied());
            let hb = ScoreHistogram::from_values(b.iter().copied());
            if let (Ok(d1), Ok(d2)) = (d_prime(&ha, &hb), d_prime(&hb, &ha)) {
                prop_assert_eq!(d1, d2);
                let sa = ScoreHistogram::from_values(a.iter().map(|x| x + shift));
                let sb = ScoreHistogram::from_values(b.iter().map(|x| x + shift));
                let d3 = d_prime(&sa, &sb).unwrap();
                prop_assert!((d1 - d3).abs() <= 1e-9 * d1.max(1.0));
            }
        }
    }
}
